//! Embedding-space energies measuring cross-domain semantic distance.
//!
//! All three energies compare the rendered sample against the reference
//! sketch inside the joint embedder space. The directional and contrastive
//! variants measure *displacements* from a pair of source anchors (a neutral
//! image rendered from the average style and its sketch counterpart) so that
//! domain-specific appearance cancels and only semantic movement is scored.
//! Displacement vectors are used as-is (no renormalization); cosine handles
//! scale.
//!
//! The translation augmentation is a pure index gather (zero-padded), applied
//! jointly with one sampled shift so displacements stay within-domain.

use rand::Rng;

use crate::backends::{adapt_geometry, normalize_channels, Embedder, Generator, ImageToSketch};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::{dot, lift, norm2, Real};

/// Norm floor below which a displacement is considered degenerate.
pub const DEGENERATE_NORM_FLOOR: f64 = 1e-8;

/// Reference sketch plus its optional category text.
#[derive(Clone, Debug)]
pub struct SketchReference {
    pub image: Image<f64>,
    pub category: Option<String>,
}

/// Cross-domain anchor pair and its embeddings.
///
/// `e_xo = F_I(x_o)`, `e_co = F_I(c_o)`, `e_to = F_T(t_o)`; when augmentation
/// perturbs the anchor images the embeddings are recomputed on the perturbed
/// versions (see [`refreshed_anchors`]).
#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub x_o: Image<f64>,
    pub c_o: Image<f64>,
    pub e_xo: Vec<f64>,
    pub e_co: Vec<f64>,
    pub e_to: Vec<f64>,
    pub t_o: String,
}

/// Build the static anchor set: render the average-style image at all layers,
/// sketch it, and embed everything.
pub fn build_anchors(
    g: &dyn Generator<f64>,
    h: &dyn ImageToSketch<f64>,
    e: &dyn Embedder<f64>,
    t_o: &str,
) -> Result<AnchorSet> {
    let w_avg = g.w_avg()?;
    let styles = vec![w_avg.clone(); g.layer_count()];
    let x_o: Image<f64> = Generator::<f64>::synthesize(g, &styles);
    let c_o = ImageToSketch::<f64>::sketchify(h, &x_o);
    let e_xo = embed_pipeline::<f64>(e, &x_o, None)?;
    let e_co = embed_pipeline::<f64>(e, &c_o, None)?;
    let e_to = e.embed_text(t_o)?;
    Ok(AnchorSet {
        x_o,
        c_o,
        e_xo,
        e_co,
        e_to,
        t_o: t_o.to_string(),
    })
}

/// Anchor set for one augmented step: the style-paired anchor image replaces
/// `x_o`, the shared shift is applied to both anchor images, and the image
/// embeddings are recomputed. The text anchor is untouched.
pub fn refreshed_anchors(
    base: &AnchorSet,
    x_anchor: &Image<f64>,
    e: &dyn Embedder<f64>,
    shift: Option<Shift>,
) -> Result<AnchorSet> {
    let e_xo = embed_pipeline::<f64>(e, x_anchor, shift)?;
    let e_co = embed_pipeline::<f64>(e, &base.c_o, shift)?;
    Ok(AnchorSet {
        x_o: x_anchor.clone(),
        c_o: base.c_o.clone(),
        e_xo,
        e_co,
        e_to: base.e_to.clone(),
        t_o: base.t_o.clone(),
    })
}

/// Full embedding pipeline: channel/resolution adaptation, optional shared
/// translation (pre-normalization, so padding means black), per-channel
/// normalization, then the embedder itself.
pub fn embed_pipeline<S: Real>(
    e: &dyn Embedder<S>,
    img: &Image<S>,
    shift: Option<Shift>,
) -> Result<Vec<S>> {
    let geo = adapt_geometry(e, img);
    let shifted = match shift {
        Some(s) => translate_image(&geo, s),
        None => geo,
    };
    e.embed_image(&normalize_channels(e, &shifted))
}

// ── Energy algebra on embeddings ─────────────────────────────────────────

/// `1 - cos(a, b)`; range [0, 2] for any nonzero vectors.
pub fn cosine_distance<S: Real>(a: &[S], b: &[S]) -> S {
    let cos = dot(a, b) / (norm2(a) * norm2(b));
    S::one() - cos
}

pub fn global_energy_from_embeddings<S: Real>(e_x: &[S], e_c: &[S]) -> S {
    cosine_distance(e_x, e_c)
}

pub fn dir_energy_from_embeddings<S: Real>(
    e_x: &[S],
    e_c: &[S],
    e_xo: &[S],
    e_co: &[S],
) -> Result<S> {
    let dx = sub(e_x, e_xo);
    let dc = sub(e_c, e_co);
    let nx = norm2(&dx).to_f64();
    let nc = norm2(&dc).to_f64();
    if nx < DEGENERATE_NORM_FLOOR || nc < DEGENERATE_NORM_FLOOR {
        return Err(Error::DegenerateDirection(format!(
            "displacement norms {nx:.3e} (image) / {nc:.3e} (sketch) below floor"
        )));
    }
    Ok(cosine_distance(&dc, &dx))
}

pub fn nce_energy_from_embeddings<S: Real>(
    e_x: &[S],
    e_c: &[S],
    e_xo: &[S],
    e_co: &[S],
    e_to: &[S],
    temperature: f64,
) -> Result<S> {
    let q = sub(e_x, e_xo);
    let k_pos = sub(e_c, e_co);
    let k_neg = sub(e_to, e_xo);
    nce_energy_from_logits(dot(&q, &k_pos), dot(&q, &k_neg), temperature)
}

/// `1 - e^{pos/r} / (e^{pos/r} + e^{neg/r})`, evaluated as a numerically
/// stable sigmoid of `(neg - pos)/r`.
pub fn nce_energy_from_logits<S: Real>(pos: S, neg: S, temperature: f64) -> Result<S> {
    if temperature <= 0.0 {
        return Err(Error::argument(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let x = (neg - pos) * S::from_f64(1.0 / temperature);
    Ok(sigmoid(x))
}

fn sigmoid<S: Real>(x: S) -> S {
    if x.to_f64() >= 0.0 {
        S::one() / (S::one() + (-x).exp())
    } else {
        let t = x.exp();
        t.clone() / (S::one() + t)
    }
}

fn sub<S: Real>(a: &[S], b: &[S]) -> Vec<S> {
    crate::scalar::sub_vec(a, b)
}

// ── Image-level energy operations ────────────────────────────────────────

/// Plain embedding-space cosine distance between sample and sketch.
pub fn energy_global<S: Real>(
    x: &Image<S>,
    c: &Image<S>,
    e: &dyn Embedder<S>,
) -> Result<S> {
    let e_x = embed_pipeline(e, x, None)?;
    let e_c = embed_pipeline(e, c, None)?;
    Ok(global_energy_from_embeddings(&e_x, &e_c))
}

/// Directional energy: cosine distance between the within-domain
/// displacements from the anchor pair.
pub fn energy_dir<S: Real>(
    x: &Image<S>,
    c: &Image<S>,
    anchors: &AnchorSet,
    e: &dyn Embedder<S>,
) -> Result<S> {
    let e_x = embed_pipeline(e, x, None)?;
    let e_c = embed_pipeline(e, c, None)?;
    let e_xo: Vec<S> = lift(&anchors.e_xo);
    let e_co: Vec<S> = lift(&anchors.e_co);
    dir_energy_from_embeddings(&e_x, &e_c, &e_xo, &e_co)
}

/// Contrastive energy: pulls the sample displacement toward the sketch
/// displacement and away from the text-anchor displacement.
pub fn energy_nce<S: Real>(
    x: &Image<S>,
    c: &Image<S>,
    anchors: &AnchorSet,
    e: &dyn Embedder<S>,
    temperature: f64,
) -> Result<S> {
    let e_x = embed_pipeline(e, x, None)?;
    let e_c = embed_pipeline(e, c, None)?;
    let e_xo: Vec<S> = lift(&anchors.e_xo);
    let e_co: Vec<S> = lift(&anchors.e_co);
    let e_to: Vec<S> = lift(&anchors.e_to);
    nce_energy_from_embeddings(&e_x, &e_c, &e_xo, &e_co, &e_to, temperature)
}

// ── Translation augmentation ─────────────────────────────────────────────

/// Integer pixel shift; positive `dx` moves content right, positive `dy`
/// moves it down.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shift {
    pub dx: i64,
    pub dy: i64,
}

/// Sample a shift uniformly over `[-⌊f*W⌋, +⌊f*W⌋] x [-⌊f*H⌋, +⌊f*H⌋]`.
pub fn sample_shift(height: usize, width: usize, max_shift: f64, rng: &mut impl Rng) -> Shift {
    let mx = (max_shift * width as f64).floor() as i64;
    let my = (max_shift * height as f64).floor() as i64;
    Shift {
        dx: if mx > 0 { rng.random_range(-mx..=mx) } else { 0 },
        dy: if my > 0 { rng.random_range(-my..=my) } else { 0 },
    }
}

/// Zero-padded translation; a pure index gather, so gradients pass through
/// retained pixels with weight one and vanish on cropped ones.
pub fn translate_image<S: Real>(img: &Image<S>, shift: Shift) -> Image<S> {
    if shift.dx == 0 && shift.dy == 0 {
        return img.clone();
    }
    Image::from_fn(img.height, img.width, img.channels, |y, x, c| {
        let sy = y as i64 - shift.dy;
        let sx = x as i64 - shift.dx;
        if sy >= 0 && sy < img.height as i64 && sx >= 0 && sx < img.width as i64 {
            img.get(sy as usize, sx as usize, c).clone()
        } else {
            S::zero()
        }
    })
}

/// Apply one shared sampled shift to the whole list. All images must share
/// spatial dimensions so "the same shift" is meaningful.
pub fn augment_translate<S: Real>(
    imgs: &[&Image<S>],
    max_shift: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Image<S>>> {
    if !(0.0..=0.25).contains(&max_shift) {
        return Err(Error::argument(format!(
            "max_shift must be within [0, 0.25], got {max_shift}"
        )));
    }
    let Some(first) = imgs.first() else {
        return Ok(Vec::new());
    };
    for img in imgs {
        if img.height != first.height || img.width != first.width {
            return Err(Error::input(
                "augment_translate requires matching spatial dimensions".to_string(),
            ));
        }
    }
    let shift = sample_shift(first.height, first.width, max_shift, rng);
    Ok(imgs.iter().map(|img| translate_image(img, shift)).collect())
}
