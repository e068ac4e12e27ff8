//! Interface conformance checks run on every backend set before use.
//!
//! Any adapter, toy or real-weight, must pass the same suite: shape
//! coherence, determinism under a fixed seed, and the norm/range contracts.
//! Failures surface as backend errors naming the violated check.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{rng_from_seed, standard_normal_vec};

use super::{Backends, Embedder, Generator, ImageToSketch};

const PROBE_SEED: u64 = 0xc0f0_0d5e;

fn fail(check: &str, detail: String) -> Error {
    Error::backend(format!("conformance check '{check}' failed: {detail}"))
}

pub fn check_generator(g: &dyn super::AnyGenerator) -> Result<()> {
    if g.layer_count() < 6 {
        return Err(fail(
            "generator.layers",
            format!("layer count {} < 6", g.layer_count()),
        ));
    }
    let shape = g.image_shape();
    let mut rng = rng_from_seed(PROBE_SEED);
    for _ in 0..3 {
        let z = standard_normal_vec(&mut rng, g.latent_dim());
        let w = Generator::<f64>::map_to_w(g, &z);
        if w.len() != g.style_dim() {
            return Err(fail(
                "generator.map_to_w",
                format!("style length {} != declared {}", w.len(), g.style_dim()),
            ));
        }
        let w2 = Generator::<f64>::map_to_w(g, &z);
        if w != w2 {
            return Err(fail("generator.map_determinism", "repeated map differs".into()));
        }
        let styles = vec![w.clone(); g.layer_count()];
        let img = Generator::<f64>::synthesize(g, &styles);
        if (img.height, img.width, img.channels) != (shape.height, shape.width, shape.channels) {
            return Err(fail(
                "generator.image_shape",
                format!(
                    "synthesized {}x{}x{} != declared {}x{}x{}",
                    img.height, img.width, img.channels, shape.height, shape.width, shape.channels
                ),
            ));
        }
        let img2 = Generator::<f64>::synthesize(g, &styles);
        if img.data != img2.data {
            return Err(fail(
                "generator.synthesis_determinism",
                "repeated synthesis differs".into(),
            ));
        }
        if img.data.iter().any(|v| !v.is_finite()) {
            return Err(fail("generator.finite", "non-finite pixels".into()));
        }
    }
    Ok(())
}

pub fn check_embedder(e: &dyn super::AnyEmbedder) -> Result<()> {
    let res = e.input_resolution();
    let ch = e.input_channels();
    let mut rng = rng_from_seed(PROBE_SEED ^ 1);
    for _ in 0..3 {
        let img =
            Image::from_data(res, res, ch, standard_normal_vec(&mut rng, res * res * ch))
                .expect("probe image shape");
        let emb = Embedder::<f64>::embed_image(e, &img)?;
        if emb.len() != e.embed_dim() {
            return Err(fail(
                "embedder.dim",
                format!("embedding length {} != declared {}", emb.len(), e.embed_dim()),
            ));
        }
        let norm: f64 = emb.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(fail("embedder.unit_norm", format!("norm {norm}")));
        }
        let emb2 = Embedder::<f64>::embed_image(e, &img)?;
        if emb != emb2 {
            return Err(fail("embedder.determinism", "repeated embed differs".into()));
        }
    }
    let t = e.embed_text("probe")?;
    let tn: f64 = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (tn - 1.0).abs() > 1e-6 {
        return Err(fail("embedder.text_unit_norm", format!("norm {tn}")));
    }
    if t != e.embed_text("probe")? {
        return Err(fail("embedder.text_determinism", "repeated embed differs".into()));
    }
    Ok(())
}

pub fn check_sketcher(h: &dyn super::AnySketcher) -> Result<()> {
    let mut rng = rng_from_seed(PROBE_SEED ^ 2);
    let img = Image::from_data(16, 16, 1, standard_normal_vec(&mut rng, 256)).expect("probe");
    let sk = ImageToSketch::<f64>::sketchify(h, &img);
    if sk.channels != 1 {
        return Err(fail("sketcher.channels", format!("{} channels", sk.channels)));
    }
    if (sk.height, sk.width) != (img.height, img.width) {
        return Err(fail("sketcher.dims", "spatial dims changed".into()));
    }
    if sk.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(fail("sketcher.range", "values outside [0,1]".into()));
    }
    let sk2 = ImageToSketch::<f64>::sketchify(h, &img);
    if sk.data != sk2.data {
        return Err(fail("sketcher.determinism", "repeated sketch differs".into()));
    }
    Ok(())
}

/// Run the full suite on a backend set.
pub fn check_backends(b: &Backends) -> Result<()> {
    check_generator(b.generator.as_ref())?;
    check_embedder(b.embedder.as_ref())?;
    check_sketcher(b.sketcher.as_ref())?;
    Ok(())
}
