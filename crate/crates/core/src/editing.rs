//! Latent-direction editing and real-image editing.
//!
//! Both workflows lean on one fact: training never touches generator
//! weights, so any direction discovered on the source model keeps working on
//! controlled samples, and a real image inverted to per-layer styles can be
//! re-rendered with flow-sampled content driving the coarse layers.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::Generator;
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::image::Image;
use crate::rng::standard_normal_vec;
use crate::stylemix::{compose_styles, truncate, LayerSource, RoutingInfo, StyleMixSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatentSpace {
    Z,
    W,
    #[serde(alias = "w+")]
    WPlus,
}

/// A named, unit-normalized edit direction in one of the latent spaces.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EditDirection {
    pub space: LatentSpace,
    pub label: String,
    #[serde(default = "default_magnitude")]
    pub magnitude: f64,
    pub vector: Vec<f64>,
}

fn default_magnitude() -> f64 {
    1.0
}

impl EditDirection {
    /// Normalize the direction to unit length; zero vectors are invalid.
    pub fn normalized(mut self) -> Result<Self> {
        let norm: f64 = self.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::input(format!(
                "edit direction '{}' has zero norm",
                self.label
            )));
        }
        for v in &mut self.vector {
            *v /= norm;
        }
        Ok(self)
    }
}

/// Load a direction from its JSON file (`space`, `label`, `vector`, optional
/// `magnitude`); the vector is normalized on load.
pub fn load_direction(path: &Path) -> Result<EditDirection> {
    let text = std::fs::read_to_string(path)?;
    let dir: EditDirection = serde_json::from_str(&text)
        .map_err(|e| Error::format(format!("direction file {}: {e}", path.display())))?;
    dir.normalized()
}

pub fn save_direction(path: &Path, dir: &EditDirection) -> Result<()> {
    let text = serde_json::to_string_pretty(dir)
        .map_err(|e| Error::format(format!("direction serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

// ── Inverted latents (w'+ files) ─────────────────────────────────────────

/// Externally produced per-layer style list for a real image. The inversion
/// itself is out of scope; this module only consumes its output.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedLatent {
    pub w_plus: Vec<Vec<f64>>,
    pub source: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct WPlusHeader {
    layers: usize,
    style_dim: usize,
    dtype: String,
    #[serde(default)]
    source: Option<String>,
}

/// w'+ file format: one JSON header line (`layers`, `style_dim`,
/// `dtype: "f64le"`, optional `source`) followed by the raw little-endian
/// f64 payload, layer-major.
pub fn save_w_plus(path: &Path, inv: &InvertedLatent) -> Result<()> {
    let layers = inv.w_plus.len();
    let style_dim = inv.w_plus.first().map(|r| r.len()).unwrap_or(0);
    let header = WPlusHeader {
        layers,
        style_dim,
        dtype: "f64le".into(),
        source: inv.source.clone(),
    };
    let mut file = std::fs::File::create(path)?;
    let head = serde_json::to_string(&header)
        .map_err(|e| Error::format(format!("w+ header: {e}")))?;
    file.write_all(head.as_bytes())?;
    file.write_all(b"\n")?;
    for row in &inv.w_plus {
        if row.len() != style_dim {
            return Err(Error::input("ragged w+ rows"));
        }
        for v in row {
            file.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_w_plus(path: &Path) -> Result<InvertedLatent> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("w+ file missing header line"))?;
    let header: WPlusHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(format!("w+ header: {e}")))?;
    if header.dtype != "f64le" {
        return Err(Error::format(format!(
            "unsupported w+ dtype '{}'",
            header.dtype
        )));
    }
    let payload = &bytes[newline + 1..];
    let expect = header.layers * header.style_dim * 8;
    if payload.len() != expect {
        return Err(Error::format(format!(
            "w+ payload is {} bytes, expected {expect}",
            payload.len()
        )));
    }
    let mut w_plus = Vec::with_capacity(header.layers);
    let mut off = 0;
    for _ in 0..header.layers {
        let mut row = Vec::with_capacity(header.style_dim);
        for _ in 0..header.style_dim {
            row.push(f64::from_le_bytes(
                payload[off..off + 8].try_into().unwrap(),
            ));
            off += 8;
        }
        w_plus.push(row);
    }
    Ok(InvertedLatent {
        w_plus,
        source: header.source,
    })
}

// ── Latent editing on controlled samples ─────────────────────────────────

/// One drawn sample: its content latent and the style latent it was rendered
/// with (edits re-render with the same style).
#[derive(Clone, Debug)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub style_z: Vec<f64>,
}

/// Perturb the sample by `magnitude * direction` in the direction's declared
/// space and render through the standard style-mixing path.
///
/// Z- and W-space directions perturb the content latent before composition;
/// W+ directions perturb the composed per-layer style list, so a direction
/// supported on fine layers alters style entries only.
pub fn apply_latent_edit(
    sample: &LatentSample,
    edit: &EditDirection,
    g: &dyn Generator<f64>,
    spec: &StyleMixSpec,
) -> Result<Image<f64>> {
    spec.validate(g.layer_count())?;
    let w_avg = g.w_avg()?;
    let style_w = g.map_to_w(&sample.style_z);
    let truncated = truncate(&style_w, spec.style_truncation, &w_avg);
    let layers = g.layer_count();
    let m = edit.magnitude;

    let styles = match edit.space {
        LatentSpace::Z => {
            expect_dim(edit, g.latent_dim())?;
            let z: Vec<f64> = sample
                .z
                .iter()
                .zip(&edit.vector)
                .map(|(zi, d)| zi + m * d)
                .collect();
            let content_w = g.map_to_w(&z);
            compose_styles(&content_w, &truncated, spec.crossover_layer, layers).0
        }
        LatentSpace::W => {
            expect_dim(edit, g.style_dim())?;
            let content_w: Vec<f64> = g
                .map_to_w(&sample.z)
                .iter()
                .zip(&edit.vector)
                .map(|(wi, d)| wi + m * d)
                .collect();
            compose_styles(&content_w, &truncated, spec.crossover_layer, layers).0
        }
        LatentSpace::WPlus => {
            expect_dim(edit, g.style_dim() * layers)?;
            let content_w = g.map_to_w(&sample.z);
            let (mut styles, _) =
                compose_styles(&content_w, &truncated, spec.crossover_layer, layers);
            for (l, style) in styles.iter_mut().enumerate() {
                let seg = &edit.vector[l * g.style_dim()..(l + 1) * g.style_dim()];
                for (s, d) in style.iter_mut().zip(seg) {
                    *s += m * d;
                }
            }
            styles
        }
    };
    Ok(g.synthesize(&styles))
}

fn expect_dim(edit: &EditDirection, want: usize) -> Result<()> {
    if edit.vector.len() != want {
        return Err(Error::config(format!(
            "direction '{}' declared for {:?} space has dimension {}, application point expects {want}",
            edit.label,
            edit.space,
            edit.vector.len()
        )));
    }
    Ok(())
}

// ── Real-image editing ───────────────────────────────────────────────────

/// Re-render an inverted real image with flow-sampled content: layers below
/// the crossover read the mapped flow sample, the rest read the inverted
/// per-layer styles verbatim.
pub fn edit_real_image_with_content(
    inv: &InvertedLatent,
    content_z: &[f64],
    g: &dyn Generator<f64>,
    spec: &StyleMixSpec,
) -> Result<(Image<f64>, RoutingInfo)> {
    spec.validate(g.layer_count())?;
    let layers = g.layer_count();
    if inv.w_plus.len() != layers {
        return Err(Error::input(format!(
            "inverted latent has {} layers, generator expects {layers}",
            inv.w_plus.len()
        )));
    }
    for (l, row) in inv.w_plus.iter().enumerate() {
        if row.len() != g.style_dim() {
            return Err(Error::input(format!(
                "inverted latent layer {l} has dim {}, expected {}",
                row.len(),
                g.style_dim()
            )));
        }
    }
    let content_w = g.map_to_w(content_z);
    let mut styles = Vec::with_capacity(layers);
    let mut routing = Vec::with_capacity(layers);
    for l in 0..layers {
        if l + 1 < spec.crossover_layer {
            styles.push(content_w.clone());
            routing.push(LayerSource::Content);
        } else {
            styles.push(inv.w_plus[l].clone());
            routing.push(LayerSource::Style);
        }
    }
    Ok((g.synthesize(&styles), RoutingInfo { per_layer: routing }))
}

/// Draw content from the trained flow, then inject the inverted styles.
pub fn edit_real_image(
    inv: &InvertedLatent,
    flow: &Flow<f64>,
    g: &dyn Generator<f64>,
    spec: &StyleMixSpec,
    rng: &mut impl Rng,
) -> Result<(Image<f64>, RoutingInfo)> {
    let eps = standard_normal_vec(rng, g.latent_dim());
    let (z, _) = flow.forward(&eps)?;
    edit_real_image_with_content(inv, &z, g, spec)
}
