//! Content/style composition.
//!
//! The learned content latent drives the coarse synthesis layers; an
//! independently sampled style latent (truncated toward the average style)
//! drives the medium-to-fine layers. A paired draw renders the sample and the
//! average-content anchor with the *same* style so their fine detail matches
//! and embedding displacements isolate content.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::Generator;
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::image::Image;
use crate::rng::standard_normal_vec;
use crate::scalar::{lift, Real};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct StyleMixSpec {
    /// 1-based index of the first style-driven layer; layers below it read
    /// the content latent. `layer_count + 1` degenerates to content-only.
    pub crossover_layer: usize,
    /// Truncation factor Φ applied to the style latent (1 = untouched).
    pub style_truncation: f64,
    /// Optional truncation for the content latent during qualitative
    /// sampling only; training and FID sampling never truncate content.
    #[serde(default, deserialize_with = "de_truncation")]
    pub content_truncation: Option<f64>,
}

impl Default for StyleMixSpec {
    fn default() -> Self {
        StyleMixSpec {
            crossover_layer: 5,
            style_truncation: 0.5,
            content_truncation: None,
        }
    }
}

/// Accepts a number or the literal string `"none"`.
fn de_truncation<'de, D>(de: D) -> std::result::Result<Option<f64>, D::Error>
where
    D: serde::Deserializer<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Option::<Raw>::deserialize(de)? {
        None => Ok(None),
        Some(Raw::Num(x)) => Ok(Some(x)),
        Some(Raw::Text(s)) if s.eq_ignore_ascii_case("none") => Ok(None),
        Some(Raw::Text(s)) => Err(serde::de::Error::custom(format!(
            "content_truncation must be a number or \"none\", got \"{s}\""
        ))),
    }
}

impl StyleMixSpec {
    pub fn validate(&self, layer_count: usize) -> Result<()> {
        if self.crossover_layer < 1 || self.crossover_layer > layer_count + 1 {
            return Err(Error::config(format!(
                "crossover_layer {} out of range 1..={} for {layer_count} layers",
                self.crossover_layer,
                layer_count + 1
            )));
        }
        if !(0.0..=1.0).contains(&self.style_truncation) {
            return Err(Error::config(format!(
                "style_truncation {} outside [0, 1]",
                self.style_truncation
            )));
        }
        if let Some(ct) = self.content_truncation {
            if !(0.0..=1.0).contains(&ct) {
                return Err(Error::config(format!(
                    "content_truncation {ct} outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// `w_avg + phi * (w - w_avg)`. The endpoints are exact: `phi = 1` returns
/// `w` unchanged, `phi = 0` returns `w_avg`.
pub fn truncate<S: Real>(w: &[S], phi: f64, w_avg: &[S]) -> Vec<S> {
    debug_assert_eq!(w.len(), w_avg.len());
    if phi == 1.0 {
        return w.to_vec();
    }
    if phi == 0.0 {
        return w_avg.to_vec();
    }
    let p = S::from_f64(phi);
    w.iter()
        .zip(w_avg)
        .map(|(wi, ai)| ai.clone() + p.clone() * (wi.clone() - ai.clone()))
        .collect()
}

/// Which latent fed each synthesis layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSource {
    Content,
    Style,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoutingInfo {
    pub per_layer: Vec<LayerSource>,
}

/// Build the per-layer style list: content below the crossover, the (already
/// truncated) style at and above it.
pub fn compose_styles<S: Real>(
    content_w: &[S],
    style_w: &[S],
    crossover_layer: usize,
    layer_count: usize,
) -> (Vec<Vec<S>>, RoutingInfo) {
    let mut layers = Vec::with_capacity(layer_count);
    let mut routing = Vec::with_capacity(layer_count);
    for idx in 0..layer_count {
        if idx + 1 < crossover_layer {
            layers.push(content_w.to_vec());
            routing.push(LayerSource::Content);
        } else {
            layers.push(style_w.to_vec());
            routing.push(LayerSource::Style);
        }
    }
    (layers, RoutingInfo { per_layer: routing })
}

/// Render with content on layers below the crossover and the truncated style
/// on the rest. Requires the generator's cached average style.
pub fn mixed_synthesize<S: Real>(
    content_w: &[S],
    style_w: &[S],
    spec: &StyleMixSpec,
    g: &dyn Generator<S>,
) -> Result<Image<S>> {
    spec.validate(g.layer_count())?;
    let w_avg: Vec<S> = lift(&g.w_avg()?);
    let truncated = truncate(style_w, spec.style_truncation, &w_avg);
    let (styles, _) = compose_styles(content_w, &truncated, spec.crossover_layer, g.layer_count());
    Ok(g.synthesize(&styles))
}

/// One paired draw: the flow sample and the average-content anchor, rendered
/// with the same truncated style.
#[derive(Clone, Debug)]
pub struct PairedDraw<S> {
    pub eps: Vec<S>,
    pub z: Vec<S>,
    pub log_det: S,
    pub content_w: Vec<S>,
    /// Raw style latent before truncation (shared by both renders).
    pub style_w: Vec<S>,
    pub x: Image<S>,
    pub x_anchor: Image<S>,
}

/// Deterministic core of [`paired_sample`]: both latents supplied by the
/// caller.
pub fn paired_from_latents<S: Real>(
    flow: &Flow<S>,
    g: &dyn Generator<S>,
    spec: &StyleMixSpec,
    eps: Vec<S>,
    style_z: Vec<S>,
) -> Result<PairedDraw<S>> {
    spec.validate(g.layer_count())?;
    let w_avg: Vec<S> = lift(&g.w_avg()?);
    let (z, log_det) = flow.forward(&eps)?;
    let content_w = g.map_to_w(&z);
    let style_w = g.map_to_w(&style_z);
    let truncated = truncate(&style_w, spec.style_truncation, &w_avg);
    let (styles_x, _) = compose_styles(&content_w, &truncated, spec.crossover_layer, g.layer_count());
    let (styles_anchor, _) =
        compose_styles(&w_avg, &truncated, spec.crossover_layer, g.layer_count());
    let x = g.synthesize(&styles_x);
    let x_anchor = g.synthesize(&styles_anchor);
    Ok(PairedDraw {
        eps,
        z,
        log_det,
        content_w,
        style_w,
        x,
        x_anchor,
    })
}

/// Draw ε and a style latent from the prior (in that order), then render the
/// pair. The content latent is never truncated here.
pub fn paired_sample<S: Real>(
    flow: &Flow<S>,
    g: &dyn Generator<S>,
    spec: &StyleMixSpec,
    rng: &mut impl Rng,
) -> Result<PairedDraw<S>> {
    let eps: Vec<S> = lift(&standard_normal_vec(rng, g.latent_dim()));
    let style_z: Vec<S> = lift(&standard_normal_vec(rng, g.latent_dim()));
    paired_from_latents(flow, g, spec, eps, style_z)
}

// ── Sample-grid emitter ──────────────────────────────────────────────────

/// Metadata written next to every sample grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridMeta {
    pub seed: u64,
    pub phi: f64,
    pub crossover: usize,
    pub rows: usize,
    pub cols: usize,
    pub cell_height: usize,
    pub cell_width: usize,
    pub count: usize,
    pub config_fingerprint: String,
    pub checkpoint_step: u64,
}

/// Write a PNG grid plus its `<name>.json` metadata sidecar; returns the
/// sidecar path.
pub fn emit_sample_grid(
    png_path: &std::path::Path,
    images: &[Image<f64>],
    meta: &GridMeta,
) -> Result<std::path::PathBuf> {
    let grid = crate::imageio::compose_grid(images, meta.cols, 2)?;
    crate::imageio::save_unit_image(png_path, &grid)?;
    let json_path = png_path.with_extension("json");
    let text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::format(format!("grid metadata: {e}")))?;
    std::fs::write(&json_path, text)?;
    Ok(json_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::toy::{MappingKind, ToyGenerator};
    use crate::backends::{Generator, GeneratorMeta};
    use crate::flow::FlowConfig;
    use crate::rng::rng_from_seed;

    fn toy() -> ToyGenerator {
        let g = ToyGenerator::new(101);
        g.compute_w_avg(512).unwrap();
        g
    }

    #[test]
    fn truncate_endpoints_and_midpoint() {
        let w = vec![2.0f64, 0.0];
        let w_avg = vec![0.0f64, 0.0];
        assert_eq!(truncate(&w, 1.0, &w_avg), w);
        assert_eq!(truncate(&w, 0.0, &w_avg), w_avg);
        assert_eq!(truncate(&w, 0.5, &w_avg), vec![1.0, 0.0]);
    }

    #[test]
    fn same_latent_full_phi_equals_plain_synthesis() {
        let g = toy();
        let mut rng = rng_from_seed(1);
        let z = crate::rng::standard_normal_vec(&mut rng, 16);
        let w = Generator::<f64>::map_to_w(&g, &z);
        let spec = StyleMixSpec {
            crossover_layer: 5,
            style_truncation: 1.0,
            content_truncation: None,
        };
        let mixed = mixed_synthesize(&w, &w, &spec, &g).unwrap();
        let plain = Generator::<f64>::synthesize(&g, &vec![w.clone(); 8]);
        assert_eq!(mixed.data, plain.data);
    }

    #[test]
    fn degenerate_crossover_is_plain_content_synthesis() {
        let g = toy();
        let mut rng = rng_from_seed(2);
        let content = Generator::<f64>::map_to_w(&g, &crate::rng::standard_normal_vec(&mut rng, 16));
        let style = Generator::<f64>::map_to_w(&g, &crate::rng::standard_normal_vec(&mut rng, 16));
        let spec = StyleMixSpec {
            crossover_layer: 9, // L + 1
            style_truncation: 0.5,
            content_truncation: None,
        };
        let mixed = mixed_synthesize(&content, &style, &spec, &g).unwrap();
        let plain = Generator::<f64>::synthesize(&g, &vec![content.clone(); 8]);
        assert_eq!(mixed.data, plain.data);
    }

    #[test]
    fn crossover_out_of_range_rejected() {
        let g = toy();
        let w = vec![0.0f64; 16];
        for bad in [0usize, 10] {
            let spec = StyleMixSpec {
                crossover_layer: bad,
                style_truncation: 0.5,
                content_truncation: None,
            };
            assert!(matches!(
                mixed_synthesize(&w, &w, &spec, &g),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn style_changes_leave_coarse_statistic_unchanged() {
        let g = toy();
        let mut rng = rng_from_seed(3);
        let content = Generator::<f64>::map_to_w(&g, &crate::rng::standard_normal_vec(&mut rng, 16));
        let spec = StyleMixSpec::default();
        let style_a = Generator::<f64>::map_to_w(&g, &crate::rng::standard_normal_vec(&mut rng, 16));
        let style_b = Generator::<f64>::map_to_w(&g, &crate::rng::standard_normal_vec(&mut rng, 16));
        let img_a = mixed_synthesize(&content, &style_a, &spec, &g).unwrap();
        let img_b = mixed_synthesize(&content, &style_b, &spec, &g).unwrap();
        assert_ne!(img_a.data, img_b.data);
        assert_eq!(
            g.coarse_statistic(&img_a).to_bits(),
            g.coarse_statistic(&img_b).to_bits()
        );
    }

    #[test]
    fn paired_draw_shares_fine_statistics() {
        let g = toy();
        let mut rng = rng_from_seed(4);
        let flow = crate::flow::Flow::random(
            &FlowConfig {
                dim: 16,
                blocks: 4,
                hidden: 8,
                s_max: 2.0,
            },
            0.2,
            &mut rng,
        );
        let spec = StyleMixSpec::default();
        let draw = paired_sample(&flow, &g, &spec, &mut rng).unwrap();
        let fx = g.fine_statistic(&draw.x.to_f64());
        let fa = g.fine_statistic(&draw.x_anchor.to_f64());
        assert_eq!(fx.to_bits(), fa.to_bits());
    }

    #[test]
    fn paired_sample_is_seed_deterministic() {
        let g = toy();
        let mut rng_a = rng_from_seed(9);
        let mut rng_b = rng_from_seed(9);
        let flow = crate::flow::Flow::identity(
            &FlowConfig {
                dim: 16,
                blocks: 2,
                hidden: 8,
                s_max: 2.0,
            },
            &mut rng_from_seed(1),
        );
        let spec = StyleMixSpec::default();
        let a = paired_sample::<f64>(&flow, &g, &spec, &mut rng_a).unwrap();
        let b = paired_sample::<f64>(&flow, &g, &spec, &mut rng_b).unwrap();
        assert_eq!(a.x.data, b.x.data);
        assert_eq!(a.x_anchor.data, b.x_anchor.data);
    }

    #[test]
    fn forced_average_content_collapses_pair() {
        // Identity flow + identity mapping: ε = w_avg makes x and the anchor
        // identical.
        let g = ToyGenerator::with_mapping(55, MappingKind::Identity);
        g.compute_w_avg(256).unwrap();
        let w_avg = g.w_avg().unwrap();
        let flow = crate::flow::Flow::identity(
            &FlowConfig {
                dim: 16,
                blocks: 2,
                hidden: 8,
                s_max: 2.0,
            },
            &mut rng_from_seed(1),
        );
        let spec = StyleMixSpec::default();
        let style_z = crate::rng::standard_normal_vec(&mut rng_from_seed(2), 16);
        let draw = paired_from_latents(&flow, &g, &spec, w_avg, style_z).unwrap();
        assert_eq!(draw.x.data, draw.x_anchor.data);
    }
}
