//! Pluggable interfaces for the frozen source networks.
//!
//! Three handles drive the pipeline: the generator (latent → style → image),
//! the joint image/text embedder, and the image-to-sketch translator. All
//! handles are immutable after construction and deterministic given inputs;
//! the weight hash is the freezing witness checked before/after training.
//!
//! The image-path methods are generic over the pipeline scalar so the same
//! adapter serves plain evaluation (`f64`) and gradient-based training
//! ([`Var`]). Adapters are discovered by kind through [`BackendRegistry`];
//! real-weight adapters register their own loaders and must pass the
//! conformance suite before use.

pub mod conformance;
pub mod toy;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

// ── Generator ────────────────────────────────────────────────────────────

/// Scalar-independent generator metadata and cached state.
pub trait GeneratorMeta: Send + Sync {
    fn latent_dim(&self) -> usize;
    fn style_dim(&self) -> usize;
    fn layer_count(&self) -> usize;
    fn image_shape(&self) -> ImageShape;
    /// Bit-exact digest of all frozen weights.
    fn weights_hash(&self) -> u64;
    /// Cached average style; `Err(State)` until [`GeneratorMeta::compute_w_avg`] ran.
    fn w_avg(&self) -> Result<Vec<f64>>;
    /// Empirical mean of the mapping over `n` standard-normal latents,
    /// cached on the handle. Sampling is seeded from the handle itself so the
    /// result is a property of the generator, not of the run.
    fn compute_w_avg(&self, n: usize) -> Result<Vec<f64>>;
}

pub trait Generator<S: Real>: GeneratorMeta {
    /// Mapping network `M: z -> w`.
    fn map_to_w(&self, z: &[S]) -> Vec<S>;
    /// Synthesis from one style vector per layer (`layer_count` entries).
    fn synthesize(&self, styles: &[Vec<S>]) -> Image<S>;
}

/// Generator usable for both evaluation and differentiable training.
pub trait AnyGenerator: Generator<f64> + Generator<Var> {}
impl<T: Generator<f64> + Generator<Var>> AnyGenerator for T {}

// ── Embedder ─────────────────────────────────────────────────────────────

/// Scalar-independent embedder metadata, including the preprocessing
/// contract (resolution, channels, per-channel affine normalization).
pub trait EmbedderMeta: Send + Sync {
    fn embed_dim(&self) -> usize;
    fn input_resolution(&self) -> usize;
    fn input_channels(&self) -> usize;
    /// Per-channel `(mean, std)` applied after the resize.
    fn normalization(&self) -> Vec<(f64, f64)>;
    fn weights_hash(&self) -> u64;
    /// Deterministic unit-norm text embedding. Empty strings are rejected.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>>;
}

pub trait Embedder<S: Real>: EmbedderMeta {
    /// Unit-norm image embedding. The input must already match the
    /// preprocessing contract (see [`preprocess_for_embedder`]).
    fn embed_image(&self, img: &Image<S>) -> Result<Vec<S>>;
}

pub trait AnyEmbedder: Embedder<f64> + Embedder<Var> {}
impl<T: Embedder<f64> + Embedder<Var>> AnyEmbedder for T {}

/// Channel conversion plus bilinear resize to the embedder's declared
/// resolution (the geometric half of the preprocessing contract).
pub fn adapt_geometry<S: Real>(meta: &dyn EmbedderMeta, img: &Image<S>) -> Image<S> {
    let want_c = meta.input_channels();
    let adapted = if img.channels == want_c {
        img.clone()
    } else if want_c == 1 {
        img.to_single_channel()
    } else {
        img.to_single_channel().replicate_channels(want_c)
    };
    let res = meta.input_resolution();
    adapted.resize_bilinear(res, res)
}

/// Per-channel affine normalization declared by the embedder.
pub fn normalize_channels<S: Real>(meta: &dyn EmbedderMeta, img: &Image<S>) -> Image<S> {
    let norms = meta.normalization();
    if norms.iter().all(|&(m, s)| m == 0.0 && s == 1.0) {
        return img.clone();
    }
    Image::from_fn(img.height, img.width, img.channels, |y, x, ch| {
        let (mean, std) = norms[ch.min(norms.len() - 1)];
        (img.get(y, x, ch).clone() - S::from_f64(mean)) * S::from_f64(1.0 / std)
    })
}

/// Full preprocessing contract: geometry adaptation then normalization.
pub fn preprocess_for_embedder<S: Real>(meta: &dyn EmbedderMeta, img: &Image<S>) -> Image<S> {
    normalize_channels(meta, &adapt_geometry(meta, img))
}

// ── Image-to-sketch ──────────────────────────────────────────────────────

pub trait SketcherMeta: Send + Sync {
    fn weights_hash(&self) -> u64;
}

pub trait ImageToSketch<S: Real>: SketcherMeta {
    /// Deterministic single-channel sketch with values in [0, 1], same
    /// spatial dimensions as the input.
    fn sketchify(&self, img: &Image<S>) -> Image<S>;
}

pub trait AnySketcher: ImageToSketch<f64> + ImageToSketch<Var> {}
impl<T: ImageToSketch<f64> + ImageToSketch<Var>> AnySketcher for T {}

// ── Feature extractor (evaluation metrics) ──────────────────────────────

/// Deep-feature extractor backing FID and precision/recall. Evaluation only,
/// so no differentiable path is required.
pub trait FeatureExtractor: Send + Sync {
    fn feature_dim(&self) -> usize;
    /// Identity string embedded in stats caches; a mismatch between cache
    /// and active extractor aborts evaluation.
    fn fingerprint(&self) -> String;
    fn extract(&self, img: &Image<f64>) -> Vec<f64>;
}

// ── Backend set and registry ─────────────────────────────────────────────

#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn AnyGenerator>,
    pub embedder: Arc<dyn AnyEmbedder>,
    pub sketcher: Arc<dyn AnySketcher>,
    pub extractor: Arc<dyn FeatureExtractor>,
}

impl Backends {
    /// Combined digest of all frozen weights; compared before/after training.
    pub fn weights_digest(&self) -> u64 {
        let mut h = crate::hash::Fnv1a::new();
        h.write_u64(self.generator.weights_hash());
        h.write_u64(self.embedder.weights_hash());
        h.write_u64(self.sketcher.weights_hash());
        h.finish()
    }
}

/// Backend selection block as it appears in run configs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct BackendSpec {
    /// Adapter kind, e.g. `toy`.
    pub kind: String,
    /// Weight file for real adapters; unused by toys.
    #[serde(default)]
    pub weights: Option<PathBuf>,
    /// Construction seed for toy backends.
    #[serde(default = "default_backend_seed")]
    pub seed: u64,
}

fn default_backend_seed() -> u64 {
    0x5eed_ba5e
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec {
            kind: "toy".into(),
            weights: None,
            seed: default_backend_seed(),
        }
    }
}

type Loader = Box<dyn Fn(&BackendSpec) -> Result<Backends> + Send + Sync>;

/// Maps adapter kinds to loader functions. `toy` and `toy-1d` ship built in;
/// real-weight adapters (source GAN checkpoints, embedder weights, sketch
/// network weights) register here and are subject to the same conformance
/// suite.
pub struct BackendRegistry {
    loaders: BTreeMap<String, Loader>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut reg = BackendRegistry {
            loaders: BTreeMap::new(),
        };
        reg.register("toy", |spec| Ok(toy::toy_backends(spec.seed)));
        reg.register("toy-1d", |spec| Ok(toy::scalar_backends(spec.seed)));
        reg
    }
}

impl BackendRegistry {
    pub fn register(
        &mut self,
        kind: &str,
        loader: impl Fn(&BackendSpec) -> Result<Backends> + Send + Sync + 'static,
    ) {
        self.loaders.insert(kind.to_string(), Box::new(loader));
    }

    pub fn kinds(&self) -> Vec<&str> {
        self.loaders.keys().map(|k| k.as_str()).collect()
    }

    /// Construct the backend set for `spec` and run the conformance suite on
    /// it before handing it out.
    pub fn load(&self, spec: &BackendSpec) -> Result<Backends> {
        let loader = self.loaders.get(&spec.kind).ok_or_else(|| {
            Error::backend(format!(
                "no adapter registered for kind '{}'; available: {}",
                spec.kind,
                self.kinds().join(", ")
            ))
        })?;
        let backends = loader(spec)?;
        conformance::check_backends(&backends)?;
        Ok(backends)
    }
}
