//! Deterministic toy backends used by the test suite and desk-scale runs.
//!
//! The toy generator is constructed so coarse and fine synthesis layers write
//! to disjoint pixel lattices: layers 1–4 modulate low-resolution (blocky)
//! basis patterns supported on even rows, layers 5–8 modulate high-frequency
//! alternating patterns supported on odd rows. The designated coarse/fine
//! statistics therefore respond *bit-exactly* to their own layer group and
//! not at all to the other, which is what the style-mixing tests assert.

use std::sync::RwLock;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hash::{hash_bytes, hex64, Fnv1a};
use crate::image::Image;
use crate::rng::{rng_from_seed, standard_normal_vec, sub_seed};
use crate::scalar::Real;

use super::{
    Backends, EmbedderMeta, FeatureExtractor, Generator, GeneratorMeta, ImageShape,
    ImageToSketch, SketcherMeta,
};

const W_AVG_STREAM: u64 = 0x77_61_76_67; // "wavg"

/// Standard toy backend set (generator + embedder + sketcher + extractor).
pub fn toy_backends(seed: u64) -> Backends {
    Backends {
        generator: std::sync::Arc::new(ToyGenerator::new(seed)),
        embedder: std::sync::Arc::new(ToyEmbedder::new(sub_seed(seed, 1), 32, 32, 1)),
        sketcher: std::sync::Arc::new(SobelSketcher),
        extractor: std::sync::Arc::new(LinearFeatureExtractor::new(sub_seed(seed, 2), 16, 32, 1)),
    }
}

/// One-dimensional pipeline (identity generator) for analytic training checks.
pub fn scalar_backends(seed: u64) -> Backends {
    Backends {
        generator: std::sync::Arc::new(ScalarGenerator::new()),
        embedder: std::sync::Arc::new(ToyEmbedder::new(sub_seed(seed, 1), 8, 1, 1)),
        sketcher: std::sync::Arc::new(SobelSketcher),
        extractor: std::sync::Arc::new(LinearFeatureExtractor::new(sub_seed(seed, 2), 4, 1, 1)),
    }
}

// ── Toy generator ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MappingKind {
    /// `w = z`.
    Identity,
    /// `w = A z + b` with fixed seeded `A`, `b`.
    Affine,
}

pub struct ToyGenerator {
    latent_dim: usize,
    style_dim: usize,
    layers: usize,
    resolution: usize,
    seed: u64,
    mapping_a: Option<Vec<f64>>, // style_dim x latent_dim, None = identity
    mapping_b: Vec<f64>,
    layer_proj: Vec<Vec<f64>>,
    layer_bias: Vec<f64>,
    bases: Vec<Image<f64>>,
    base_image: Image<f64>,
    coarse_weight: Image<f64>,
    fine_weight: Image<f64>,
    w_avg: RwLock<Option<Vec<f64>>>,
}

impl ToyGenerator {
    pub fn new(seed: u64) -> Self {
        Self::with_mapping(seed, MappingKind::Affine)
    }

    pub fn with_mapping(seed: u64, mapping: MappingKind) -> Self {
        let d = 16;
        let layers = 8;
        let resolution = 32;
        let mut rng = rng_from_seed(sub_seed(seed, 0x10));

        let (mapping_a, mapping_b) = match mapping {
            MappingKind::Identity => (None, vec![0.0; d]),
            MappingKind::Affine => {
                let mut a = vec![0.0; d * d];
                for i in 0..d {
                    for j in 0..d {
                        let noise: f64 = rng.sample(rand_distr::StandardNormal);
                        a[i * d + j] = if i == j { 0.8 } else { 0.0 } + 0.2 * noise / (d as f64).sqrt();
                    }
                }
                let b = standard_normal_vec(&mut rng, d)
                    .into_iter()
                    .map(|v| 0.5 * v)
                    .collect();
                (Some(a), b)
            }
        };

        let layer_proj: Vec<Vec<f64>> = (0..layers)
            .map(|_| {
                standard_normal_vec(&mut rng, d)
                    .into_iter()
                    .map(|v| v / (d as f64).sqrt())
                    .collect()
            })
            .collect();
        let layer_bias: Vec<f64> = standard_normal_vec(&mut rng, layers)
            .into_iter()
            .map(|v| 0.2 * v)
            .collect();

        // Coarse bases: 4x4 random block patterns upsampled to full size,
        // masked to even rows. Fine bases: per-pixel alternating-sign noise,
        // masked to odd rows. Supports are disjoint by construction.
        let mut bases = Vec::with_capacity(layers);
        for l in 0..layers {
            let img = if l < 4 {
                let block = standard_normal_vec(&mut rng, 16);
                Image::from_fn(resolution, resolution, 1, |y, x, _| {
                    if y % 2 == 0 {
                        block[(y / 8) * 4 + (x / 8)]
                    } else {
                        0.0
                    }
                })
            } else {
                let noise = standard_normal_vec(&mut rng, resolution * resolution);
                Image::from_fn(resolution, resolution, 1, |y, x, _| {
                    if y % 2 == 1 {
                        let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                        sign * (0.5 + 0.5 * noise[y * resolution + x].abs())
                    } else {
                        0.0
                    }
                })
            };
            bases.push(img);
        }

        let base_image = Image::from_fn(resolution, resolution, 1, |y, x, _| {
            0.1 * (y as f64 / resolution as f64) + 0.05 * (x as f64 / resolution as f64)
        });
        let coarse_weight = Image::from_fn(resolution, resolution, 1, |y, x, _| {
            if y % 2 == 0 {
                1.0 + 0.5 * (std::f64::consts::TAU * x as f64 / resolution as f64).cos()
            } else {
                0.0
            }
        });
        let fine_weight = Image::from_fn(resolution, resolution, 1, |y, _x, _| {
            if y % 2 == 1 {
                1.0 + 0.5 * (std::f64::consts::TAU * y as f64 / resolution as f64).sin()
            } else {
                0.0
            }
        });

        ToyGenerator {
            latent_dim: d,
            style_dim: d,
            layers,
            resolution,
            seed,
            mapping_a,
            mapping_b,
            layer_proj,
            layer_bias,
            bases,
            base_image,
            coarse_weight,
            fine_weight,
            w_avg: RwLock::new(None),
        }
    }

    /// First style-driven layer (1-based) in the constructed coarse/fine split.
    pub fn native_crossover(&self) -> usize {
        5
    }

    pub fn mapping_bias(&self) -> &[f64] {
        &self.mapping_b
    }

    /// Mean of the low-frequency projection over the coarse support
    /// (even-row lattice). Independent of fine-layer styles, bit-exactly.
    pub fn coarse_statistic(&self, img: &Image<f64>) -> f64 {
        weighted_mean(img, &self.coarse_weight)
    }

    /// Mean of the high-frequency projection over the fine support
    /// (odd-row lattice). Independent of coarse-layer styles, bit-exactly.
    pub fn fine_statistic(&self, img: &Image<f64>) -> f64 {
        weighted_mean(img, &self.fine_weight)
    }
}

fn weighted_mean(img: &Image<f64>, weight: &Image<f64>) -> f64 {
    assert_eq!(img.data.len(), weight.data.len(), "statistic shape mismatch");
    let mut acc = 0.0;
    let mut count = 0usize;
    for (v, w) in img.data.iter().zip(&weight.data) {
        if *w != 0.0 {
            acc += v * w;
            count += 1;
        }
    }
    acc / count as f64
}

impl GeneratorMeta for ToyGenerator {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }
    fn style_dim(&self) -> usize {
        self.style_dim
    }
    fn layer_count(&self) -> usize {
        self.layers
    }
    fn image_shape(&self) -> ImageShape {
        ImageShape {
            height: self.resolution,
            width: self.resolution,
            channels: 1,
        }
    }
    fn weights_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        if let Some(a) = &self.mapping_a {
            h.write_f64s(a);
        }
        h.write_f64s(&self.mapping_b);
        for p in &self.layer_proj {
            h.write_f64s(p);
        }
        h.write_f64s(&self.layer_bias);
        for b in &self.bases {
            h.write_f64s(&b.data);
        }
        h.write_f64s(&self.base_image.data);
        h.finish()
    }
    fn w_avg(&self) -> Result<Vec<f64>> {
        self.w_avg
            .read()
            .expect("w_avg lock")
            .clone()
            .ok_or_else(|| Error::state("w_avg not computed; call compute_w_avg first"))
    }
    fn compute_w_avg(&self, n: usize) -> Result<Vec<f64>> {
        let avg = empirical_w_avg(self, n, sub_seed(self.seed, W_AVG_STREAM))?;
        *self.w_avg.write().expect("w_avg lock") = Some(avg.clone());
        Ok(avg)
    }
}

/// Shared empirical-mean implementation for all toy generators.
fn empirical_w_avg<G: Generator<f64> + ?Sized>(g: &G, n: usize, seed: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::argument("w_avg sample count must be >= 1"));
    }
    let mut rng = rng_from_seed(seed);
    let mut acc = vec![0.0; g.style_dim()];
    for _ in 0..n {
        let z = standard_normal_vec(&mut rng, g.latent_dim());
        let w = g.map_to_w(&z);
        for (a, wi) in acc.iter_mut().zip(&w) {
            *a += wi;
        }
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

impl<S: Real> Generator<S> for ToyGenerator {
    fn map_to_w(&self, z: &[S]) -> Vec<S> {
        debug_assert_eq!(z.len(), self.latent_dim);
        match &self.mapping_a {
            None => z.to_vec(),
            Some(a) => {
                let d = self.latent_dim;
                (0..self.style_dim)
                    .map(|i| {
                        let mut acc = S::from_f64(self.mapping_b[i]);
                        for j in 0..d {
                            acc = acc + S::from_f64(a[i * d + j]) * z[j].clone();
                        }
                        acc
                    })
                    .collect()
            }
        }
    }

    fn synthesize(&self, styles: &[Vec<S>]) -> Image<S> {
        assert_eq!(styles.len(), self.layers, "one style per layer");
        let mut out: Vec<S> = self.base_image.data.iter().map(|&v| S::from_f64(v)).collect();
        for (l, style) in styles.iter().enumerate() {
            debug_assert_eq!(style.len(), self.style_dim);
            let mut act = S::from_f64(self.layer_bias[l]);
            for (j, u) in self.layer_proj[l].iter().enumerate() {
                act = act + S::from_f64(*u) * style[j].clone();
            }
            for (idx, &bv) in self.bases[l].data.iter().enumerate() {
                if bv != 0.0 {
                    out[idx] = out[idx].clone() + act.clone() * S::from_f64(bv);
                }
            }
        }
        Image {
            height: self.resolution,
            width: self.resolution,
            channels: 1,
            data: out,
        }
    }
}

// ── One-dimensional generator for analytic checks ────────────────────────

/// Identity pipeline: `w = z` (d = 1) and the "image" is the single style
/// value, so the rendered sample is exactly the flow output.
pub struct ScalarGenerator {
    w_avg: RwLock<Option<Vec<f64>>>,
}

impl ScalarGenerator {
    pub fn new() -> Self {
        ScalarGenerator {
            w_avg: RwLock::new(None),
        }
    }
}

impl Default for ScalarGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl GeneratorMeta for ScalarGenerator {
    fn latent_dim(&self) -> usize {
        1
    }
    fn style_dim(&self) -> usize {
        1
    }
    fn layer_count(&self) -> usize {
        6
    }
    fn image_shape(&self) -> ImageShape {
        ImageShape {
            height: 1,
            width: 1,
            channels: 1,
        }
    }
    fn weights_hash(&self) -> u64 {
        hash_bytes(b"scalar-generator-v1")
    }
    fn w_avg(&self) -> Result<Vec<f64>> {
        self.w_avg
            .read()
            .expect("w_avg lock")
            .clone()
            .ok_or_else(|| Error::state("w_avg not computed; call compute_w_avg first"))
    }
    fn compute_w_avg(&self, n: usize) -> Result<Vec<f64>> {
        let avg = empirical_w_avg(self, n, sub_seed(0, W_AVG_STREAM))?;
        *self.w_avg.write().expect("w_avg lock") = Some(avg.clone());
        Ok(avg)
    }
}

impl<S: Real> Generator<S> for ScalarGenerator {
    fn map_to_w(&self, z: &[S]) -> Vec<S> {
        z.to_vec()
    }
    fn synthesize(&self, styles: &[Vec<S>]) -> Image<S> {
        assert_eq!(styles.len(), self.layer_count());
        Image {
            height: 1,
            width: 1,
            channels: 1,
            data: vec![styles[0][0].clone()],
        }
    }
}

// ── Degenerate constant generator ────────────────────────────────────────

/// Emits the same image regardless of styles; exercises the no-edges anchor
/// path.
pub struct ConstantGenerator {
    value: f64,
    resolution: usize,
    w_avg: RwLock<Option<Vec<f64>>>,
}

impl ConstantGenerator {
    pub fn new(value: f64, resolution: usize) -> Self {
        ConstantGenerator {
            value,
            resolution,
            w_avg: RwLock::new(None),
        }
    }
}

impl GeneratorMeta for ConstantGenerator {
    fn latent_dim(&self) -> usize {
        16
    }
    fn style_dim(&self) -> usize {
        16
    }
    fn layer_count(&self) -> usize {
        6
    }
    fn image_shape(&self) -> ImageShape {
        ImageShape {
            height: self.resolution,
            width: self.resolution,
            channels: 1,
        }
    }
    fn weights_hash(&self) -> u64 {
        Fnv1a::new().write_f64s(&[self.value]).finish()
    }
    fn w_avg(&self) -> Result<Vec<f64>> {
        self.w_avg
            .read()
            .expect("w_avg lock")
            .clone()
            .ok_or_else(|| Error::state("w_avg not computed; call compute_w_avg first"))
    }
    fn compute_w_avg(&self, n: usize) -> Result<Vec<f64>> {
        let avg = empirical_w_avg(self, n, sub_seed(1, W_AVG_STREAM))?;
        *self.w_avg.write().expect("w_avg lock") = Some(avg.clone());
        Ok(avg)
    }
}

impl<S: Real> Generator<S> for ConstantGenerator {
    fn map_to_w(&self, z: &[S]) -> Vec<S> {
        z.to_vec()
    }
    fn synthesize(&self, _styles: &[Vec<S>]) -> Image<S> {
        Image::from_fn(self.resolution, self.resolution, 1, |_, _, _| {
            S::from_f64(self.value)
        })
    }
}

// ── Toy embedder ─────────────────────────────────────────────────────────

/// Fixed-seed random projection of flattened pixels, then L2 normalization.
/// A small fixed bias keeps the zero image away from the normalization
/// singularity. The text side hashes the string to a seed and draws a
/// deterministic unit vector.
pub struct ToyEmbedder {
    embed_dim: usize,
    resolution: usize,
    channels: usize,
    seed: u64,
    proj: Vec<f64>, // embed_dim x (res*res*channels)
    bias: Vec<f64>,
}

impl ToyEmbedder {
    pub fn new(seed: u64, embed_dim: usize, resolution: usize, channels: usize) -> Self {
        let n_in = resolution * resolution * channels;
        let mut rng = rng_from_seed(sub_seed(seed, 0x20));
        let proj = standard_normal_vec(&mut rng, embed_dim * n_in)
            .into_iter()
            .map(|v| v / (n_in as f64).sqrt())
            .collect();
        let bias = standard_normal_vec(&mut rng, embed_dim)
            .into_iter()
            .map(|v| 0.05 * v)
            .collect();
        ToyEmbedder {
            embed_dim,
            resolution,
            channels,
            seed,
            proj,
            bias,
        }
    }
}

impl EmbedderMeta for ToyEmbedder {
    fn embed_dim(&self) -> usize {
        self.embed_dim
    }
    fn input_resolution(&self) -> usize {
        self.resolution
    }
    fn input_channels(&self) -> usize {
        self.channels
    }
    fn normalization(&self) -> Vec<(f64, f64)> {
        vec![(0.0, 1.0); self.channels]
    }
    fn weights_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_f64s(&self.proj);
        h.write_f64s(&self.bias);
        h.finish()
    }
    fn embed_text(&self, text: &str) -> Result<Vec<f64>> {
        if text.is_empty() {
            return Err(Error::argument("text to embed must be nonempty"));
        }
        let stream = hash_bytes(text.as_bytes());
        let mut rng = rng_from_seed(sub_seed(self.seed, stream));
        let v = standard_normal_vec(&mut rng, self.embed_dim);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

impl<S: Real> super::Embedder<S> for ToyEmbedder {
    fn embed_image(&self, img: &Image<S>) -> Result<Vec<S>> {
        let n_in = self.resolution * self.resolution * self.channels;
        if img.data.len() != n_in
            || img.height != self.resolution
            || img.width != self.resolution
            || img.channels != self.channels
        {
            return Err(Error::input(format!(
                "image {}x{}x{} does not match embedder contract {}x{}x{}",
                img.height,
                img.width,
                img.channels,
                self.resolution,
                self.resolution,
                self.channels
            )));
        }
        let mut v = Vec::with_capacity(self.embed_dim);
        for k in 0..self.embed_dim {
            let mut acc = S::from_f64(self.bias[k]);
            let row = &self.proj[k * n_in..(k + 1) * n_in];
            for (p, w) in img.data.iter().zip(row) {
                acc = acc + p.clone() * S::from_f64(*w);
            }
            v.push(acc);
        }
        let mut sq = S::zero();
        for x in &v {
            sq = sq + x.clone() * x.clone();
        }
        let norm = sq.sqrt();
        if norm.to_f64() < 1e-12 {
            return Err(Error::input("image embeds to the zero vector"));
        }
        let inv = S::one() / norm;
        Ok(v.into_iter().map(|x| x * inv.clone()).collect())
    }
}

// ── Toy image-to-sketch ──────────────────────────────────────────────────

/// Gradient-magnitude sketcher: Sobel responses squashed to [0, 1) by
/// `m / (1 + m)`. Borders are replicated so constant images yield exactly
/// zero response.
#[derive(Default)]
pub struct SobelSketcher;

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

impl SketcherMeta for SobelSketcher {
    fn weights_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        for row in SOBEL_X.iter().chain(SOBEL_Y.iter()) {
            h.write_f64s(row);
        }
        h.finish()
    }
}

impl<S: Real> ImageToSketch<S> for SobelSketcher {
    fn sketchify(&self, img: &Image<S>) -> Image<S> {
        let gray = img.to_single_channel();
        let h = gray.height;
        let w = gray.width;
        let at = |y: i64, x: i64| -> &S {
            let yc = y.clamp(0, h as i64 - 1) as usize;
            let xc = x.clamp(0, w as i64 - 1) as usize;
            gray.get(yc, xc, 0)
        };
        Image::from_fn(h, w, 1, |y, x, _| {
            // Taps are differenced against the center pixel (the kernels sum
            // to zero) so flat neighborhoods cancel exactly in float.
            let center = gray.get(y, x, 0);
            let mut gx = S::zero();
            let mut gy = S::zero();
            for dy in 0..3i64 {
                for dx in 0..3i64 {
                    let kx = SOBEL_X[dy as usize][dx as usize];
                    let ky = SOBEL_Y[dy as usize][dx as usize];
                    if kx == 0.0 && ky == 0.0 {
                        continue;
                    }
                    let v = at(y as i64 + dy - 1, x as i64 + dx - 1).clone()
                        - center.clone();
                    if kx != 0.0 {
                        gx = gx + v.clone() * S::from_f64(kx);
                    }
                    if ky != 0.0 {
                        gy = gy + v * S::from_f64(ky);
                    }
                }
            }
            let sq = gx.clone() * gx + gy.clone() * gy;
            if sq.to_f64() == 0.0 {
                S::zero()
            } else {
                let m = sq.sqrt();
                m.clone() / (S::one() + m)
            }
        })
    }
}

// ── Toy feature extractor ────────────────────────────────────────────────

/// Fixed random linear feature map for metric tests; resizes its input
/// (bicubic) to a declared working resolution, flattens, and projects.
pub struct LinearFeatureExtractor {
    feature_dim: usize,
    resolution: usize,
    channels: usize,
    proj: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearFeatureExtractor {
    pub fn new(seed: u64, feature_dim: usize, resolution: usize, channels: usize) -> Self {
        let n_in = resolution * resolution * channels;
        let mut rng = rng_from_seed(sub_seed(seed, 0x30));
        let proj = standard_normal_vec(&mut rng, feature_dim * n_in)
            .into_iter()
            .map(|v| v / (n_in as f64).sqrt())
            .collect();
        LinearFeatureExtractor {
            feature_dim,
            resolution,
            channels,
            proj,
            bias: vec![0.0; feature_dim],
        }
    }

    /// Same projection with the output shifted by `delta` (mean-shift oracle
    /// in the metric tests).
    pub fn with_bias_shift(&self, delta: &[f64]) -> Self {
        assert_eq!(delta.len(), self.feature_dim);
        LinearFeatureExtractor {
            feature_dim: self.feature_dim,
            resolution: self.resolution,
            channels: self.channels,
            proj: self.proj.clone(),
            bias: self.bias.iter().zip(delta).map(|(b, d)| b + d).collect(),
        }
    }
}

impl FeatureExtractor for LinearFeatureExtractor {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }
    fn fingerprint(&self) -> String {
        let mut h = Fnv1a::new();
        h.write_f64s(&self.proj);
        h.write_f64s(&self.bias);
        format!(
            "linear-d{}-r{}-{}",
            self.feature_dim,
            self.resolution,
            hex64(h.finish())
        )
    }
    fn extract(&self, img: &Image<f64>) -> Vec<f64> {
        let gray = if img.channels == self.channels {
            img.clone()
        } else {
            img.to_single_channel()
        };
        let resized = gray.resize_bicubic(self.resolution, self.resolution);
        let n_in = self.resolution * self.resolution * self.channels;
        (0..self.feature_dim)
            .map(|k| {
                let row = &self.proj[k * n_in..(k + 1) * n_in];
                self.bias[k]
                    + resized
                        .data
                        .iter()
                        .zip(row)
                        .map(|(p, w)| p * w)
                        .sum::<f64>()
            })
            .collect()
    }
}
