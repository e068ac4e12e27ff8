//! Generative evaluation: Fréchet feature distance and k-NN-manifold
//! precision/recall, following the measurement protocol of the source work
//! (untruncated content latents, one fresh style per sample, renders resized
//! to 256 with high-quality resampling before feature extraction).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::{Backends, FeatureExtractor, Generator};
use crate::error::{Error, Result};
use crate::flow::Flow;
use crate::hash::Fnv1a;
use crate::image::Image;
use crate::linalg::{mat_mul, sym_eigen, sym_sqrt, symmetry_residual, trace};
use crate::rng::{rng_from_seed, standard_normal_vec};
use crate::stylemix::{mixed_synthesize, StyleMixSpec};

const PSD_TOL: f64 = 1e-6;
const JITTER: f64 = 1e-6;

/// Gaussian fit of a feature set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// Row-major `dim x dim` covariance (sample covariance, `n - 1` divisor).
    pub cov: Vec<f64>,
    pub count: u64,
    pub extractor_fingerprint: String,
}

/// Mergeable partial sums for feature statistics.
#[derive(Clone, Debug)]
pub struct StatsAccumulator {
    dim: usize,
    count: u64,
    sum: Vec<f64>,
    outer: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        StatsAccumulator {
            dim,
            count: 0,
            sum: vec![0.0; dim],
            outer: vec![0.0; dim * dim],
        }
    }

    pub fn push(&mut self, feat: &[f64]) {
        assert_eq!(feat.len(), self.dim, "feature dimension");
        self.count += 1;
        for i in 0..self.dim {
            self.sum[i] += feat[i];
            for j in 0..self.dim {
                self.outer[i * self.dim + j] += feat[i] * feat[j];
            }
        }
    }

    pub fn merge(&mut self, other: &StatsAccumulator) {
        assert_eq!(self.dim, other.dim);
        self.count += other.count;
        for i in 0..self.dim {
            self.sum[i] += other.sum[i];
        }
        for i in 0..self.dim * self.dim {
            self.outer[i] += other.outer[i];
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finalize(&self, extractor_fingerprint: &str) -> Result<FeatureStats> {
        if self.count < 2 {
            return Err(Error::argument(format!(
                "need at least 2 samples for covariance, have {}",
                self.count
            )));
        }
        let n = self.count as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let mut cov = vec![0.0; self.dim * self.dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let centered = self.outer[i * self.dim + j] - n * mean[i] * mean[j];
                cov[i * self.dim + j] = centered / (n - 1.0);
            }
        }
        Ok(FeatureStats {
            dim: self.dim,
            mean,
            cov,
            count: self.count,
            extractor_fingerprint: extractor_fingerprint.to_string(),
        })
    }
}

pub fn stats_from_features(feats: &[Vec<f64>], fingerprint: &str) -> Result<FeatureStats> {
    let dim = feats
        .first()
        .ok_or_else(|| Error::argument("empty feature set"))?
        .len();
    let mut acc = StatsAccumulator::new(dim);
    for f in feats {
        acc.push(f);
    }
    acc.finalize(fingerprint)
}

// ── Fréchet distance ─────────────────────────────────────────────────────

/// `||μ_a - μ_b||² + Tr(Σ_a + Σ_b - 2 (Σ_a Σ_b)^{1/2})`.
///
/// The cross term is computed as `Tr(sqrt(Σ_a^{1/2} Σ_b Σ_a^{1/2}))` through
/// symmetric eigendecompositions; eigenvalues slightly negative from roundoff
/// are clamped, a diagonal jitter retry covers marginal cases, and anything
/// worse is a numeric error carrying the offending eigenvalue.
pub fn frechet_distance(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::argument(format!(
            "feature dims differ: {} vs {}",
            a.dim, b.dim
        )));
    }
    if a.count < 2 || b.count < 2 {
        return Err(Error::argument("stats must come from >= 2 samples"));
    }
    for (name, s) in [("a", a), ("b", b)] {
        let res = symmetry_residual(&s.cov, s.dim);
        if res > PSD_TOL {
            return Err(Error::numeric(format!(
                "covariance {name} asymmetric beyond tolerance: residual {res:.3e}"
            )));
        }
    }
    match frechet_inner(a, b, 0.0) {
        Ok(d) => Ok(d),
        Err(_) => frechet_inner(a, b, JITTER),
    }
}

fn frechet_inner(a: &FeatureStats, b: &FeatureStats, jitter: f64) -> Result<f64> {
    let n = a.dim;
    let mut cov_a = a.cov.clone();
    let mut cov_b = b.cov.clone();
    if jitter > 0.0 {
        for i in 0..n {
            cov_a[i * n + i] += jitter;
            cov_b[i * n + i] += jitter;
        }
    }
    let (root_a, min_a) = sym_sqrt(&cov_a, n);
    if min_a < -PSD_TOL {
        return Err(Error::numeric(format!(
            "covariance not PSD: min eigenvalue {min_a:.3e}"
        )));
    }
    let inner = mat_mul(&root_a, &mat_mul(&cov_b, &root_a, n), n);
    let (eigs, _) = sym_eigen(&inner, n);
    let mut tr_sqrt = 0.0;
    for &e in &eigs {
        if e < -PSD_TOL {
            return Err(Error::numeric(format!(
                "cross-covariance product not PSD: eigenvalue {e:.3e}"
            )));
        }
        tr_sqrt += e.max(0.0).sqrt();
    }
    let mean_sq: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let d = mean_sq + trace(&cov_a, n) + trace(&cov_b, n) - 2.0 * tr_sqrt;
    if d < -PSD_TOL {
        return Err(Error::numeric(format!(
            "Fréchet distance collapsed below zero: {d:.3e}"
        )));
    }
    Ok(d.max(0.0))
}

// ── Improved precision / recall ─────────────────────────────────────────

/// k-NN manifold membership: `precision` is the fraction of generated
/// features inside the real manifold, `recall` the fraction of real features
/// inside the generated manifold. Membership is decided on squared Euclidean
/// distances against each point's k-th-neighbor radius.
pub fn precision_recall(
    gen_feats: &[Vec<f64>],
    real_feats: &[Vec<f64>],
    k: usize,
) -> Result<(f64, f64)> {
    if k == 0 {
        return Err(Error::argument("k must be >= 1"));
    }
    for (name, set) in [("generated", gen_feats), ("real", real_feats)] {
        if set.len() < k + 1 {
            return Err(Error::argument(format!(
                "{name} set has {} points, need at least k+1 = {}",
                set.len(),
                k + 1
            )));
        }
    }
    let real_radii = knn_radii_sq(real_feats, k);
    let gen_radii = knn_radii_sq(gen_feats, k);
    let precision = fraction_inside(gen_feats, real_feats, &real_radii);
    let recall = fraction_inside(real_feats, gen_feats, &gen_radii);
    Ok((precision, recall))
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distance to the k-th nearest neighbor (excluding self) for every
/// point, via partial selection.
fn knn_radii_sq(set: &[Vec<f64>], k: usize) -> Vec<f64> {
    set.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut dists: Vec<f64> = set
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| dist_sq(p, q))
                .collect();
            let (_, kth, _) = dists.select_nth_unstable_by(k - 1, |a, b| {
                a.partial_cmp(b).expect("finite distances")
            });
            *kth
        })
        .collect()
}

fn fraction_inside(queries: &[Vec<f64>], manifold: &[Vec<f64>], radii_sq: &[f64]) -> f64 {
    let inside = queries
        .iter()
        .filter(|q| {
            manifold
                .iter()
                .zip(radii_sq)
                .any(|(m, r)| dist_sq(q, m) <= *r)
        })
        .count();
    inside as f64 / queries.len() as f64
}

// ── Sampling protocol ────────────────────────────────────────────────────

/// Measurement protocol. Defaults pin the quantitative procedure: 2500
/// untruncated content latents, one fresh style latent each, renders resized
/// to 256 before feature extraction.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalProtocol {
    pub n_samples: usize,
    pub resolution: usize,
    /// Truncation applied to the style latent during evaluation sampling
    /// (1 = none). Content latents are never truncated here.
    pub style_truncation: f64,
    pub pr_k: usize,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            n_samples: 2500,
            resolution: 256,
            style_truncation: 1.0,
            pr_k: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub sample_count: usize,
    pub resolution: usize,
    pub style_truncation: f64,
    pub content_truncated: bool,
    pub pr_k: usize,
    pub extractor_fingerprint: String,
    pub config_fingerprint: String,
}

/// Render the evaluation sample set and extract features. Content latents
/// pass through the flow untruncated; each sample gets a fresh style latent.
pub fn generate_eval_features(
    flow: &Flow<f64>,
    backends: &Backends,
    crossover_layer: usize,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let g: &dyn Generator<f64> = backends.generator.as_ref();
    let spec = StyleMixSpec {
        crossover_layer,
        style_truncation: protocol.style_truncation,
        content_truncation: None,
    };
    let mut rng = rng_from_seed(seed);
    let mut feats = Vec::with_capacity(protocol.n_samples);
    for _ in 0..protocol.n_samples {
        let eps = standard_normal_vec(&mut rng, g.latent_dim());
        let style_z = standard_normal_vec(&mut rng, g.latent_dim());
        let (z, _) = flow.forward(&eps)?;
        let content_w = g.map_to_w(&z);
        let style_w = g.map_to_w(&style_z);
        let img = mixed_synthesize(&content_w, &style_w, &spec, g)?;
        let resized = img.resize_bicubic(protocol.resolution, protocol.resolution);
        feats.push(backends.extractor.extract(&resized));
    }
    Ok(feats)
}

pub fn features_from_images<'a>(
    images: impl Iterator<Item = &'a Image<f64>>,
    extractor: &dyn FeatureExtractor,
    resolution: usize,
) -> Vec<Vec<f64>> {
    images
        .map(|img| extractor.extract(&img.resize_bicubic(resolution, resolution)))
        .collect()
}

/// Full FID evaluation against precomputed reference statistics.
pub fn eval_fid(
    flow: &Flow<f64>,
    backends: &Backends,
    reference: &FeatureStats,
    crossover_layer: usize,
    protocol: &EvalProtocol,
    seed: u64,
) -> Result<f64> {
    if protocol.n_samples < 2 {
        return Err(Error::argument(format!(
            "need at least 2 evaluation samples, got {}",
            protocol.n_samples
        )));
    }
    let fp = backends.extractor.fingerprint();
    if reference.extractor_fingerprint != fp {
        return Err(Error::FingerprintMismatch(format!(
            "reference stats were built with extractor '{}', active extractor is '{}'",
            reference.extractor_fingerprint, fp
        )));
    }
    let feats = generate_eval_features(flow, backends, crossover_layer, protocol, seed)?;
    let stats = stats_from_features(&feats, &fp)?;
    frechet_distance(&stats, reference)
}

// ── Reference statistics cache ───────────────────────────────────────────
//
// Little-endian binary layout:
//   magic "SKFLSTAT" | version u32 | dim u32 | count u64
//   | fingerprint (u32 len + UTF-8) | mean f64*dim | cov f64*dim*dim
//   | FNV-1a digest of the float payload (u64)

pub const STATS_MAGIC: &[u8; 8] = b"SKFLSTAT";
pub const STATS_VERSION: u32 = 1;

pub fn save_stats(path: &Path, stats: &FeatureStats) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(STATS_MAGIC);
    buf.extend_from_slice(&STATS_VERSION.to_le_bytes());
    buf.extend_from_slice(&(stats.dim as u32).to_le_bytes());
    buf.extend_from_slice(&stats.count.to_le_bytes());
    let fp = stats.extractor_fingerprint.as_bytes();
    buf.extend_from_slice(&(fp.len() as u32).to_le_bytes());
    buf.extend_from_slice(fp);
    let mut digest = Fnv1a::new();
    for v in stats.mean.iter().chain(stats.cov.iter()) {
        let b = v.to_le_bytes();
        digest.write(&b);
        buf.extend_from_slice(&b);
    }
    buf.extend_from_slice(&digest.finish().to_le_bytes());
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

pub fn load_stats(path: &Path) -> Result<FeatureStats> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let take = |pos: &mut usize, n: usize| -> Result<Vec<u8>> {
        if *pos + n > bytes.len() {
            return Err(Error::format("truncated stats cache"));
        }
        let out = bytes[*pos..*pos + n].to_vec();
        *pos += n;
        Ok(out)
    };
    let mut pos = 0usize;
    let magic = take(&mut pos, 8)?;
    if magic != STATS_MAGIC {
        return Err(Error::format("not a stats cache (bad magic)"));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != STATS_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: STATS_VERSION,
        });
    }
    let dim = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let fp_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let fingerprint = String::from_utf8(take(&mut pos, fp_len)?)
        .map_err(|_| Error::format("stats fingerprint is not valid UTF-8"))?;
    let mut digest = Fnv1a::new();
    let read_f64s = |pos: &mut usize, n: usize, digest: &mut Fnv1a| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let b: [u8; 8] = take(pos, 8)?.try_into().unwrap();
            digest.write(&b);
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    };
    let mean = read_f64s(&mut pos, dim, &mut digest)?;
    let cov = read_f64s(&mut pos, dim * dim, &mut digest)?;
    let stored = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    if stored != digest.finish() {
        return Err(Error::format("stats cache digest mismatch"));
    }
    Ok(FeatureStats {
        dim,
        mean,
        cov,
        count,
        extractor_fingerprint: fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{rng_from_seed, standard_normal_vec};

    fn stats_1d(mean: f64, var: f64) -> FeatureStats {
        FeatureStats {
            dim: 1,
            mean: vec![mean],
            cov: vec![var],
            count: 100,
            extractor_fingerprint: "test".into(),
        }
    }

    #[test]
    fn frechet_identical_stats_is_zero() {
        let a = stats_1d(0.3, 1.7);
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-12);
    }

    #[test]
    fn frechet_unit_gaussians_one_apart() {
        let a = stats_1d(0.0, 1.0);
        let b = stats_1d(1.0, 1.0);
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - 1.0).abs() <= 1e-8, "{d}");
    }

    #[test]
    fn frechet_diagonal_closed_form() {
        // Diagonal case: d² = Σ (μa-μb)² + Σ (σa + σb - 2√(σa σb)).
        let a = FeatureStats {
            dim: 2,
            mean: vec![0.5, -1.0],
            cov: vec![2.0, 0.0, 0.0, 0.5],
            count: 10,
            extractor_fingerprint: "t".into(),
        };
        let b = FeatureStats {
            dim: 2,
            mean: vec![-0.5, 0.0],
            cov: vec![1.0, 0.0, 0.0, 3.0],
            count: 10,
            extractor_fingerprint: "t".into(),
        };
        let expected = (1.0f64 + 1.0)
            + (2.0 + 1.0 - 2.0 * (2.0f64).sqrt())
            + (0.5 + 3.0 - 2.0 * (1.5f64).sqrt());
        let d = frechet_distance(&a, &b).unwrap();
        assert!((d - expected).abs() <= 1e-8, "{d} vs {expected}");
    }

    #[test]
    fn frechet_symmetry_and_nonnegativity_random() {
        let mut rng = rng_from_seed(4);
        for _ in 0..20 {
            let dim = 3;
            let make = |rng: &mut rand::rngs::StdRng| {
                let mut acc = StatsAccumulator::new(dim);
                for _ in 0..40 {
                    acc.push(&standard_normal_vec(rng, dim));
                }
                acc.finalize("t").unwrap()
            };
            let a = make(&mut rng);
            let b = make(&mut rng);
            let dab = frechet_distance(&a, &b).unwrap();
            let dba = frechet_distance(&b, &a).unwrap();
            assert!(dab >= 0.0);
            assert!((dab - dba).abs() <= 1e-8);
        }
    }

    #[test]
    fn frechet_rejects_asymmetric() {
        let mut a = stats_1d(0.0, 1.0);
        a.dim = 2;
        a.mean = vec![0.0, 0.0];
        a.cov = vec![1.0, 0.5, -0.5, 1.0];
        let b = FeatureStats {
            dim: 2,
            mean: vec![0.0, 0.0],
            cov: vec![1.0, 0.0, 0.0, 1.0],
            count: 10,
            extractor_fingerprint: "t".into(),
        };
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Numeric(_))));
    }

    #[test]
    fn mean_shift_gives_shift_squared() {
        let mut rng = rng_from_seed(9);
        let feats: Vec<Vec<f64>> = (0..200).map(|_| standard_normal_vec(&mut rng, 4)).collect();
        let delta = [0.7, -0.3, 0.2, 1.1];
        let shifted: Vec<Vec<f64>> = feats
            .iter()
            .map(|f| f.iter().zip(&delta).map(|(x, d)| x + d).collect())
            .collect();
        let a = stats_from_features(&feats, "t").unwrap();
        let b = stats_from_features(&shifted, "t").unwrap();
        let d = frechet_distance(&a, &b).unwrap();
        let expected: f64 = delta.iter().map(|d| d * d).sum();
        assert!((d - expected).abs() <= 1e-6, "{d} vs {expected}");
    }

    #[test]
    fn accumulator_merge_matches_single_pass() {
        let mut rng = rng_from_seed(3);
        let feats: Vec<Vec<f64>> = (0..50).map(|_| standard_normal_vec(&mut rng, 3)).collect();
        let mut whole = StatsAccumulator::new(3);
        for f in &feats {
            whole.push(f);
        }
        let mut left = StatsAccumulator::new(3);
        let mut right = StatsAccumulator::new(3);
        for (i, f) in feats.iter().enumerate() {
            if i % 2 == 0 {
                left.push(f);
            } else {
                right.push(f);
            }
        }
        left.merge(&right);
        let a = whole.finalize("t").unwrap();
        let b = left.finalize("t").unwrap();
        for (x, y) in a.cov.iter().zip(&b.cov) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn pr_identical_sets_are_perfect() {
        let mut rng = rng_from_seed(5);
        let feats: Vec<Vec<f64>> = (0..30).map(|_| standard_normal_vec(&mut rng, 4)).collect();
        let (p, r) = precision_recall(&feats, &feats, 3).unwrap();
        assert_eq!((p, r), (1.0, 1.0));
    }

    #[test]
    fn pr_disjoint_clusters_are_zero() {
        let mut rng = rng_from_seed(6);
        let near: Vec<Vec<f64>> = (0..25)
            .map(|_| standard_normal_vec(&mut rng, 4).iter().map(|v| v * 0.1).collect())
            .collect();
        let far: Vec<Vec<f64>> = (0..25)
            .map(|_| {
                standard_normal_vec(&mut rng, 4)
                    .iter()
                    .map(|v| v * 0.1 + 1000.0)
                    .collect()
            })
            .collect();
        let (p, r) = precision_recall(&near, &far, 3).unwrap();
        assert_eq!((p, r), (0.0, 0.0));
    }

    #[test]
    fn pr_permutation_invariant() {
        let mut rng = rng_from_seed(7);
        let gen: Vec<Vec<f64>> = (0..20).map(|_| standard_normal_vec(&mut rng, 3)).collect();
        let real: Vec<Vec<f64>> = (0..20).map(|_| standard_normal_vec(&mut rng, 3)).collect();
        let (p1, r1) = precision_recall(&gen, &real, 3).unwrap();
        let mut gen_perm = gen.clone();
        gen_perm.reverse();
        let mut real_perm = real.clone();
        real_perm.rotate_left(7);
        let (p2, r2) = precision_recall(&gen_perm, &real_perm, 3).unwrap();
        assert_eq!((p1, r1), (p2, r2));
    }

    #[test]
    fn pr_small_sets_rejected() {
        let pts: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        assert!(matches!(
            precision_recall(&pts, &pts, 3),
            Err(Error::Argument(_))
        ));
        assert!(matches!(
            precision_recall(&pts, &pts, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn stats_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.stats");
        let mut rng = rng_from_seed(8);
        let feats: Vec<Vec<f64>> = (0..40).map(|_| standard_normal_vec(&mut rng, 5)).collect();
        let stats = stats_from_features(&feats, "linear-test").unwrap();
        save_stats(&path, &stats).unwrap();
        let loaded = load_stats(&path).unwrap();
        assert_eq!(loaded, stats);
    }

    #[test]
    fn stats_cache_detects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.stats");
        let stats = stats_1d(0.0, 1.0);
        save_stats(&path, &stats).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 12] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(load_stats(&path).is_err());
    }

    #[test]
    fn default_protocol_pins_measurement() {
        let p = EvalProtocol::default();
        assert_eq!(p.n_samples, 2500);
        assert_eq!(p.resolution, 256);
        assert_eq!(p.style_truncation, 1.0);
        assert_eq!(p.pr_k, 3);
    }
}
