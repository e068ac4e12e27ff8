//! Invertible latent flow: a stack of affine coupling blocks with alternating
//! binary masks and an exact, closed-form log-determinant.
//!
//! Each block splits coordinates by index parity, conditions on the passive
//! half, and applies `y = x * exp(s) + t` to the active half with `s` squashed
//! through `s_max * tanh(raw)` so the log-determinant stays bounded. The
//! log|det| of a block is simply the sum of its `s` outputs; the flow total is
//! the sum over blocks. No Jacobian is ever materialized.
//!
//! Freshly initialized flows are exactly the identity map (final subnet layers
//! start at zero), so training starts from the source model's own prior.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::hash::Fnv1a;
use crate::scalar::Real;

/// Structural hyperparameters of the flow.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct FlowConfig {
    /// Latent dimensionality (matches the generator input).
    pub dim: usize,
    /// Number of coupling blocks.
    pub blocks: usize,
    /// Hidden width of the coupling subnetworks.
    pub hidden: usize,
    /// Squash bound for the log-scale outputs.
    pub s_max: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            dim: 512,
            blocks: 8,
            hidden: 256,
            s_max: 2.0,
        }
    }
}

/// Two-layer perceptron `out = W2 * tanh(W1 * x + b1) + b2`.
///
/// `in_dim` may be zero (the conditioning half can be empty for odd latent
/// dimensions); the output then degenerates to the trainable bias path.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// `hidden x in_dim`, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    /// `out_dim x hidden`, row-major.
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Real> Mlp<T> {
    fn shapes_ok(&self) -> bool {
        self.w1.len() == self.hidden * self.in_dim
            && self.b1.len() == self.hidden
            && self.w2.len() == self.out_dim * self.hidden
            && self.b2.len() == self.out_dim
    }

    pub fn eval(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut h = Vec::with_capacity(self.hidden);
        for i in 0..self.hidden {
            let mut acc = self.b1[i].clone();
            for j in 0..self.in_dim {
                acc = acc + self.w1[i * self.in_dim + j].clone() * x[j].clone();
            }
            h.push(acc.tanh());
        }
        let mut out = Vec::with_capacity(self.out_dim);
        for i in 0..self.out_dim {
            let mut acc = self.b2[i].clone();
            for j in 0..self.hidden {
                acc = acc + self.w2[i * self.hidden + j].clone() * h[j].clone();
            }
            out.push(acc);
        }
        out
    }

    fn tensors(&self) -> [&Vec<T>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> [&mut Vec<T>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// One affine coupling block. `parity` selects which index class is
/// transformed: indices `i` with `i % 2 == parity` are active, the rest
/// condition the subnetworks.
#[derive(Clone, Debug)]
pub struct CouplingBlock<T> {
    pub parity: u8,
    pub scale_net: Mlp<T>,
    pub shift_net: Mlp<T>,
}

#[derive(Clone, Debug)]
pub struct Flow<T> {
    dim: usize,
    hidden: usize,
    s_max: f64,
    blocks: Vec<CouplingBlock<T>>,
}

fn split_counts(dim: usize, parity: u8) -> (usize, usize) {
    let active = (0..dim).filter(|i| i % 2 == parity as usize).count();
    (active, dim - active)
}

impl<T: Real> Flow<T> {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn config(&self) -> FlowConfig {
        FlowConfig {
            dim: self.dim,
            blocks: self.blocks.len(),
            hidden: self.hidden,
            s_max: self.s_max,
        }
    }

    pub fn blocks(&self) -> &[CouplingBlock<T>] {
        &self.blocks
    }

    /// Assemble a flow from explicit blocks (used by tests that pin exact
    /// coupling parameters).
    pub fn from_blocks(
        dim: usize,
        hidden: usize,
        s_max: f64,
        blocks: Vec<CouplingBlock<T>>,
    ) -> Result<Self> {
        for (i, b) in blocks.iter().enumerate() {
            let (active, passive) = split_counts(dim, b.parity);
            let ok = b.scale_net.in_dim == passive
                && b.scale_net.out_dim == active
                && b.shift_net.in_dim == passive
                && b.shift_net.out_dim == active
                && b.scale_net.shapes_ok()
                && b.shift_net.shapes_ok();
            if !ok {
                return Err(Error::config(format!(
                    "coupling block {i} has inconsistent shapes for dim {dim}"
                )));
            }
        }
        Ok(Flow {
            dim,
            hidden,
            s_max,
            blocks,
        })
    }

    /// Map ε through the flow, returning the output latent and the exact
    /// log|det| of the Jacobian (sum of per-block squashed log-scales).
    pub fn forward(&self, eps: &[T]) -> Result<(Vec<T>, T)> {
        if eps.len() != self.dim {
            return Err(Error::config(format!(
                "input dimension {} does not match flow dimension {}",
                eps.len(),
                self.dim
            )));
        }
        let mut x = eps.to_vec();
        let mut log_det = T::zero();
        let s_max = T::from_f64(self.s_max);
        for block in &self.blocks {
            let parity = block.parity as usize;
            let passive: Vec<T> = x
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 2 != parity)
                .map(|(_, v)| v.clone())
                .collect();
            if block.scale_net.out_dim == 0 {
                continue;
            }
            let s: Vec<T> = block
                .scale_net
                .eval(&passive)
                .into_iter()
                .map(|raw| raw.tanh() * s_max.clone())
                .collect();
            let t = block.shift_net.eval(&passive);
            let mut k = 0;
            for i in 0..self.dim {
                if i % 2 == parity {
                    x[i] = x[i].clone() * s[k].exp() + t[k].clone();
                    log_det = log_det + s[k].clone();
                    k += 1;
                }
            }
        }
        Ok((x, log_det))
    }

    /// Exact inverse of [`Flow::forward`].
    pub fn inverse(&self, z: &[T]) -> Result<Vec<T>> {
        if z.len() != self.dim {
            return Err(Error::config(format!(
                "input dimension {} does not match flow dimension {}",
                z.len(),
                self.dim
            )));
        }
        let mut x = z.to_vec();
        let s_max = T::from_f64(self.s_max);
        for block in self.blocks.iter().rev() {
            let parity = block.parity as usize;
            let passive: Vec<T> = x
                .iter()
                .enumerate()
                .filter(|(i, _)| i % 2 != parity)
                .map(|(_, v)| v.clone())
                .collect();
            if block.scale_net.out_dim == 0 {
                continue;
            }
            let s: Vec<T> = block
                .scale_net
                .eval(&passive)
                .into_iter()
                .map(|raw| raw.tanh() * s_max.clone())
                .collect();
            let t = block.shift_net.eval(&passive);
            let mut k = 0;
            for i in 0..self.dim {
                if i % 2 == parity {
                    x[i] = (x[i].clone() - t[k].clone()) * (-s[k].clone()).exp();
                    k += 1;
                }
            }
        }
        Ok(x)
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(|b| {
                b.scale_net.tensors().iter().map(|t| t.len()).sum::<usize>()
                    + b.shift_net.tensors().iter().map(|t| t.len()).sum::<usize>()
            })
            .sum()
    }

    /// Parameters flattened in canonical order (blocks, then scale/shift net,
    /// then w1/b1/w2/b2). The same order is used by [`Flow::set_flat`],
    /// [`Flow::lift`], and the checkpoint format.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for block in &self.blocks {
            for net in [&block.scale_net, &block.shift_net] {
                for tensor in net.tensors() {
                    out.extend(tensor.iter().map(|v| v.to_f64()));
                }
            }
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "flat parameter length");
        let mut it = flat.iter();
        for block in &mut self.blocks {
            for net in [&mut block.scale_net, &mut block.shift_net] {
                for tensor in net.tensors_mut() {
                    for v in tensor.iter_mut() {
                        *v = T::from_f64(*it.next().unwrap());
                    }
                }
            }
        }
    }

    pub fn map_params<U: Real>(&self, mut f: impl FnMut(&T) -> U) -> Flow<U> {
        Flow {
            dim: self.dim,
            hidden: self.hidden,
            s_max: self.s_max,
            blocks: self
                .blocks
                .iter()
                .map(|b| CouplingBlock {
                    parity: b.parity,
                    scale_net: map_mlp(&b.scale_net, &mut f),
                    shift_net: map_mlp(&b.shift_net, &mut f),
                })
                .collect(),
        }
    }
}

fn init_mlp(
    rng: &mut impl Rng,
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    final_scale: f64,
) -> Mlp<f64> {
    let w1_scale = if in_dim > 0 {
        (1.0 / in_dim as f64).sqrt()
    } else {
        0.0
    };
    let mut normal = |scale: f64| -> f64 { scale * rng.sample::<f64, _>(rand_distr::StandardNormal) };
    Mlp {
        in_dim,
        hidden,
        out_dim,
        w1: (0..hidden * in_dim).map(|_| normal(w1_scale)).collect(),
        b1: vec![0.0; hidden],
        w2: (0..out_dim * hidden).map(|_| normal(final_scale)).collect(),
        b2: (0..out_dim).map(|_| normal(final_scale)).collect(),
    }
}

fn map_mlp<T: Real, U: Real>(net: &Mlp<T>, f: &mut impl FnMut(&T) -> U) -> Mlp<U> {
    Mlp {
        in_dim: net.in_dim,
        hidden: net.hidden,
        out_dim: net.out_dim,
        w1: net.w1.iter().map(&mut *f).collect(),
        b1: net.b1.iter().map(&mut *f).collect(),
        w2: net.w2.iter().map(&mut *f).collect(),
        b2: net.b2.iter().map(&mut *f).collect(),
    }
}

impl Flow<f64> {
    /// Identity-initialized flow: random first layers, zeroed final layers,
    /// so `forward` is exactly the identity and log|det| is exactly zero.
    pub fn identity(cfg: &FlowConfig, rng: &mut impl Rng) -> Self {
        Self::build(cfg, rng, 0.0)
    }

    /// Fully randomized flow (tests and property checks).
    pub fn random(cfg: &FlowConfig, final_scale: f64, rng: &mut impl Rng) -> Self {
        Self::build(cfg, rng, final_scale)
    }

    fn build(cfg: &FlowConfig, rng: &mut impl Rng, final_scale: f64) -> Self {
        let mut blocks = Vec::with_capacity(cfg.blocks);
        for k in 0..cfg.blocks {
            let parity = (k % 2) as u8;
            let (active, passive) = split_counts(cfg.dim, parity);
            blocks.push(CouplingBlock {
                parity,
                scale_net: init_mlp(rng, passive, cfg.hidden, active, final_scale),
                shift_net: init_mlp(rng, passive, cfg.hidden, active, final_scale),
            });
        }
        Flow {
            dim: cfg.dim,
            hidden: cfg.hidden,
            s_max: cfg.s_max,
            blocks,
        }
    }

    /// Lift onto a tape for training: every parameter becomes a leaf, in the
    /// canonical flat order. Returns the tape flow and the leaves.
    pub fn lift(&self, tape: &Tape) -> (Flow<Var>, Vec<Var>) {
        let mut leaves = Vec::with_capacity(self.param_count());
        let lifted = self.map_params(|&v| {
            let leaf = tape.leaf(v);
            leaves.push(leaf.clone());
            leaf
        });
        (lifted, leaves)
    }
}

/// Log-density of ε under the standard-normal base distribution:
/// `-0.5 * ||eps||^2 - (d/2) * ln(2π)`.
pub fn log_prob_base<S: Real>(eps: &[S]) -> S {
    let mut sq = S::zero();
    for e in eps {
        sq = sq + e.clone() * e.clone();
    }
    let d = eps.len() as f64;
    S::from_f64(-0.5) * sq + S::from_f64(-0.5 * d * (2.0 * std::f64::consts::PI).ln())
}

// ── Checkpoint format ────────────────────────────────────────────────────
//
// Versioned little-endian binary layout:
//
//   offset  size  field
//   0       8     magic "SKFLCKPT"
//   8       4     format version (u32, currently 1)
//   12      4     dim (u32)
//   16      4     blocks (u32)
//   20      4     hidden (u32)
//   24      8     s_max (f64)
//   32      K     per-block mask parity (u8 each)
//   ..      8     training step counter (u64)
//   ..      4+N   config fingerprint (u32 length + UTF-8 bytes)
//   ..      8     parameter count (u64)
//   ..      8*P   parameters (f64, canonical flat order)
//   ..      8     FNV-1a digest of the parameter bytes (u64)

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SKFLCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub flow: Flow<f64>,
    pub step: u64,
    pub fingerprint: String,
}

pub fn save_checkpoint(
    path: &Path,
    flow: &Flow<f64>,
    step: u64,
    fingerprint: &str,
) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(flow.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(flow.blocks.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(flow.hidden as u32).to_le_bytes());
    buf.extend_from_slice(&flow.s_max.to_le_bytes());
    for b in &flow.blocks {
        buf.push(b.parity);
    }
    buf.extend_from_slice(&step.to_le_bytes());
    let fp = fingerprint.as_bytes();
    buf.extend_from_slice(&(fp.len() as u32).to_le_bytes());
    buf.extend_from_slice(fp);
    let flat = flow.to_flat();
    buf.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    let mut digest = Fnv1a::new();
    for v in &flat {
        let bytes = v.to_le_bytes();
        digest.write(&bytes);
        buf.extend_from_slice(&bytes);
    }
    buf.extend_from_slice(&digest.finish().to_le_bytes());
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor::new(&bytes);

    let magic = cur.take_arr::<8>()?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::format("not a flow checkpoint (bad magic)"));
    }
    let version = u32::from_le_bytes(cur.take_arr()?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let dim = u32::from_le_bytes(cur.take_arr()?) as usize;
    let blocks = u32::from_le_bytes(cur.take_arr()?) as usize;
    let hidden = u32::from_le_bytes(cur.take_arr()?) as usize;
    let s_max = f64::from_le_bytes(cur.take_arr()?);
    let mut parities = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        parities.push(cur.take_arr::<1>()?[0]);
    }
    let step = u64::from_le_bytes(cur.take_arr()?);
    let fp_len = u32::from_le_bytes(cur.take_arr()?) as usize;
    let fingerprint = String::from_utf8(cur.take_vec(fp_len)?)
        .map_err(|_| Error::format("fingerprint is not valid UTF-8"))?;
    let count = u64::from_le_bytes(cur.take_arr()?) as usize;

    // Rebuild the structure, then fill parameters in canonical order.
    let mut flow_blocks = Vec::with_capacity(blocks);
    for &parity in &parities {
        let (active, passive) = split_counts(dim, parity);
        let empty = |in_dim: usize, out_dim: usize| Mlp {
            in_dim,
            hidden,
            out_dim,
            w1: vec![0.0; hidden * in_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; out_dim * hidden],
            b2: vec![0.0; out_dim],
        };
        flow_blocks.push(CouplingBlock {
            parity,
            scale_net: empty(passive, active),
            shift_net: empty(passive, active),
        });
    }
    let mut flow = Flow::from_blocks(dim, hidden, s_max, flow_blocks)?;
    if count != flow.param_count() {
        return Err(Error::format(format!(
            "parameter count {count} does not match structure ({})",
            flow.param_count()
        )));
    }
    let mut flat = Vec::with_capacity(count);
    let mut digest = Fnv1a::new();
    for _ in 0..count {
        let arr = cur.take_arr::<8>()?;
        digest.write(&arr);
        flat.push(f64::from_le_bytes(arr));
    }
    let stored = u64::from_le_bytes(cur.take_arr()?);
    if stored != digest.finish() {
        return Err(Error::format("checkpoint parameter digest mismatch"));
    }
    flow.set_flat(&flat);
    Ok(Checkpoint {
        flow,
        step,
        fingerprint,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }
    fn take_arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        let v = self.take_vec(N)?;
        Ok(v.try_into().expect("length checked"))
    }
    fn take_vec(&mut self, n: usize) -> Result<Vec<u8>> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format("truncated checkpoint"));
        }
        let out = self.bytes[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Ok(out)
    }
}
