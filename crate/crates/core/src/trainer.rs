//! Objective assembly and the training loop.
//!
//! Each step draws one ε, pushes it through the flow, renders the
//! style-paired sample, and minimizes
//! `l_jac + l_zprior + λ * l_energy` where `l_jac = -log|det|`,
//! `l_zprior = 0.5 ||z||²` (additive constant dropped), and `l_energy` is the
//! configured embedding-space energy. Batch size is one by construction.
//! Backends stay frozen; only flow parameters receive updates.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::rngs::StdRng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::backends::{Backends, Embedder, Generator};
use crate::energy::{
    dir_energy_from_embeddings, embed_pipeline, global_energy_from_embeddings,
    nce_energy_from_embeddings, refreshed_anchors, sample_shift, AnchorSet, Shift,
    SketchReference,
};
use crate::error::{Error, Result};
use crate::evalkit::{eval_fid, EvalProtocol, FeatureStats};
use crate::flow::{save_checkpoint, Flow, FlowConfig};
use crate::image::Image;
use crate::rng::{rng_from_seed, standard_normal_vec, sub_seed};
use crate::scalar::{lift, Real};
use crate::stylemix::{paired_from_latents, StyleMixSpec};

const INIT_STREAM: u64 = 0x1417;
const PROBE_STREAM: u64 = 0x9806;

// ── Configuration ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyVariant {
    Global,
    Dir,
    Nce,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Linear decay from the base rate to zero across the run.
    Linear,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OptimizerConfig {
    pub name: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            name: "adam".into(),
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Energy weight λ (grid-searched over {1000, 2000, 5000} upstream;
    /// 2000 is the general setting, 5000 for the standing-cat case).
    pub lambda_energy: f64,
    /// Contrastive temperature r.
    pub nce_temperature: f64,
    pub energy_variant: EnergyVariant,
    pub augment: bool,
    pub max_shift: f64,
    /// 5 for synthetic-sketch cases, 10 for hand sketches.
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Pinned to 1; larger batches break the training regime.
    pub batch_size: usize,
    /// Pinned to 1.
    pub grad_accumulation: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub w_avg_samples: usize,
    /// Probe FID every N epochs (0 = off); the probed metric drives
    /// best-checkpoint selection.
    pub fid_probe_every_epochs: usize,
    pub fid_probe_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_energy: 2000.0,
            nce_temperature: 0.1,
            energy_variant: EnergyVariant::Nce,
            augment: false,
            max_shift: 0.125,
            epochs: 5,
            steps_per_epoch: 2000,
            batch_size: 1,
            grad_accumulation: 1,
            optimizer: OptimizerConfig::default(),
            schedule: LrSchedule::Constant,
            seed: 42,
            w_avg_samples: 10_000,
            fid_probe_every_epochs: 0,
            fid_probe_samples: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::config(format!(
                "batch_size is pinned to 1, got {}",
                self.batch_size
            )));
        }
        if self.grad_accumulation != 1 {
            return Err(Error::config(format!(
                "grad_accumulation is pinned to 1, got {}",
                self.grad_accumulation
            )));
        }
        if self.optimizer.name != "adam" {
            return Err(Error::config(format!(
                "unknown optimizer '{}'; available: adam",
                self.optimizer.name
            )));
        }
        if self.optimizer.lr <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.epochs == 0 || self.steps_per_epoch == 0 {
            return Err(Error::config("epochs and steps_per_epoch must be >= 1"));
        }
        if self.nce_temperature <= 0.0 {
            return Err(Error::config("nce_temperature must be positive"));
        }
        if !(0.0..=0.25).contains(&self.max_shift) {
            return Err(Error::config(format!(
                "max_shift {} outside [0, 0.25]",
                self.max_shift
            )));
        }
        Ok(())
    }
}

// ── Loss bookkeeping ─────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_jac: f64,
    pub l_zprior: f64,
    pub l_energy: f64,
    pub total: f64,
    /// The energy term was skipped this step (degenerate displacement).
    #[serde(skip)]
    pub energy_skipped: bool,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.l_jac.is_finite()
            && self.l_zprior.is_finite()
            && self.l_energy.is_finite()
            && self.total.is_finite()
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub l_jac: f64,
    pub l_zprior: f64,
    pub l_energy: f64,
    pub total: f64,
}

// ── Pluggable step energy ────────────────────────────────────────────────

pub struct EnergyContext<'a, S: Real> {
    pub x: &'a Image<S>,
    /// Style-paired anchor render for this step (constant w.r.t. the flow).
    pub x_anchor: &'a Image<f64>,
    pub sketch: &'a Image<f64>,
    pub anchors: &'a AnchorSet,
    pub embedder: &'a dyn Embedder<S>,
    pub embedder_eval: &'a dyn Embedder<f64>,
    pub shift: Option<Shift>,
    pub temperature: f64,
}

/// Scalar energy of the differentiable sample. The standard embedding-space
/// variants implement this; tests plug in analytic energies.
pub trait StepEnergy<S: Real>: Send + Sync {
    fn eval(&self, ctx: &EnergyContext<'_, S>) -> Result<S>;
}

/// The three paper-variant energies.
pub struct StandardEnergy {
    pub variant: EnergyVariant,
}

impl<S: Real> StepEnergy<S> for StandardEnergy {
    fn eval(&self, ctx: &EnergyContext<'_, S>) -> Result<S> {
        let e_x = embed_pipeline(ctx.embedder, ctx.x, ctx.shift)?;
        let sketch_s: Image<S> = Image::lift_from(ctx.sketch);
        match self.variant {
            EnergyVariant::Global => {
                let e_c = embed_pipeline(ctx.embedder, &sketch_s, ctx.shift)?;
                Ok(global_energy_from_embeddings(&e_x, &e_c))
            }
            EnergyVariant::Dir => {
                let step_anchors =
                    refreshed_anchors(ctx.anchors, ctx.x_anchor, ctx.embedder_eval, ctx.shift)?;
                let e_c =
                    embed_pipeline::<f64>(ctx.embedder_eval, ctx.sketch, ctx.shift)?;
                dir_energy_from_embeddings(
                    &e_x,
                    &lift(&e_c),
                    &lift(&step_anchors.e_xo),
                    &lift(&step_anchors.e_co),
                )
            }
            EnergyVariant::Nce => {
                let step_anchors =
                    refreshed_anchors(ctx.anchors, ctx.x_anchor, ctx.embedder_eval, ctx.shift)?;
                let e_c =
                    embed_pipeline::<f64>(ctx.embedder_eval, ctx.sketch, ctx.shift)?;
                nce_energy_from_embeddings(
                    &e_x,
                    &lift(&e_c),
                    &lift(&step_anchors.e_xo),
                    &lift(&step_anchors.e_co),
                    &lift(&step_anchors.e_to),
                    ctx.temperature,
                )
            }
        }
    }
}

/// `(mean pixel - target)²`: the minimal analytic energy used by the
/// closed-form recovery checks.
pub struct QuadraticPixelEnergy {
    pub target: f64,
}

impl<S: Real> StepEnergy<S> for QuadraticPixelEnergy {
    fn eval(&self, ctx: &EnergyContext<'_, S>) -> Result<S> {
        let n = ctx.x.data.len();
        let mut acc = S::zero();
        for v in &ctx.x.data {
            acc = acc + v.clone();
        }
        let mean = acc * S::from_f64(1.0 / n as f64);
        let d = mean - S::from_f64(self.target);
        Ok(d.clone() * d)
    }
}

// ── Objective evaluation (shared by training and gradient checks) ───────

pub struct ObjectiveTerms<S: Real> {
    pub l_jac: S,
    pub l_zprior: S,
    pub l_energy: S,
    pub energy_skipped: bool,
}

/// Evaluate the three loss terms for given latents. Pure in (flow, latents,
/// shift): finite-difference checks re-run it at perturbed parameters with
/// identical draws.
#[allow(clippy::too_many_arguments)]
pub fn objective_terms<S: Real>(
    flow: &Flow<S>,
    generator: &dyn Generator<S>,
    embedder: &dyn Embedder<S>,
    embedder_eval: &dyn Embedder<f64>,
    anchors: &AnchorSet,
    sketch: &Image<f64>,
    mix: &StyleMixSpec,
    energy: &dyn StepEnergy<S>,
    temperature: f64,
    eps: Vec<S>,
    style_z: Vec<S>,
    shift: Option<Shift>,
) -> Result<ObjectiveTerms<S>> {
    let draw = paired_from_latents(flow, generator, mix, eps, style_z)?;
    let l_jac = -draw.log_det.clone();
    let mut sq = S::zero();
    for zi in &draw.z {
        sq = sq + zi.clone() * zi.clone();
    }
    let l_zprior = sq * S::from_f64(0.5);
    let x_anchor_f = draw.x_anchor.to_f64();
    let ctx = EnergyContext {
        x: &draw.x,
        x_anchor: &x_anchor_f,
        sketch,
        anchors,
        embedder,
        embedder_eval,
        shift,
        temperature,
    };
    let (l_energy, energy_skipped) = match energy.eval(&ctx) {
        Ok(v) => (v, false),
        Err(Error::DegenerateDirection(_)) => (S::zero(), true),
        Err(e) => return Err(e),
    };
    Ok(ObjectiveTerms {
        l_jac,
        l_zprior,
        l_energy,
        energy_skipped,
    })
}

// ── Optimizer ────────────────────────────────────────────────────────────

/// First-order adaptive-moment optimizer with bias correction.
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(param_count: usize, cfg: &OptimizerConfig) -> Self {
        Adam {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

pub fn scheduled_lr(cfg: &TrainConfig, step: u64, total_steps: u64) -> f64 {
    let base = cfg.optimizer.lr;
    match cfg.schedule {
        LrSchedule::Constant => base,
        LrSchedule::Linear => base * (1.0 - step as f64 / total_steps as f64),
    }
}

// ── Single training step ─────────────────────────────────────────────────

/// One parameter update: draw latents, evaluate the objective on a fresh
/// tape, backprop, apply the optimizer. Returns the loss breakdown.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    flow: &mut Flow<f64>,
    opt: &mut Adam,
    lr: f64,
    backends: &Backends,
    anchors: &AnchorSet,
    sketch: &SketchReference,
    cfg: &TrainConfig,
    mix: &StyleMixSpec,
    energy: &dyn StepEnergy<Var>,
    step_index: u64,
    rng: &mut StdRng,
) -> Result<LossBreakdown> {
    let tape = Tape::new();
    let (flow_v, leaves) = flow.lift(&tape);
    let generator: &dyn Generator<Var> = backends.generator.as_ref();
    let embedder: &dyn Embedder<Var> = backends.embedder.as_ref();
    let embedder_eval: &dyn Embedder<f64> = backends.embedder.as_ref();

    // Draw order per step: ε, style latent, then (when augmenting) the shift.
    let eps: Vec<Var> = lift(&standard_normal_vec(rng, generator.latent_dim()));
    let style_z: Vec<Var> = lift(&standard_normal_vec(rng, generator.latent_dim()));
    let shift = if cfg.augment {
        let res = embedder_eval.input_resolution();
        Some(sample_shift(res, res, cfg.max_shift, rng))
    } else {
        None
    };

    let terms = objective_terms(
        &flow_v,
        generator,
        embedder,
        embedder_eval,
        anchors,
        &sketch.image,
        mix,
        energy,
        cfg.nce_temperature,
        eps,
        style_z,
        shift,
    )?;
    let total = terms.l_jac.clone()
        + terms.l_zprior.clone()
        + Var::from_f64(cfg.lambda_energy) * terms.l_energy.clone();

    let breakdown = LossBreakdown {
        l_jac: terms.l_jac.to_f64(),
        l_zprior: terms.l_zprior.to_f64(),
        l_energy: terms.l_energy.to_f64(),
        total: total.to_f64(),
        energy_skipped: terms.energy_skipped,
    };
    if !breakdown.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: step_index,
            seed: cfg.seed,
            l_jac: breakdown.l_jac,
            l_zprior: breakdown.l_zprior,
            l_energy: breakdown.l_energy,
        });
    }

    let grads = tape.backward(&total);
    let grad_vec: Vec<f64> = leaves.iter().map(|l| grads.wrt(l)).collect();
    let mut flat = flow.to_flat();
    opt.step(&mut flat, &grad_vec, lr);
    flow.set_flat(&flat);
    Ok(breakdown)
}

// ── Full training run ────────────────────────────────────────────────────

pub struct TrainSetup<'a> {
    pub flow_config: FlowConfig,
    pub config: TrainConfig,
    pub mix: StyleMixSpec,
    pub backends: &'a Backends,
    pub sketch: SketchReference,
    /// Resolved-config fingerprint stamped into artifacts.
    pub fingerprint: String,
    /// Artifact root; `None` trains in memory only.
    pub out_dir: Option<PathBuf>,
    pub run_id: String,
    /// Reference stats for FID probes (required if probes are enabled).
    pub fid_reference: Option<FeatureStats>,
    /// Test hook: replaces the standard energy.
    pub custom_energy: Option<Arc<dyn StepEnergy<Var>>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_total: f64,
    pub probe_fid: Option<f64>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub step: u64,
    pub metric: String,
    pub value: f64,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub flow: Flow<f64>,
    pub history: Vec<LossBreakdown>,
    pub epochs: Vec<EpochSummary>,
    pub best: BestRecord,
    pub run_dir: Option<PathBuf>,
    pub metrics_path: Option<PathBuf>,
    pub weights_digest: u64,
}

/// Train a fresh identity-initialized flow against one reference sketch.
///
/// Artifacts (when `out_dir` is set): `epoch-NN.ckpt` per epoch, an
/// append-only JSONL metrics log with one record per step, `best.ckpt` (a
/// copy of the best epoch checkpoint) plus `best.json`, and a `timing.json`
/// sidecar. Wall-clock lives only in the sidecar so metrics logs are
/// byte-reproducible for a fixed seed.
pub fn train(setup: &TrainSetup<'_>) -> Result<TrainOutcome> {
    let cfg = &setup.config;
    cfg.validate()?;
    let backends = setup.backends;
    let generator_meta = backends.generator.as_ref();
    setup.mix.validate(generator_meta.layer_count())?;

    if generator_meta.w_avg().is_err() {
        generator_meta.compute_w_avg(cfg.w_avg_samples)?;
    }
    let category = setup
        .sketch
        .category
        .clone()
        .ok_or_else(|| Error::config("category text is required for anchor construction"))?;
    let anchors = crate::energy::build_anchors(
        backends.generator.as_ref(),
        backends.sketcher.as_ref(),
        backends.embedder.as_ref(),
        &category,
    )?;
    if cfg.fid_probe_every_epochs > 0 && setup.fid_reference.is_none() {
        return Err(Error::config(
            "FID probes enabled but no reference statistics supplied",
        ));
    }

    let digest_before = backends.weights_digest();
    let mut flow = Flow::identity(
        &setup.flow_config,
        &mut rng_from_seed(sub_seed(cfg.seed, INIT_STREAM)),
    );
    let mut opt = Adam::new(flow.param_count(), &cfg.optimizer);
    let standard = StandardEnergy {
        variant: cfg.energy_variant,
    };
    let energy: &dyn StepEnergy<Var> = match &setup.custom_energy {
        Some(e) => e.as_ref(),
        None => &standard,
    };

    let run_dir = match &setup.out_dir {
        Some(root) => {
            let dir = root.join(&setup.run_id);
            std::fs::create_dir_all(&dir)?;
            Some(dir)
        }
        None => None,
    };
    let metrics_path = run_dir.as_ref().map(|d| d.join("metrics.jsonl"));
    let mut metrics_file = match &metrics_path {
        Some(p) => Some(std::io::BufWriter::new(std::fs::File::create(p)?)),
        None => None,
    };

    let mut rng = rng_from_seed(cfg.seed);
    let total_steps = (cfg.epochs * cfg.steps_per_epoch) as u64;
    let mut history = Vec::with_capacity(total_steps as usize);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut best: Option<BestRecord> = None;
    let started = Instant::now();
    let mut epoch_wall = Vec::with_capacity(cfg.epochs);
    let mut global_step: u64 = 0;

    for epoch in 1..=cfg.epochs {
        let epoch_started = Instant::now();
        let mut epoch_total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let lr = scheduled_lr(cfg, global_step, total_steps);
            let breakdown = match training_step(
                &mut flow,
                &mut opt,
                lr,
                backends,
                &anchors,
                &setup.sketch,
                cfg,
                &setup.mix,
                energy,
                global_step,
                &mut rng,
            ) {
                Ok(b) => b,
                Err(e) => {
                    if let (Error::NonFiniteLoss { .. }, Some(dir)) = (&e, &run_dir) {
                        let dump = serde_json::json!({
                            "error": e.to_string(),
                            "step": global_step,
                            "seed": cfg.seed,
                        });
                        let _ = std::fs::write(
                            dir.join(format!("abort-step-{global_step}.json")),
                            dump.to_string(),
                        );
                    }
                    return Err(e);
                }
            };
            global_step += 1;
            epoch_total += breakdown.total;
            if let Some(f) = metrics_file.as_mut() {
                let record = MetricsRecord {
                    step: global_step,
                    l_jac: breakdown.l_jac,
                    l_zprior: breakdown.l_zprior,
                    l_energy: breakdown.l_energy,
                    total: breakdown.total,
                };
                let line = serde_json::to_string(&record)
                    .map_err(|e| Error::format(format!("metrics serialization: {e}")))?;
                f.write_all(line.as_bytes())?;
                f.write_all(b"\n")?;
            }
            history.push(breakdown);
        }
        if let Some(f) = metrics_file.as_mut() {
            f.flush()?;
        }

        let checkpoint = match &run_dir {
            Some(dir) => {
                let path = dir.join(format!("epoch-{epoch:02}.ckpt"));
                save_checkpoint(&path, &flow, global_step, &setup.fingerprint)?;
                Some(path)
            }
            None => None,
        };

        let probe_fid = if cfg.fid_probe_every_epochs > 0
            && epoch % cfg.fid_probe_every_epochs == 0
        {
            let reference = setup.fid_reference.as_ref().expect("validated above");
            let protocol = EvalProtocol {
                n_samples: cfg.fid_probe_samples,
                ..EvalProtocol::default()
            };
            Some(eval_fid(
                &flow,
                backends,
                reference,
                setup.mix.crossover_layer,
                &protocol,
                sub_seed(cfg.seed, PROBE_STREAM ^ epoch as u64),
            )?)
        } else {
            None
        };

        let mean_total = epoch_total / cfg.steps_per_epoch as f64;
        let metric_value = probe_fid.unwrap_or(mean_total);
        let metric_name = if probe_fid.is_some() { "fid" } else { "mean_total" };
        let is_better = best
            .as_ref()
            .map(|b| metric_value < b.value)
            .unwrap_or(true);
        if is_better {
            best = Some(BestRecord {
                epoch,
                step: global_step,
                metric: metric_name.into(),
                value: metric_value,
                checkpoint: checkpoint.clone(),
            });
        }
        epochs.push(EpochSummary {
            epoch,
            mean_total,
            probe_fid,
            checkpoint,
        });
        epoch_wall.push(epoch_started.elapsed().as_millis() as u64);
    }

    let best = best.expect("at least one epoch ran");
    if let (Some(dir), Some(src)) = (&run_dir, &best.checkpoint) {
        std::fs::copy(src, dir.join("best.ckpt"))?;
        std::fs::write(
            dir.join("best.json"),
            serde_json::to_string_pretty(&best)
                .map_err(|e| Error::format(format!("best record: {e}")))?,
        )?;
        let timing = serde_json::json!({
            "total_ms": started.elapsed().as_millis() as u64,
            "epoch_ms": epoch_wall,
        });
        std::fs::write(dir.join("timing.json"), timing.to_string())?;
    }

    let digest_after = backends.weights_digest();
    if digest_before != digest_after {
        return Err(Error::state(
            "backend weights changed during training; freezing invariant violated",
        ));
    }

    Ok(TrainOutcome {
        flow,
        history,
        epochs,
        best,
        run_dir,
        metrics_path,
        weights_digest: digest_after,
    })
}
