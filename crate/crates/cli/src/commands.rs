//! Command implementations: anchors, train, sample, eval, edit.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sketchflow::backends::{BackendRegistry, Backends, Generator};
use sketchflow::editing::{
    apply_latent_edit, edit_real_image, load_direction, load_w_plus, LatentSample,
};
use sketchflow::energy::{build_anchors, SketchReference};
use sketchflow::error::{Error, Result};
use sketchflow::evalkit::{
    eval_fid, frechet_distance, generate_eval_features, load_stats, precision_recall, save_stats,
    stats_from_features, EvalReport, FeatureStats,
};
use sketchflow::flow::{load_checkpoint, Checkpoint};
use sketchflow::hash::hex64;
use sketchflow::imageio::{load_image, save_normalized_image, save_unit_image};
use sketchflow::rng::{rng_from_seed, standard_normal_vec};
use sketchflow::stylemix::{emit_sample_grid, mixed_synthesize, truncate, GridMeta, StyleMixSpec};
use sketchflow::trainer::{train, TrainSetup};

use crate::config::{cache_dir, RunConfig};

fn load_backends(cfg: &RunConfig) -> Result<Backends> {
    BackendRegistry::default().load(&cfg.backend)
}

fn ensure_w_avg(cfg: &RunConfig, backends: &Backends) -> Result<()> {
    if backends.generator.w_avg().is_err() {
        backends.generator.compute_w_avg(cfg.train.w_avg_samples)?;
    }
    Ok(())
}

fn run_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join(&cfg.run_id)
}

fn verify_checkpoint(cfg: &RunConfig, path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::config(format!(
            "checkpoint path {} does not exist",
            path.display()
        )));
    }
    let ck = load_checkpoint(path)?;
    let expected = cfg.fingerprint();
    if ck.fingerprint != expected {
        return Err(Error::FingerprintMismatch(format!(
            "checkpoint {} was produced by config {}, active config is {expected}",
            path.display(),
            ck.fingerprint
        )));
    }
    Ok(ck)
}

// ── anchors ──────────────────────────────────────────────────────────────

#[derive(Serialize)]
struct AnchorsJson<'a> {
    category: &'a str,
    embed_dim: usize,
    e_xo: &'a [f64],
    e_co: &'a [f64],
    e_to: &'a [f64],
    backend_weights_digest: String,
    config_fingerprint: String,
}

pub fn cmd_anchors(cfg: &RunConfig, out: Option<PathBuf>) -> Result<()> {
    cfg.validate_common()?;
    let backends = load_backends(cfg)?;
    ensure_w_avg(cfg, &backends)?;
    let anchors = build_anchors(
        backends.generator.as_ref(),
        backends.sketcher.as_ref(),
        backends.embedder.as_ref(),
        &cfg.category,
    )?;
    let dir = out.unwrap_or_else(|| run_dir(cfg).join("anchors"));
    std::fs::create_dir_all(&dir)?;
    save_normalized_image(&dir.join("x_o.png"), &anchors.x_o)?;
    save_unit_image(&dir.join("c_o.png"), &anchors.c_o)?;
    let json = AnchorsJson {
        category: &cfg.category,
        embed_dim: anchors.e_xo.len(),
        e_xo: &anchors.e_xo,
        e_co: &anchors.e_co,
        e_to: &anchors.e_to,
        backend_weights_digest: hex64(backends.weights_digest()),
        config_fingerprint: cfg.fingerprint(),
    };
    std::fs::write(
        dir.join("anchors.json"),
        serde_json::to_string_pretty(&json).map_err(|e| Error::format(e.to_string()))?,
    )?;
    println!("anchors written to {}", dir.display());
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────────

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    cfg.validate_common()?;
    cfg.require_sketch()?;
    let backends = load_backends(cfg)?;
    let latent = backends.generator.latent_dim();
    if cfg.flow.dim != latent {
        return Err(Error::config(format!(
            "field 'flow.dim' is {} but the generator latent dimension is {latent}",
            cfg.flow.dim
        )));
    }
    let image = load_image(&cfg.sketch)?;
    let sketch = SketchReference {
        image,
        category: Some(cfg.category.clone()),
    };
    let fid_reference: Option<FeatureStats> = if cfg.train.fid_probe_every_epochs > 0 {
        let stats_path = cfg.eval.stats.as_ref().ok_or_else(|| {
            Error::config("FID probes enabled but field 'eval.stats' is not set")
        })?;
        Some(load_stats(stats_path)?)
    } else {
        None
    };
    let setup = TrainSetup {
        flow_config: cfg.flow.clone(),
        config: cfg.train.clone(),
        mix: cfg.stylemix.clone(),
        backends: &backends,
        sketch,
        fingerprint: cfg.fingerprint(),
        out_dir: Some(cfg.out_dir.clone()),
        run_id: cfg.run_id.clone(),
        fid_reference,
        custom_energy: None,
    };
    let outcome = train(&setup)?;
    let dir = outcome.run_dir.expect("out_dir was set");
    println!(
        "trained {} epochs x {} steps; best epoch {} ({} = {:.6}); artifacts in {}",
        cfg.train.epochs,
        cfg.train.steps_per_epoch,
        outcome.best.epoch,
        outcome.best.metric,
        outcome.best.value,
        dir.display()
    );
    Ok(())
}

// ── sample ───────────────────────────────────────────────────────────────

pub fn cmd_sample(
    cfg: &RunConfig,
    checkpoint: &Path,
    n: usize,
    phi: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    if n == 0 {
        return Err(Error::argument("sample count must be >= 1"));
    }
    let ck = verify_checkpoint(cfg, checkpoint)?;
    let backends = load_backends(cfg)?;
    ensure_w_avg(cfg, &backends)?;
    let g: &dyn Generator<f64> = backends.generator.as_ref();
    let mix = StyleMixSpec {
        style_truncation: phi.unwrap_or(cfg.stylemix.style_truncation),
        ..cfg.stylemix.clone()
    };
    mix.validate(g.layer_count())?;
    let w_avg = g.w_avg()?;

    let mut rng = rng_from_seed(cfg.seed);
    let mut images = Vec::with_capacity(n);
    for _ in 0..n {
        let eps = standard_normal_vec(&mut rng, g.latent_dim());
        let style_z = standard_normal_vec(&mut rng, g.latent_dim());
        let (z, _) = ck.flow.forward(&eps)?;
        let mut content_w = g.map_to_w(&z);
        // Qualitative-only knob; training and FID sampling never truncate
        // the content latent.
        if let Some(ct) = mix.content_truncation {
            content_w = truncate(&content_w, ct, &w_avg);
        }
        let style_w = g.map_to_w(&style_z);
        images.push(mixed_synthesize(&content_w, &style_w, &mix, g)?);
    }

    let out_path = out.unwrap_or_else(|| run_dir(cfg).join("samples.png"));
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let shape = g.image_shape();
    let meta = GridMeta {
        seed: cfg.seed,
        phi: mix.style_truncation,
        crossover: mix.crossover_layer,
        rows,
        cols,
        cell_height: shape.height,
        cell_width: shape.width,
        count: n,
        config_fingerprint: cfg.fingerprint(),
        checkpoint_step: ck.step,
    };
    let json_path = emit_sample_grid(&out_path, &images, &meta)?;
    println!(
        "wrote {n}-sample grid to {} (metadata {})",
        out_path.display(),
        json_path.display()
    );
    Ok(())
}

// ── eval ─────────────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Metric {
    Fid,
    Pr,
    Both,
}

fn reference_features_from_dir(
    dir: &Path,
    backends: &Backends,
    resolution: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| matches!(e.to_str(), Some("png" | "jpg" | "jpeg")))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::input(format!(
            "no raster images found under {}",
            dir.display()
        )));
    }
    let mut feats = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = load_image(p)?;
        let resized = img.resize_bicubic(resolution, resolution);
        feats.push(backends.extractor.extract(&resized));
    }
    Ok(feats)
}

fn resolve_reference_stats(
    cfg: &RunConfig,
    backends: &Backends,
    stats_path: Option<&Path>,
    ref_images: Option<&Path>,
) -> Result<FeatureStats> {
    if let Some(path) = stats_path {
        if path.exists() {
            return load_stats(path);
        }
    }
    let Some(dir) = ref_images else {
        return Err(Error::config(
            "no reference statistics: set 'eval.stats' to an existing cache or provide a reference image directory",
        ));
    };
    let feats = reference_features_from_dir(dir, backends, cfg.eval.resolution)?;
    let stats = stats_from_features(&feats, &backends.extractor.fingerprint())?;
    // Cache for next time: at the requested path, else in the cache dir.
    let cache_path = match stats_path {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = cache_dir();
            std::fs::create_dir_all(&dir)?;
            dir.join(format!(
                "refstats-{}.bin",
                hex64(sketchflow::hash::hash_bytes(
                    backends.extractor.fingerprint().as_bytes()
                ))
            ))
        }
    };
    if let Some(parent) = cache_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_stats(&cache_path, &stats)?;
    Ok(stats)
}

pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    stats: Option<PathBuf>,
    ref_images: Option<PathBuf>,
    metric: Metric,
    out: Option<PathBuf>,
) -> Result<()> {
    let ck = verify_checkpoint(cfg, checkpoint)?;
    let backends = load_backends(cfg)?;
    ensure_w_avg(cfg, &backends)?;
    let protocol = cfg.eval.protocol();
    let stats_path = stats.or_else(|| cfg.eval.stats.clone());
    let ref_dir = ref_images.or_else(|| cfg.eval.ref_images.clone());
    let extractor_fp = backends.extractor.fingerprint();

    let mut fid = None;
    let mut precision = None;
    let mut recall = None;
    match metric {
        Metric::Fid => {
            let reference =
                resolve_reference_stats(cfg, &backends, stats_path.as_deref(), ref_dir.as_deref())?;
            fid = Some(eval_fid(
                &ck.flow,
                &backends,
                &reference,
                cfg.stylemix.crossover_layer,
                &protocol,
                cfg.seed,
            )?);
        }
        Metric::Pr | Metric::Both => {
            let dir = ref_dir.as_deref().ok_or_else(|| {
                Error::config("precision/recall needs a reference image directory")
            })?;
            let real_feats = reference_features_from_dir(dir, &backends, protocol.resolution)?;
            let gen_feats = generate_eval_features(
                &ck.flow,
                &backends,
                cfg.stylemix.crossover_layer,
                &protocol,
                cfg.seed,
            )?;
            let (p, r) = precision_recall(&gen_feats, &real_feats, protocol.pr_k)?;
            precision = Some(p);
            recall = Some(r);
            if metric == Metric::Both {
                let reference = match stats_path.as_deref() {
                    Some(path) if path.exists() => load_stats(path)?,
                    _ => stats_from_features(&real_feats, &extractor_fp)?,
                };
                if reference.extractor_fingerprint != extractor_fp {
                    return Err(Error::FingerprintMismatch(format!(
                        "reference stats extractor '{}' vs active '{extractor_fp}'",
                        reference.extractor_fingerprint
                    )));
                }
                let gen_stats = stats_from_features(&gen_feats, &extractor_fp)?;
                fid = Some(frechet_distance(&gen_stats, &reference)?);
            }
        }
    }

    let report = EvalReport {
        fid,
        precision,
        recall,
        sample_count: protocol.n_samples,
        resolution: protocol.resolution,
        style_truncation: protocol.style_truncation,
        content_truncated: false,
        pr_k: protocol.pr_k,
        extractor_fingerprint: extractor_fp,
        config_fingerprint: cfg.fingerprint(),
    };
    let out_path = out.unwrap_or_else(|| run_dir(cfg).join("eval-report.json"));
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text =
        serde_json::to_string_pretty(&report).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(&out_path, &text)?;
    println!("{text}");
    println!("report written to {}", out_path.display());
    Ok(())
}

// ── edit ─────────────────────────────────────────────────────────────────

pub fn cmd_edit(
    cfg: &RunConfig,
    checkpoint: &Path,
    direction: Option<PathBuf>,
    wplus: Option<PathBuf>,
    magnitude: Option<f64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ck = verify_checkpoint(cfg, checkpoint)?;
    let backends = load_backends(cfg)?;
    ensure_w_avg(cfg, &backends)?;
    let g: &dyn Generator<f64> = backends.generator.as_ref();
    let dir = out.unwrap_or_else(|| run_dir(cfg).join("edit"));
    std::fs::create_dir_all(&dir)?;

    match (direction, wplus) {
        (Some(direction_path), None) => {
            let mut edit = load_direction(&direction_path)?;
            if let Some(m) = magnitude {
                edit.magnitude = m;
            }
            let mut rng = rng_from_seed(cfg.seed);
            let eps = standard_normal_vec(&mut rng, g.latent_dim());
            let style_z = standard_normal_vec(&mut rng, g.latent_dim());
            let (z, _) = ck.flow.forward(&eps)?;
            let sample = LatentSample { z, style_z };
            let base = {
                let mut zero = edit.clone();
                zero.magnitude = 0.0;
                apply_latent_edit(&sample, &zero, g, &cfg.stylemix)?
            };
            let edited = apply_latent_edit(&sample, &edit, g, &cfg.stylemix)?;
            save_normalized_image(&dir.join("base.png"), &base)?;
            save_normalized_image(&dir.join("edited.png"), &edited)?;
            let meta = serde_json::json!({
                "mode": "latent-direction",
                "direction": direction_path.display().to_string(),
                "label": edit.label,
                "space": format!("{:?}", edit.space),
                "magnitude": edit.magnitude,
                "seed": cfg.seed,
                "checkpoint_step": ck.step,
                "config_fingerprint": cfg.fingerprint(),
            });
            std::fs::write(dir.join("edit.json"), meta.to_string())?;
            println!("wrote base.png and edited.png to {}", dir.display());
        }
        (None, Some(wplus_path)) => {
            let inv = load_w_plus(&wplus_path)?;
            let mut rng = rng_from_seed(cfg.seed);
            let (img, routing) =
                edit_real_image(&inv, &ck.flow, g, &cfg.stylemix, &mut rng)?;
            save_normalized_image(&dir.join("edited.png"), &img)?;
            let meta = serde_json::json!({
                "mode": "real-image",
                "wplus": wplus_path.display().to_string(),
                "source": inv.source,
                "seed": cfg.seed,
                "layer_routing": routing.per_layer,
                "checkpoint_step": ck.step,
                "config_fingerprint": cfg.fingerprint(),
            });
            std::fs::write(dir.join("edit.json"), meta.to_string())?;
            println!("wrote edited.png to {}", dir.display());
        }
        (Some(_), Some(_)) => {
            return Err(Error::argument(
                "pass either --direction or --wplus, not both",
            ));
        }
        (None, None) => {
            return Err(Error::argument(
                "edit needs --direction FILE or --wplus FILE",
            ));
        }
    }
    Ok(())
}
