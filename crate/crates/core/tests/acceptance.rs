//! Acceptance suite: one test per criterion, each printing a pass line with
//! its measured values. Run with `cargo test --test acceptance` (add
//! `-- --nocapture` to see the measurements).
//!
//! Criterion 10 (real-weight protocol) needs externally registered adapters
//! and is `#[ignore]`d; everything else runs on the deterministic toy
//! backends.

mod common;

use std::sync::Arc;
use std::time::Instant;

use sketchflow::backends::toy::{scalar_backends, toy_backends, ToyGenerator};
use sketchflow::backends::{Backends, Embedder, Generator, GeneratorMeta};
use sketchflow::editing::{apply_latent_edit, EditDirection, LatentSample, LatentSpace};
use sketchflow::energy::{
    build_anchors, dir_energy_from_embeddings, nce_energy_from_logits,
};
use sketchflow::evalkit::{
    eval_fid, frechet_distance, generate_eval_features, precision_recall, stats_from_features,
    EvalProtocol, FeatureStats,
};
use sketchflow::flow::{Flow, FlowConfig};
use sketchflow::image::Image;
use sketchflow::rng::{rng_from_seed, standard_normal_vec};
use sketchflow::stylemix::{mixed_synthesize, paired_sample, StyleMixSpec};
use sketchflow::trainer::{
    train, EnergyVariant, LrSchedule, OptimizerConfig, QuadraticPixelEnergy, TrainConfig,
    TrainSetup,
};

fn small_flow(dim: usize, blocks: usize, hidden: usize) -> FlowConfig {
    FlowConfig {
        dim,
        blocks,
        hidden,
        s_max: 2.0,
    }
}

fn box_sketch() -> sketchflow::energy::SketchReference {
    let image = Image::from_fn(32, 32, 1, |y, x, _| {
        if (8..24).contains(&y) && (8..24).contains(&x) {
            1.0
        } else {
            0.0
        }
    });
    sketchflow::energy::SketchReference {
        image,
        category: Some("cat".into()),
    }
}

#[test]
fn criterion_01_flow_correctness() {
    let started = Instant::now();
    let mut rng = rng_from_seed(101);
    let mut worst_logdet = 0.0f64;
    let mut trials = 0;
    for &(dim, blocks) in &[(2usize, 2usize), (4, 2), (4, 4), (6, 3), (8, 4)] {
        for _ in 0..20 {
            let flow = Flow::random(&small_flow(dim, blocks, 6), 0.4, &mut rng);
            let eps = standard_normal_vec(&mut rng, dim);
            let (_, analytic) = flow.forward(&eps).unwrap();
            let f = |x: &[f64]| flow.forward(x).unwrap().0;
            let jac = common::fd_jacobian(&f, &eps, 1e-5);
            let numeric = common::lu_log_abs_det(&jac);
            worst_logdet = worst_logdet.max((analytic - numeric).abs());
            trials += 1;
        }
    }
    assert!(trials >= 100);
    assert!(
        worst_logdet <= 1e-5,
        "log-det vs brute-force Jacobian: worst {worst_logdet}"
    );

    let flow = Flow::random(&small_flow(8, 6, 12), 0.5, &mut rng);
    let mut worst_rt = 0.0f64;
    for _ in 0..1000 {
        let eps = standard_normal_vec(&mut rng, 8);
        let (z, _) = flow.forward(&eps).unwrap();
        let back = flow.inverse(&z).unwrap();
        for (a, b) in eps.iter().zip(&back) {
            worst_rt = worst_rt.max((a - b).abs());
        }
    }
    assert!(worst_rt <= 1e-5, "round trip worst {worst_rt}");
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 60.0, "runtime {secs:.1}s exceeds 1 min");
    println!(
        "[criterion 1] PASS flow correctness: {trials} parameterizations, \
         worst log-det err {worst_logdet:.2e}, worst round-trip {worst_rt:.2e} ({secs:.1}s)"
    );
}

#[test]
fn criterion_02_gradient_fidelity() {
    use sketchflow::scalar::lift;
    use sketchflow::trainer::{objective_terms, StandardEnergy, StepEnergy};
    use sketchflow::{Tape, Var};

    let started = Instant::now();
    let backends = toy_backends(11);
    backends.generator.compute_w_avg(256).unwrap();
    let anchors = build_anchors(
        backends.generator.as_ref(),
        backends.sketcher.as_ref(),
        backends.embedder.as_ref(),
        "cat",
    )
    .unwrap();
    let mut rng = rng_from_seed(202);
    let flow = Flow::random(&small_flow(16, 2, 8), 0.15, &mut rng);
    let sketch = box_sketch();
    let eps = standard_normal_vec(&mut rng, 16);
    let style_z = standard_normal_vec(&mut rng, 16);
    let mix = StyleMixSpec::default();
    let flat = flow.to_flat();

    let mut worst = 0.0f64;
    for variant in [EnergyVariant::Global, EnergyVariant::Dir, EnergyVariant::Nce] {
        let energy = StandardEnergy { variant };
        // Analytic gradients of all three terms.
        let tape = Tape::new();
        let (flow_v, leaves) = flow.lift(&tape);
        let g: &dyn Generator<Var> = backends.generator.as_ref();
        let e: &dyn Embedder<Var> = backends.embedder.as_ref();
        let e_eval: &dyn Embedder<f64> = backends.embedder.as_ref();
        let terms = objective_terms(
            &flow_v,
            g,
            e,
            e_eval,
            &anchors,
            &sketch.image,
            &mix,
            &energy as &dyn StepEnergy<Var>,
            0.1,
            lift(&eps),
            lift(&style_z),
            None,
        )
        .unwrap();
        let outputs = [
            ("l_jac", &terms.l_jac),
            ("l_zprior", &terms.l_zprior),
            ("l_energy", &terms.l_energy),
        ];
        for (pick, (name, out)) in outputs.iter().enumerate() {
            let grads = tape.backward(out);
            let analytic: Vec<f64> = leaves.iter().map(|l| grads.wrt(l)).collect();
            let eval = |p: &[f64]| -> f64 {
                let mut f2 = flow.clone();
                f2.set_flat(p);
                let gg: &dyn Generator<f64> = backends.generator.as_ref();
                let ee: &dyn Embedder<f64> = backends.embedder.as_ref();
                let t = objective_terms(
                    &f2,
                    gg,
                    ee,
                    ee,
                    &anchors,
                    &sketch.image,
                    &mix,
                    &energy as &dyn StepEnergy<f64>,
                    0.1,
                    eps.clone(),
                    style_z.clone(),
                    None,
                )
                .unwrap();
                [t.l_jac, t.l_zprior, t.l_energy][pick]
            };
            for idx in 0..flat.len() {
                let h = 1e-5 * (1.0 + flat[idx].abs());
                let fd = common::central_diff(
                    &|theta| {
                        let mut p = flat.clone();
                        p[idx] = theta;
                        eval(&p)
                    },
                    flat[idx],
                    h,
                );
                let a = analytic[idx];
                assert!(
                    common::close_rel(a, fd, 1e-3, 1e-7),
                    "{name}/{variant:?} param {idx}: analytic {a} vs fd {fd}"
                );
                let denom = a.abs().max(fd.abs()).max(1e-7);
                worst = worst.max((a - fd).abs() / denom);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 120.0, "runtime {secs:.1}s exceeds 2 min");
    println!(
        "[criterion 2] PASS gradient fidelity: all params x (jac, zprior, energy x3 variants), \
         worst rel err {worst:.2e} ({secs:.1}s)"
    );
}

#[test]
fn criterion_03_analytic_ebm_recovery() {
    let started = Instant::now();
    let backends = scalar_backends(303);
    let lambda = 1.0;
    let target = 0.9;
    // Posterior of N(0,1) reweighted by exp(-λ (z - μ)²):
    // variance 1/(1+2λ), mean 2λμ/(1+2λ).
    let var_star = 1.0 / (1.0 + 2.0 * lambda);
    let mean_star = 2.0 * lambda * target / (1.0 + 2.0 * lambda);

    let setup = TrainSetup {
        flow_config: small_flow(1, 8, 8),
        config: TrainConfig {
            lambda_energy: lambda,
            energy_variant: EnergyVariant::Nce,
            epochs: 2,
            steps_per_epoch: 3000,
            optimizer: OptimizerConfig {
                lr: 8e-3,
                ..OptimizerConfig::default()
            },
            schedule: LrSchedule::Linear,
            seed: 77,
            w_avg_samples: 256,
            ..TrainConfig::default()
        },
        mix: StyleMixSpec {
            crossover_layer: 7, // L + 1: content drives every layer
            style_truncation: 0.5,
            content_truncation: None,
        },
        backends: &backends,
        sketch: sketchflow::energy::SketchReference {
            image: Image::from_fn(1, 1, 1, |_, _, _| 0.5),
            category: Some("point".into()),
        },
        fingerprint: "acceptance-c3".into(),
        out_dir: None,
        run_id: "c3".into(),
        fid_reference: None,
        custom_energy: Some(Arc::new(QuadraticPixelEnergy { target })),
    };
    let outcome = train(&setup).unwrap();

    // The d=1 flow is affine, so the pushforward is exactly Gaussian with
    // mean f(0) and std |f(1) - f(0)|.
    let f0 = outcome.flow.forward(&[0.0]).unwrap().0[0];
    let f1 = outcome.flow.forward(&[1.0]).unwrap().0[0];
    let mean = f0;
    let std = (f1 - f0).abs();
    let var = std * std;

    let mean_err = (mean - mean_star).abs() / mean_star.abs();
    let var_err = (var - var_star).abs() / var_star;
    assert!(mean_err <= 0.05, "mean {mean} vs {mean_star} ({mean_err:.3} rel)");
    assert!(var_err <= 0.05, "var {var} vs {var_star} ({var_err:.3} rel)");

    // KL(N(mean, var) || N(mean*, var*)), closed form.
    let kl = ((var_star / var).ln() + (var + (mean - mean_star).powi(2)) / var_star - 1.0) / 2.0;
    assert!(kl <= 1e-2, "KL {kl}");
    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 300.0, "runtime {secs:.1}s exceeds 5 min");
    println!(
        "[criterion 3] PASS analytic recovery: mean {mean:.4} (target {mean_star:.4}), \
         var {var:.4} (target {var_star:.4}), KL {kl:.2e} ({secs:.1}s)"
    );
}

#[test]
fn criterion_04_lambda_zero_recovers_prior() {
    let backends = toy_backends(404);
    let setup = TrainSetup {
        flow_config: small_flow(16, 4, 16),
        config: TrainConfig {
            lambda_energy: 0.0,
            energy_variant: EnergyVariant::Nce,
            epochs: 1,
            steps_per_epoch: 600,
            optimizer: OptimizerConfig {
                lr: 1e-4,
                ..OptimizerConfig::default()
            },
            schedule: LrSchedule::Linear,
            seed: 11,
            w_avg_samples: 256,
            ..TrainConfig::default()
        },
        mix: StyleMixSpec::default(),
        backends: &backends,
        sketch: box_sketch(),
        fingerprint: "acceptance-c4".into(),
        out_dir: None,
        run_id: "c4".into(),
        fid_reference: None,
        custom_energy: None,
    };
    let outcome = train(&setup).unwrap();

    let n = 10_000;
    let dim = 16;
    let mut rng = rng_from_seed(5005);
    let mut sum = vec![0.0f64; dim];
    let mut sum_sq = vec![0.0f64; dim];
    for _ in 0..n {
        let eps = standard_normal_vec(&mut rng, dim);
        let (z, _) = outcome.flow.forward(&eps).unwrap();
        for (i, v) in z.iter().enumerate() {
            sum[i] += v;
            sum_sq[i] += v * v;
        }
    }
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for i in 0..dim {
        let mean = sum[i] / n as f64;
        let var = sum_sq[i] / n as f64 - mean * mean;
        assert!(mean.abs() <= 0.05, "coord {i} mean {mean}");
        assert!((var - 1.0).abs() <= 0.1, "coord {i} var {var}");
        worst_mean = worst_mean.max(mean.abs());
        worst_var = worst_var.max((var - 1.0).abs());
    }
    println!(
        "[criterion 4] PASS lambda=0 prior recovery over {n} samples: \
         worst |mean| {worst_mean:.4}, worst |var-1| {worst_var:.4}"
    );
}

#[test]
fn criterion_05_energy_algebra() {
    // E_Dir range and the zero-iff-aligned property.
    let mut rng = rng_from_seed(505);
    let zero = vec![0.0f64; 8];
    for _ in 0..500 {
        let dx = standard_normal_vec(&mut rng, 8);
        let dc = standard_normal_vec(&mut rng, 8);
        let v = dir_energy_from_embeddings(&dx, &dc, &zero, &zero).unwrap();
        assert!((0.0..=2.0).contains(&v));
        // Positively aligned (positive rescale) -> zero.
        let scaled: Vec<f64> = dx.iter().map(|x| x * 3.7).collect();
        let aligned = dir_energy_from_embeddings(&dx, &scaled, &zero, &zero).unwrap();
        assert!(aligned.abs() <= 1e-9, "aligned energy {aligned}");
        // Not positively aligned (strictly, cos < 1) -> strictly positive.
        let cos: f64 = {
            let na: f64 = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb: f64 = dc.iter().map(|v| v * v).sum::<f64>().sqrt();
            dx.iter().zip(&dc).map(|(a, b)| a * b).sum::<f64>() / (na * nb)
        };
        if cos < 0.999_999 {
            assert!(v > 1e-9, "non-aligned energy {v} with cos {cos}");
        }
    }

    // E_NCE pinned values.
    let half = nce_energy_from_logits(0.3f64, 0.3, 0.1).unwrap();
    assert!((half - 0.5).abs() <= 1e-12);
    let expected = 1.0 - 10.0f64.exp() / (10.0f64.exp() + 1.0);
    let v = nce_energy_from_logits(1.0f64, 0.0, 0.1).unwrap();
    assert!((v - expected).abs() <= 1e-9, "{v} vs {expected}");

    // Range and strict monotonicity in the positive logit.
    let mut prev = f64::INFINITY;
    for i in 0..300 {
        let pos = -1.5 + i as f64 * 0.01;
        let e = nce_energy_from_logits(pos, 0.25, 0.1).unwrap();
        assert!(e > 0.0 && e < 1.0);
        assert!(e < prev, "not strictly decreasing at pos {pos}");
        prev = e;
    }
    println!(
        "[criterion 5] PASS energy algebra: E_Dir in [0,2] with zero iff aligned, \
         E_NCE(equal)=0.5, E_NCE(1,0,r=0.1)={v:.3e} (expected {expected:.3e}), strict monotonicity"
    );
}

#[test]
fn criterion_06_style_mixing_separability() {
    let g = ToyGenerator::new(606);
    g.compute_w_avg(512).unwrap();
    let spec = StyleMixSpec::default();
    let mut rng = rng_from_seed(66);

    let content = Generator::<f64>::map_to_w(&g, &standard_normal_vec(&mut rng, 16));
    let mut coarse_bits = None;
    for _ in 0..20 {
        let style = Generator::<f64>::map_to_w(&g, &standard_normal_vec(&mut rng, 16));
        let img = mixed_synthesize(&content, &style, &spec, &g).unwrap();
        let stat_bits = g.coarse_statistic(&img).to_bits();
        match coarse_bits {
            None => coarse_bits = Some(stat_bits),
            Some(expected) => assert_eq!(stat_bits, expected, "coarse statistic moved"),
        }
    }

    // Paired draws share fine statistics bit-exactly.
    let flow = Flow::random(&small_flow(16, 4, 8), 0.3, &mut rng_from_seed(8));
    for _ in 0..20 {
        let draw = paired_sample::<f64>(&flow, &g, &spec, &mut rng).unwrap();
        let fx = g.fine_statistic(&draw.x);
        let fa = g.fine_statistic(&draw.x_anchor);
        assert_eq!(fx.to_bits(), fa.to_bits(), "fine statistics diverged");
    }
    println!(
        "[criterion 6] PASS style-mixing separability: coarse statistic bit-stable under \
         20 style draws; 20 paired draws share fine statistics bit-exactly"
    );
}

#[test]
fn criterion_07_metric_oracles() {
    // Closed-form Fréchet cases.
    let unit = |mean: f64| FeatureStats {
        dim: 1,
        mean: vec![mean],
        cov: vec![1.0],
        count: 16,
        extractor_fingerprint: "t".into(),
    };
    let d = frechet_distance(&unit(0.0), &unit(1.0)).unwrap();
    assert!((d - 1.0).abs() <= 1e-8, "1-D case {d}");

    let a = FeatureStats {
        dim: 2,
        mean: vec![0.5, -1.0],
        cov: vec![2.0, 0.0, 0.0, 0.5],
        count: 16,
        extractor_fingerprint: "t".into(),
    };
    let b = FeatureStats {
        dim: 2,
        mean: vec![-0.5, 0.0],
        cov: vec![1.0, 0.0, 0.0, 3.0],
        count: 16,
        extractor_fingerprint: "t".into(),
    };
    let expected = 2.0
        + (2.0 + 1.0 - 2.0 * 2.0f64.sqrt())
        + (0.5 + 3.0 - 2.0 * 1.5f64.sqrt());
    let d2 = frechet_distance(&a, &b).unwrap();
    assert!((d2 - expected).abs() <= 1e-8, "diagonal case {d2} vs {expected}");

    // Brute-force k-NN oracle, exact equality on >= 20 random instances.
    let mut rng = rng_from_seed(707);
    for instance in 0..24 {
        let gen: Vec<Vec<f64>> = (0..20).map(|_| standard_normal_vec(&mut rng, 3)).collect();
        let real: Vec<Vec<f64>> = (0..20)
            .map(|_| standard_normal_vec(&mut rng, 3).iter().map(|v| v * 0.8 + 0.1).collect())
            .collect();
        let ours = precision_recall(&gen, &real, 3).unwrap();
        let oracle = common::brute_force_precision_recall(&gen, &real, 3);
        assert_eq!(ours, oracle, "instance {instance}");
    }

    // Identical-set FID and P&R through the sampling pipeline.
    let backends = toy_backends(7);
    backends.generator.compute_w_avg(128).unwrap();
    let flow = Flow::identity(&small_flow(16, 2, 8), &mut rng_from_seed(1));
    let protocol = EvalProtocol {
        n_samples: 64,
        resolution: 32,
        ..EvalProtocol::default()
    };
    let feats = generate_eval_features(&flow, &backends, 5, &protocol, 42).unwrap();
    let reference = stats_from_features(&feats, &backends.extractor.fingerprint()).unwrap();
    let fid = eval_fid(&flow, &backends, &reference, 5, &protocol, 42).unwrap();
    assert!(fid <= 1e-6, "identical-set FID {fid}");
    let (p, r) = precision_recall(&feats, &feats, 3).unwrap();
    assert_eq!((p, r), (1.0, 1.0));
    println!(
        "[criterion 7] PASS metric oracles: 1-D Fréchet err {:.1e}, diagonal case err {:.1e}, \
         24 P&R instances exact, identical-set FID {fid:.1e}, P&R (1,1)",
        (d - 1.0).abs(),
        (d2 - expected).abs()
    );
}

#[test]
fn criterion_08_freezing_invariant() {
    let backends = toy_backends(808);
    let digest_before = backends.weights_digest();

    // Render a fixed (z, edit) before training.
    backends.generator.compute_w_avg(128).unwrap();
    let toy = ToyGenerator::new(808);
    toy.compute_w_avg(128).unwrap();
    let mut rng = rng_from_seed(88);
    let sample = LatentSample {
        z: standard_normal_vec(&mut rng, 16),
        style_z: standard_normal_vec(&mut rng, 16),
    };
    let edit = EditDirection {
        space: LatentSpace::W,
        label: "probe".into(),
        magnitude: 0.8,
        vector: {
            let mut v = vec![0.0; 16];
            v[2] = 1.0;
            v
        },
    };
    let spec = StyleMixSpec::default();
    let before = apply_latent_edit(&sample, &edit, &toy, &spec).unwrap();

    let setup = TrainSetup {
        flow_config: small_flow(16, 2, 8),
        config: TrainConfig {
            epochs: 1,
            steps_per_epoch: 25,
            w_avg_samples: 128,
            ..TrainConfig::default()
        },
        mix: StyleMixSpec::default(),
        backends: &backends,
        sketch: box_sketch(),
        fingerprint: "acceptance-c8".into(),
        out_dir: None,
        run_id: "c8".into(),
        fid_reference: None,
        custom_energy: None,
    };
    let outcome = train(&setup).unwrap();

    assert_eq!(backends.weights_digest(), digest_before, "weights digest moved");
    assert_eq!(outcome.weights_digest, digest_before);
    let after = apply_latent_edit(&sample, &edit, &toy, &spec).unwrap();
    assert_eq!(before.data, after.data, "render changed across training");
    println!(
        "[criterion 8] PASS freezing invariant: weight digests identical pre/post training; \
         fixed (z, edit) renders bit-identical"
    );
}

#[test]
fn criterion_09_determinism() {
    let backends = toy_backends(909);
    let run = |dir: &std::path::Path| -> (String, Vec<u8>) {
        let setup = TrainSetup {
            flow_config: small_flow(16, 2, 8),
            config: TrainConfig {
                epochs: 1,
                steps_per_epoch: 12,
                augment: true,
                w_avg_samples: 128,
                seed: 4242,
                ..TrainConfig::default()
            },
            mix: StyleMixSpec::default(),
            backends: &backends,
            sketch: box_sketch(),
            fingerprint: "acceptance-c9".into(),
            out_dir: Some(dir.to_path_buf()),
            run_id: "run".into(),
            fid_reference: None,
            custom_energy: None,
        };
        let outcome = train(&setup).unwrap();
        let metrics = std::fs::read_to_string(outcome.metrics_path.unwrap()).unwrap();
        let ckpt = std::fs::read(outcome.run_dir.unwrap().join("epoch-01.ckpt")).unwrap();
        (metrics, ckpt)
    };
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let (m1, c1) = run(d1.path());
    let (m2, c2) = run(d2.path());
    assert_eq!(m1.as_bytes(), m2.as_bytes(), "metrics logs differ");
    assert_eq!(c1, c2, "checkpoints differ");
    println!(
        "[criterion 9] PASS determinism: fixed-seed runs produced byte-identical \
         metrics logs ({} bytes) and checkpoints",
        m1.len()
    );
}

/// The real-weight protocol: source-model, embedder, and sketch-network
/// adapters with published weights, λ=5000, contrastive energy, 5 epochs,
/// 2500-sample FID at 256 px against the standing-cat evaluation set.
/// Expected to land near 35 FID; accepted if it beats the pre-trained
/// baseline (58.71) and stays within ±20% of 35.05. Requires adapters this
/// repository intentionally does not ship.
#[test]
#[ignore = "requires real generator/embedder/sketch-network adapters and the standing-cat evaluation set"]
fn criterion_10_real_weight_protocol() {
    const BASELINE_FID: f64 = 58.71;
    const TARGET_FID: f64 = 35.05;
    let registry = sketchflow::backends::BackendRegistry::default();
    let spec = sketchflow::backends::BackendSpec {
        kind: "stylegan2".into(),
        ..Default::default()
    };
    let backends: Backends = match registry.load(&spec) {
        Ok(b) => b,
        Err(e) => panic!(
            "real-weight adapters are not registered in this environment: {e}. \
             Register a loader for kind 'stylegan2' (plus embedder/sketcher weights), \
             then train with lambda=5000, energy=nce, 5 epochs and evaluate FID with \
             the default 2500-sample protocol; accept FID <= {BASELINE_FID} and within \
             20% of {TARGET_FID}."
        ),
    };
    let _ = backends;
    unreachable!("adapters loaded; wire the standing-cat protocol here");
}
