//! Acceptance suite: one test per acceptance criterion, each printing a
//! PASS line with its measurements (visible with `--nocapture`; the test
//! name itself is the per-criterion pass/fail line in cargo's output).
//!
//! Criteria 5 through 9 share one desk-scale model set trained on first
//! use; formula, Monte-Carlo, gradient, and moment checks (1 through 4)
//! use small synthetic models so they stay inside their own time budgets.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use ndarray::{Array2, Array3};

use scoreadv_cli::attack::{
    execute_batch, instance_classes, resolve_guidance, BatchOutcome, ReferenceSource,
};
use scoreadv_cli::config::Config;
use scoreadv_cli::models_io::{load_models, LoadedModels};
use scoreadv_cli::rundir::ENV_RUN_ROOT;
use scoreadv_cli::sweep::SweepParam;
use scoreadv_cli::{ablate, sweep, train};
use scoreadv_core::diffusion::{forward_diffuse, predict_noise_cfg, DiffusionModelAdapter};
use scoreadv_core::fd::{finite_diff_grad, grad_relative_error};
use scoreadv_core::guidance::{
    apply_adversarial_guidance, classification_log_prob_grad, exact_guided_posterior_oracle,
    recognition_log_prob, recognition_log_prob_grad, RecognitionSurrogate,
};
use scoreadv_core::inpaint::{fuse, noisy_reference};
use scoreadv_core::metrics::{binomial_diff_ci_half_width, transfer_matrix, TransferCase};
use scoreadv_core::models::classifier::{ConvClassifier, MlpClassifier};
use scoreadv_core::models::denoiser::{CondUNet, DenoiserConfig};
use scoreadv_core::models::embedder::{EmbedderConfig, ToyEmbedder};
use scoreadv_core::models::linear::LinearSoftmaxModel;
use scoreadv_core::models::{log_softmax, softmax, TargetModelAdapter};
use scoreadv_core::rng::{normal, normal_array, stream, ChaCha8Rng};
use scoreadv_core::saliency::{
    compute_saliency, minmax_normalize, CombineSpace, SaliencyMethod, SaliencySettings,
};
use scoreadv_core::schedule::{ScheduleSpec, SigmaMode};
use scoreadv_core::tensor::{ImageTensor, ValueRange};

const TOL: f64 = 1e-6;

fn scratch() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = std::env::temp_dir().join(format!("scoreadv-acceptance-{}", std::process::id()));
        std::fs::create_dir_all(&d).unwrap();
        d
    })
}

struct Fixture {
    cfg: Config,
    models_dir: PathBuf,
    models: LoadedModels,
}

fn desk_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml")
}

/// Desk-scale models trained once and shared by criteria 5 through 9.
fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        std::env::remove_var(ENV_RUN_ROOT);
        let mut cfg = Config::load(Some(&desk_config_path())).unwrap();
        cfg.output.root = scratch().join("train_runs").display().to_string();
        eprintln!("acceptance fixture: training desk-scale models ...");
        let models_dir = train::run(&cfg).unwrap();
        let models = load_models(&models_dir).unwrap();
        Fixture { cfg, models_dir, models }
    })
}

struct Batches {
    adv: BatchOutcome,
    baseline: BatchOutcome,
    mlp_adv: BatchOutcome,
}

const EFFICACY_ATTACKS: usize = 200;
const TRANSFER_MLP_ATTACKS: usize = 120;

fn run_batch(surrogate: &str, count: usize, adv_scale: f64, dir: &str) -> BatchOutcome {
    let f = fixture();
    let mut cfg = f.cfg.clone();
    cfg.attack.surrogate = surrogate.to_string();
    cfg.attack.count = count;
    cfg.guidance.adv_scale = adv_scale;
    let guidance = resolve_guidance(&cfg, &f.models).unwrap();
    let base = scratch().join(dir);
    std::fs::create_dir_all(&base).unwrap();
    execute_batch(&cfg, &guidance, &f.models, &ReferenceSource::None, None, &base).unwrap()
}

/// The big attack batches, shared between criteria 5 and 6.
fn batches() -> &'static Batches {
    static B: OnceLock<Batches> = OnceLock::new();
    B.get_or_init(|| {
        eprintln!(
            "acceptance batches: {EFFICACY_ATTACKS} guided + {EFFICACY_ATTACKS} unguided + {TRANSFER_MLP_ATTACKS} mlp-surrogate attacks ..."
        );
        let adv = run_batch("conv", EFFICACY_ATTACKS, 0.3, "crit5_adv");
        let baseline = run_batch("conv", EFFICACY_ATTACKS, 0.0, "crit5_base");
        let mlp_adv = run_batch("mlp", TRANSFER_MLP_ATTACKS, 0.3, "crit6_mlp");
        Batches { adv, baseline, mlp_adv }
    })
}

fn pattern_image(c: usize, h: usize, w: usize, amp: f64) -> ImageTensor {
    let data = Array3::from_shape_fn((c, h, w), |(ci, y, x)| {
        amp * (x as f64 * 0.7 + ci as f64).sin() * (y as f64 * 0.41).cos()
    });
    ImageTensor::new(data, ValueRange::Diffusion)
}

/// Pixel-range probe kept inside [0.15, 0.85] so central differences never
/// leave the valid range.
fn pixel_probe(shape: (usize, usize, usize), seed: u64) -> ImageTensor {
    let mut r = stream(seed);
    let data = normal_array(shape, &mut r).mapv(|v| 0.5 + 0.35 * v.tanh());
    ImageTensor::new(data, ValueRange::Pixel)
}

#[test]
fn criterion_1_formula_oracles() {
    // Classifier-free guidance at class scale 0 is the conditional branch.
    let unet_cfg = DenoiserConfig { channels: 4, emb_dim: 8, ..DenoiserConfig::default() };
    let unet = CondUNet::new((1, 16, 16), 4, &unet_cfg).unwrap();
    let x = pattern_image(1, 16, 16, 0.8);
    let reduced = predict_noise_cfg(&unet, &x, 7, 2, 0.0).unwrap();
    let cond = unet.predict_noise(&x, 7, Some(2)).unwrap();
    assert_eq!(reduced.data(), cond.data(), "cfg at scale 0 must be the conditional prediction");

    // Guided combination arithmetic at a nonzero scale.
    let s = 1.7;
    let guided = predict_noise_cfg(&unet, &x, 7, 2, s).unwrap();
    let uncond = unet.predict_noise(&x, 7, None).unwrap();
    let expect = cond.linear_comb(1.0 + s, &uncond, -s).unwrap();
    let cfg_err = guided
        .data()
        .iter()
        .zip(expect.data().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(cfg_err < TOL, "cfg arithmetic off by {cfg_err}");

    // Mean-shift arithmetic: x + sigma^2 * s_a * g.
    let g = pattern_image(1, 16, 16, 1.3);
    let (sigma, s_a) = (0.31, 0.45);
    let shifted = apply_adversarial_guidance(&x, &g, sigma, s_a).unwrap();
    let shift_err = shifted
        .data()
        .iter()
        .zip(x.data().iter().zip(g.data().iter()))
        .map(|(out, (xi, gi))| (out - (xi + sigma * sigma * s_a * gi)).abs())
        .fold(0.0f64, f64::max);
    assert!(shift_err < TOL, "guidance shift off by {shift_err}");

    // Fusion convexity and complementarity.
    let a = pattern_image(1, 8, 8, 0.9);
    let b = pattern_image(1, 8, 8, 0.5);
    let zeros = Array2::zeros((8, 8));
    let ones = Array2::from_elem((8, 8), 1.0);
    let half = Array2::from_elem((8, 8), 0.5);
    assert_eq!(fuse(&a, &b, &zeros).unwrap().data(), a.data());
    assert_eq!(fuse(&a, &b, &ones).unwrap().data(), b.data());
    let mid = fuse(&a, &b, &half).unwrap();
    let mid_err = mid
        .data()
        .iter()
        .zip(a.data().iter().zip(b.data().iter()))
        .map(|(m, (ai, bi))| (m - 0.5 * (ai + bi)).abs())
        .fold(0.0f64, f64::max);
    assert!(mid_err < TOL, "fusion midpoint off by {mid_err}");
    let bad = Array2::from_elem((8, 8), 1.5);
    assert!(fuse(&a, &b, &bad).is_err(), "out-of-range mask must be rejected");

    // Saliency normalization conventions.
    let raw = Array2::from_shape_fn((5, 5), |(y, x)| (y * 5 + x) as f64 - 7.0);
    let (norm, lo, hi) = minmax_normalize(&raw);
    assert!((lo - (-7.0)).abs() < TOL && (hi - 17.0).abs() < TOL);
    let (nmin, nmax) = norm
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    assert!(nmin.abs() < TOL && (nmax - 1.0).abs() < TOL, "normalized map must span [0, 1]");
    let (flat, _, _) = minmax_normalize(&Array2::from_elem((3, 3), 4.0));
    assert!(flat.iter().all(|&v| v == 0.0), "constant map normalizes to zero");

    let probe = ConvClassifier::new((1, 16, 16), 4, 9).unwrap();
    let settings = SaliencySettings {
        method: SaliencyMethod::ScoreCam,
        layer: "conv3".to_string(),
        combine: CombineSpace::Feature,
    };
    let map = compute_saliency(&probe, &pixel_probe((1, 16, 16), 5), 1, &settings).unwrap();
    assert_eq!((map.map().nrows(), map.map().ncols()), (16, 16));
    assert!(map.map().iter().all(|&v| (0.0..=1.0).contains(&v)));

    // Softmax lands on the probability simplex and matches the direct form.
    let logits = vec![2.25, -1.5, 0.75, 3.4, -0.2];
    let p = softmax(&logits);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < TOL);
    assert!(p.iter().all(|&v| v > 0.0));
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    for (pi, li) in p.iter().zip(&logits) {
        assert!((pi - li.exp() / z).abs() < TOL);
    }
    let lp = log_softmax(&logits);
    for (a, b) in lp.iter().zip(&p) {
        assert!((a.exp() - b).abs() < TOL);
    }

    println!(
        "criterion 1 (formula oracles): PASS - cfg reduction, guidance shift, fusion, normalization, softmax all within 1e-6"
    );
}

#[test]
fn criterion_2_guided_posterior_monte_carlo() {
    // Prior N(mu, sigma^2) with linear log-likelihood gradient a: guided
    // samples must land on the closed-form posterior mean.
    let (mu, sigma, a) = (0.3, 0.25, 2.0);
    let (post_mean, post_sigma) = exact_guided_posterior_oracle(mu, sigma, a).unwrap();
    assert_eq!(post_sigma, sigma);

    let n = 100_000usize;
    let mut rng = stream(20_240_901);
    let grad = ImageTensor::new(Array3::from_elem((1, 1, 1), a), ValueRange::Diffusion);
    let mut sum = 0.0;
    let mut sum2 = 0.0;
    for _ in 0..n {
        let prior = ImageTensor::new(
            Array3::from_elem((1, 1, 1), mu + sigma * normal(&mut rng)),
            ValueRange::Diffusion,
        );
        let guided = apply_adversarial_guidance(&prior, &grad, sigma, 1.0).unwrap();
        let v = guided.data()[[0, 0, 0]];
        sum += v;
        sum2 += v * v;
    }
    let mean = sum / n as f64;
    let var = sum2 / n as f64 - mean * mean;
    let se = sigma / (n as f64).sqrt();
    let dev = (mean - post_mean).abs();
    assert!(
        dev <= 3.0 * se,
        "guided sample mean {mean} vs oracle {post_mean}: off by {dev}, allowed {}",
        3.0 * se
    );
    let var_se = sigma * sigma * (2.0 / (n as f64 - 1.0)).sqrt();
    let var_dev = (var - sigma * sigma).abs();
    assert!(var_dev <= 3.0 * var_se, "guided variance {var} vs {}", sigma * sigma);

    println!(
        "criterion 2 (guided posterior Monte Carlo): PASS - mean {mean:.5} vs oracle {post_mean:.5} ({:.2} SE), n = {n}",
        dev / se
    );
}

#[test]
fn criterion_3_gradient_finite_differences() {
    let shape = (1usize, 16usize, 16usize);
    let conv = ConvClassifier::new(shape, 6, 31).unwrap();
    let mlp = MlpClassifier::new(shape, 6, 32);
    let emb_cfg = EmbedderConfig { embedding_dim: 12, ..EmbedderConfig::default() };
    let embedder = ToyEmbedder::new(shape, &emb_cfg).unwrap();
    let mut lin_rng = stream(33);
    let linear = LinearSoftmaxModel::new(
        "linear",
        Array2::from_shape_fn((5, 256), |_| 0.3 * normal(&mut lin_rng)),
        shape,
    )
    .unwrap();

    let h = 1e-5;
    let rel_tol = 1e-3;

    let classifier_probe = |model: &dyn TargetModelAdapter, seed: u64, class: usize| -> f64 {
        let x = pixel_probe(shape, seed);
        let analytic = classification_log_prob_grad(model, &x, class).unwrap();
        let f = |p: &ImageTensor| Ok(model.log_probs(p)?[class]);
        let numeric = finite_diff_grad(&f, &x, h).unwrap();
        let rel = grad_relative_error(&analytic, &numeric).unwrap();
        assert!(rel < rel_tol, "{} class {class} probe {seed}: rel err {rel}", model.id());
        rel
    };

    let mut probes = 0usize;
    let mut worst: f64 = 0.0;
    for (i, seed) in (0..6).zip(100..) {
        worst = worst.max(classifier_probe(&conv, seed, i % 6));
        probes += 1;
    }
    for (i, seed) in (0..6).zip(200..) {
        worst = worst.max(classifier_probe(&mlp, seed, (i + 1) % 6));
        probes += 1;
    }
    for (i, seed) in (0..4).zip(300..) {
        worst = worst.max(classifier_probe(&linear, seed, i % 5));
        probes += 1;
    }

    let target = pixel_probe(shape, 999);
    for (i, seed) in (0..6).zip(400u64..) {
        let surrogate = if i % 2 == 0 {
            RecognitionSurrogate::default()
        } else {
            RecognitionSurrogate::NegSquaredDistance
        };
        let x = pixel_probe(shape, seed);
        let analytic = recognition_log_prob_grad(&embedder, &x, &target, surrogate).unwrap();
        let f = |p: &ImageTensor| recognition_log_prob(&embedder, p, &target, surrogate);
        let numeric = finite_diff_grad(&f, &x, h).unwrap();
        let rel = grad_relative_error(&analytic, &numeric).unwrap();
        assert!(rel < rel_tol, "embedder probe {seed}: rel err {rel}");
        worst = worst.max(rel);
        probes += 1;
    }

    assert!(probes >= 20, "need at least 20 probes, ran {probes}");
    println!(
        "criterion 3 (gradient finite differences): PASS - {probes} probes across 4 models, worst relative error {worst:.2e}"
    );
}

#[test]
fn criterion_4_forward_process_statistics() {
    let schedule = ScheduleSpec {
        steps: 200,
        beta_start: 5e-4,
        beta_end: 0.1,
        sigma_mode: SigmaMode::PosteriorSqrt,
    }
    .build()
    .unwrap();
    let x0 = pattern_image(1, 32, 32, 0.9);
    let pixels = (32 * 32) as f64;
    let n = 3000usize;

    let mut pick = stream(777);
    let mut steps: Vec<usize> = Vec::new();
    while steps.len() < 5 {
        let t = 1 + (normal(&mut pick).abs() * 60.0) as usize % 200;
        if !steps.contains(&t) {
            steps.push(t);
        }
    }

    let sample = |kind: usize, t: usize, rng: &mut ChaCha8Rng| -> ImageTensor {
        if kind == 0 {
            forward_diffuse(&x0, t, &schedule, rng).unwrap()
        } else {
            noisy_reference(&x0, t, &schedule, rng).unwrap()
        }
    };
    for (kind, name, seed) in [(0usize, "forward_diffuse", 4242u64), (1, "noisy_reference", 4243)] {
        let mut rng = stream(seed);
        for &t in &steps {
            let ab = schedule.alpha_bar(t).unwrap();
            let want_var = 1.0 - ab;
            let mut dev_sum = 0.0;
            let mut dev2_sum = 0.0;
            for _ in 0..n {
                let xt = sample(kind, t, &mut rng);
                for (v, x) in xt.data().iter().zip(x0.data().iter()) {
                    let d = v - ab.sqrt() * x;
                    dev_sum += d;
                    dev2_sum += d * d;
                }
            }
            let count = n as f64 * pixels;
            let mean_dev = dev_sum / count;
            let var = dev2_sum / count;
            let mean_se = (want_var / count).sqrt();
            let var_se = want_var * (2.0 / count).sqrt();
            assert!(
                mean_dev.abs() <= 3.0 * mean_se,
                "{name} t={t}: pooled mean deviation {mean_dev} exceeds 3 SE {}",
                3.0 * mean_se
            );
            assert!(
                (var - want_var).abs() <= 3.0 * var_se,
                "{name} t={t}: pooled variance {var} vs {want_var}, allowed 3 SE {}",
                3.0 * var_se
            );
        }
    }

    println!(
        "criterion 4 (forward-process statistics): PASS - pooled mean and variance within 3 SE at steps {steps:?}, n = {n}"
    );
}

#[test]
fn criterion_5_desk_scale_efficacy() {
    let b = batches();
    let n = EFFICACY_ATTACKS;
    assert_eq!(b.adv.results.len(), n);
    assert_eq!(b.baseline.results.len(), n);
    let asr_adv = b.adv.asr;
    let asr_base = b.baseline.asr;
    let half_width = binomial_diff_ci_half_width(asr_adv, n, asr_base, n, 1.96).unwrap();
    let diff = asr_adv - asr_base;
    assert!(
        diff > half_width,
        "ASR lift {diff:.3} (guided {asr_adv:.3} vs unguided {asr_base:.3}) not beyond 95% half-width {half_width:.3}"
    );
    assert!(asr_adv >= 0.5, "guided ASR {asr_adv:.3} below the 0.5 floor");
    println!(
        "criterion 5 (desk-scale efficacy): PASS - ASR 0.3-scale {asr_adv:.3} vs 0-scale {asr_base:.3} over {n} attacks each, lift {diff:.3} > {half_width:.3}"
    );
}

#[test]
fn criterion_6_transfer_matrix_sanity() {
    let f = fixture();
    let b = batches();
    let classes = f.models.classes;
    let to_cases = |outcome: &BatchOutcome| -> Vec<TransferCase> {
        outcome
            .adversarial
            .iter()
            .enumerate()
            .map(|(i, img)| TransferCase {
                image: img.clone(),
                target_class: instance_classes(i, classes).1,
            })
            .collect()
    };
    let cases = vec![
        ("conv".to_string(), to_cases(&b.adv)),
        ("mlp".to_string(), to_cases(&b.mlp_adv)),
    ];
    let targets: Vec<&dyn TargetModelAdapter> = vec![&f.models.conv, &f.models.mlp];
    let m = transfer_matrix(&cases, &targets).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            println!(
                "  {} -> {}: {:.3}{}",
                m.surrogates[i],
                m.targets[j],
                m.rates[i][j],
                if m.is_white_box(i, j) { " (white-box)" } else { "" }
            );
            if i != j {
                assert!(
                    m.rates[i][i] >= m.rates[i][j],
                    "white-box {} ({:.3}) below its transfer to {} ({:.3})",
                    m.surrogates[i],
                    m.rates[i][i],
                    m.targets[j],
                    m.rates[i][j]
                );
            }
        }
    }
    println!(
        "criterion 6 (transfer sanity): PASS - diagonal {:.3}/{:.3} >= off-diagonal {:.3}/{:.3}",
        m.rates[0][0], m.rates[1][1], m.rates[0][1], m.rates[1][0]
    );
}

/// Reads one column of a CSV row, keyed by the float value in `key_col`.
fn csv_lookup(path: &Path, key_col: usize, key: f64, val_col: usize) -> f64 {
    let text = std::fs::read_to_string(path).unwrap();
    for line in text.lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let k: f64 = cols[key_col].parse().unwrap();
        if (k - key).abs() < 1e-12 {
            return cols[val_col].parse().unwrap();
        }
    }
    panic!("{key} not found in {}", path.display());
}

fn single_run_dir(root: &Path) -> PathBuf {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(root)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    assert_eq!(entries.len(), 1, "expected one run dir under {}", root.display());
    entries.pop().unwrap()
}

#[test]
fn criterion_7_quality_tradeoff_trend() {
    let f = fixture();
    let mut cfg = f.cfg.clone();
    cfg.attack.count = 64;
    cfg.output.root = scratch().join("sweep_runs").display().to_string();
    sweep::run(&cfg, &f.models, SweepParam::SA, &[0.1, 1.0]).unwrap();
    let run = single_run_dir(&scratch().join("sweep_runs"));
    let csv = run.join("sweep.csv");
    let fid_low = csv_lookup(&csv, 1, 0.1, 4);
    let fid_high = csv_lookup(&csv, 1, 1.0, 4);
    assert!(
        fid_high > fid_low,
        "desk-FID at adversarial scale 1.0 ({fid_high:.3}) not above 0.1 ({fid_low:.3})"
    );
    assert!(run.join("plots/sweep_asr.svg").is_file());
    assert!(run.join("plots/sweep_fid.svg").is_file());
    println!(
        "criterion 7 (quality trade-off): PASS - desk-FID {fid_high:.3} at scale 1.0 > {fid_low:.3} at scale 0.1 (64 paired attacks per point)"
    );
}

#[test]
fn criterion_8_saliency_ablation_harness() {
    let f = fixture();
    let mut cfg = f.cfg.clone();
    cfg.attack.count = 50;
    cfg.output.root = scratch().join("ablate_runs").display().to_string();
    ablate::run(&cfg, &f.models).unwrap();
    let run = single_run_dir(&scratch().join("ablate_runs"));
    let text = std::fs::read_to_string(run.join("ablate.csv")).unwrap();
    let rows: Vec<Vec<String>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    assert_eq!(rows.len(), 3, "one row per saliency method");
    let methods: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(methods, ["score_cam", "grad_cam", "grad_cam_pp"]);
    for r in &rows {
        let asr: f64 = r[2].parse().unwrap();
        let fid: f64 = r[3].parse().unwrap();
        let mask_min: f64 = r[4].parse().unwrap();
        let mask_max: f64 = r[5].parse().unwrap();
        assert!((0.0..=1.0).contains(&asr));
        assert!(fid.is_finite() && fid >= 0.0);
        assert!(
            mask_min >= 0.0 && mask_max <= 1.0 && mask_min <= mask_max,
            "masks must live in [0, 1]"
        );
        println!(
            "  {}: asr {asr:.3} desk_fid {fid:.3} mask [{mask_min:.3}, {mask_max:.3}]",
            r[0]
        );
    }
    println!(
        "criterion 8 (saliency ablation harness): PASS - 3 methods, valid masks, paired table over 50 attacks each"
    );
}

fn run_binary(args: &[&str], run_root: Option<&Path>) {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_scoreadv"));
    cmd.args(args)
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::inherit());
    match run_root {
        Some(root) => cmd.env(ENV_RUN_ROOT, root),
        None => cmd.env_remove(ENV_RUN_ROOT),
    };
    let status = cmd.status().unwrap();
    assert!(status.success(), "scoreadv {args:?} failed: {status}");
}

#[test]
fn criterion_9_reproducibility() {
    let f = fixture();
    let config = desk_config_path();
    let models = f.models_dir.display().to_string();
    for side in ["repro_a", "repro_b"] {
        run_binary(
            &[
                "--config",
                config.to_str().unwrap(),
                "attack",
                "--models",
                &models,
                "--count",
                "4",
            ],
            Some(&scratch().join(side)),
        );
    }
    let run_a = single_run_dir(&scratch().join("repro_a"));
    let run_b = single_run_dir(&scratch().join("repro_b"));

    let outputs = |dir: &Path| -> std::collections::BTreeMap<String, String> {
        let m: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap())
                .unwrap();
        serde_json::from_value(m["outputs"].clone()).unwrap()
    };
    let out_a = outputs(&run_a);
    let out_b = outputs(&run_b);
    assert_eq!(out_a, out_b, "artifact inventories (paths and hashes) must match");
    assert!(!out_a.is_empty());
    let mut checked = 0usize;
    for rel in out_a.keys() {
        let bytes_a = std::fs::read(run_a.join(rel)).unwrap();
        let bytes_b = std::fs::read(run_b.join(rel)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{rel} differs between reruns");
        checked += 1;
    }

    run_binary(&["evaluate", run_a.to_str().unwrap()], None);
    run_binary(&["evaluate", run_b.to_str().unwrap()], None);
    let report_a = std::fs::read(run_a.join("report.json")).unwrap();
    let report_b = std::fs::read(run_b.join("report.json")).unwrap();
    assert_eq!(report_a, report_b, "evaluation reports differ between reruns");
    let csv_a = std::fs::read(run_a.join("report.csv")).unwrap();
    assert_eq!(csv_a, std::fs::read(run_b.join("report.csv")).unwrap());

    // Evaluating again from the recorded manifest reproduces the report.
    run_binary(&["evaluate", run_a.to_str().unwrap()], None);
    assert_eq!(report_a, std::fs::read(run_a.join("report.json")).unwrap());

    println!(
        "criterion 9 (reproducibility): PASS - {checked} artifacts byte-identical across reruns; evaluate is idempotent"
    );
}
