//! End-to-end acceptance criteria. Each test prints one `[PASS]`/`[FAIL]`
//! line with the measured values; run with `--nocapture` to see them.
//!
//! The tests take a shared lock so that wall-clock limits are measured
//! without competing work from sibling tests.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wpo_score::baselines::{isotropic_kde, train_dsm, DsmScoreNet, EmpiricalScore};
use wpo_score::checks::{
    early_stopping_bridge, gradcheck, heat_closure, hjb_sweep, lifted_equivalence, random_model,
};
use wpo_score::datasets::{
    generate, subsample_centers, DatasetName, DatasetSpec, GmmComponent, GroundTruthGmm,
};
use wpo_score::metrics::{mmd2_unbiased, nll, nn_median_ratio, Bandwidth};
use wpo_score::samplers::{
    init_from_moments, init_from_prior, sample_direct, sample_reverse_sde, SdeConfig,
};
use wpo_score::training::{
    esm_loss_oracle, ism_loss_quadrature, terminal_ism_loss, train, TrainConfig,
};
use wpo_score::{KernelModel, Points, PrecisionProvider, ProviderKind};

static LOCK: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

/// Print the criterion line and fail the test when `passed` is false.
fn verdict(id: &str, title: &str, passed: bool, detail: String) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("[{tag}] {id} {title}: {detail}");
    assert!(passed, "{id} {title}: {detail}");
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn dataset(name: DatasetName, n: usize, noise: f64, seed: u64) -> Points {
    generate(&DatasetSpec::new(name, n, noise, seed))
        .unwrap()
        .points
}

fn table_model(
    train: &Points,
    n_centers: usize,
    beta: f64,
    horizon: f64,
    seed: u64,
) -> KernelModel {
    let centers = subsample_centers(train, n_centers, seed).unwrap();
    let provider =
        PrecisionProvider::init(ProviderKind::Table, train.dim(), n_centers, beta, seed).unwrap();
    KernelModel::new(centers, provider, beta, horizon).unwrap()
}

fn adam(steps: usize, learning_rate: f64, seed: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_size: 64,
        learning_rate,
        seed,
        ..TrainConfig::default()
    }
}

/// Held-out NLLs of the isotropic KDE for each early-stopping time.
fn kde_nlls(train: &Points, heldout: &Points, beta: f64, eps: &[f64]) -> Vec<f64> {
    eps.iter()
        .map(|&e| {
            nll(
                &isotropic_kde(train.clone(), beta, e, 1.0).unwrap(),
                heldout,
            )
            .unwrap()
        })
        .collect()
}

const EARLY_STOP_GRID: [f64; 3] = [0.05, 0.1, 0.2];

#[test]
fn c01_hjb_exactness() {
    let _g = serial();
    let t = Instant::now();
    let r = hjb_sweep(1, 20, 1000, 1e-4, false).unwrap();
    let elapsed = t.elapsed();
    let ratio = r.halving_ratio();
    verdict(
        "c01",
        "HJB exactness",
        r.worst < 1e-4 && (3.0..=5.0).contains(&ratio) && within(elapsed, 5),
        format!(
            "max normalized residual {:.3e} (< 1e-4), halving ratio {ratio:.2} (~4), {elapsed:.2?} (< 5s)",
            r.worst
        ),
    );
}

#[test]
fn c02_heat_closure() {
    let _g = serial();
    let t = Instant::now();
    let err = heat_closure(2, 50, &[0.1, 0.5, 1.0]).unwrap();
    let elapsed = t.elapsed();
    verdict(
        "c02",
        "heat-closure oracle",
        err < 1e-6 && within(elapsed, 1),
        format!("max abs error {err:.3e} (< 1e-6), {elapsed:.2?} (< 1s)"),
    );
}

#[test]
fn c03_derivative_identities() {
    let _g = serial();
    let g = gradcheck(3, 100).unwrap();
    verdict(
        "c03",
        "derivative identities",
        g.score < 1e-5 && g.laplacian < 1e-4 && g.ism_gradient < 1e-4,
        format!(
            "score {:.2e} (< 1e-5), laplacian ratio {:.2e} (< 1e-4), ISM gradient {:.2e} (< 1e-4)",
            g.score, g.laplacian, g.ism_gradient
        ),
    );
}

#[test]
fn c04_lifted_equivalence() {
    let _g = serial();
    let diff = lifted_equivalence(4, 10, 1000).unwrap();
    verdict(
        "c04",
        "lifted-network equivalence",
        diff < 1e-10,
        format!("max abs diff {diff:.3e} (< 1e-10)"),
    );
}

#[test]
fn c05_early_stopping_bridge() {
    let _g = serial();
    let diff = early_stopping_bridge(5, 1000).unwrap();
    verdict(
        "c05",
        "early-stopping bridge",
        diff < 1e-10,
        format!("max abs diff {diff:.3e} (< 1e-10)"),
    );
}

#[test]
fn c06_ism_esm_offset() {
    let _g = serial();
    let truth = GroundTruthGmm::new(&[
        GmmComponent {
            weight: 0.3,
            mean: vec![-1.5],
            cov: vec![0.4],
        },
        GmmComponent {
            weight: 0.7,
            mean: vec![1.0],
            cov: vec![0.8],
        },
    ])
    .unwrap();
    let grid: Vec<f64> = (0..=24_000).map(|k| -12.0 + 1e-3 * k as f64).collect();
    let density = |x: f64| truth.pdf(&[x]);
    let score = |x: f64| truth.score(&[x])[0];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let offsets: Vec<f64> = (0..5)
        .map(|_| {
            let model = random_model(&mut rng, 1, 5, 1.0, 1.0, (0.5, 1.5)).unwrap();
            ism_loss_quadrature(&model, density, &grid).unwrap()
                - esm_loss_oracle(&model, density, score, &grid).unwrap()
        })
        .collect();
    let spread = offsets.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - offsets.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        "c06",
        "ISM/ESM offset",
        spread < 1e-3,
        format!("offsets {offsets:.6?}, spread {spread:.3e} (< 1e-3)"),
    );
}

#[test]
fn c07_gaussian_end_to_end() {
    let _g = serial();
    let t = Instant::now();
    let standard = vec![GmmComponent {
        weight: 1.0,
        mean: vec![0.0, 0.0],
        cov: vec![1.0, 0.0, 0.0, 1.0],
    }];
    let train_pts = generate(&DatasetSpec::gmm(standard.clone(), 5000, 1))
        .unwrap()
        .points;
    let heldout = generate(&DatasetSpec::gmm(standard, 20_000, 2))
        .unwrap()
        .points;
    let model = table_model(&train_pts, 16, 1.0, 1.0, 3);
    let (model, _) = train(model, &train_pts, &adam(2000, 0.2, 4), None).unwrap();
    let elapsed = t.elapsed();
    let loss = terminal_ism_loss(&model, &heldout).unwrap();
    let heldout_nll = nll(&model, &heldout).unwrap();
    let target_nll = 1.0 + (2.0 * std::f64::consts::PI).ln();
    verdict(
        "c07",
        "Gaussian end-to-end",
        (loss + 2.0).abs() <= 0.2 && (heldout_nll - target_nll).abs() <= 0.05 && within(elapsed, 120),
        format!(
            "held-out loss {loss:.4} (-2 ± 0.2), NLL {heldout_nll:.4} ({target_nll:.4} ± 0.05), {elapsed:.1?} (< 120s)"
        ),
    );
}

#[test]
fn c08_memorization() {
    let _g = serial();
    let t = Instant::now();
    let (beta, noise) = (0.25, 0.1);
    let train_pts = dataset(DatasetName::TwoMoons, 500, noise, 81);
    let heldout = dataset(DatasetName::TwoMoons, 500, noise, 82);
    let mut rng = ChaCha8Rng::seed_from_u64(83);

    let empirical = EmpiricalScore::new(train_pts.clone(), beta, 1.0).unwrap();
    let init = init_from_moments(&train_pts, beta, 1.0, 500, &mut rng).unwrap();
    let cfg = SdeConfig {
        n_steps: 1000,
        eps_stop: 1e-3,
        seed: 84,
    };
    let memorized = sample_reverse_sde(&empirical, &init, &cfg).unwrap();
    let empirical_ratio = nn_median_ratio(&memorized, &heldout, &train_pts).unwrap();

    let model = table_model(&train_pts, 100, beta, 1.0, 85);
    let (model, _) = train(model, &train_pts, &adam(2000, 1e-2, 86), None).unwrap();
    let direct = sample_direct(&model, 500, &mut rng);
    let wpo_ratio = nn_median_ratio(&direct, &heldout, &train_pts).unwrap();
    let elapsed = t.elapsed();
    verdict(
        "c08",
        "memorization",
        empirical_ratio < 0.5 && (0.5..=2.0).contains(&wpo_ratio) && within(elapsed, 300),
        format!(
            "empirical-field NN ratio {empirical_ratio:.3} (< 0.5), WPO NN ratio {wpo_ratio:.3} (in [0.5, 2]), {elapsed:.1?} (< 300s)"
        ),
    );
}

#[test]
fn c09_generalization_vs_early_stopping() {
    let _g = serial();
    let t = Instant::now();
    let train_pts = dataset(DatasetName::TwoMoons, 5000, 0.05, 91);
    let heldout = dataset(DatasetName::TwoMoons, 5000, 0.05, 92);
    let model = table_model(&train_pts, 500, 1.0, 1.0, 93);
    let (model, _) = train(model, &train_pts, &adam(5000, 1e-2, 94), None).unwrap();
    let wpo = nll(&model, &heldout).unwrap();
    let kde = kde_nlls(&train_pts, &heldout, 1.0, &EARLY_STOP_GRID);
    let elapsed = t.elapsed();
    verdict(
        "c09",
        "generalization vs early stopping",
        kde.iter().all(|&k| wpo < k) && within(elapsed, 900),
        format!("WPO NLL {wpo:.4}, KDE NLL at eps {EARLY_STOP_GRID:?}: {kde:.4?}, {elapsed:.1?} (< 900s)"),
    );
}

#[test]
fn c10_faster_than_dsm() {
    let _g = serial();
    let t = Instant::now();
    let steps = 10_000;
    let n_eval = 2000;
    let mut wins = 0;
    let mut lines = Vec::new();
    for (k, name) in [
        DatasetName::TwoMoons,
        DatasetName::Rings,
        DatasetName::Spiral,
        DatasetName::Checkerboard,
    ]
    .into_iter()
    .enumerate()
    {
        let mut wpo = Vec::new();
        let mut dsm = Vec::new();
        for seed in 0..3u64 {
            let base = 1000 + 100 * k as u64 + 10 * seed;
            let train_pts = dataset(name, 5000, 0.05, base + 1);
            let heldout = dataset(name, n_eval, 0.05, base + 2);
            let mut rng = ChaCha8Rng::seed_from_u64(base + 3);

            let model = table_model(&train_pts, 1000, 1.0, 1.0, base + 4);
            let (model, _) = train(model, &train_pts, &adam(steps, 1e-3, base + 5), None).unwrap();
            let samples = sample_direct(&model, n_eval, &mut rng);
            wpo.push(
                mmd2_unbiased(&samples, &heldout, Bandwidth::Median { seed: base + 6 }).unwrap(),
            );

            let net = DsmScoreNet::with_default_hidden(2, 1.0, 1.0, base + 7).unwrap();
            let (net, _) = train_dsm(net, &train_pts, &adam(steps, 1e-3, base + 8)).unwrap();
            let init = init_from_moments(&train_pts, 1.0, 1.0, n_eval, &mut rng).unwrap();
            let cfg = SdeConfig {
                n_steps: 1000,
                eps_stop: 1e-3,
                seed: base + 9,
            };
            let samples = sample_reverse_sde(&net, &init, &cfg).unwrap();
            dsm.push(
                mmd2_unbiased(&samples, &heldout, Bandwidth::Median { seed: base + 6 }).unwrap(),
            );
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v[1]
        };
        let (w, d) = (median(&mut wpo), median(&mut dsm));
        if w <= d {
            wins += 1;
        }
        lines.push(format!("{}: WPO {w:.3e} vs DSM {d:.3e}", name.as_str()));
    }
    let elapsed = t.elapsed();
    verdict(
        "c10",
        "faster learning than DSM",
        wins >= 3 && within(elapsed, 2700),
        format!(
            "median MMD² {}; WPO wins {wins}/4 (>= 3), {elapsed:.1?} (< 2700s)",
            lines.join(", ")
        ),
    );
}

#[test]
fn c11_sampler_consistency() {
    let _g = serial();
    let n = 5000;
    let train_pts = dataset(DatasetName::TwoMoons, 5000, 0.05, 111);
    let model = table_model(&train_pts, 200, 1.0, 1.0, 112);
    let (model, _) = train(model, &train_pts, &adam(2000, 1e-2, 113), None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(114);
    let direct = sample_direct(&model, n, &mut rng);
    // Null scale: RMS of same-sampler MMD² over independent direct pairs.
    let nulls: Vec<f64> = (0..5)
        .map(|k| {
            let a = sample_direct(&model, n, &mut rng);
            let b = sample_direct(&model, n, &mut rng);
            mmd2_unbiased(&a, &b, Bandwidth::Median { seed: 115 + k }).unwrap()
        })
        .collect();
    let null = (nulls.iter().map(|v| v * v).sum::<f64>() / nulls.len() as f64).sqrt();
    let init = init_from_prior(&model, n, &mut rng).unwrap();
    let cfg = SdeConfig {
        n_steps: 1000,
        eps_stop: 0.0,
        seed: 120,
    };
    let sde = sample_reverse_sde(&model, &init, &cfg).unwrap();
    let between = mmd2_unbiased(&direct, &sde, Bandwidth::Median { seed: 121 }).unwrap();
    verdict(
        "c11",
        "sampler consistency",
        between < 3.0 * null,
        format!(
            "direct vs SDE MMD² {between:.3e}, null RMS {null:.3e} (< 3x = {:.3e})",
            3.0 * null
        ),
    );
}

#[test]
fn c12_swissroll_6d() {
    let _g = serial();
    let t = Instant::now();
    let noise = 0.05;
    let train_pts = dataset(DatasetName::Swissroll6d, 5000, noise, 121);
    let heldout = dataset(DatasetName::Swissroll6d, 5000, noise, 122);
    let model = table_model(&train_pts, 1000, 1.0, 1.0, 123);
    let outcome = train(model, &train_pts, &adam(10_000, 1e-3, 124), None);
    let elapsed = t.elapsed();
    let (model, _) = match outcome {
        Ok(v) => v,
        Err(e) => {
            return verdict(
                "c12",
                "6-D proof of concept",
                false,
                format!("training aborted: {e}"),
            )
        }
    };
    let wpo = nll(&model, &heldout).unwrap();
    let kde = kde_nlls(&train_pts, &heldout, 1.0, &EARLY_STOP_GRID);
    let best = kde.iter().cloned().fold(f64::INFINITY, f64::min);
    verdict(
        "c12",
        "6-D proof of concept",
        wpo < best && within(elapsed, 1800),
        format!("WPO NLL {wpo:.4}, KDE NLL at eps {EARLY_STOP_GRID:?}: {kde:.4?}, {elapsed:.1?} (< 1800s)"),
    );
}
