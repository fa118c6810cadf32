//! Behaviour of the learner after a long warm-up on the default plant.

use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use watermark_core::detector::DetectorModel;
use watermark_core::linalg::greedy_match;
use watermark_core::scenario::{run_study, warm_up, Mode, ScenarioConfig, Study, WarmState};
use watermark_core::watermark::{steady_watermark_cov_from_system, WatermarkCovariance};

fn config() -> ScenarioConfig {
    ScenarioConfig {
        mode: Mode::OnlineLearning,
        monte_carlo: 20,
        ..ScenarioConfig::default()
    }
}

fn warmed() -> &'static (Study, WarmState) {
    static CELL: OnceLock<(Study, WarmState)> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = config();
        let study = Study::prepare(&cfg).unwrap();
        let warm = warm_up(&study, &cfg, study.sys.n(), cfg.warmup_steps).unwrap();
        (study, warm)
    })
}

#[test]
fn noise_covariance_estimate_converges() {
    let (study, warm) = warmed();
    let rel = (warm.learner.noise_cov_pd() - &study.wcal).norm() / study.wcal.norm();
    assert!(rel <= 0.1, "relative error {rel}");
}

#[test]
fn eigenvalue_estimates_approach_the_plant() {
    let (study, warm) = warmed();
    let truth = study.sys.modal_decomposition().unwrap();
    let found = warm.learner.lambdas().unwrap();
    for (i, j) in greedy_match(found, &truth.lambdas).into_iter().enumerate() {
        let err = (found[i] - truth.lambdas[j.unwrap()]).norm();
        assert!(err <= 0.05, "mode {i}: error {err}");
    }
}

#[test]
fn response_covariance_matches_the_played_watermark() {
    // The learner's U_k still carries the exploration term, so the reference is the
    // true response to U_k rather than to the exact optimum.
    let (study, warm) = warmed();
    let played = WatermarkCovariance::new(warm.learner.current_covariance());
    let oracle = steady_watermark_cov_from_system(&study.sys, &played).unwrap();
    let learned = warm.learner.detector_model().unwrap().ucal;
    let rel = (&learned - &oracle).norm() / oracle.norm();
    assert!(rel <= 0.05, "relative error {rel}");
}

#[test]
fn converged_statistic_tracks_the_exact_detector() {
    // Reference: true plant and noise covariance, with the response covariance of the
    // watermark the learner actually plays.
    let (study, warm) = warmed();
    let sys = &study.sys;
    let mut learner = warm.learner.clone();
    let mut plant = warm.plant.clone();
    let mut response = warm.exact_response.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let played = WatermarkCovariance::new(learner.current_covariance());
    let exact = DetectorModel::new(
        study.wcal.clone(),
        steady_watermark_cov_from_system(sys, &played).unwrap(),
        study.zeta,
    )
    .unwrap();
    let (mut g, mut g_exact) = (Vec::new(), Vec::new());
    for _ in 0..1_000 {
        let phi = learner.generate_watermark(&mut rng).unwrap();
        let y = sys.simulate_step(&mut plant, &phi).unwrap();
        g.push(learner.online_np_statistic(&y).unwrap());
        g_exact.push(exact.statistic(&y, response.gamma()).unwrap());
        response.update(sys, &phi).unwrap();
        let due = learner.redesign_due();
        learner.ingest(&y).unwrap();
        if due {
            learner.redesign();
        }
    }
    let n = g.len() as f64;
    let mean = g_exact.iter().sum::<f64>() / n;
    let sd = (g_exact.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let mad = g
        .iter()
        .zip(&g_exact)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n;
    assert!(mad <= 0.1 * sd, "mean |g - g_exact| = {mad}, sd = {sd}");
}

#[test]
fn full_order_reduced_mode_equals_online_learning() {
    let cfg = ScenarioConfig {
        warmup_steps: 5_000,
        monte_carlo: 4,
        ..config()
    };
    let study = Study::prepare(&cfg).unwrap();
    let online = run_study(&study, &cfg).unwrap();
    let reduced_cfg = ScenarioConfig {
        mode: Mode::ReducedOrder {
            n_model: study.sys.n(),
        },
        ..cfg
    };
    let reduced = run_study(&study, &reduced_cfg).unwrap();
    assert_eq!(online.replicas, reduced.replicas);
    assert_eq!(online.zeta, reduced.zeta);
    assert_eq!(online.u_error, reduced.u_error);
}
