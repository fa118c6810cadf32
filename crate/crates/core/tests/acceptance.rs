//! Acceptance criteria. Runs as a plain binary so every criterion prints one
//! PASS/FAIL line whether or not output capture is on; exits non-zero if any fail.

use std::fs;
use std::path::Path;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use watermark_core::learning::identify::{identify, markov_count};
use watermark_core::linalg::{greedy_match, max_eigenvalue, min_eigenvalue, trace_product, Mat};
use watermark_core::lti::{random_stable_system, LinearSystem};
use watermark_core::scenario::emit::{emit, Manifest};
use watermark_core::scenario::{
    run_scenario, run_study, Mode, RunArtifacts, ScenarioConfig, Study, SystemSpec,
};
use watermark_core::watermark::{
    design_matrices, expected_kl, kl_bounds, optimal_watermark, steady_watermark_cov, CostWeights,
    WatermarkCovariance,
};

type Outcome = Result<String, String>;

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let g = gaussian(rng, n, n);
    &g * g.transpose() + Mat::identity(n, n) * 0.1
}

fn rel_err(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn optimality() -> Outcome {
    let delta = 10.0;
    let mut worst_gap = f64::INFINITY;
    let mut worst_budget = 0.0f64;
    for seed in 0..20 {
        let sys = random_stable_system(2, 2, 2, seed, 0.9).map_err(|e| e.to_string())?;
        let modal = sys.modal_decomposition().map_err(|e| e.to_string())?;
        let wcal = sys.steady_output_cov().map_err(|e| e.to_string())?;
        let pair = design_matrices(&modal, &wcal, &CostWeights::identity(2, 2))
            .map_err(|e| e.to_string())?;
        let opt = optimal_watermark(&pair, delta).map_err(|e| e.to_string())?;
        let objective = trace_product(&opt.covariance.u, &pair.p_mat);
        worst_budget =
            worst_budget.max((trace_product(&opt.covariance.u, &pair.x_mat) - delta).abs() / delta);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..10_000 {
            // A feasible rank-1 candidate scaled onto the budget, which is where its objective peaks.
            let z = gaussian(&mut rng, 2, 1);
            let u = &z * z.transpose();
            let u = &u * (delta / trace_product(&u, &pair.x_mat));
            best = best.max(trace_product(&u, &pair.p_mat));
        }
        worst_gap = worst_gap.min(objective - best);
    }
    check(
        worst_gap >= -1e-8 && worst_budget <= 1e-8,
        format!(
            "min(opt - best random) = {worst_gap:.3e}, max budget rel error = {worst_budget:.1e}"
        ),
    )
}

fn closed_forms() -> Outcome {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..50u64 {
        let n = 1 + (seed % 4) as usize;
        let m = 1 + (seed % 3) as usize;
        let p = 1 + ((seed / 3) % 3) as usize;
        let sys = random_stable_system(n, m, p, 500 + seed, 0.95).map_err(|e| e.to_string())?;
        let modal = sys.modal_decomposition().map_err(|e| e.to_string())?;
        let wcal = sys.steady_output_cov().map_err(|e| e.to_string())?;
        let assembled = random_spd(&mut rng, m + p);
        let weights = CostWeights::new(
            assembled.view((0, 0), (m, m)).into_owned(),
            assembled.view((0, m), (m, p)).into_owned(),
            assembled.view((m, m), (p, p)).into_owned(),
        )
        .map_err(|e| e.to_string())?;
        let u = random_spd(&mut rng, p);

        let h = sys.markov_parameters(500);
        let w_inv = wcal.clone().try_inverse().ok_or("W not invertible")?;
        let mut ucal = Mat::zeros(m, m);
        let mut p_sum = Mat::zeros(p, p);
        let mut x_sum = Mat::zeros(p, p);
        for ht in &h {
            ucal += ht * &u * ht.transpose();
            p_sum += ht.transpose() * &w_inv * ht;
            x_sum += ht.transpose() * &weights.x_yy * ht;
        }
        x_sum += h[0].transpose() * &weights.x_yphi + &weights.x_phiy * &h[0] + &weights.x_phiphi;

        let closed_u = steady_watermark_cov(&modal, &WatermarkCovariance::new(u.clone()))
            .map_err(|e| e.to_string())?;
        let pair = design_matrices(&modal, &wcal, &weights).map_err(|e| e.to_string())?;
        worst = worst
            .max(rel_err(&closed_u, &ucal))
            .max(rel_err(&pair.p_mat, &p_sum))
            .max(rel_err(&pair.x_mat, &x_sum));
    }
    check(
        worst <= 1e-9,
        format!("max relative Frobenius error = {worst:.2e}"),
    )
}

fn kl_bracket() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut worst_violation = f64::NEG_INFINITY;
    for i in 0..100 {
        let m = 1 + i % 4;
        let wcal = random_spd(&mut rng, m);
        // Every fifth pair is rank deficient.
        let rank = if i % 5 == 0 { 1 } else { m };
        let g = gaussian(&mut rng, m, rank);
        let ucal = &g * g.transpose();
        let kl = expected_kl(&ucal, &wcal).map_err(|e| e.to_string())?;
        let (lo, hi) = kl_bounds(&ucal, &wcal).map_err(|e| e.to_string())?;
        let tol = 1e-12 * kl.abs().max(1.0);
        worst_violation = worst_violation.max(lo - kl).max(kl - hi);
        if lo > kl + tol || kl > hi + tol {
            return Err(format!("pair {i}: {lo} <= {kl} <= {hi} violated"));
        }
        if hi - lo <= tol {
            return Err(format!(
                "pair {i}: bounds coincide at non-zero U ({lo}, {hi})"
            ));
        }
    }
    let wcal = random_spd(&mut rng, 3);
    let zero = Mat::zeros(3, 3);
    let kl = expected_kl(&zero, &wcal).map_err(|e| e.to_string())?;
    let (lo, hi) = kl_bounds(&zero, &wcal).map_err(|e| e.to_string())?;
    check(
        kl.abs() < 1e-14 && lo.abs() < 1e-14 && hi.abs() < 1e-14,
        format!(
            "100 pairs bracketed (max violation {worst_violation:.1e}); all three vanish at U = 0"
        ),
    )
}

fn identification() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let n = 1 + (seed % 4) as usize;
        let m = 1 + (seed % 3) as usize;
        let p = 1 + ((seed / 2) % 3) as usize;
        let sys = random_stable_system(n, m, p, 9000 + seed, 0.9).map_err(|e| e.to_string())?;
        let truth = sys.modal_decomposition().map_err(|e| e.to_string())?;
        let h = sys.markov_parameters(markov_count(n) - 1);
        let found = identify(&h, n).map_err(|e| format!("seed {seed}: {e}"))?;
        let mapping = greedy_match(&found.lambdas, &truth.lambdas);
        for (i, target) in mapping.iter().enumerate() {
            let j = target.ok_or_else(|| format!("seed {seed}: unmatched mode"))?;
            let dl: Complex64 = found.lambdas[i] - truth.lambdas[j];
            worst = worst
                .max(dl.norm())
                .max((&found.residues[i] - &truth.residues[j]).norm());
        }
    }
    check(
        worst <= 1e-7,
        format!("max matched (lambda, Omega) error = {worst:.2e}"),
    )
}

/// Default scenario in known-parameter and full-order learning mode; shared by several criteria.
struct DefaultRuns {
    known: RunArtifacts,
    learning: RunArtifacts,
}

fn default_runs() -> Result<DefaultRuns, String> {
    let cfg = ScenarioConfig::default();
    let study = Study::prepare(&cfg).map_err(|e| e.to_string())?;
    let known = run_study(&study, &cfg).map_err(|e| e.to_string())?;
    let learning_cfg = ScenarioConfig {
        mode: Mode::OnlineLearning,
        ..cfg
    };
    let learning = run_study(&study, &learning_cfg).map_err(|e| e.to_string())?;
    Ok(DefaultRuns { known, learning })
}

fn convergence(runs: &DefaultRuns) -> Outcome {
    let probes = &runs.learning.probes;
    let ks: Vec<u64> = probes.iter().map(|p| p.k).collect();
    if ks != [1_000, 10_000, 100_000] {
        return Err(format!("probes taken at {ks:?}"));
    }
    let h: Vec<f64> = probes.iter().map(|p| p.h0_error).collect();
    let u: Vec<f64> = probes.iter().map(|p| p.u_error).collect();
    let ok = h[0] > h[1] && h[1] > h[2] && u[0] > u[1] && u[1] > u[2] && h[2] <= 0.1 && u[2] <= 1.0;
    check(ok, format!("H0 error {h:.3?}, U error {u:.3?}"))
}

/// Alarm counts over `[start, end)` pooled across replicas.
fn alarms(run: &RunArtifacts, start: u64, end: u64) -> (f64, f64) {
    let mut hits = 0usize;
    let mut total = 0usize;
    for r in &run.replicas {
        for g in &r.g[start as usize..end as usize] {
            total += 1;
            if *g >= run.zeta {
                hits += 1;
            }
        }
    }
    (hits as f64, total as f64)
}

fn separation(runs: &DefaultRuns) -> Outcome {
    let attack = ScenarioConfig::default()
        .attack
        .ok_or("default has no attack")?;
    let (s, e) = (attack.replay_start, attack.replay_end());
    let (pre_hits, pre_n) = alarms(&runs.known, 0, s);
    let (post_hits, post_n) = alarms(&runs.known, s, e);
    let (pre, post) = (pre_hits / pre_n, post_hits / post_n);
    let pooled = (pre_hits + post_hits) / (pre_n + post_n);
    let se = (pooled * (1.0 - pooled) * (1.0 / pre_n + 1.0 / post_n)).sqrt();
    let z = (post - pre) / se;
    let z_crit = Normal::standard().inverse_cdf(0.95);
    let learn_post = runs.learning.mean_rate(s, e);
    let learn_pre = runs.learning.mean_rate(0, s);
    let known_post = runs.known.mean_rate(s, e);
    let ok =
        pre <= 0.01 && z > z_crit && (learn_post - known_post).abs() <= 0.03 && learn_pre <= 0.01;
    check(
        ok,
        format!(
            "known pre {pre:.4} post {post:.4} (z = {z:.1}); learning pre {learn_pre:.4} post {learn_post:.4}; gap {:.2} pp",
            100.0 * (learn_post - known_post).abs()
        ),
    )
}

fn bounds(runs: &DefaultRuns) -> Outcome {
    let warm = runs.learning.warmup_audit.ok_or("no warm-up audit")?;
    let mut detail = format!(
        "{} redesigns, {} generations, max cap excess {:.2e}, max budget error {:.1e}, min floor ratio {:.3}",
        warm.redesigns,
        warm.generations,
        warm.max_cap_excess,
        warm.max_budget_error,
        warm.min_floor_ratio
    );
    if !warm.clean() || warm.redesigns == 0 || warm.max_budget_error > 1e-8 {
        return Err(detail);
    }
    let dirty = runs
        .learning
        .replicas
        .iter()
        .filter(|r| !r.audit.is_some_and(|a| a.clean()))
        .count();
    detail.push_str(&format!("; {dirty} replicas with violations"));
    check(dirty == 0, detail)
}

fn welch_one_sided(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    let var =
        |x: &[f64], mu: f64| x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma) / a.len() as f64, var(b, mb) / b.len() as f64);
    let t = (ma - mb) / (va + vb).sqrt();
    let df = (va + vb).powi(2) / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    (
        t,
        StudentsT::new(0.0, 1.0, df)
            .map(|d| d.inverse_cdf(0.95))
            .unwrap_or(f64::INFINITY),
    )
}

fn reduced_order() -> Outcome {
    let base = ScenarioConfig {
        system: SystemSpec::Generate {
            n: 100,
            m: 5,
            p: 5,
            seed: 100,
            rho_max: 0.9,
        },
        mode: Mode::ReducedOrder { n_model: 5 },
        ..ScenarioConfig::default()
    };
    let sys: LinearSystem = base.system.build().map_err(|e| e.to_string())?;
    let study = Study::for_system(sys, &base).map_err(|e| e.to_string())?;
    let attacked = run_study(&study, &base).map_err(|e| e.to_string())?;
    let clean_cfg = ScenarioConfig {
        attack: None,
        ..base.clone()
    };
    let clean = run_study(&study, &clean_cfg).map_err(|e| e.to_string())?;

    let attack = base.attack.ok_or("no attack configured")?;
    let window = |r: &RunArtifacts| -> Result<Vec<f64>, String> {
        r.replicas
            .iter()
            .map(|t| {
                let w = &t.g[attack.replay_start as usize..attack.replay_end() as usize];
                if w.iter().any(|g| !g.is_finite()) {
                    return Err("non-finite statistic".to_string());
                }
                Ok(w.iter().sum::<f64>() / w.len() as f64)
            })
            .collect()
    };
    let (post, none) = (window(&attacked)?, window(&clean)?);
    let (t, t_crit) = welch_one_sided(&post, &none);

    let warm = attacked.warmup_audit.ok_or("no warm-up audit")?;
    let replicas_clean = attacked
        .replicas
        .iter()
        .chain(&clean.replicas)
        .all(|r| r.audit.is_some_and(|a| a.clean()));
    let cap = base
        .learner
        .cost_for(5, 5)
        .covariance_cap(base.learner.delta)
        .map_err(|e| e.to_string())?;
    let detail = format!(
        "mean g attacked {:.3} vs no attack {:.3} (t = {t:.1}, crit {t_crit:.2}); U' floor ratio {:.3}, cap eigen {:.2}, {} redesigns ({} failed)",
        post.iter().sum::<f64>() / post.len() as f64,
        none.iter().sum::<f64>() / none.len() as f64,
        warm.min_floor_ratio,
        max_eigenvalue(&cap),
        warm.redesigns,
        warm.failed_redesigns,
    );
    let pd = warm.min_floor_ratio >= 1.0 - 1e-9 && min_eigenvalue(&cap) > 0.0;
    check(
        t > t_crit
            && warm.clean()
            && replicas_clean
            && pd
            && warm.redesigns > warm.failed_redesigns,
        detail,
    )
}

fn files_identical(a: &Path, b: &Path, names: &[String]) -> Result<(), String> {
    for name in names.iter().filter(|n| n.ends_with(".csv")) {
        let x = fs::read(a.join(name)).map_err(|e| e.to_string())?;
        let y = fs::read(b.join(name)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{name} differs"));
        }
    }
    Ok(())
}

fn reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let scenarios = [
        ScenarioConfig {
            monte_carlo: 50,
            seed: 3,
            ..ScenarioConfig::default()
        },
        ScenarioConfig {
            monte_carlo: 20,
            warmup_steps: 5_000,
            mode: Mode::OnlineLearning,
            seed: 4,
            ..ScenarioConfig::default()
        },
        ScenarioConfig {
            monte_carlo: 10,
            warmup_steps: 5_000,
            system: SystemSpec::Generate {
                n: 6,
                m: 2,
                p: 2,
                seed: 6,
                rho_max: 0.9,
            },
            mode: Mode::ReducedOrder { n_model: 2 },
            ..ScenarioConfig::default()
        },
    ];
    let mut compared = 0;
    for (i, cfg) in scenarios.iter().enumerate() {
        let first = dir.path().join(format!("s{i}/a"));
        let files = emit(&run_scenario(cfg).map_err(|e| e.to_string())?, cfg, &first)
            .map_err(|e| e.to_string())?;
        let manifest = Manifest::load(&files.manifest).map_err(|e| e.to_string())?;
        let second = dir.path().join(format!("s{i}/b"));
        let rerun = run_scenario(&manifest.config).map_err(|e| e.to_string())?;
        emit(&rerun, &manifest.config, &second).map_err(|e| e.to_string())?;
        files_identical(&first, &second, &manifest.files)?;
        compared += manifest
            .files
            .iter()
            .filter(|n| n.ends_with(".csv"))
            .count();
    }
    Ok(format!(
        "{compared} CSV files byte-identical across 3 scenarios"
    ))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let outcome = f();
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {id} [{tag}] {name}: {detail} ({secs:.1}s)");
        results.push((id, name, outcome, secs));
    };
    run(1, "exact design optimality", &optimality);
    run(2, "closed forms vs truncated sums", &closed_forms);
    run(3, "KL bracket", &kl_bracket);
    run(4, "exact-data identification", &identification);
    match default_runs() {
        Ok(runs) => {
            run(5, "learning convergence", &|| convergence(&runs));
            run(6, "detection separation", &|| separation(&runs));
            run(7, "learned covariance bounds", &|| bounds(&runs));
        }
        Err(e) => {
            for (id, name) in [
                (5, "learning convergence"),
                (6, "detection separation"),
                (7, "learned covariance bounds"),
            ] {
                run(id, name, &|| Err(format!("default scenario failed: {e}")));
            }
        }
    }
    run(8, "reduced-order study", &reduced_order);
    run(9, "reproducibility from manifest", &reproducibility);
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
