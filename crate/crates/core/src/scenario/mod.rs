//! Experiment harness: known-parameter, online-learning and reduced-order replay-attack studies.

pub mod attack;
pub mod config;
pub mod emit;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{decide, DetectorModel, StateResponse};
use crate::error::{Error, Result};
use crate::learning::{BoundAudit, LearnerState};
use crate::linalg::{sqrt_psd, trace_product, Mat, Vector};
use crate::lti::{stream, LinearSystem, SimState, SystemDocument};
use crate::watermark::{
    design_matrices_from_system, optimal_watermark, steady_watermark_cov_from_system, CostWeights,
    DesignPair, LqgCost, OptimalWatermark,
};

pub use attack::{AttackSpec, ReplayAttacker};
pub use config::{LearnerSettings, Mode, ScenarioConfig, SystemSpec};
pub use emit::{emit, read_run_csv, EmittedFiles, Manifest};

/// RNG stream (per replica seed) that drives the watermark noise.
pub const WATERMARK_STREAM: u64 = 4;

/// Sample counts at which the learning runs record convergence probes.
pub const PROBE_POINTS: [u64; 3] = [1_000, 10_000, 100_000];

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "WMARK_THREADS";

/// Seed of replica `r`, derived from the master seed.
pub fn replica_seed(master: u64, replica: usize) -> u64 {
    // splitmix64 finalizer over (master, replica)
    let mut z = master
        ^ (replica as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exact-parameter quantities shared by every replica of a study.
#[derive(Debug, Clone)]
pub struct Study {
    pub sys: LinearSystem,
    pub weights: CostWeights,
    pub delta: f64,
    /// Output covariance without watermark.
    pub wcal: Mat,
    pub pair: DesignPair,
    pub optimal: OptimalWatermark,
    /// Steady watermark response covariance under the optimal design.
    pub ucal: Mat,
    pub cost: LqgCost,
    pub zeta: f64,
    pub model: DetectorModel,
}

impl Study {
    /// Exact design for the configured plant; `zeta` is calibrated from the true LQG cost
    /// (or from a no-attack trace in quantile mode).
    pub fn prepare(cfg: &ScenarioConfig) -> Result<Self> {
        let sys = cfg.system.build()?;
        Self::for_system(sys, cfg)
    }

    pub fn for_system(sys: LinearSystem, cfg: &ScenarioConfig) -> Result<Self> {
        let weights = cfg.learner.cost_for(sys.m(), sys.p());
        let delta = cfg.learner.delta;
        let wcal = sys.steady_output_cov()?;
        let pair = design_matrices_from_system(&sys, &wcal, &weights)?;
        let optimal = optimal_watermark(&pair, delta)?;
        let ucal = steady_watermark_cov_from_system(&sys, &optimal.covariance)?;
        // delta_J = tr(X S) reduces to tr(U X_design).
        let cost = LqgCost {
            j0: trace_product(&weights.x_yy, &wcal),
            delta_j: trace_product(&optimal.covariance.u, &pair.x_mat),
        };
        let model = DetectorModel::new(wcal.clone(), ucal.clone(), 0.0)?;
        let mut study = Self {
            sys,
            weights,
            delta,
            wcal,
            pair,
            optimal,
            ucal,
            cost,
            zeta: 0.0,
            model,
        };
        let seed = replica_seed(cfg.seed, usize::MAX);
        let zeta = cfg.threshold.calibrate(&cost, |samples| {
            study.calibration_trace(seed, samples, cfg.burn_in)
        })?;
        study.zeta = zeta;
        study.model = study.model.clone().with_threshold(zeta);
        Ok(study)
    }

    pub fn exact_u(&self) -> &Mat {
        &self.optimal.covariance.u
    }

    fn calibration_trace(&self, seed: u64, samples: usize, burn_in: u64) -> Result<Vec<f64>> {
        let mut sim = KnownSim::new(self, seed, burn_in)?;
        (0..samples)
            .map(|_| sim.step(self, None, 0).map(|(g, _)| g))
            .collect()
    }
}

/// Known-parameter loop state for one replica.
struct KnownSim {
    plant: SimState,
    rng: ChaCha8Rng,
    root: Mat,
    response: StateResponse,
}

impl KnownSim {
    fn new(study: &Study, seed: u64, burn_in: u64) -> Result<Self> {
        let u = study.exact_u();
        let mut sim = Self {
            plant: SimState::stationary(&study.sys, seed, Some(u))?,
            rng: stream(seed, WATERMARK_STREAM),
            root: sqrt_psd(u),
            response: StateResponse::new(&study.sys),
        };
        for _ in 0..burn_in {
            let phi = sim.draw();
            study.sys.simulate_step(&mut sim.plant, &phi)?;
            sim.response.update(&study.sys, &phi)?;
        }
        Ok(sim)
    }

    fn draw(&mut self) -> Vector {
        let p = self.root.nrows();
        let rng = &mut self.rng;
        &self.root * Vector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    /// One tick; returns the statistic and the live output.
    fn step(
        &mut self,
        study: &Study,
        attacker: Option<&mut ReplayAttacker>,
        k: u64,
    ) -> Result<(f64, Vector)> {
        let phi = self.draw();
        let y = study.sys.simulate_step(&mut self.plant, &phi)?;
        let seen = match attacker {
            Some(a) => a.process(k, &y),
            None => y.clone(),
        };
        let g = study.model.statistic(&seen, self.response.gamma())?;
        self.response.update(&study.sys, &phi)?;
        Ok((g, y))
    }
}

/// Convergence snapshot taken during a learning run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceProbe {
    pub k: u64,
    /// `||H_{k,0} - H_0||_F`.
    pub h0_error: f64,
    /// `||U_k - U||_F` against the exact optimal design.
    pub u_error: f64,
}

/// Learner, plant and exact response after the shared warm-up.
#[derive(Debug, Clone)]
pub struct WarmState {
    pub learner: LearnerState,
    pub plant: SimState,
    pub exact_response: StateResponse,
    pub u_error: Vec<(u64, f64)>,
    pub probes: Vec<ConvergenceProbe>,
}

/// Runs the learner on the watermarked plant for `steps` samples. `U` errors are recorded
/// after every redesign and the convergence probes at [`PROBE_POINTS`].
pub fn warm_up(
    study: &Study,
    cfg: &ScenarioConfig,
    n_model: usize,
    steps: u64,
) -> Result<WarmState> {
    let sys = &study.sys;
    let learner_cfg = cfg.learner.learner_config(n_model, sys.m(), sys.p());
    let mut state = WarmState {
        learner: LearnerState::new(learner_cfg)?,
        plant: SimState::new(sys.n(), cfg.seed),
        exact_response: StateResponse::new(sys),
        u_error: Vec::new(),
        probes: Vec::new(),
    };
    let mut rng = stream(cfg.seed, WATERMARK_STREAM);
    let h0 = sys.c() * sys.b();
    for _ in 0..steps {
        let phi = state.learner.generate_watermark(&mut rng)?;
        let y = sys.simulate_step(&mut state.plant, &phi)?;
        state.exact_response.update(sys, &phi)?;
        let due = state.learner.redesign_due();
        state.learner.ingest(&y)?;
        let k = state.learner.k();
        if due {
            state.learner.redesign();
            state.u_error.push((
                k,
                (state.learner.current_covariance() - study.exact_u()).norm(),
            ));
        }
        if PROBE_POINTS.contains(&k) {
            state.probes.push(ConvergenceProbe {
                k,
                h0_error: (&state.learner.markov_estimates()[0] - &h0).norm(),
                u_error: (state.learner.current_covariance() - study.exact_u()).norm(),
            });
        }
    }
    Ok(state)
}

/// Per-replica traces over the evaluated window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaTrace {
    pub seed: u64,
    pub g: Vec<f64>,
    /// Exact-parameter statistic on the same inputs (learning modes only).
    pub g_exact: Option<Vec<f64>>,
    pub audit: Option<BoundAudit>,
}

fn run_known_replica(study: &Study, cfg: &ScenarioConfig, seed: u64) -> Result<ReplicaTrace> {
    let mut sim = KnownSim::new(study, seed, cfg.burn_in)?;
    let mut attacker = cfg.attack.map(ReplayAttacker::new).transpose()?;
    let mut g = Vec::with_capacity(cfg.horizon as usize);
    for k in 0..cfg.horizon {
        g.push(sim.step(study, attacker.as_mut(), k)?.0);
    }
    Ok(ReplicaTrace {
        seed,
        g,
        g_exact: None,
        audit: None,
    })
}

fn run_learning_replica(
    study: &Study,
    cfg: &ScenarioConfig,
    warm: &WarmState,
    seed: u64,
) -> Result<ReplicaTrace> {
    let sys = &study.sys;
    let mut learner = warm.learner.clone();
    let mut plant = warm.plant.clone();
    plant.reseed(seed);
    let mut exact = warm.exact_response.clone();
    let mut rng = stream(seed, WATERMARK_STREAM);
    let mut attacker = cfg.attack.map(ReplayAttacker::new).transpose()?;
    let mut g = Vec::with_capacity(cfg.horizon as usize);
    let mut g_exact = Vec::with_capacity(cfg.horizon as usize);
    for k in 0..cfg.horizon {
        let phi = learner.generate_watermark(&mut rng)?;
        let y = sys.simulate_step(&mut plant, &phi)?;
        let seen = match attacker.as_mut() {
            Some(a) => a.process(k, &y),
            None => y,
        };
        g.push(match learner.online_np_statistic(&seen) {
            Ok(v) => v,
            Err(Error::NotReady) => f64::NAN,
            Err(e) => return Err(e),
        });
        g_exact.push(study.model.statistic(&seen, exact.gamma())?);
        exact.update(sys, &phi)?;
        // The operator cannot tell replayed data apart, so the learner keeps ingesting what it receives.
        let due = learner.redesign_due();
        learner.ingest(&seen)?;
        if due {
            learner.redesign();
        }
    }
    Ok(ReplicaTrace {
        seed,
        g,
        g_exact: Some(g_exact),
        audit: Some(*learner.audit()),
    })
}

/// Threshold of a learning run, computed from the learner's own estimates after the warm-up
/// (the exact parameters are reserved for evaluation traces).
fn learner_threshold(study: &Study, cfg: &ScenarioConfig, warm: &WarmState) -> Result<f64> {
    let cost = warm.learner.estimated_cost()?;
    cfg.threshold.calibrate(&cost, |samples| {
        let mut learner = warm.learner.clone();
        let mut plant = warm.plant.clone();
        let seed = replica_seed(cfg.seed, usize::MAX);
        plant.reseed(seed);
        let mut rng = stream(seed, WATERMARK_STREAM);
        (0..samples)
            .map(|_| -> Result<f64> {
                let phi = learner.generate_watermark(&mut rng)?;
                let y = study.sys.simulate_step(&mut plant, &phi)?;
                let g = learner.online_np_statistic(&y)?;
                let due = learner.redesign_due();
                learner.ingest(&y)?;
                if due {
                    learner.redesign();
                }
                Ok(g)
            })
            .collect()
    })
}

/// Per-step fraction of replicas with `g >= zeta` (NaN entries count as no alarm).
pub fn detection_rate(replicas: &[Vec<f64>], zeta: f64) -> Result<Vec<f64>> {
    let first = replicas.first().ok_or(Error::Empty("replica set"))?;
    let len = first.len();
    if replicas.iter().any(|r| r.len() != len) {
        return Err(Error::InvalidConfig(
            "replica traces have different lengths".into(),
        ));
    }
    let count = replicas.len() as f64;
    Ok((0..len)
        .map(|k| replicas.iter().filter(|r| decide(r[k], zeta)).count() as f64 / count)
        .collect())
}

/// Everything a scenario run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub mode: Mode,
    pub system: SystemDocument,
    pub zeta: f64,
    pub cost: LqgCost,
    pub exact_u: Mat,
    pub replicas: Vec<ReplicaTrace>,
    /// Per-redesign `||U_k - U||_F` during the warm-up (learning modes).
    pub u_error: Vec<(u64, f64)>,
    pub detection_rate: Vec<f64>,
    pub probes: Vec<ConvergenceProbe>,
    /// Bound audit of the warm-up learner.
    pub warmup_audit: Option<BoundAudit>,
}

impl RunArtifacts {
    /// Replica 0's statistic with alarm flags.
    pub fn g_trace(&self) -> Vec<(u64, f64, bool)> {
        self.replicas.first().map_or_else(Vec::new, |r| {
            r.g.iter()
                .enumerate()
                .map(|(k, &g)| (k as u64, g, decide(g, self.zeta)))
                .collect()
        })
    }

    /// Mean of `detection_rate` over `[start, end)`.
    pub fn mean_rate(&self, start: u64, end: u64) -> f64 {
        let slice = &self.detection_rate
            [start as usize..end.min(self.detection_rate.len() as u64) as usize];
        slice.iter().sum::<f64>() / slice.len().max(1) as f64
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(value) = std::env::var(THREADS_ENV) {
        let n: usize = value.parse().map_err(|_| {
            Error::InvalidConfig(format!(
                "{THREADS_ENV} must be a positive integer, got `{value}`"
            ))
        })?;
        builder = builder.num_threads(n.max(1));
    }
    builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Runs every replica of the configured study.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let study = Study::prepare(cfg)?;
    run_study(&study, cfg)
}

/// [`run_scenario`] on an already prepared study (lets several configurations share one exact design).
pub fn run_study(study: &Study, cfg: &ScenarioConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let pool = thread_pool()?;
    let seeds: Vec<u64> = (0..cfg.monte_carlo)
        .map(|r| replica_seed(cfg.seed, r))
        .collect();
    let (zeta, replicas, u_error, probes, warmup_audit) = match cfg.mode {
        Mode::KnownParams => {
            let replicas = pool.install(|| {
                seeds
                    .par_iter()
                    .map(|&s| run_known_replica(study, cfg, s))
                    .collect::<Result<Vec<_>>>()
            })?;
            (study.zeta, replicas, Vec::new(), Vec::new(), None)
        }
        Mode::OnlineLearning | Mode::ReducedOrder { .. } => {
            let n_model = match cfg.mode {
                Mode::ReducedOrder { n_model } => n_model,
                _ => study.sys.n(),
            };
            let warm = warm_up(study, cfg, n_model, cfg.warmup_steps)?;
            let zeta = learner_threshold(study, cfg, &warm)?;
            let replicas = pool.install(|| {
                seeds
                    .par_iter()
                    .map(|&s| run_learning_replica(study, cfg, &warm, s))
                    .collect::<Result<Vec<_>>>()
            })?;
            let audit = *warm.learner.audit();
            (zeta, replicas, warm.u_error, warm.probes, Some(audit))
        }
    };
    let traces: Vec<Vec<f64>> = replicas.iter().map(|r| r.g.clone()).collect();
    let detection_rate = detection_rate(&traces, zeta)?;
    Ok(RunArtifacts {
        mode: cfg.mode,
        system: study.sys.to_document(None),
        zeta,
        cost: study.cost,
        exact_u: study.exact_u().clone(),
        replicas,
        u_error,
        detection_rate,
        probes,
        warmup_audit,
    })
}
