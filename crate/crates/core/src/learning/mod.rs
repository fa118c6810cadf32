//! Online learning of the plant's modal model and adaptive watermark design.
//!
//! The per-tick contract is `generate_watermark -> plant step -> online_np_statistic -> ingest`;
//! `redesign` runs between ticks (every `redesign_interval` samples when driven by [`LearnerState::observe`]).

pub mod identify;

use std::collections::VecDeque;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorModel, ResponseState};
use crate::error::{dim_check, Error, Result};
use crate::linalg::{
    greedy_match, max_eigenvalue, project_eigen_floor, sqrt_psd, sym_eigen, symmetrize, to_complex,
    trace_product, CMat, Mat, Vector,
};
use crate::lti::ModalDecomposition;
use crate::watermark::{
    design_matrices, optimal_watermark, CostWeights, DesignPair, LqgCost, OptimalWatermark,
};

pub use identify::{
    clamp_moduli, estimate_char_poly, estimate_residues, identify, markov_count, poly_roots,
    MODULUS_CLAMP,
};

/// Eigenvalue floor applied to the covariance estimates before inversion.
pub const PD_FLOOR: f64 = 1e-8;

fn default_redesign_interval() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    /// Model order used for identification (may be below the plant order).
    pub n_model: usize,
    /// Cost budget.
    pub delta: f64,
    /// Exploration exponent.
    pub beta: f64,
    #[serde(default = "default_redesign_interval")]
    pub redesign_interval: u64,
    /// Output dimension.
    pub m: usize,
    /// Watermark dimension.
    pub p: usize,
    pub cost: CostWeights,
}

impl LearnerConfig {
    /// Defaults used in the experiments: `delta = 10`, `beta = 1/3`, redesign every 100 steps, `X = I`.
    pub fn standard(n_model: usize, m: usize, p: usize) -> Self {
        Self {
            n_model,
            delta: 10.0,
            beta: 1.0 / 3.0,
            redesign_interval: default_redesign_interval(),
            m,
            p,
            cost: CostWeights::identity(m, p),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_model == 0 {
            return bad("n_model must be at least 1".into());
        }
        if self.m == 0 || self.p == 0 {
            return bad("m and p must be at least 1".into());
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1), got {}", self.beta));
        }
        if self.redesign_interval == 0 {
            return bad("redesign_interval must be at least 1".into());
        }
        dim_check("X_yy", (self.m, self.m), self.cost.x_yy.shape())?;
        dim_check("X_yphi", (self.m, self.p), self.cost.x_yphi.shape())?;
        dim_check("X_phiy", (self.p, self.m), self.cost.x_phiy.shape())?;
        dim_check("X_phiphi", (self.p, self.p), self.cost.x_phiphi.shape())?;
        if nalgebra::Cholesky::new(symmetrize(&self.cost.assembled())).is_none() {
            return Err(Error::Singular("cost weight X"));
        }
        Ok(())
    }
}

/// `U^{1/2} zeta` with the symmetric square root; `U` must be positive definite.
pub fn shape_watermark(u: &Mat, zeta: &Vector) -> Result<Vector> {
    dim_check("watermark noise", (u.nrows(), 1), zeta.shape())?;
    let (values, _) = sym_eigen(u);
    if !(values[0] > 0.0) {
        return Err(Error::Singular("watermark covariance"));
    }
    Ok(sqrt_psd(u) * zeta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Pending {
    phi: Vector,
    u: Mat,
    u_inv: Mat,
}

/// One logged tick, kept only when logging is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub y: Vector,
    pub phi: Vector,
    pub u_inv: Mat,
}

/// Current estimates produced by the last successful redesign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedModel {
    pub modal: ModalDecomposition,
    pub wcal: Mat,
    pub pair: DesignPair,
    pub optimal: OptimalWatermark,
    /// Samples ingested when the model was built.
    pub built_at: u64,
}

/// Running record of the covariance bounds checked at every generation and redesign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundAudit {
    pub redesigns: u64,
    pub failed_redesigns: u64,
    /// Redesigns whose `U_*` exceeded the cap in the PSD order.
    pub cap_violations: u64,
    /// Largest eigenvalue of `U_* - cap` seen.
    pub max_cap_excess: f64,
    /// Largest relative deviation of `tr(U_* X)` from `delta`.
    pub max_budget_error: f64,
    pub generations: u64,
    /// Generations whose smallest eigenvalue fell below `delta / (k + 1)^beta`.
    pub floor_violations: u64,
    /// Smallest `lambda_min(U_k) / (delta / (k + 1)^beta)` seen.
    pub min_floor_ratio: f64,
}

impl Default for BoundAudit {
    fn default() -> Self {
        Self {
            redesigns: 0,
            failed_redesigns: 0,
            cap_violations: 0,
            max_cap_excess: f64::NEG_INFINITY,
            max_budget_error: 0.0,
            generations: 0,
            floor_violations: 0,
            min_floor_ratio: f64::INFINITY,
        }
    }
}

impl BoundAudit {
    pub fn clean(&self) -> bool {
        self.cap_violations == 0 && self.floor_violations == 0
    }
}

/// Outcome of one [`LearnerState::redesign`] call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedesignReport {
    pub k: u64,
    pub error: Option<String>,
    pub cap_ok: bool,
    pub budget_error: f64,
}

impl RedesignReport {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    config: LearnerConfig,
    k: u64,
    s_tau: Vec<Mat>,
    phi_ring: VecDeque<Vector>,
    uinv_ring: VecDeque<Mat>,
    pending: Option<Pending>,
    y_sum: Mat,
    ucal_pairs: Vec<CMat>,
    ucal_running_sum: Mat,
    model: Option<LearnedModel>,
    /// `U_*` as an eigen-decomposition with eigenvalues clamped at zero.
    u_star_values: Vector,
    u_star_vectors: Mat,
    response: ResponseState,
    pinned: Option<(Mat, Mat)>,
    log: Option<Vec<LogEntry>>,
    audit: BoundAudit,
    cap: Mat,
}

impl LearnerState {
    pub fn new(config: LearnerConfig) -> Result<Self> {
        config.validate()?;
        let (n, m, p) = (config.n_model, config.m, config.p);
        let count = markov_count(n);
        let cap = config.cost.covariance_cap(config.delta)?;
        Ok(Self {
            k: 0,
            s_tau: vec![Mat::zeros(m, p); count],
            phi_ring: VecDeque::with_capacity(count),
            uinv_ring: VecDeque::with_capacity(count),
            pending: None,
            y_sum: Mat::zeros(m, m),
            ucal_pairs: vec![CMat::zeros(m, m); n * n],
            ucal_running_sum: Mat::zeros(m, m),
            model: None,
            u_star_values: Vector::zeros(p),
            u_star_vectors: Mat::identity(p, p),
            response: ResponseState::zeros(n, m, p),
            pinned: None,
            log: None,
            audit: BoundAudit::default(),
            cap,
            config,
        })
    }

    pub fn config(&self) -> &LearnerConfig {
        &self.config
    }

    /// Samples ingested so far.
    pub fn k(&self) -> u64 {
        self.k
    }

    pub fn model(&self) -> Option<&LearnedModel> {
        self.model.as_ref()
    }

    pub fn audit(&self) -> &BoundAudit {
        &self.audit
    }

    pub fn log(&self) -> Option<&[LogEntry]> {
        self.log.as_deref()
    }

    pub fn response(&self) -> &ResponseState {
        &self.response
    }

    /// Keeps every `(y, phi, U^{-1})` from now on (for offline checks).
    pub fn enable_log(&mut self) {
        if self.log.is_none() {
            self.log = Some(Vec::new());
        }
    }

    /// Exploration scale applied at tick `t`: `delta / max(t, 1)^beta`.
    pub fn exploration(&self, tick: u64) -> f64 {
        self.config.delta / (tick.max(1) as f64).powf(self.config.beta)
    }

    /// The design part `U_*` of the covariance.
    pub fn u_star(&self) -> Mat {
        &self.u_star_vectors
            * Mat::from_diagonal(&self.u_star_values)
            * self.u_star_vectors.transpose()
    }

    fn covariance_parts(&self, tick: u64) -> (Mat, Mat, Mat) {
        let eps = self.exploration(tick);
        let v = &self.u_star_vectors;
        let vals = self.u_star_values.map(|d| d + eps);
        let u = symmetrize(&(v * Mat::from_diagonal(&vals) * v.transpose()));
        let root = symmetrize(&(v * Mat::from_diagonal(&vals.map(f64::sqrt)) * v.transpose()));
        let inv = symmetrize(&(v * Mat::from_diagonal(&vals.map(|d| 1.0 / d)) * v.transpose()));
        (u, root, inv)
    }

    /// Covariance the next generated watermark will use.
    pub fn current_covariance(&self) -> Mat {
        self.covariance_parts(self.k).0
    }

    /// Draws `phi_k = U_k^{1/2} zeta_k` and records it for the matching [`ingest`](Self::ingest).
    pub fn generate_watermark<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Vector> {
        let zeta = Vector::from_fn(self.config.p, |_, _| rng.sample(StandardNormal));
        self.watermark_from_noise(&zeta)
    }

    /// Same as [`generate_watermark`](Self::generate_watermark) with the standard normal draw supplied.
    pub fn watermark_from_noise(&mut self, zeta: &Vector) -> Result<Vector> {
        if self.pending.is_some() {
            return Err(Error::Sequencing(
                "watermark already generated for this tick",
            ));
        }
        dim_check("watermark noise", (self.config.p, 1), zeta.shape())?;
        let (u, root, u_inv) = self.covariance_parts(self.k);
        let smallest = self.u_star_values.min() + self.exploration(self.k);
        if !(smallest > 0.0) {
            return Err(Error::Singular("watermark covariance"));
        }
        let floor = self.config.delta / ((self.k + 1) as f64).powf(self.config.beta);
        let ratio = smallest / floor;
        self.audit.generations += 1;
        self.audit.min_floor_ratio = self.audit.min_floor_ratio.min(ratio);
        if ratio < 1.0 - 1e-12 {
            self.audit.floor_violations += 1;
        }
        let phi = root * zeta;
        self.pending = Some(Pending {
            phi: phi.clone(),
            u,
            u_inv,
        });
        Ok(phi)
    }

    /// Folds the output `y_k` of the current tick into the running sums.
    pub fn ingest(&mut self, y: &Vector) -> Result<()> {
        dim_check("measurement", (self.config.m, 1), y.shape())?;
        let pending = self
            .pending
            .take()
            .ok_or(Error::Sequencing("ingest called before generate_watermark"))?;
        for (tau, (phi, u_inv)) in self.phi_ring.iter().zip(&self.uinv_ring).enumerate() {
            self.s_tau[tau] += y * (u_inv * phi).transpose();
        }
        self.y_sum += y * y.transpose();
        self.ucal_running_sum += self.ucal_current_raw();
        if let Some(model) = &self.model {
            let n = model.modal.order();
            let u_c = to_complex(&pending.u);
            for i in 0..n {
                let left = &model.modal.residues[i] * &u_c;
                for j in 0..n {
                    let factor = model.modal.lambdas[i] * model.modal.lambdas[j];
                    let idx = i * n + j;
                    let next = &self.ucal_pairs[idx] * factor
                        + &left * model.modal.residues[j].transpose();
                    self.ucal_pairs[idx] = next;
                }
            }
            self.response.update(&model.modal, &pending.phi)?;
        }
        if let Some(log) = self.log.as_mut() {
            log.push(LogEntry {
                y: y.clone(),
                phi: pending.phi.clone(),
                u_inv: pending.u_inv.clone(),
            });
        }
        let capacity = self.s_tau.len();
        self.phi_ring.push_front(pending.phi);
        self.uinv_ring.push_front(pending.u_inv);
        self.phi_ring.truncate(capacity);
        self.uinv_ring.truncate(capacity);
        self.k += 1;
        Ok(())
    }

    fn divisor(&self) -> f64 {
        (self.k + 1) as f64
    }

    /// `H_{k,tau} = S_tau / (k + 1)` for `tau = 0..3n-2`.
    pub fn markov_estimates(&self) -> Vec<Mat> {
        let d = self.divisor();
        self.s_tau.iter().map(|s| s / d).collect()
    }

    /// Raw running sums behind [`markov_estimates`](Self::markov_estimates).
    pub fn markov_sums(&self) -> &[Mat] {
        &self.s_tau
    }

    fn ucal_current_raw(&self) -> Mat {
        let mut acc = CMat::zeros(self.config.m, self.config.m);
        for pair in &self.ucal_pairs {
            acc += pair;
        }
        symmetrize(&acc.map(|c| c.re))
    }

    /// `U_k = Re sum_{ij} U_{k,ij}`, projected onto the PSD cone.
    pub fn response_covariance(&self) -> Mat {
        project_eigen_floor(&self.ucal_current_raw(), 0.0)
    }

    /// `W_k = (Y_sum - sum_t U_t) / (k + 1)`, symmetrized but not projected.
    pub fn estimate_noise_cov(&self) -> Mat {
        symmetrize(&((&self.y_sum - &self.ucal_running_sum) / self.divisor()))
    }

    /// [`estimate_noise_cov`](Self::estimate_noise_cov) with eigenvalues floored at [`PD_FLOOR`].
    pub fn noise_cov_pd(&self) -> Mat {
        project_eigen_floor(&self.estimate_noise_cov(), PD_FLOOR)
    }

    /// Fixes the detector's `(W, U)` instead of using the running estimates.
    pub fn pin_detector_covariances(&mut self, wcal: Mat, ucal: Mat) -> Result<()> {
        dim_check("W", (self.config.m, self.config.m), wcal.shape())?;
        dim_check("U", (self.config.m, self.config.m), ucal.shape())?;
        self.pinned = Some((wcal, ucal));
        Ok(())
    }

    /// Detector model on the current estimates (threshold left at zero).
    pub fn detector_model(&self) -> Result<DetectorModel> {
        if self.model.is_none() {
            return Err(Error::NotReady);
        }
        match &self.pinned {
            Some((w, u)) => DetectorModel::new(w.clone(), u.clone(), 0.0),
            None => DetectorModel::new(self.noise_cov_pd(), self.response_covariance(), 0.0),
        }
    }

    /// `g_k` for the output of the current tick, using the predicted response to past watermarks.
    pub fn online_np_statistic(&self, y: &Vector) -> Result<f64> {
        self.detector_model()?.statistic(y, self.response.gamma())
    }

    /// LQG cost of the current covariance on the learner's own estimates,
    /// `tr(X_yy W_k) + tr(U_k X_k)`.
    pub fn estimated_cost(&self) -> Result<LqgCost> {
        let model = self.model.as_ref().ok_or(Error::NotReady)?;
        Ok(LqgCost {
            j0: trace_product(&self.config.cost.x_yy, &self.noise_cov_pd()),
            delta_j: trace_product(&self.current_covariance(), &model.pair.x_mat),
        })
    }

    /// Installs a modal model directly (bypassing identification); the response state restarts at zero.
    pub fn install_model(&mut self, modal: ModalDecomposition) -> Result<()> {
        let (n, m, p) = (self.config.n_model, self.config.m, self.config.p);
        if modal.order() != n {
            return Err(Error::DimensionMismatch {
                context: "model order",
                expected: n.to_string(),
                got: modal.order().to_string(),
            });
        }
        dim_check("residue", (m, p), (modal.m(), modal.p()))?;
        let wcal = self.noise_cov_pd();
        let pair = design_matrices(&modal, &wcal, &self.config.cost)?;
        let optimal = optimal_watermark(&pair, self.config.delta)?;
        self.response = ResponseState::zeros(n, m, p);
        self.ucal_pairs = vec![CMat::zeros(m, m); n * n];
        self.model = Some(LearnedModel {
            modal,
            wcal,
            pair,
            optimal,
            built_at: self.k,
        });
        Ok(())
    }

    /// Identification and redesign on the current estimates. On failure the previous
    /// design is kept (the exploration term still decays with `k`).
    pub fn redesign(&mut self) -> RedesignReport {
        match self.identify_and_design() {
            Ok((modal, wcal, pair)) => self.apply_design(Some(modal), wcal, pair),
            Err(e) => self.record_failure(e),
        }
    }

    /// Redesign with a given design pair, leaving the modal model untouched.
    pub fn redesign_with_pair(&mut self, pair: DesignPair) -> RedesignReport {
        let wcal = self.noise_cov_pd();
        self.apply_design(None, wcal, pair)
    }

    fn record_failure(&mut self, e: Error) -> RedesignReport {
        log::debug!("redesign at k = {} failed: {e}", self.k);
        self.audit.redesigns += 1;
        self.audit.failed_redesigns += 1;
        RedesignReport {
            k: self.k,
            error: Some(e.to_string()),
            cap_ok: true,
            budget_error: 0.0,
        }
    }

    fn identify_and_design(&self) -> Result<(ModalDecomposition, Mat, DesignPair)> {
        let modal = identify(&self.markov_estimates(), self.config.n_model)?;
        let wcal = self.noise_cov_pd();
        let pair = design_matrices(&modal, &wcal, &self.config.cost)?;
        Ok((modal, wcal, pair))
    }

    fn apply_design(
        &mut self,
        modal: Option<ModalDecomposition>,
        wcal: Mat,
        pair: DesignPair,
    ) -> RedesignReport {
        let optimal = match optimal_watermark(&pair, self.config.delta) {
            Ok(o) => o,
            Err(e) => return self.record_failure(e),
        };
        let modal = match modal {
            Some(modal) => {
                self.rebind_modes(&modal);
                if let Err(e) = self.response.rebind(&modal) {
                    return self.record_failure(e);
                }
                modal
            }
            None => match &self.model {
                Some(current) => current.modal.clone(),
                None => return self.record_failure(Error::NotReady),
            },
        };
        let u_star = &optimal.covariance.u;
        let excess = max_eigenvalue(&(u_star - &self.cap));
        let cap_ok = excess <= 1e-9 * self.cap.norm().max(1.0);
        let budget_error =
            (trace_product(u_star, &pair.x_mat) - self.config.delta).abs() / self.config.delta;
        self.audit.redesigns += 1;
        self.audit.max_cap_excess = self.audit.max_cap_excess.max(excess);
        self.audit.max_budget_error = self.audit.max_budget_error.max(budget_error);
        if !cap_ok {
            self.audit.cap_violations += 1;
        }
        let (values, vectors) = sym_eigen(u_star);
        self.u_star_values = values.map(|v| v.max(0.0));
        self.u_star_vectors = vectors;
        self.model = Some(LearnedModel {
            modal,
            wcal,
            pair,
            optimal,
            built_at: self.k,
        });
        RedesignReport {
            k: self.k,
            error: None,
            cap_ok,
            budget_error,
        }
    }

    /// Carries the modal accumulators over to the new eigenvalue ordering by nearest matching.
    fn rebind_modes(&mut self, modal: &ModalDecomposition) {
        let n = modal.order();
        let mapping: Vec<Option<usize>> = match &self.model {
            Some(old) => greedy_match(&modal.lambdas, &old.modal.lambdas),
            None => (0..n).map(Some).collect(),
        };
        self.response.permute(&mapping);
        let m = self.config.m;
        let old = std::mem::take(&mut self.ucal_pairs);
        self.ucal_pairs = (0..n * n)
            .map(|idx| match (mapping[idx / n], mapping[idx % n]) {
                (Some(a), Some(b)) => old[a * n + b].clone(),
                _ => CMat::zeros(m, m),
            })
            .collect();
    }

    /// Whether [`observe`](Self::observe) will redesign after ingesting this tick.
    pub fn redesign_due(&self) -> bool {
        (self.k + 1).is_multiple_of(self.config.redesign_interval)
    }

    /// Statistic (when a model exists), ingest, then a redesign when one is due.
    pub fn observe(&mut self, y: &Vector) -> Result<(Option<f64>, Option<RedesignReport>)> {
        let g = match self.online_np_statistic(y) {
            Ok(g) => Some(g),
            Err(Error::NotReady) => None,
            Err(e) => return Err(e),
        };
        let due = self.redesign_due();
        self.ingest(y)?;
        let report = if due { Some(self.redesign()) } else { None };
        Ok((g, report))
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let state: Self = serde_json::from_str(text)?;
        state.config.validate()?;
        Ok(state)
    }

    /// Modes used by the response recursion, if a model exists.
    pub fn lambdas(&self) -> Option<&[Complex64]> {
        self.model.as_ref().map(|m| m.modal.lambdas.as_slice())
    }
}
