//! Watermark response tracking and the Neyman-Pearson replay detector.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{spd_inverse, symmetrize, CVector, Mat, Vector};
use crate::lti::{LinearSystem, ModalDecomposition};
use crate::watermark::LqgCost;

/// Modal accumulators of the watermark response `gamma_k = sum_t C A^t B phi_{k-t}`.
///
/// Each mode keeps the filtered watermark `psi_i = lambda_i psi_i + phi` (length `p`);
/// the modal component is `gamma_{k,i} = Omega_i psi_i`, so swapping in new residues
/// does not require replaying the watermark history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseState {
    filters: Vec<CVector>,
    components: Vec<CVector>,
    gamma: Vector,
}

impl ResponseState {
    pub fn new(modal: &ModalDecomposition) -> Self {
        Self::zeros(modal.order(), modal.m(), modal.p())
    }

    pub fn zeros(order: usize, m: usize, p: usize) -> Self {
        Self {
            filters: vec![CVector::zeros(p); order],
            components: vec![CVector::zeros(m); order],
            gamma: Vector::zeros(m),
        }
    }

    /// Current response `gamma` (realified sum of the modal components).
    pub fn gamma(&self) -> &Vector {
        &self.gamma
    }

    pub fn components(&self) -> &[CVector] {
        &self.components
    }

    pub fn order(&self) -> usize {
        self.filters.len()
    }

    /// `gamma_{k,i} <- lambda_i gamma_{k-1,i} + Omega_i phi`, then `gamma = Re sum_i gamma_{k,i}`.
    pub fn update(&mut self, modal: &ModalDecomposition, phi: &Vector) -> Result<()> {
        if modal.order() != self.filters.len() {
            return Err(Error::DimensionMismatch {
                context: "response modes",
                expected: self.filters.len().to_string(),
                got: modal.order().to_string(),
            });
        }
        dim_check("watermark", (modal.p(), 1), phi.shape())?;
        let phi_c = phi.map(|v| Complex64::new(v, 0.0));
        for (psi, lambda) in self.filters.iter_mut().zip(&modal.lambdas) {
            *psi *= *lambda;
            *psi += &phi_c;
        }
        self.rebind(modal)
    }

    /// Recomputes the components and `gamma` from the filters with (possibly new) residues.
    pub fn rebind(&mut self, modal: &ModalDecomposition) -> Result<()> {
        if modal.order() != self.filters.len() {
            return Err(Error::DimensionMismatch {
                context: "response modes",
                expected: self.filters.len().to_string(),
                got: modal.order().to_string(),
            });
        }
        let mut total = CVector::zeros(modal.m());
        for (i, (psi, omega)) in self.filters.iter().zip(&modal.residues).enumerate() {
            let comp = omega * psi;
            total += &comp;
            self.components[i] = comp;
        }
        self.gamma = total.map(|c| c.re);
        Ok(())
    }

    /// Reorders modes: new mode `i` takes the state of old mode `mapping[i]` (or starts at zero).
    pub fn permute(&mut self, mapping: &[Option<usize>]) {
        let p = self.filters.first().map_or(0, |f| f.len());
        let m = self.gamma.len();
        let old_f = std::mem::take(&mut self.filters);
        let old_c = std::mem::take(&mut self.components);
        self.filters = mapping
            .iter()
            .map(|s| s.map_or_else(|| CVector::zeros(p), |j| old_f[j].clone()))
            .collect();
        self.components = mapping
            .iter()
            .map(|s| s.map_or_else(|| CVector::zeros(m), |j| old_c[j].clone()))
            .collect();
    }
}

/// Convenience wrapper matching the free-function form of the response update.
pub fn update_response(
    state: &mut ResponseState,
    modal: &ModalDecomposition,
    phi: &Vector,
) -> Result<()> {
    state.update(modal, phi)
}

/// Watermark response tracked through the state-space realization, `xi <- A xi + B phi`,
/// `gamma = C xi`. Exact for plants of any order, including ones with no usable modal form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    xi: Vector,
    gamma: Vector,
}

impl StateResponse {
    pub fn new(sys: &LinearSystem) -> Self {
        Self {
            xi: Vector::zeros(sys.n()),
            gamma: Vector::zeros(sys.m()),
        }
    }

    pub fn gamma(&self) -> &Vector {
        &self.gamma
    }

    pub fn update(&mut self, sys: &LinearSystem, phi: &Vector) -> Result<()> {
        dim_check("watermark", (sys.p(), 1), phi.shape())?;
        dim_check("response state", (sys.n(), 1), self.xi.shape())?;
        self.xi = sys.a() * &self.xi + sys.b() * phi;
        self.gamma = sys.c() * &self.xi;
        Ok(())
    }
}

/// Covariances and threshold of the Neyman-Pearson test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub wcal: Mat,
    pub ucal: Mat,
    pub zeta: f64,
    w_inv: Mat,
    wu_inv: Mat,
}

impl DetectorModel {
    /// Requires `W` and `W + U` positive definite.
    pub fn new(wcal: Mat, ucal: Mat, zeta: f64) -> Result<Self> {
        dim_check("U", wcal.shape(), ucal.shape())?;
        let wcal = symmetrize(&wcal);
        let ucal = symmetrize(&ucal);
        let w_inv = spd_inverse(&wcal, "W")?;
        let wu_inv = spd_inverse(&(&wcal + &ucal), "W + U")?;
        Ok(Self {
            wcal,
            ucal,
            zeta,
            w_inv,
            wu_inv,
        })
    }

    pub fn m(&self) -> usize {
        self.wcal.nrows()
    }

    pub fn with_threshold(mut self, zeta: f64) -> Self {
        self.zeta = zeta;
        self
    }

    /// `g = (y - gamma)^T W^{-1} (y - gamma) - y^T (W + U)^{-1} y`.
    pub fn statistic(&self, y: &Vector, gamma: &Vector) -> Result<f64> {
        dim_check("measurement", (self.m(), 1), y.shape())?;
        dim_check("response", (self.m(), 1), gamma.shape())?;
        let r = y - gamma;
        let g = r.dot(&(&self.w_inv * &r)) - y.dot(&(&self.wu_inv * y));
        Ok(g)
    }
}

pub fn np_statistic(y: &Vector, gamma: &Vector, model: &DetectorModel) -> Result<f64> {
    model.statistic(y, gamma)
}

/// Rejects the no-attack hypothesis when `g >= zeta`.
pub fn decide(g: f64, zeta: f64) -> bool {
    g >= zeta
}

/// How the alarm threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ThresholdMode {
    /// `zeta = J / ratio` with `J` the total LQG cost (ratio 0.9 by default).
    LqgRatio { ratio: f64 },
    /// `(1 - alpha)` sample quantile of `g` over a no-attack calibration run of `samples` steps.
    EmpiricalQuantile { alpha: f64, samples: usize },
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::LqgRatio { ratio: 0.9 }
    }
}

impl ThresholdMode {
    /// `calibration_trace(len)` is only invoked in quantile mode.
    pub fn calibrate(
        &self,
        cost: &LqgCost,
        calibration_trace: impl FnOnce(usize) -> Result<Vec<f64>>,
    ) -> Result<f64> {
        match *self {
            ThresholdMode::LqgRatio { ratio } => {
                if !(ratio > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "threshold ratio must be positive, got {ratio}"
                    )));
                }
                Ok(cost.total() / ratio)
            }
            ThresholdMode::EmpiricalQuantile { alpha, samples } => {
                empirical_quantile(&calibration_trace(samples)?, alpha)
            }
        }
    }
}

/// `(1 - alpha)` sample quantile: the `ceil((1 - alpha) N)`-th smallest value.
pub fn empirical_quantile(trace: &[f64], alpha: f64) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Empty("calibration trace"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!(
            "alpha must lie in [0, 1), got {alpha}"
        )));
    }
    let mut sorted = trace.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((1.0 - alpha) * n as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

/// Exact-parameter detector: model, modes and response state bundled for streaming use.
#[derive(Debug, Clone)]
pub struct KnownDetector {
    pub modal: ModalDecomposition,
    pub model: DetectorModel,
    pub response: ResponseState,
}

impl KnownDetector {
    pub fn new(modal: ModalDecomposition, model: DetectorModel) -> Self {
        let response = ResponseState::new(&modal);
        Self {
            modal,
            model,
            response,
        }
    }

    /// Statistic for `y_k` against the response to `phi_0..phi_{k-1}`.
    pub fn statistic(&self, y: &Vector) -> Result<f64> {
        self.model.statistic(y, self.response.gamma())
    }

    /// Feeds the watermark applied at this tick (after the statistic was computed).
    pub fn push_watermark(&mut self, phi: &Vector) -> Result<()> {
        self.response.update(&self.modal, phi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::to_complex;
    use crate::lti::{random_stable_system, LinearSystem};

    fn convolution(sys: &LinearSystem, phis: &[Vector]) -> Vector {
        let h = sys.markov_parameters(phis.len());
        let k = phis.len() - 1;
        let mut out = Vector::zeros(sys.m());
        for t in 0..=k {
            out += &h[t] * &phis[k - t];
        }
        out
    }

    #[test]
    fn zero_watermark_keeps_zero_response() {
        let sys = random_stable_system(2, 2, 2, 4, 0.9).unwrap();
        let modal = sys.modal_decomposition().unwrap();
        let mut state = ResponseState::new(&modal);
        for _ in 0..10 {
            state.update(&modal, &Vector::zeros(2)).unwrap();
        }
        assert_eq!(state.gamma(), &Vector::zeros(2));
    }

    #[test]
    fn zero_dynamics_has_one_step_memory() {
        let h0 = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let modal =
            ModalDecomposition::new(vec![Complex64::new(0.0, 0.0)], vec![to_complex(&h0)]).unwrap();
        let mut state = ResponseState::new(&modal);
        state
            .update(&modal, &Vector::from_row_slice(&[5.0, 6.0]))
            .unwrap();
        let phi = Vector::from_row_slice(&[1.0, -1.0]);
        state.update(&modal, &phi).unwrap();
        assert!((state.gamma() - &h0 * phi).amax() < 1e-15);
    }

    #[test]
    fn response_matches_direct_convolution() {
        use rand::{Rng, SeedableRng};
        let sys = random_stable_system(3, 2, 2, 21, 0.95).unwrap();
        let modal = sys.modal_decomposition().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut state = ResponseState::new(&modal);
        let mut phis = Vec::new();
        for _ in 0..50 {
            let phi = Vector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
            state.update(&modal, &phi).unwrap();
            phis.push(phi);
            let direct = convolution(&sys, &phis);
            assert!((state.gamma() - direct).amax() < 1e-9);
        }
    }

    #[test]
    fn state_response_matches_direct_convolution() {
        use rand::{Rng, SeedableRng};
        let sys = random_stable_system(4, 2, 3, 22, 0.95).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let mut state = StateResponse::new(&sys);
        let mut phis = Vec::new();
        for _ in 0..50 {
            let phi = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            state.update(&sys, &phi).unwrap();
            phis.push(phi);
            assert!((state.gamma() - convolution(&sys, &phis)).amax() < 1e-9);
        }
    }

    #[test]
    fn statistic_examples() {
        let one = Mat::identity(1, 1);
        let model = DetectorModel::new(one.clone(), one, 0.0).unwrap();
        let v = |x: f64| Vector::from_element(1, x);
        assert_eq!(np_statistic(&v(0.0), &v(0.0), &model).unwrap(), 0.0);
        assert!((np_statistic(&v(2.0), &v(0.0), &model).unwrap() - 2.0).abs() < 1e-15);
        assert!((np_statistic(&v(2.0), &v(2.0), &model).unwrap() + 2.0).abs() < 1e-15);
    }

    #[test]
    fn singular_model_is_rejected() {
        assert!(matches!(
            DetectorModel::new(Mat::zeros(2, 2), Mat::zeros(2, 2), 0.0),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn decide_examples() {
        assert!(!decide(0.0, 1.0));
        assert!(decide(2.0, 2.0));
        assert!(!decide(-2.0, 0.0));
    }

    #[test]
    fn threshold_examples() {
        let cost = LqgCost {
            j0: 5.0,
            delta_j: 4.0,
        };
        let zeta = ThresholdMode::default()
            .calibrate(&cost, |_| unreachable!())
            .unwrap();
        assert!((zeta - 10.0).abs() < 1e-12);
        let q = ThresholdMode::EmpiricalQuantile {
            alpha: 0.0,
            samples: 3,
        }
        .calibrate(&cost, |n| {
            assert_eq!(n, 3);
            Ok(vec![-1.0, 0.0, 3.0])
        })
        .unwrap();
        assert_eq!(q, 3.0);
        assert!(matches!(empirical_quantile(&[], 0.1), Err(Error::Empty(_))));
    }

    #[test]
    fn statistic_is_invariant_under_orthogonal_output_change() {
        let w = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let u = Mat::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.7]);
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let rot = Mat::from_row_slice(2, 2, &[c, -s, s, c]);
        let y = Vector::from_row_slice(&[0.4, -1.2]);
        let gamma = Vector::from_row_slice(&[0.1, 0.3]);
        let g = DetectorModel::new(w.clone(), u.clone(), 0.0)
            .unwrap()
            .statistic(&y, &gamma)
            .unwrap();
        let rotated =
            DetectorModel::new(&rot * w * rot.transpose(), &rot * u * rot.transpose(), 0.0)
                .unwrap()
                .statistic(&(&rot * y), &(&rot * gamma))
                .unwrap();
        assert!((g - rotated).abs() < 1e-12);
    }
}
