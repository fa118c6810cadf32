//! Watermark design: steady response covariance, LQG cost, KL detection
//! metrics, the design pair `(P, X)` and the rank-one optimal covariance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{
    realify, spd_inverse, spd_logdet, sym_eigen, symmetrize, to_complex, trace_product, CMat, Mat,
};
use crate::lti::{solve_discrete_lyapunov, LinearSystem, ModalDecomposition};

/// Blocks of the LQG weight `X = [[X_yy, X_yphi], [X_phiy, X_phiphi]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    #[serde(with = "crate::linalg::serde_rows")]
    pub x_yy: Mat,
    #[serde(with = "crate::linalg::serde_rows")]
    pub x_yphi: Mat,
    #[serde(with = "crate::linalg::serde_rows")]
    pub x_phiy: Mat,
    #[serde(with = "crate::linalg::serde_rows")]
    pub x_phiphi: Mat,
}

impl CostWeights {
    pub fn new(x_yy: Mat, x_yphi: Mat, x_phiphi: Mat) -> Result<Self> {
        let m = x_yy.nrows();
        let p = x_phiphi.nrows();
        dim_check("X_yy", (m, m), x_yy.shape())?;
        dim_check("X_yphi", (m, p), x_yphi.shape())?;
        dim_check("X_phiphi", (p, p), x_phiphi.shape())?;
        let weights = Self {
            x_phiy: x_yphi.transpose(),
            x_yy: symmetrize(&x_yy),
            x_yphi,
            x_phiphi: symmetrize(&x_phiphi),
        };
        if nalgebra::Cholesky::new(weights.assembled()).is_none() {
            return Err(Error::Singular("cost weight X"));
        }
        Ok(weights)
    }

    /// `X = I`.
    pub fn identity(m: usize, p: usize) -> Self {
        Self {
            x_yy: Mat::identity(m, m),
            x_yphi: Mat::zeros(m, p),
            x_phiy: Mat::zeros(p, m),
            x_phiphi: Mat::identity(p, p),
        }
    }

    pub fn m(&self) -> usize {
        self.x_yy.nrows()
    }
    pub fn p(&self) -> usize {
        self.x_phiphi.nrows()
    }

    pub fn assembled(&self) -> Mat {
        let (m, p) = (self.m(), self.p());
        let mut x = Mat::zeros(m + p, m + p);
        x.view_mut((0, 0), (m, m)).copy_from(&self.x_yy);
        x.view_mut((0, m), (m, p)).copy_from(&self.x_yphi);
        x.view_mut((m, 0), (p, m)).copy_from(&self.x_phiy);
        x.view_mut((m, m), (p, p)).copy_from(&self.x_phiphi);
        x
    }

    /// Schur complement `X_phiphi - X_phiy X_yy^{-1} X_yphi`, the floor of every `X` design matrix.
    pub fn schur_complement(&self) -> Result<Mat> {
        let inv = spd_inverse(&self.x_yy, "X_yy")?;
        Ok(symmetrize(
            &(&self.x_phiphi - &self.x_phiy * inv * &self.x_yphi),
        ))
    }

    /// `delta * (X_phiphi - X_phiy X_yy^{-1} X_yphi)^{-1}`: upper bound on any optimal covariance.
    pub fn covariance_cap(&self, delta: f64) -> Result<Mat> {
        Ok(spd_inverse(&self.schur_complement()?, "Schur complement of X")? * delta)
    }
}

/// Covariance `U` of the i.i.d. Gaussian watermark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WatermarkCovariance {
    pub u: Mat,
}

impl WatermarkCovariance {
    pub fn new(u: Mat) -> Self {
        Self { u: symmetrize(&u) }
    }
    pub fn zeros(p: usize) -> Self {
        Self {
            u: Mat::zeros(p, p),
        }
    }
}

/// The design pair: `P` (detection gain) and `X` (cost weight) of `max tr(UP) s.t. tr(UX) <= delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPair {
    pub p_mat: Mat,
    pub x_mat: Mat,
}

fn series_factors(modal: &ModalDecomposition) -> Result<Vec<Complex64>> {
    let n = modal.order();
    let mut factors = Vec::with_capacity(n * n);
    for li in &modal.lambdas {
        for lj in &modal.lambdas {
            let prod = li * lj;
            if prod.norm() >= 1.0 {
                return Err(Error::DivergentSeries(prod.norm()));
            }
            factors.push(Complex64::new(1.0, 0.0) / (Complex64::new(1.0, 0.0) - prod));
        }
    }
    Ok(factors)
}

/// `sum_{i,j} left(Omega_i) M right(Omega_j) / (1 - lambda_i lambda_j)`, realified.
fn pair_sum(
    modal: &ModalDecomposition,
    factors: &[Complex64],
    term: impl Fn(&CMat, &CMat) -> CMat,
) -> Result<Mat> {
    let n = modal.order();
    let first = term(&modal.residues[0], &modal.residues[0]);
    let mut acc = CMat::zeros(first.nrows(), first.ncols());
    for i in 0..n {
        for j in 0..n {
            acc += term(&modal.residues[i], &modal.residues[j]) * factors[i * n + j];
        }
    }
    Ok(symmetrize(&realify(&acc)?))
}

/// Steady covariance of the watermark response, `sum_tau H_tau U H_tau^T`,
/// in closed form `sum_{i,j} Omega_i U Omega_j^T / (1 - lambda_i lambda_j)`.
pub fn steady_watermark_cov(modal: &ModalDecomposition, u: &WatermarkCovariance) -> Result<Mat> {
    dim_check("U", (modal.p(), modal.p()), u.u.shape())?;
    let factors = series_factors(modal)?;
    let u_c = to_complex(&u.u);
    pair_sum(modal, &factors, |oi, oj| oi * &u_c * oj.transpose())
}

/// Expected KL divergence `tr(U W^{-1}) - 1/2 logdet(I + U W^{-1})` between the
/// replayed and nominal output distributions.
pub fn expected_kl(ucal: &Mat, wcal: &Mat) -> Result<f64> {
    dim_check("response covariance", wcal.shape(), ucal.shape())?;
    let w_inv = spd_inverse(wcal, "W")?;
    let ratio = trace_product(ucal, &w_inv);
    // logdet(I + U W^{-1}) = logdet(W + U) - logdet(W)
    let logdet = spd_logdet(&(wcal + ucal), "W + U")? - spd_logdet(wcal, "W")?;
    Ok(ratio - 0.5 * logdet)
}

/// Lower and upper bounds on [`expected_kl`] in terms of `t = tr(U W^{-1})`:
/// `t / 2` and `t - 1/2 log(1 + t)`.
pub fn kl_bounds(ucal: &Mat, wcal: &Mat) -> Result<(f64, f64)> {
    dim_check("response covariance", wcal.shape(), ucal.shape())?;
    let t = trace_product(ucal, &spd_inverse(wcal, "W")?);
    Ok((0.5 * t, t - 0.5 * (1.0 + t).ln()))
}

/// `P = sum Omega_i^T W^{-1} Omega_j / (1 - lambda_i lambda_j)` and
/// `X = sum Omega_i^T X_yy Omega_j / (1 - lambda_i lambda_j) + H_0^T X_yphi + X_phiy H_0 + X_phiphi`.
pub fn design_matrices(
    modal: &ModalDecomposition,
    wcal: &Mat,
    weights: &CostWeights,
) -> Result<DesignPair> {
    let (m, p) = (modal.m(), modal.p());
    dim_check("W", (m, m), wcal.shape())?;
    dim_check("X_yy", (m, m), weights.x_yy.shape())?;
    dim_check("X_phiphi", (p, p), weights.x_phiphi.shape())?;
    let factors = series_factors(modal)?;
    let w_inv = to_complex(&spd_inverse(wcal, "W")?);
    let x_yy = to_complex(&weights.x_yy);
    let p_mat = pair_sum(modal, &factors, |oi, oj| oi.transpose() * &w_inv * oj)?;
    let series = pair_sum(modal, &factors, |oi, oj| oi.transpose() * &x_yy * oj)?;
    let h0 = modal.h0()?;
    let x_mat = symmetrize(
        &(series + h0.transpose() * &weights.x_yphi + &weights.x_phiy * &h0 + &weights.x_phiphi),
    );
    Ok(DesignPair { p_mat, x_mat })
}

/// Same design pair computed from the state-space matrices through two Lyapunov solves,
/// `P = B^T M_P B` with `M_P = A^T M_P A + C^T W^{-1} C` (and likewise for the `X_yy` series).
/// Works for any plant order, including ones whose modal decomposition is ill-conditioned.
pub fn design_matrices_from_system(
    sys: &LinearSystem,
    wcal: &Mat,
    weights: &CostWeights,
) -> Result<DesignPair> {
    let w_inv = spd_inverse(wcal, "W")?;
    let at = sys.a().transpose();
    let mp = solve_discrete_lyapunov(&at, &symmetrize(&(sys.c().transpose() * w_inv * sys.c())))?;
    let mx = solve_discrete_lyapunov(
        &at,
        &symmetrize(&(sys.c().transpose() * &weights.x_yy * sys.c())),
    )?;
    let h0 = sys.c() * sys.b();
    let p_mat = symmetrize(&(sys.b().transpose() * mp * sys.b()));
    let x_mat = symmetrize(
        &(sys.b().transpose() * mx * sys.b()
            + h0.transpose() * &weights.x_yphi
            + &weights.x_phiy * &h0
            + &weights.x_phiphi),
    );
    Ok(DesignPair { p_mat, x_mat })
}

/// Steady watermark response covariance from the state-space matrices, `C S C^T` with
/// `S = A S A^T + B U B^T`.
pub fn steady_watermark_cov_from_system(
    sys: &LinearSystem,
    u: &WatermarkCovariance,
) -> Result<Mat> {
    dim_check("U", (sys.p(), sys.p()), u.u.shape())?;
    let drive = symmetrize(&(sys.b() * &u.u * sys.b().transpose()));
    let s = solve_discrete_lyapunov(sys.a(), &drive)?;
    Ok(symmetrize(&(sys.c() * s * sys.c().transpose())))
}

/// Result of the rank-one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalWatermark {
    pub covariance: WatermarkCovariance,
    /// `z` with `U = z z^T`, `z^T X z = delta`, first nonzero entry positive.
    pub direction: Vec<f64>,
    /// Largest generalized eigenvalue of `P z = lambda X z`; equals the optimal `tr(U P) / delta`.
    pub top_eigenvalue: f64,
    /// Distance to the second largest eigenvalue.
    pub eigen_gap: f64,
    /// Set when the maximizer is not unique (gap below `1e-8 * lambda_max`).
    pub non_unique: bool,
}

/// Maximizes `tr(U P)` subject to `tr(U X) <= delta`, `U >= 0`.
///
/// The generalized problem `P z = lambda X z` is reduced to the symmetric problem on
/// `L^{-1} P L^{-T}` with `X = L L^T`; the top eigenvector `v` maps back to
/// `z = sqrt(delta) L^{-T} v`, which satisfies `z^T X z = delta`.
pub fn optimal_watermark(pair: &DesignPair, delta: f64) -> Result<OptimalWatermark> {
    let p = pair.p_mat.nrows();
    dim_check("P", (p, p), pair.p_mat.shape())?;
    dim_check("X", (p, p), pair.x_mat.shape())?;
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "delta must be positive, got {delta}"
        )));
    }
    let chol = nalgebra::Cholesky::new(symmetrize(&pair.x_mat)).ok_or(Error::Singular("X"))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .solve_lower_triangular(&Mat::identity(p, p))
        .ok_or(Error::Singular("X"))?;
    let reduced = symmetrize(&(&l_inv * &pair.p_mat * l_inv.transpose()));
    let (values, vectors) = sym_eigen(&reduced);
    let top = values[p - 1];
    let second = if p > 1 {
        values[p - 2]
    } else {
        f64::NEG_INFINITY
    };
    let gap = top - second;
    let non_unique = p > 1 && gap < 1e-8 * top.abs().max(f64::MIN_POSITIVE);
    if non_unique {
        log::warn!(
            "top generalized eigenvalue is not simple (gap {gap:e}); returning one maximizer"
        );
    }
    let v = vectors.column(p - 1).into_owned();
    let mut z = l_inv.transpose() * v * delta.sqrt();
    if let Some(first) = z.iter().find(|c| c.abs() > 0.0) {
        if *first < 0.0 {
            z = -z;
        }
    }
    let u = &z * z.transpose();
    Ok(OptimalWatermark {
        covariance: WatermarkCovariance::new(u),
        direction: z.iter().cloned().collect(),
        top_eigenvalue: top,
        eigen_gap: gap,
        non_unique,
    })
}

/// LQG cost split `J = J0 + delta_J`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqgCost {
    /// Cost without watermark, `tr(X_yy W)`.
    pub j0: f64,
    /// Excess due to the watermark, `tr(X S)`.
    pub delta_j: f64,
}

impl LqgCost {
    pub fn total(&self) -> f64 {
        self.j0 + self.delta_j
    }
}

/// `J0 = tr(X_yy W)` and `delta_J = tr(X S)` with `S = [[U_cal, H_0 U], [U H_0^T, U]]`.
pub fn lqg_cost(
    u: &WatermarkCovariance,
    modal: &ModalDecomposition,
    wcal: &Mat,
    weights: &CostWeights,
) -> Result<LqgCost> {
    let (m, p) = (modal.m(), modal.p());
    dim_check("W", (m, m), wcal.shape())?;
    let ucal = steady_watermark_cov(modal, u)?;
    let h0 = modal.h0()?;
    let mut s = Mat::zeros(m + p, m + p);
    s.view_mut((0, 0), (m, m)).copy_from(&ucal);
    s.view_mut((0, m), (m, p)).copy_from(&(&h0 * &u.u));
    s.view_mut((m, 0), (p, m))
        .copy_from(&(&u.u * h0.transpose()));
    s.view_mut((m, m), (p, p)).copy_from(&u.u);
    Ok(LqgCost {
        j0: trace_product(&weights.x_yy, wcal),
        delta_j: trace_product(&weights.assembled(), &s),
    })
}
