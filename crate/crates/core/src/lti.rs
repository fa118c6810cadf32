//! Linear time-invariant plant: representation, seeded simulation, steady-state
//! covariances, Markov parameters and the modal expansion `H_tau = sum_i lambda_i^tau Omega_i`.

use std::path::Path;

use nalgebra::Cholesky;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::linalg::{
    canonical_sort, min_pairwise_gap, numerical_rank, realify, spectral_radius, symmetrize,
    to_complex, CMat, Mat, Vector,
};

/// Minimum pairwise eigenvalue distance accepted as a distinct spectrum.
pub const SPECTRUM_GAP: f64 = 1e-8;

/// Relative singular-value threshold for the Kalman rank tests.
pub const RANK_TOL: f64 = 1e-10;

const PROCESS_STREAM: u64 = 1;
const MEASUREMENT_STREAM: u64 = 2;
const INITIAL_STREAM: u64 = 3;

/// The plant `x_{k+1} = A x_k + B phi_k + w_k`, `y_k = C x_k + v_k`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: Mat,
    b: Mat,
    c: Mat,
    q: Mat,
    r: Mat,
    q_factor: Mat,
    r_factor: Mat,
}

impl LinearSystem {
    /// Builds a plant, checking dimensions, stability and positive definiteness of the noise.
    pub fn new(a: Mat, b: Mat, c: Mat, q: Mat, r: Mat) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Err(Error::InvalidSystem(
                "state dimension must be at least 1".into(),
            ));
        }
        dim_check("A", (n, n), a.shape())?;
        dim_check("B rows", (n, b.ncols()), b.shape())?;
        dim_check("C columns", (c.nrows(), n), c.shape())?;
        dim_check("Q", (n, n), q.shape())?;
        dim_check("R", (c.nrows(), c.nrows()), r.shape())?;
        if b.ncols() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidSystem(
                "input and output dimensions must be at least 1".into(),
            ));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("Q", &q), ("R", &r)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidSystem(format!(
                    "{name} has non-finite entries"
                )));
            }
        }
        for (name, m) in [("Q", &q), ("R", &r)] {
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 * m.amax().max(1.0) {
                return Err(Error::InvalidSystem(format!("{name} is not symmetric")));
            }
        }
        let rho = spectral_radius(&a);
        if rho >= 1.0 {
            return Err(Error::Unstable(rho));
        }
        let q_factor = Cholesky::new(symmetrize(&q))
            .ok_or(Error::Singular("Q"))?
            .unpack();
        let r_factor = Cholesky::new(symmetrize(&r))
            .ok_or(Error::Singular("R"))?
            .unpack();
        Ok(Self {
            a,
            b,
            c,
            q,
            r,
            q_factor,
            r_factor,
        })
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Output dimension `m`.
    pub fn m(&self) -> usize {
        self.c.nrows()
    }
    /// Watermark (input) dimension `p`.
    pub fn p(&self) -> usize {
        self.b.ncols()
    }

    pub fn spectral_radius(&self) -> f64 {
        spectral_radius(&self.a)
    }

    /// Steady-state state covariance `Sigma = A Sigma A^T + Q`.
    pub fn steady_state_cov(&self) -> Result<Mat> {
        solve_discrete_lyapunov(&self.a, &self.q)
    }

    /// Steady-state output covariance without watermark, `W = C Sigma C^T + R`.
    pub fn steady_output_cov(&self) -> Result<Mat> {
        let sigma = self.steady_state_cov()?;
        Ok(symmetrize(
            &(&self.c * sigma * self.c.transpose() + &self.r),
        ))
    }

    /// `[H_0, ..., H_{tau_max}]` with `H_tau = C A^tau B`.
    pub fn markov_parameters(&self, tau_max: usize) -> Vec<Mat> {
        let mut out = Vec::with_capacity(tau_max + 1);
        let mut ab = self.b.clone();
        for _ in 0..=tau_max {
            out.push(&self.c * &ab);
            ab = &self.a * ab;
        }
        out
    }

    /// Emits `y_k = C x_k + v_k` for the current state, then advances
    /// `x_{k+1} = A x_k + B phi + w_k`, drawing both noises from the state's streams.
    pub fn simulate_step(&self, state: &mut SimState, phi: &Vector) -> Result<Vector> {
        dim_check("state", (self.n(), 1), state.x.shape())?;
        dim_check("watermark", (self.p(), 1), phi.shape())?;
        let w = &self.q_factor * gaussian_vector(&mut state.process, self.n());
        let v = &self.r_factor * gaussian_vector(&mut state.measurement, self.m());
        self.simulate_step_with_noise(state, phi, &w, &v)
    }

    /// Same as [`Self::simulate_step`] with explicit noise samples.
    pub fn simulate_step_with_noise(
        &self,
        state: &mut SimState,
        phi: &Vector,
        w: &Vector,
        v: &Vector,
    ) -> Result<Vector> {
        dim_check("state", (self.n(), 1), state.x.shape())?;
        dim_check("watermark", (self.p(), 1), phi.shape())?;
        dim_check("process noise", (self.n(), 1), w.shape())?;
        dim_check("measurement noise", (self.m(), 1), v.shape())?;
        let y = &self.c * &state.x + v;
        let next = &self.a * &state.x + &self.b * phi + w;
        state.x = next;
        state.k += 1;
        Ok(y)
    }

    pub fn modal_decomposition(&self) -> Result<ModalDecomposition> {
        modal_decomposition(self)
    }

    pub fn structural_checks(&self) -> StructuralReport {
        structural_checks(self)
    }

    pub fn to_document(&self, seed: Option<u64>) -> SystemDocument {
        SystemDocument {
            a: rows(&self.a),
            b: rows(&self.b),
            c: rows(&self.c),
            q: rows(&self.q),
            r: rows(&self.r),
            seed,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: SystemDocument = serde_json::from_str(&text)?;
        doc.into_system()
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: Option<u64>) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_document(seed))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// On-disk form of a [`LinearSystem`]: row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDocument {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SystemDocument {
    /// Converts to a validated system. Beyond [`LinearSystem::new`], this also
    /// requires observability and controllability.
    pub fn into_system(self) -> Result<LinearSystem> {
        let sys = LinearSystem::new(
            from_rows(&self.a, "A")?,
            from_rows(&self.b, "B")?,
            from_rows(&self.c, "C")?,
            from_rows(&self.q, "Q")?,
            from_rows(&self.r, "R")?,
        )?;
        let report = sys.structural_checks();
        if !report.observable {
            return Err(Error::InvalidSystem("(A, C) is not observable".into()));
        }
        if !report.controllable {
            return Err(Error::InvalidSystem("(A, B) is not controllable".into()));
        }
        Ok(sys)
    }
}

pub fn rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().cloned().collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>], name: &str) -> Result<Mat> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if nrows == 0 || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidSystem(format!(
            "{name} must be a non-empty rectangular array"
        )));
    }
    Ok(Mat::from_row_iterator(
        nrows,
        ncols,
        rows.iter().flatten().cloned(),
    ))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> Vector {
    Vector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

/// Simulation state: current `x_k`, the time index and the two noise streams.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimState {
    pub x: Vector,
    pub k: u64,
    pub rng_seed: u64,
    process: ChaCha8Rng,
    measurement: ChaCha8Rng,
}

impl SimState {
    /// Zero initial state with process/measurement substreams derived from `seed`.
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            x: Vector::zeros(n),
            k: 0,
            rng_seed: seed,
            process: stream(seed, PROCESS_STREAM),
            measurement: stream(seed, MEASUREMENT_STREAM),
        }
    }

    /// Initial state drawn from the stationary distribution `N(0, Sigma)`, where
    /// `Sigma = A Sigma A^T + Q + B U B^T` includes an optional i.i.d. input of covariance `U`.
    pub fn stationary(sys: &LinearSystem, seed: u64, input_cov: Option<&Mat>) -> Result<Self> {
        let mut drive = sys.q.clone();
        if let Some(u) = input_cov {
            dim_check("input covariance", (sys.p(), sys.p()), u.shape())?;
            drive += &sys.b * u * sys.b.transpose();
        }
        let sigma = solve_discrete_lyapunov(&sys.a, &drive)?;
        let factor = crate::linalg::sqrt_psd(&sigma);
        let mut init = stream(seed, INITIAL_STREAM);
        let mut state = Self::new(sys.n(), seed);
        state.x = factor * gaussian_vector(&mut init, sys.n());
        Ok(state)
    }

    /// Replaces both noise streams, keeping `x` and `k`.
    pub fn reseed(&mut self, seed: u64) {
        self.rng_seed = seed;
        self.process = stream(seed, PROCESS_STREAM);
        self.measurement = stream(seed, MEASUREMENT_STREAM);
    }
}

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Solves `Sigma = A Sigma A^T + Q` by the doubling iteration
/// `Sigma <- Sigma + A_j Sigma A_j^T`, `A_j <- A_j^2`.
pub fn solve_discrete_lyapunov(a: &Mat, q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    dim_check("lyapunov A", (n, n), a.shape())?;
    dim_check("lyapunov Q", (n, n), q.shape())?;
    let rho = spectral_radius(a);
    if !(rho < 1.0) {
        return Err(Error::Unstable(rho));
    }
    let tol = 1e-10 * q.norm().max(1.0);
    let residual = |s: &Mat| (s - a * s * a.transpose() - q).norm();

    let mut sigma = symmetrize(q);
    let mut power = a.clone();
    for _ in 0..64 {
        let increment = &power * &sigma * power.transpose();
        sigma = symmetrize(&(&sigma + &increment));
        power = &power * &power;
        if power.amax() == 0.0 || increment.norm() <= f64::EPSILON * sigma.norm() {
            break;
        }
    }
    let res = residual(&sigma);
    if res <= tol {
        return Ok(sigma);
    }
    // A few plain fixed-point sweeps clean up accumulated rounding.
    for _ in 0..8 {
        sigma = symmetrize(&(a * &sigma * a.transpose() + q));
        if residual(&sigma) <= tol {
            return Ok(sigma);
        }
    }
    Err(Error::LyapunovNoConvergence {
        residual: residual(&sigma),
    })
}

/// Eigenvalues `lambda_i` and residues `Omega_i` with `H_tau = sum_i lambda_i^tau Omega_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalDecomposition {
    pub lambdas: Vec<Complex64>,
    pub residues: Vec<CMat>,
}

impl ModalDecomposition {
    pub fn new(lambdas: Vec<Complex64>, residues: Vec<CMat>) -> Result<Self> {
        if lambdas.is_empty() || lambdas.len() != residues.len() {
            return Err(Error::DimensionMismatch {
                context: "modal decomposition",
                expected: format!("{} residues", lambdas.len()),
                got: format!("{}", residues.len()),
            });
        }
        let shape = residues[0].shape();
        for r in &residues {
            dim_check("residue", shape, r.shape())?;
        }
        Ok(Self { lambdas, residues })
    }

    pub fn order(&self) -> usize {
        self.lambdas.len()
    }
    pub fn m(&self) -> usize {
        self.residues[0].nrows()
    }
    pub fn p(&self) -> usize {
        self.residues[0].ncols()
    }

    /// Complex reconstruction `sum_i lambda_i^tau Omega_i`.
    pub fn markov_complex(&self, tau: usize) -> CMat {
        let mut h = CMat::zeros(self.m(), self.p());
        for (l, om) in self.lambdas.iter().zip(&self.residues) {
            h += om * l.powu(tau as u32);
        }
        h
    }

    /// Real Markov parameter `H_tau` rebuilt from the modes.
    pub fn markov(&self, tau: usize) -> Result<Mat> {
        realify(&self.markov_complex(tau))
    }

    pub fn h0(&self) -> Result<Mat> {
        self.markov(0)
    }

    /// Largest `|lambda_i lambda_j|` over all pairs (the ratio of the slowest series).
    pub fn max_pair_modulus(&self) -> f64 {
        self.lambdas
            .iter()
            .map(|l| l.norm_sqr())
            .fold(0.0, f64::max)
    }
}

/// Modal decomposition of `C A^tau B` via the eigenvectors of `A`:
/// `Omega_i = C P diag(e_i) P^{-1} B`, eigenvalues in canonical order.
pub fn modal_decomposition(sys: &LinearSystem) -> Result<ModalDecomposition> {
    let n = sys.n();
    let mut lambdas: Vec<Complex64> = sys.a.complex_eigenvalues().iter().cloned().collect();
    canonical_sort(&mut lambdas);
    let gap = min_pairwise_gap(&lambdas);
    if gap < SPECTRUM_GAP {
        return Err(Error::DegenerateSpectrum {
            gap,
            threshold: SPECTRUM_GAP,
        });
    }
    pair_conjugates(&mut lambdas);

    let a_c = to_complex(&sys.a);
    let mut vectors = CMat::zeros(n, n);
    let mut done = vec![false; n];
    for i in 0..n {
        if done[i] {
            continue;
        }
        let v = eigenvector(&a_c, lambdas[i]);
        vectors.set_column(i, &v);
        done[i] = true;
        if lambdas[i].im != 0.0 {
            if let Some(j) = (i + 1..n).find(|&j| !done[j] && lambdas[j] == lambdas[i].conj()) {
                vectors.set_column(j, &v.map(|c| c.conj()));
                done[j] = true;
            }
        }
    }
    let inverse = vectors
        .clone()
        .try_inverse()
        .ok_or(Error::Singular("eigenvector matrix"))?;
    let b_c = to_complex(&sys.b);
    let c_c = to_complex(&sys.c);
    let mut residues = Vec::with_capacity(n);
    for i in 0..n {
        let left = &c_c * vectors.column(i);
        let right = inverse.row(i) * &b_c;
        residues.push(left * right);
    }
    enforce_conjugate_residues(&lambdas, &mut residues);
    ModalDecomposition::new(lambdas, residues)
}

/// Makes eigenvalues that are conjugate up to rounding exactly conjugate, and
/// eigenvalues with negligible imaginary part exactly real.
pub(crate) fn pair_conjugates(lambdas: &mut [Complex64]) {
    let n = lambdas.len();
    let scale = lambdas.iter().map(|l| l.norm()).fold(1e-300, f64::max);
    let tol = 1e-10 * scale.max(1.0);
    for l in lambdas.iter_mut() {
        if l.im.abs() <= tol {
            l.im = 0.0;
        }
    }
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] || lambdas[i].im <= 0.0 {
            continue;
        }
        let target = lambdas[i].conj();
        let partner = (0..n)
            .filter(|&j| j != i && !used[j] && lambdas[j].im < 0.0)
            .min_by(|&a, &b| {
                (lambdas[a] - target)
                    .norm()
                    .total_cmp(&(lambdas[b] - target).norm())
            });
        if let Some(j) = partner {
            let re = 0.5 * (lambdas[i].re + lambdas[j].re);
            let im = 0.5 * (lambdas[i].im - lambdas[j].im);
            lambdas[i] = Complex64::new(re, im);
            lambdas[j] = Complex64::new(re, -im);
            used[i] = true;
            used[j] = true;
        }
    }
}

/// Residues of conjugate eigenvalues are set to exact elementwise conjugates
/// (their average), and residues of real eigenvalues to their real part.
pub(crate) fn enforce_conjugate_residues(lambdas: &[Complex64], residues: &mut [CMat]) {
    let n = lambdas.len();
    let mut used = vec![false; n];
    for i in 0..n {
        if used[i] {
            continue;
        }
        if lambdas[i].im == 0.0 {
            residues[i] = residues[i].map(|c| Complex64::new(c.re, 0.0));
            used[i] = true;
            continue;
        }
        if let Some(j) = (0..n).find(|&j| j != i && !used[j] && lambdas[j] == lambdas[i].conj()) {
            let avg = (&residues[i] + residues[j].map(|c| c.conj())) * Complex64::new(0.5, 0.0);
            residues[j] = avg.map(|c| c.conj());
            residues[i] = avg;
            used[j] = true;
        }
        used[i] = true;
    }
}

fn eigenvector(a: &CMat, lambda: Complex64) -> nalgebra::DVector<Complex64> {
    let n = a.nrows();
    let shifted = a - CMat::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let mut v: nalgebra::DVector<Complex64> = v_t.row(idx).adjoint();
    // Rotate so the largest component is real and positive (real eigenvalues then give real vectors).
    let (_, pivot) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
        .map(|(i, c)| (i, *c))
        .expect("non-empty");
    let phase = pivot.conj() / pivot.norm();
    v *= phase;
    if lambda.im == 0.0 {
        v = v.map(|c| Complex64::new(c.re, 0.0));
        let norm = v.norm();
        v /= Complex64::new(norm, 0.0);
    }
    v
}

/// Outcome of the structural checks on a plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub stable: bool,
    pub spectral_radius: f64,
    pub observable: bool,
    pub controllable: bool,
    pub distinct_spectrum: bool,
    pub min_eigen_gap: f64,
}

impl StructuralReport {
    pub fn all_ok(&self) -> bool {
        self.stable && self.observable && self.controllable && self.distinct_spectrum
    }
}

/// Kalman rank tests on `[C; CA; ...; CA^{n-1}]` and `[B, AB, ..., A^{n-1}B]`.
pub fn structural_checks(sys: &LinearSystem) -> StructuralReport {
    let n = sys.n();
    let (m, p) = (sys.m(), sys.p());
    let mut obs = Mat::zeros(n * m, n);
    let mut ctrb = Mat::zeros(n, n * p);
    let mut ca = sys.c.clone();
    let mut ab = sys.b.clone();
    for i in 0..n {
        obs.view_mut((i * m, 0), (m, n)).copy_from(&ca);
        ctrb.view_mut((0, i * p), (n, p)).copy_from(&ab);
        ca = &ca * &sys.a;
        ab = &sys.a * &ab;
    }
    let mut lambdas: Vec<Complex64> = sys.a.complex_eigenvalues().iter().cloned().collect();
    canonical_sort(&mut lambdas);
    let gap = min_pairwise_gap(&lambdas);
    let rho = lambdas.iter().map(|l| l.norm()).fold(0.0, f64::max);
    StructuralReport {
        stable: rho < 1.0,
        spectral_radius: rho,
        observable: numerical_rank(&obs, RANK_TOL) == n,
        controllable: numerical_rank(&ctrb, RANK_TOL) == n,
        distinct_spectrum: gap >= SPECTRUM_GAP,
        min_eigen_gap: gap,
    }
}

/// Popov-Belevitch-Hautus tests, `rank [A - lambda I; C] = n` and `rank [A - lambda I, B] = n`
/// for every eigenvalue. Unlike the Kalman matrices, these stay well conditioned for large `n`.
pub fn pbh_checks(sys: &LinearSystem) -> (bool, bool) {
    let n = sys.n();
    let a_c = to_complex(&sys.a);
    let b_c = to_complex(&sys.b);
    let c_c = to_complex(&sys.c);
    let mut observable = true;
    let mut controllable = true;
    for lambda in sys.a.complex_eigenvalues().iter() {
        let shifted = &a_c - CMat::identity(n, n) * *lambda;
        let mut stacked = CMat::zeros(n + sys.m(), n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&shifted);
        stacked.view_mut((n, 0), (sys.m(), n)).copy_from(&c_c);
        let mut wide = CMat::zeros(n, n + sys.p());
        wide.view_mut((0, 0), (n, n)).copy_from(&shifted);
        wide.view_mut((0, n), (n, sys.p())).copy_from(&b_c);
        observable &= complex_rank(stacked, 1e-10) == n;
        controllable &= complex_rank(wide, 1e-10) == n;
    }
    (observable, controllable)
}

fn complex_rank(m: CMat, rel_tol: f64) -> usize {
    let sv = m.svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * largest).count()
}

/// Above this order the Kalman rank tests are numerically meaningless
/// (powers of a stable `A` underflow the tolerance) and PBH tests are used instead.
pub const KALMAN_TEST_MAX_ORDER: usize = 12;

/// Random stable plant with Gaussian `A`, `B`, `C` and `Q = R = I`.
///
/// `A` is rescaled to a spectral radius drawn uniformly from `[rho_max / 2, rho_max]`.
/// Candidates with a repeated spectrum or failing the structural checks are regenerated.
pub fn random_stable_system(
    n: usize,
    m: usize,
    p: usize,
    seed: u64,
    rho_max: f64,
) -> Result<LinearSystem> {
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::InvalidSystem("dimensions must be at least 1".into()));
    }
    if !(rho_max > 0.0 && rho_max < 1.0) {
        return Err(Error::InvalidSystem(format!(
            "rho_max must lie in (0, 1), got {rho_max}"
        )));
    }
    const ATTEMPTS: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ATTEMPTS {
        let mut a = Mat::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = Mat::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let c = Mat::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let target = rho_max * rng.random_range(0.5..=1.0);
        let rho = spectral_radius(&a);
        if rho == 0.0 {
            continue;
        }
        a *= target / rho;
        let Ok(sys) = LinearSystem::new(a, b, c, Mat::identity(n, n), Mat::identity(m, m)) else {
            continue;
        };
        let report = structural_checks(&sys);
        if !report.stable || report.spectral_radius > rho_max || !report.distinct_spectrum {
            continue;
        }
        let ok = if n <= KALMAN_TEST_MAX_ORDER {
            report.observable && report.controllable
        } else {
            let (o, c) = pbh_checks(&sys);
            o && c
        };
        if ok {
            return Ok(sys);
        }
    }
    Err(Error::GenerationFailed { attempts: ATTEMPTS })
}
