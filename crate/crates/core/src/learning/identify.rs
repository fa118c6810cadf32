//! Recovery of the modal decomposition from estimated Markov parameters:
//! characteristic polynomial by Hankel least squares, its roots, then the
//! residues by a Vandermonde least-squares fit.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{canonical_sort, min_pairwise_gap, CMat, Mat};
use crate::lti::{enforce_conjugate_residues, pair_conjugates, ModalDecomposition, SPECTRUM_GAP};

/// Normal equations with a larger condition number are treated as unidentifiable.
pub const MAX_NORMAL_CONDITION: f64 = 1e12;

/// Estimated eigenvalues are pulled inside this radius before the closed-form series are used.
pub const MODULUS_CLAMP: f64 = 0.999;

/// Number of Markov parameters the identification of an order-`n` model consumes.
pub fn markov_count(order: usize) -> usize {
    3 * order - 1
}

fn check_inputs(h_hat: &[Mat], order: usize) -> Result<(usize, usize)> {
    if order == 0 {
        return Err(Error::InvalidConfig(
            "model order must be at least 1".into(),
        ));
    }
    let needed = markov_count(order);
    if h_hat.len() < needed {
        return Err(Error::DimensionMismatch {
            context: "markov parameter estimates",
            expected: needed.to_string(),
            got: h_hat.len().to_string(),
        });
    }
    let shape = h_hat[0].shape();
    for h in &h_hat[..needed] {
        crate::error::dim_check("markov parameter", shape, h.shape())?;
    }
    Ok(shape)
}

/// Coefficients `alpha_0..alpha_{n-1}` of the monic polynomial minimizing
/// `sum_{i=0}^{2n-2} || sum_j alpha_j H_{i+j} + H_{i+n} ||_F^2`.
///
/// Every block row of the Hankel system is linear in the `n` scalars, so the problem is an
/// ordinary least-squares fit with one column per coefficient (the vectorized shifted blocks).
pub fn estimate_char_poly(h_hat: &[Mat], order: usize) -> Result<Vec<f64>> {
    let (m, p) = check_inputs(h_hat, order)?;
    let block = m * p;
    let rows = (2 * order - 1) * block;
    let mut design = Mat::zeros(rows, order);
    let mut rhs = Mat::zeros(rows, 1);
    for i in 0..(2 * order - 1) {
        for j in 0..order {
            for (e, v) in h_hat[i + j].iter().enumerate() {
                design[(i * block + e, j)] = *v;
            }
        }
        for (e, v) in h_hat[i + order].iter().enumerate() {
            rhs[(i * block + e, 0)] = -*v;
        }
    }
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    let smallest = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if smallest > 0.0 {
        (largest / smallest).powi(2)
    } else {
        f64::INFINITY
    };
    if !(cond <= MAX_NORMAL_CONDITION) {
        return Err(Error::InsufficientExcitation { cond });
    }
    let solution = svd
        .solve(&rhs, 0.0)
        .map_err(|_| Error::InsufficientExcitation { cond })?;
    Ok(solution.column(0).iter().cloned().collect())
}

fn horner(alpha: &[f64], x: Complex64) -> (Complex64, Complex64) {
    // p(x) = x^n + alpha_{n-1} x^{n-1} + ... + alpha_0, and its derivative.
    let mut value = Complex64::new(1.0, 0.0);
    let mut deriv = Complex64::new(0.0, 0.0);
    for a in alpha.iter().rev() {
        deriv = deriv * x + value;
        value = value * x + *a;
    }
    (value, deriv)
}

/// Evaluates the monic polynomial with low-order-first coefficients `alpha`.
pub fn eval_monic(alpha: &[f64], x: Complex64) -> Complex64 {
    horner(alpha, x).0
}

/// Roots of `x^n + alpha_{n-1} x^{n-1} + ... + alpha_0` from the companion-matrix
/// eigenvalues, refined by Newton steps, conjugate-paired and canonically ordered.
pub fn poly_roots(alpha: &[f64]) -> Vec<Complex64> {
    let n = alpha.len();
    if n == 0 {
        return Vec::new();
    }
    let mut companion = Mat::zeros(n, n);
    for i in 1..n {
        companion[(i - 1, i)] = 1.0;
    }
    for (j, a) in alpha.iter().enumerate() {
        companion[(n - 1, j)] = -a;
    }
    let mut roots: Vec<Complex64> = companion.complex_eigenvalues().iter().cloned().collect();
    for root in roots.iter_mut() {
        let mut best = *root;
        let mut best_res = eval_monic(alpha, best).norm();
        let mut x = best;
        for _ in 0..8 {
            let (value, deriv) = horner(alpha, x);
            if deriv.norm() == 0.0 {
                break;
            }
            x -= value / deriv;
            let res = eval_monic(alpha, x).norm();
            if res < best_res {
                best = x;
                best_res = res;
            } else {
                break;
            }
        }
        *root = best;
    }
    pair_conjugates(&mut roots);
    canonical_sort(&mut roots);
    roots
}

/// Least-squares residues: minimizes `|| (V (x) I) [Omega_1; ...; Omega_n] - [H_0; ...; H_{3n-2}] ||`
/// with `V[tau][i] = lambda_i^tau`. The Kronecker structure decouples the fit entrywise.
pub fn estimate_residues(lambdas: &[Complex64], h_hat: &[Mat]) -> Result<Vec<CMat>> {
    let order = lambdas.len();
    let (m, p) = check_inputs(h_hat, order)?;
    let gap = min_pairwise_gap(lambdas);
    if gap < SPECTRUM_GAP {
        return Err(Error::DegenerateSpectrum {
            gap,
            threshold: SPECTRUM_GAP,
        });
    }
    let rows = markov_count(order);
    let vandermonde = CMat::from_fn(rows, order, |tau, i| lambdas[i].powu(tau as u32));
    let mut rhs = CMat::zeros(rows, m * p);
    for (tau, h) in h_hat[..rows].iter().enumerate() {
        for (e, v) in h.iter().enumerate() {
            rhs[(tau, e)] = Complex64::new(*v, 0.0);
        }
    }
    let svd = vandermonde.svd(true, true);
    let largest = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let solution = svd
        .solve(&rhs, largest * f64::EPSILON * rows as f64)
        .map_err(|_| Error::Singular("Vandermonde matrix"))?;
    let mut residues: Vec<CMat> = (0..order)
        .map(|i| CMat::from_iterator(m, p, solution.row(i).iter().cloned()))
        .collect();
    enforce_conjugate_residues(lambdas, &mut residues);
    Ok(residues)
}

/// Scales any eigenvalue outside the `MODULUS_CLAMP` disk back onto it, keeping its phase.
pub fn clamp_moduli(lambdas: &mut [Complex64]) -> bool {
    let mut clamped = false;
    for l in lambdas.iter_mut() {
        let r = l.norm();
        if r > MODULUS_CLAMP {
            *l *= MODULUS_CLAMP / r;
            clamped = true;
        }
    }
    clamped
}

/// Full chain: characteristic polynomial, roots (clamped into the stable disk), residues.
pub fn identify(h_hat: &[Mat], order: usize) -> Result<ModalDecomposition> {
    let alpha = estimate_char_poly(h_hat, order)?;
    let mut lambdas = poly_roots(&alpha);
    clamp_moduli(&mut lambdas);
    let residues = estimate_residues(&lambdas, h_hat)?;
    ModalDecomposition::new(lambdas, residues)
}
