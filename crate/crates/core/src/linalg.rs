//! Small dense linear-algebra helpers shared by the other modules.

use std::cmp::Ordering;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Imaginary parts above this (relative to the real scale) are treated as a
/// genuine modelling error instead of rounding noise.
pub const REALIFY_TOL: f64 = 1e-9;

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

/// Eigen-decomposition of the symmetric part of `m`, eigenvalues ascending.
pub fn sym_eigen(m: &Mat) -> (Vector, Mat) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals[0]
}

pub fn max_eigenvalue(m: &Mat) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals[vals.len() - 1]
}

/// Rebuilds a symmetric matrix with every eigenvalue clamped to at least `floor`.
pub fn project_eigen_floor(m: &Mat, floor: f64) -> Mat {
    let (vals, vecs) = sym_eigen(m);
    let clamped = Mat::from_diagonal(&vals.map(|v| v.max(floor)));
    symmetrize(&(&vecs * clamped * vecs.transpose()))
}

/// Symmetric PSD square root (negative eigenvalues are treated as zero).
pub fn sqrt_psd(m: &Mat) -> Mat {
    let (vals, vecs) = sym_eigen(m);
    let roots = Mat::from_diagonal(&vals.map(|v| v.max(0.0).sqrt()));
    symmetrize(&(&vecs * roots * vecs.transpose()))
}

pub fn spd_inverse(m: &Mat, what: &'static str) -> Result<Mat> {
    Cholesky::new(symmetrize(m))
        .map(|c| c.inverse())
        .ok_or(Error::Singular(what))
}

pub fn spd_logdet(m: &Mat, what: &'static str) -> Result<f64> {
    let chol = Cholesky::new(symmetrize(m)).ok_or(Error::Singular(what))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `x^T M^{-1} x` through a Cholesky solve.
pub fn spd_quadratic_form(m: &Mat, x: &Vector, what: &'static str) -> Result<f64> {
    let chol = Cholesky::new(symmetrize(m)).ok_or(Error::Singular(what))?;
    let sol = chol.solve(x);
    Ok(x.dot(&sol))
}

pub fn spectral_radius(a: &Mat) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

/// Numerical rank: singular values above `rel_tol` times the largest one.
pub fn numerical_rank(m: &Mat, rel_tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let largest = sv.iter().cloned().fold(0.0, f64::max);
    if largest == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * largest).count()
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Drops the imaginary part of `m` after checking it is rounding noise.
pub fn realify(m: &CMat) -> Result<Mat> {
    let scale = m.iter().map(|c| c.re.abs()).fold(1.0, f64::max);
    let imag = m.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    if imag > REALIFY_TOL * scale {
        return Err(Error::NonReal { imag });
    }
    Ok(m.map(|c| c.re))
}

/// Ordering used everywhere eigenvalues are listed: descending modulus,
/// ties (relative 1e-9) broken by ascending phase.
pub fn canonical_order(a: &Complex64, b: &Complex64) -> Ordering {
    let (ma, mb) = (a.norm(), b.norm());
    let tol = 1e-9 * ma.max(mb).max(1e-300);
    if (ma - mb).abs() > tol {
        mb.total_cmp(&ma)
    } else {
        a.arg().total_cmp(&b.arg())
    }
}

pub fn canonical_sort(values: &mut [Complex64]) {
    values.sort_by(canonical_order);
}

pub fn min_pairwise_gap(values: &[Complex64]) -> f64 {
    let mut gap = f64::INFINITY;
    for i in 0..values.len() {
        for j in (i + 1)..values.len() {
            gap = gap.min((values[i] - values[j]).norm());
        }
    }
    gap
}

/// `a <= b` in the PSD order, up to `tol` on the largest eigenvalue of `a - b`.
pub fn psd_leq(a: &Mat, b: &Mat, tol: f64) -> bool {
    max_eigenvalue(&(a - b)) <= tol
}

/// Greedy nearest assignment: `result[i]` is the index in `targets` matched to `sources[i]`.
pub fn greedy_match(sources: &[Complex64], targets: &[Complex64]) -> Vec<Option<usize>> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, s) in sources.iter().enumerate() {
        for (j, t) in targets.iter().enumerate() {
            pairs.push(((s - t).norm(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut result = vec![None; sources.len()];
    let mut taken = vec![false; targets.len()];
    for (_, i, j) in pairs {
        if result[i].is_none() && !taken[j] {
            result[i] = Some(j);
            taken[j] = true;
        }
    }
    result
}

pub fn trace_product(a: &Mat, b: &Mat) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// Serializes a matrix as nested row arrays, `[[a, b], [c, d]]`.
pub mod serde_rows {
    use super::Mat;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Mat, serializer: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().cloned().collect()).collect();
        rows.serialize(serializer)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(deserializer: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(D::Error::custom("ragged matrix rows"));
        }
        Ok(Mat::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_order_puts_larger_modulus_first_then_phase() {
        let mut v = vec![
            Complex64::new(0.2, 0.0),
            Complex64::new(0.6, 0.6),
            Complex64::new(0.6, -0.6),
            Complex64::new(-0.9, 0.0),
        ];
        canonical_sort(&mut v);
        assert_eq!(v[0], Complex64::new(-0.9, 0.0));
        assert_eq!(v[1], Complex64::new(0.6, -0.6));
        assert_eq!(v[2], Complex64::new(0.6, 0.6));
        assert_eq!(v[3], Complex64::new(0.2, 0.0));
    }

    #[test]
    fn realify_rejects_large_imaginary_parts() {
        let ok = CMat::from_element(1, 1, Complex64::new(1.0, 1e-12));
        assert_eq!(realify(&ok).unwrap()[(0, 0)], 1.0);
        let bad = CMat::from_element(1, 1, Complex64::new(1.0, 1e-3));
        assert!(matches!(realify(&bad), Err(Error::NonReal { .. })));
    }

    #[test]
    fn sqrt_and_floor_projection() {
        let m = Mat::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let r = sqrt_psd(&m);
        assert!((r[(0, 0)] - 2.0).abs() < 1e-14 && (r[(1, 1)] - 3.0).abs() < 1e-14);
        let indefinite = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = project_eigen_floor(&indefinite, 1e-8);
        assert!(min_eigenvalue(&p) >= 1e-8 - 1e-15);
    }

    #[test]
    fn row_serde_round_trip() {
        #[derive(serde::Serialize, serde::Deserialize)]
        struct Wrap(#[serde(with = "serde_rows")] Mat);
        let m = Mat::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 0.1]);
        let text = serde_json::to_string(&Wrap(m.clone())).unwrap();
        assert_eq!(text, "[[1.0,2.0,3.0],[4.0,5.0,0.1]]");
        assert_eq!(serde_json::from_str::<Wrap>(&text).unwrap().0, m);
        assert!(serde_json::from_str::<Wrap>("[[1.0],[2.0,3.0]]").is_err());
    }

    #[test]
    fn greedy_match_pairs_nearest() {
        let a = [Complex64::new(0.5, 0.0), Complex64::new(0.1, 0.0)];
        let b = [Complex64::new(0.11, 0.0), Complex64::new(0.49, 0.0)];
        assert_eq!(greedy_match(&a, &b), vec![Some(1), Some(0)]);
    }
}
