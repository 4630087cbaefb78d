//! Small dense linear-algebra helpers shared across the estimators.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Maximum absolute entry of `m - m'`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    if !m.is_square() {
        return f64::INFINITY;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// `(m + m') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Checks symmetry and positive semidefiniteness with a tolerance scaled by
/// the matrix magnitude.
pub fn check_psd(m: &DMatrix<f64>, tol: f64) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = asymmetry(m);
    if asym > tol * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let lo = min_eigenvalue(m);
    if lo < -tol * scale {
        return Err(Error::NotPositiveSemidefinite(lo));
    }
    Ok(())
}

/// Symmetric square root factor `F` with `F F' = m` for a PSD matrix,
/// clipping tiny negative eigenvalues to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut v = eig.eigenvectors.clone();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(symmetrize(m)).ok_or_else(|| Error::Singular(what.to_string()))
}

/// Solves `m x = b` for symmetric positive-definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(cholesky(m, what)?.solve(b))
}

pub fn spd_solve_vec(m: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    Ok(cholesky(m, what)?.solve(b))
}

/// log-determinant of a symmetric positive-definite matrix via Cholesky.
/// The empty matrix has log-determinant zero.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = cholesky(m, "log-determinant of non-positive-definite matrix")?;
    Ok(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().max()
}

pub fn nuclear_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone().singular_values().sum()
}

/// Number of singular values above `cutoff`.
pub fn numerical_rank(m: &DMatrix<f64>, cutoff: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    m.clone()
        .singular_values()
        .iter()
        .filter(|s| **s > cutoff)
        .count()
}

/// Upper-bound estimate of the largest eigenvalue of the PSD operator
/// `apply` via power iteration, inflated by `safety`.
pub fn power_iteration(
    dim: usize,
    iterations: usize,
    safety: f64,
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    // Deterministic, non-degenerate start vector.
    let mut v = DVector::from_fn(dim, |i, _| 1.0 + 0.1 * ((i * 7919 % 13) as f64));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..iterations {
        let w = apply(&v);
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / nw;
    }
    lambda.max(0.0) * safety
}

/// Largest principal angle (radians) between the column spans of `a` and `b`.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let qa = orthonormal_basis(a, 1e-10);
    let qb = orthonormal_basis(b, 1e-10);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let (small, large) = if qa.ncols() <= qb.ncols() { (qa, qb) } else { (qb, qa) };
    let cross = small.transpose() * large;
    let s = cross.singular_values();
    let smallest = if s.len() < small.ncols() { 0.0 } else { s.min() };
    smallest.clamp(-1.0, 1.0).acos()
}

/// Orthonormal basis of the column span, dropping directions with relative
/// singular value below `rel_cutoff`.
pub fn orthonormal_basis(m: &DMatrix<f64>, rel_cutoff: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| top > 0.0 && svd.singular_values[k] > rel_cutoff * top)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |i, j| u[(i, keep[j])])
}

/// Rows of `m` picked by `rows` in order.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

pub fn select_cols(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn select_submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

/// Sum of absolute entries.
pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x.abs()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_det_matches_product_of_eigenvalues() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let eig = SymmetricEigen::new(m.clone());
        let expected: f64 = eig.eigenvalues.iter().map(|l: &f64| l.ln()).sum();
        assert!((log_det_spd(&m).unwrap() - expected).abs() < 1e-12);
        assert_eq!(log_det_spd(&DMatrix::zeros(0, 0)).unwrap(), 0.0);
    }

    #[test]
    fn psd_sqrt_reconstructs_singular_matrix() {
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let c = &u * u.transpose();
        let f = psd_sqrt(&c);
        assert!((&f * f.transpose() - &c).amax() < 1e-12);
    }

    #[test]
    fn principal_angle_of_identical_and_orthogonal_spans() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(3, 1, &[0.0, 2.0, 0.0]);
        assert!(max_principal_angle(&a, &(&a * 3.0)) < 1e-7);
        assert!((max_principal_angle(&a, &b) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn power_iteration_bounds_top_eigenvalue() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let top = SymmetricEigen::new(m.clone()).eigenvalues.max();
        let est = power_iteration(2, 50, 1.05, |v| &m * v);
        assert!(est >= top && est <= 1.06 * top);
    }
}
