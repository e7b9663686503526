use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type DenseCholesky = Cholesky<f64, Dyn>;

/// Dense Cholesky that reports failure as a numeric error.
pub fn cholesky(m: DMatrix<f64>, what: &str) -> Result<DenseCholesky> {
    Cholesky::new(m).ok_or_else(|| Error::Numeric(format!("{what} is not positive definite")))
}

pub fn chol_log_det(c: &DenseCholesky) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `(|M|)^{-1/2}` for symmetric `M`, where `|M|` replaces eigenvalues by their
/// magnitudes. Eigen-directions with `|λ| ≤ rel_tol · max|λ|` are dropped, so the
/// result is `n × r` with `r` the retained rank.
pub fn abs_inv_sqrt(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let keep: Vec<usize> = (0..m.nrows())
        .filter(|&i| eig.eigenvalues[i].abs() > rel_tol * max)
        .collect();
    let n = m.nrows();
    // symmetric square root restricted to the retained eigenspace
    let mut out = DMatrix::zeros(n, n);
    for &k in &keep {
        let v = eig.eigenvectors.column(k);
        let s = 1.0 / eig.eigenvalues[k].abs().sqrt();
        out += (v * v.transpose()) * s;
    }
    if keep.len() < n {
        // project onto the retained span so the column count equals the rank
        let basis = DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]);
        return out * basis;
    }
    out
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sorted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v
}

/// Orthonormal basis of the column span of `m` (thin QR via modified Gram-Schmidt).
pub fn orthonormal_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            let qk: DVector<f64> = q.column(k).into_owned();
            q.column_mut(j).axpy(-proj, &qk, 1.0);
        }
        let norm = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    q
}
