use nalgebra::DMatrix;

use super::ordering::{self, Ordering};
use super::sparse::SparseSymmetric;
use crate::error::{Error, Result};

/// Relative pivot tolerance against the largest diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Envelope (profile) Cholesky factor `P M Pᵀ = L Lᵀ`.
///
/// Row `i` of `L` is stored densely from column `first[i]` through the
/// diagonal. Lattice precisions under reverse Cuthill-McKee have envelopes
/// close to their bandwidth, so this is compact and keeps the inner products
/// contiguous.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    /// `perm[new] = old`
    perm: Vec<usize>,
    /// `inv_perm[old] = new`
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    row_ptr: Vec<usize>,
    vals: Vec<f64>,
}

pub fn factorize(m: &SparseSymmetric) -> Result<CholeskyFactor> {
    factorize_with(m, Ordering::default())
}

pub fn factorize_with(m: &SparseSymmetric, ordering: Ordering) -> Result<CholeskyFactor> {
    let n = m.dim();
    let perm = ordering::compute(&m.adjacency(), ordering);
    let mut inv_perm = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv_perm[old] = new;
    }

    // permuted lower triangle, grouped by row
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, j, v) in m.iter_lower() {
        let (a, b) = (inv_perm[i], inv_perm[j]);
        let (r, c) = if b <= a { (a, b) } else { (b, a) };
        rows[r].push((c, v));
    }

    let mut first = vec![0usize; n];
    let mut row_ptr = vec![0usize; n + 1];
    for i in 0..n {
        first[i] = rows[i].iter().map(|&(c, _)| c).min().unwrap_or(i).min(i);
        row_ptr[i + 1] = row_ptr[i] + (i - first[i] + 1);
    }
    let mut vals = vec![0.0; row_ptr[n]];
    for (i, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            vals[row_ptr[i] + c - first[i]] += v;
        }
    }

    let tol = PIVOT_TOLERANCE * m.max_abs_diagonal().max(f64::MIN_POSITIVE);
    for i in 0..n {
        let fi = first[i];
        let base_i = row_ptr[i];
        for j in fi..i {
            let lo = fi.max(first[j]);
            let base_j = row_ptr[j];
            let (row_i, row_j) = (
                &vals[base_i + lo - fi..base_i + j - fi],
                &vals[base_j + lo - first[j]..base_j + j - first[j]],
            );
            let dot: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
            let ljj = vals[base_j + j - first[j]];
            let idx = base_i + j - fi;
            vals[idx] = (vals[idx] - dot) / ljj;
        }
        let row_i = &vals[base_i..base_i + i - fi];
        let sq: f64 = row_i.iter().map(|a| a * a).sum();
        let d = vals[base_i + i - fi] - sq;
        if !(d > tol) {
            return Err(Error::NotPositiveDefinite {
                pivot: perm[i],
                value: d,
            });
        }
        vals[base_i + i - fi] = d.sqrt();
    }

    Ok(CholeskyFactor {
        n,
        perm,
        inv_perm,
        first,
        row_ptr,
        vals,
    })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Fill-reducing permutation, `perm[new] = old`.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Stored entries of `L`, including envelope zeros.
    pub fn envelope_size(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    fn diag(&self, i: usize) -> f64 {
        self.vals[self.row_ptr[i + 1] - 1]
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        // strictly-lower part of row i, columns first[i]..i
        &self.vals[self.row_ptr[i]..self.row_ptr[i + 1] - 1]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.diag(i).ln()).sum::<f64>()
    }

    /// Forward substitution `L y = b` on row-major `n × k` data, in place.
    fn forward_rows(&self, y: &mut [f64], k: usize) {
        for i in 0..self.n {
            let fi = self.first[i];
            let (done, rest) = y.split_at_mut(i * k);
            let yi = &mut rest[..k];
            for (off, &l) in self.row(i).iter().enumerate() {
                if l != 0.0 {
                    let yj = &done[(fi + off) * k..(fi + off + 1) * k];
                    yi.iter_mut().zip(yj).for_each(|(a, b)| *a -= l * b);
                }
            }
            let d = self.diag(i);
            yi.iter_mut().for_each(|a| *a /= d);
        }
    }

    /// Back substitution `Lᵀ x = y` on row-major `n × k` data, in place.
    fn backward_rows(&self, y: &mut [f64], k: usize) {
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let d = self.diag(i);
            let (head, rest) = y.split_at_mut(i * k);
            let xi = &mut rest[..k];
            xi.iter_mut().for_each(|a| *a /= d);
            for (off, &l) in self.row(i).iter().enumerate() {
                if l != 0.0 {
                    let yj = &mut head[(fi + off) * k..(fi + off + 1) * k];
                    yj.iter_mut().zip(xi.iter()).for_each(|(a, b)| *a -= l * b);
                }
            }
        }
    }

    fn permuted_rows(&self, b: &DMatrix<f64>) -> Vec<f64> {
        let k = b.ncols();
        let mut y = vec![0.0; self.n * k];
        for new in 0..self.n {
            let old = self.perm[new];
            for c in 0..k {
                y[new * k + c] = b[(old, c)];
            }
        }
        y
    }

    fn unpermute_rows(&self, y: &[f64], k: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, k, |old, c| y[self.inv_perm[old] * k + c])
    }

    /// Solves `M X = B` for every column of `B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "right-hand side has {} rows, factor has dimension {}",
                b.nrows(),
                self.n
            )));
        }
        let k = b.ncols();
        let mut y = self.permuted_rows(b);
        self.forward_rows(&mut y, k);
        self.backward_rows(&mut y, k);
        Ok(self.unpermute_rows(&y, k))
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let x = self.solve(&DMatrix::from_column_slice(b.len(), 1, b))?;
        Ok(x.as_slice().to_vec())
    }

    /// `xᵀ M x` evaluated as `‖Lᵀ P x‖²`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n);
        let px: Vec<f64> = self.perm.iter().map(|&old| x[old]).collect();
        let mut total = 0.0;
        // (Lᵀ px)_j = Σ_{i ≥ j} L_ij px_i
        let mut acc = vec![0.0; self.n];
        for i in 0..self.n {
            let fi = self.first[i];
            for (off, &l) in self.row(i).iter().enumerate() {
                acc[fi + off] += l * px[i];
            }
            acc[i] += self.diag(i) * px[i];
        }
        for a in acc {
            total += a * a;
        }
        total
    }

    /// Maps white noise `z` to `x = Pᵀ L⁻ᵀ z`, which has covariance `M⁻¹`.
    pub fn whiten_inverse(&self, z: &[f64]) -> Vec<f64> {
        assert_eq!(z.len(), self.n);
        let mut y = z.to_vec();
        self.backward_rows(&mut y, 1);
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }

    /// Rebuilds `M = Pᵀ L Lᵀ P` densely (test and diagnostic use).
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let fi = self.first[i];
            for (off, &v) in self.row(i).iter().enumerate() {
                l[(i, fi + off)] = v;
            }
            l[(i, i)] = self.diag(i);
        }
        let llt = &l * l.transpose();
        DMatrix::from_fn(self.n, self.n, |a, b| {
            llt[(self.inv_perm[a], self.inv_perm[b])]
        })
    }
}
