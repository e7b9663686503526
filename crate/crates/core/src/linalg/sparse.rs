use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse matrix holding only its lower triangle, row by row.
///
/// Column indices within a row are strictly increasing and never exceed the
/// row index, so the diagonal (when present) is the last stored entry.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSymmetric {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymmetric {
    /// Builds from `(row, col, value)` triplets. Each symmetric pair is given
    /// once, in either triangle; duplicates are summed.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut lower: Vec<(usize, usize, f64)> = Vec::new();
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch(format!(
                    "entry ({i}, {j}) outside a {n}x{n} matrix"
                )));
            }
            let (r, c) = if j <= i { (i, j) } else { (j, i) };
            lower.push((r, c, v));
        }
        lower.sort_by_key(|a| (a.0, a.1));

        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(lower.len());
        let mut vals = Vec::with_capacity(lower.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in lower {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Ok(Self { n, row_ptr, cols, vals })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(d: &[f64]) -> Self {
        let n = d.len();
        Self {
            n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: d.to_vec(),
        }
    }

    /// Lower triangle of a dense symmetric matrix, dropping exact zeros.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let trip = (0..n)
            .flat_map(|i| (0..=i).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = m[(i, j)];
                (v != 0.0).then_some((i, j, v))
            });
        Self::from_triplets(n, trip).expect("indices in range")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored (lower-triangle) entry count.
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Lower-triangle entries of row `i`: column indices and values.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if j <= i { (i, j) } else { (j, i) };
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Iterates over stored lower-triangle entries `(row, col, value)`.
    pub fn iter_lower(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter().zip(vals).map(move |(&j, &v)| (i, j, v))
        })
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "vector length must match matrix dimension");
        let mut y = vec![0.0; self.n];
        for (i, j, v) in self.iter_lower() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    /// `xᵀ M x` evaluated directly from the stored entries.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.n);
        self.iter_lower()
            .map(|(i, j, v)| {
                if i == j {
                    v * x[i] * x[i]
                } else {
                    2.0 * v * x[i] * x[j]
                }
            })
            .sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.mul_vec(&vec![1.0; self.n])
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= alpha);
        out
    }

    /// `self + alpha · other` with the union sparsity pattern.
    pub fn add_scaled(&self, other: &SparseSymmetric, alpha: f64) -> Result<Self> {
        if self.n != other.n {
            return Err(Error::DimensionMismatch(format!(
                "cannot add {}x{} and {}x{} matrices",
                self.n, self.n, other.n, other.n
            )));
        }
        let trip = self
            .iter_lower()
            .chain(other.iter_lower().map(|(i, j, v)| (i, j, alpha * v)));
        Self::from_triplets(self.n, trip)
    }

    /// Adds `d` to the diagonal, inserting diagonal entries where absent.
    pub fn add_diagonal(&self, d: &[f64]) -> Result<Self> {
        if d.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "diagonal of length {} for dimension {}",
                d.len(),
                self.n
            )));
        }
        let trip = self
            .iter_lower()
            .chain(d.iter().enumerate().map(|(i, &v)| (i, i, v)));
        Self::from_triplets(self.n, trip)
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        self.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.iter_lower() {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        m
    }

    /// Symmetric adjacency lists of the off-diagonal pattern.
    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for (i, j, _) in self.iter_lower() {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}
