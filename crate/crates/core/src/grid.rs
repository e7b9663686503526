//! Regular lattices, land masks, and the sparse mapping matrices that move
//! values between points, base cells, and coarser pixels.
//!
//! Cells are linearized row-major: cell `(r, c)` has index `r * ncol + c`.
//! Row `r` spans `y ∈ [y0 + r·h, y0 + (r+1)·h)` and column `c` spans
//! `x ∈ [x0 + c·h, x0 + (c+1)·h)`, with `(x0, y0)` the grid origin.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SparseSymmetric;

/// Land fraction at or below which a coarse pixel is dropped from the proxy likelihood.
pub const DEFAULT_LAND_RETENTION: f64 = 0.40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularGrid {
    nrow: usize,
    ncol: usize,
    cell_size: f64,
    origin: (f64, f64),
    land_mask: Vec<bool>,
}

impl RegularGrid {
    /// All-land grid.
    pub fn new(nrow: usize, ncol: usize, cell_size: f64, origin: (f64, f64)) -> Result<Self> {
        Self::with_mask(nrow, ncol, cell_size, origin, vec![true; nrow * ncol])
    }

    pub fn with_mask(
        nrow: usize,
        ncol: usize,
        cell_size: f64,
        origin: (f64, f64),
        land_mask: Vec<bool>,
    ) -> Result<Self> {
        if nrow == 0 || ncol == 0 {
            return Err(Error::Config(format!("grid must be non-empty, got {nrow}x{ncol}")));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::Config(format!("cell size must be positive, got {cell_size}")));
        }
        if land_mask.len() != nrow * ncol {
            return Err(Error::DimensionMismatch(format!(
                "land mask has {} entries for a {nrow}x{ncol} grid",
                land_mask.len()
            )));
        }
        Ok(Self {
            nrow,
            ncol,
            cell_size,
            origin,
            land_mask,
        })
    }

    /// Unit cells with the origin at zero.
    pub fn unit(nrow: usize, ncol: usize) -> Self {
        Self::new(nrow, ncol, 1.0, (0.0, 0.0)).expect("valid unit grid")
    }

    pub fn nrow(&self) -> usize {
        self.nrow
    }
    pub fn ncol(&self) -> usize {
        self.ncol
    }
    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }
    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }
    pub fn len(&self) -> usize {
        self.nrow * self.ncol
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn land_mask(&self) -> &[bool] {
        &self.land_mask
    }
    pub fn is_land(&self, idx: usize) -> bool {
        self.land_mask[idx]
    }
    pub fn land_cells(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.land_mask[i]).collect()
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        debug_assert!(r < self.nrow && c < self.ncol);
        r * self.ncol + c
    }

    pub fn row_col(&self, idx: usize) -> (usize, usize) {
        (idx / self.ncol, idx % self.ncol)
    }

    pub fn centroid(&self, idx: usize) -> (f64, f64) {
        let (r, c) = self.row_col(idx);
        (
            self.origin.0 + (c as f64 + 0.5) * self.cell_size,
            self.origin.1 + (r as f64 + 0.5) * self.cell_size,
        )
    }

    pub fn centroids(&self) -> Vec<(f64, f64)> {
        (0..self.len()).map(|i| self.centroid(i)).collect()
    }

    /// `(x_min, y_min, x_max, y_max)`
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (
            self.origin.0,
            self.origin.1,
            self.origin.0 + self.ncol as f64 * self.cell_size,
            self.origin.1 + self.nrow as f64 * self.cell_size,
        )
    }

    /// Containing cell; a point on an interior edge goes to the cell with the
    /// larger index along that axis, points on the outer edge to the last cell.
    pub fn locate(&self, x: f64, y: f64) -> Option<usize> {
        let (x0, y0, x1, y1) = self.bounds();
        if !(x >= x0 && x <= x1 && y >= y0 && y <= y1) {
            return None;
        }
        let c = (((x - x0) / self.cell_size).floor() as usize).min(self.ncol - 1);
        let r = (((y - y0) / self.cell_size).floor() as usize).min(self.nrow - 1);
        Some(self.index(r, c))
    }

    /// Euclidean distance between two cell centroids.
    pub fn centroid_distance(&self, a: usize, b: usize) -> f64 {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        let dr = ra as f64 - rb as f64;
        let dc = ca as f64 - cb as f64;
        (dr * dr + dc * dc).sqrt() * self.cell_size
    }

    /// Same geometry and mask on a copy with a new mask.
    pub fn with_land_mask(&self, land_mask: Vec<bool>) -> Result<Self> {
        Self::with_mask(self.nrow, self.ncol, self.cell_size, self.origin, land_mask)
    }
}

/// Sparse row-compressed mapping from source cells to target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MappingMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
    excluded: Vec<bool>,
}

impl MappingMatrix {
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let nrows = rows.len();
        let mut row_ptr = Vec::with_capacity(nrows + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        for row in rows {
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::DimensionMismatch(format!(
                        "mapping column {c} out of range {ncols}"
                    )));
                }
                col_idx.push(c);
                vals.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            vals,
            excluded: vec![false; nrows],
        })
    }

    /// One unit entry per row, selecting `cells[i]`.
    pub fn selection(ncols: usize, cells: &[usize]) -> Result<Self> {
        Self::from_rows(ncols, cells.iter().map(|&c| vec![(c, 1.0)]).collect())
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }
    pub fn ncols(&self) -> usize {
        self.ncols
    }
    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn excluded(&self) -> &[bool] {
        &self.excluded
    }

    pub fn is_excluded(&self, i: usize) -> bool {
        self.excluded[i]
    }

    pub fn retained_rows(&self) -> Vec<usize> {
        (0..self.nrows).filter(|&i| !self.excluded[i]).collect()
    }

    /// Sub-matrix with the chosen rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let picked = rows.iter().map(|&i| self.row(i).collect()).collect();
        let mut out = Self::from_rows(self.ncols, picked).expect("columns already validated");
        out.excluded = rows.iter().map(|&i| self.excluded[i]).collect();
        out
    }

    /// Drops excluded rows.
    pub fn retained(&self) -> Self {
        self.select_rows(&self.retained_rows())
    }

    /// The single selected column of each row, when every row has exactly one unit entry.
    pub fn as_selection(&self) -> Option<Vec<usize>> {
        (0..self.nrows)
            .map(|i| {
                let mut it = self.row(i);
                match (it.next(), it.next()) {
                    (Some((c, v)), None) if v == 1.0 => Some(c),
                    _ => None,
                }
            })
            .collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|i| self.row(i).map(|(_, v)| v).sum()).collect()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.nrows);
        let mut out = vec![0.0; self.ncols];
        for (i, &yi) in y.iter().enumerate() {
            for (c, v) in self.row(i) {
                out[c] += v * yi;
            }
        }
        out
    }

    /// `P X` for dense `X` with `ncols` rows.
    pub fn apply_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.nrows(), self.ncols);
        let mut out = DMatrix::zeros(self.nrows, x.ncols());
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                for k in 0..x.ncols() {
                    out[(i, k)] += v * x[(c, k)];
                }
            }
        }
        out
    }

    /// `Pᵀ Y` for dense `Y` with `nrows` rows.
    pub fn apply_transpose_dense(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(y.nrows(), self.nrows);
        let mut out = DMatrix::zeros(self.ncols, y.ncols());
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                for k in 0..y.ncols() {
                    out[(c, k)] += v * y[(i, k)];
                }
            }
        }
        out
    }

    /// `Pᵀ diag(w) P` as a sparse symmetric matrix over the source cells.
    pub fn weighted_gram(&self, w: &[f64]) -> SparseSymmetric {
        assert_eq!(w.len(), self.nrows);
        let mut trip = Vec::new();
        for (i, &wi) in w.iter().enumerate() {
            let entries: Vec<(usize, f64)> = self.row(i).collect();
            for (a, &(ca, va)) in entries.iter().enumerate() {
                for &(cb, vb) in &entries[..=a] {
                    trip.push((ca, cb, wi * va * vb));
                }
            }
        }
        // row entries have distinct columns, so each unordered pair is pushed once
        SparseSymmetric::from_triplets(self.ncols, trip).expect("indices in range")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (c, v) in self.row(i) {
                m[(i, c)] += v;
            }
        }
        m
    }
}

/// Maps each point to its containing cell with unit weight.
pub fn point_to_cell(grid: &RegularGrid, points: &[(f64, f64)]) -> Result<MappingMatrix> {
    let cells = points
        .iter()
        .enumerate()
        .map(|(index, &(x, y))| grid.locate(x, y).ok_or(Error::PointOutsideGrid { index, x, y }))
        .collect::<Result<Vec<_>>>()?;
    MappingMatrix::selection(grid.len(), &cells)
}

/// Area-overlap averaging weights from `fine` cells into each `coarse` cell.
///
/// With `land_only`, water cells of `fine` get no weight, each row is
/// renormalized over its land overlap, and rows whose land fraction of the
/// coarse cell area does not exceed `retention` are flagged excluded.
/// Without it, rows are normalized over the total overlap and only rows with
/// no overlap at all are excluded.
pub fn overlap_weights(
    fine: &RegularGrid,
    coarse: &RegularGrid,
    land_only: bool,
    retention: f64,
) -> Result<MappingMatrix> {
    let (fx0, fy0, fx1, fy1) = fine.bounds();
    let (cx0, cy0, cx1, cy1) = coarse.bounds();
    let tol = 1e-9 * fine.cell_size();
    if cx0 > fx0 + tol || cy0 > fy0 + tol || cx1 < fx1 - tol || cy1 < fy1 - tol {
        return Err(Error::Data("coarse grid does not cover the fine grid".into()));
    }
    let h = fine.cell_size();
    let coarse_area = coarse.cell_size() * coarse.cell_size();

    let mut rows = Vec::with_capacity(coarse.len());
    let mut excluded = Vec::with_capacity(coarse.len());
    for j in 0..coarse.len() {
        let (cx, cy) = coarse.centroid(j);
        let half = 0.5 * coarse.cell_size();
        let (ax0, ay0, ax1, ay1) = (cx - half, cy - half, cx + half, cy + half);
        let c_lo = (((ax0 - fx0) / h).floor().max(0.0)) as usize;
        let c_hi = (((ax1 - fx0) / h).ceil().max(0.0) as usize).min(fine.ncol());
        let r_lo = (((ay0 - fy0) / h).floor().max(0.0)) as usize;
        let r_hi = (((ay1 - fy0) / h).ceil().max(0.0) as usize).min(fine.nrow());

        let mut entries = Vec::new();
        let mut total = 0.0;
        for r in r_lo..r_hi {
            let y0 = fy0 + r as f64 * h;
            let oy = (ay1.min(y0 + h) - ay0.max(y0)).max(0.0);
            if oy == 0.0 {
                continue;
            }
            for c in c_lo..c_hi {
                let x0 = fx0 + c as f64 * h;
                let ox = (ax1.min(x0 + h) - ax0.max(x0)).max(0.0);
                let area = ox * oy;
                if area <= 0.0 {
                    continue;
                }
                let idx = fine.index(r, c);
                if land_only && !fine.is_land(idx) {
                    continue;
                }
                entries.push((idx, area));
                total += area;
            }
        }
        let drop = if land_only {
            total / coarse_area <= retention + 1e-9
        } else {
            total <= 0.0
        };
        if total > 0.0 {
            entries.iter_mut().for_each(|e| e.1 /= total);
        } else {
            entries.clear();
        }
        rows.push(entries);
        excluded.push(drop);
    }
    let mut m = MappingMatrix::from_rows(fine.len(), rows)?;
    m.excluded = excluded;
    Ok(m)
}
