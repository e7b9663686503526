use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RegularGrid;

/// Distance bins `(e_{k-1}, e_k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bins {
    pub edges: Vec<f64>,
}

impl Bins {
    /// Unit-lag bins (in cell widths) up to half the grid diagonal.
    pub fn unit_lags(grid: &RegularGrid) -> Self {
        let h = grid.cell_size();
        let diag = ((grid.nrow() as f64).powi(2) + (grid.ncol() as f64).powi(2)).sqrt();
        let k = (0.5 * diag).floor().max(1.0) as usize;
        Self {
            edges: (0..=k).map(|i| i as f64 * h).collect(),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len().saturating_sub(1)
    }

    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Bin containing distance `d`, if any.
    pub fn locate(&self, d: f64) -> Option<usize> {
        let n = self.n_bins();
        if n == 0 || d <= self.edges[0] || d > self.edges[n] {
            return None;
        }
        // first edge ≥ d, minus one
        let k = self.edges.partition_point(|e| *e < d);
        Some(k - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairBudget {
    /// Maximum number of pairs before switching to uniform subsampling.
    pub max_pairs: usize,
    pub seed: u64,
}

impl Default for PairBudget {
    fn default() -> Self {
        Self {
            max_pairs: 1_000_000,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variogram {
    pub edges: Vec<f64>,
    pub semivariance: Vec<f64>,
    pub counts: Vec<usize>,
    /// Standard error of each bin value from the spread of the pair terms.
    pub std_error: Vec<f64>,
    pub subsampled: bool,
}

impl Variogram {
    pub fn centers(&self) -> Vec<f64> {
        Bins { edges: self.edges.clone() }.centers()
    }
}

/// The set of cell pairs the estimator averages over, grouped by bin.
#[derive(Debug, Clone)]
pub struct PairSet {
    bins: Bins,
    pairs: Vec<Vec<(u32, u32)>>,
    subsampled: bool,
}

impl PairSet {
    pub fn new(grid: &RegularGrid, mask: &[bool], bins: &Bins, budget: &PairBudget) -> Result<Self> {
        if mask.len() != grid.len() {
            return Err(Error::DimensionMismatch("mask does not match grid".into()));
        }
        let cells: Vec<usize> = (0..grid.len()).filter(|&i| mask[i]).collect();
        let n = cells.len();
        if n < 2 {
            return Err(Error::Data("variogram needs at least two cells".into()));
        }
        let total = n * (n - 1) / 2;
        let mut pairs = vec![Vec::new(); bins.n_bins()];
        let subsampled = total > budget.max_pairs;
        if !subsampled {
            for a in 0..n {
                for b in a + 1..n {
                    let (i, j) = (cells[a], cells[b]);
                    if let Some(k) = bins.locate(grid.centroid_distance(i, j)) {
                        pairs[k].push((i as u32, j as u32));
                    }
                }
            }
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
            for _ in 0..budget.max_pairs {
                let a = rng.random_range(0..n);
                let mut b = rng.random_range(0..n - 1);
                if b >= a {
                    b += 1;
                }
                let (i, j) = (cells[a], cells[b]);
                if let Some(k) = bins.locate(grid.centroid_distance(i, j)) {
                    pairs[k].push((i as u32, j as u32));
                }
            }
        }
        Ok(Self {
            bins: bins.clone(),
            pairs,
            subsampled,
        })
    }

    pub fn bins(&self) -> &Bins {
        &self.bins
    }

    pub fn is_subsampled(&self) -> bool {
        self.subsampled
    }

    /// Classical estimator `½ mean (z_i − z_j)²` per bin.
    pub fn variogram(&self, values: &[f64]) -> Variogram {
        let nb = self.bins.n_bins();
        let mut semivariance = vec![0.0; nb];
        let mut counts = vec![0; nb];
        let mut std_error = vec![0.0; nb];
        for (k, pairs) in self.pairs.iter().enumerate() {
            let c = pairs.len();
            counts[k] = c;
            if c == 0 {
                continue;
            }
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for &(i, j) in pairs {
                let t = 0.5 * (values[i as usize] - values[j as usize]).powi(2);
                sum += t;
                sum_sq += t * t;
            }
            let mean = sum / c as f64;
            semivariance[k] = mean;
            if c > 1 {
                let var = ((sum_sq - c as f64 * mean * mean) / (c as f64 - 1.0)).max(0.0);
                std_error[k] = (var / c as f64).sqrt();
            }
        }
        Variogram {
            edges: self.bins.edges.clone(),
            semivariance,
            counts,
            std_error,
            subsampled: self.subsampled,
        }
    }
}

/// Empirical variogram of a grid field over the unmasked cells.
pub fn empirical_variogram(
    grid: &RegularGrid,
    values: &[f64],
    mask: &[bool],
    bins: &Bins,
    budget: &PairBudget,
) -> Result<Variogram> {
    if values.len() != grid.len() {
        return Err(Error::DimensionMismatch("field does not match grid".into()));
    }
    Ok(PairSet::new(grid, mask, bins, budget)?.variogram(values))
}
