//! Variograms, the discrepancy-scale ratio M(d), and predictive scores.

mod cv;
mod variogram;

pub use cv::{assign_site_folds, cross_validate, CvResult, FoldPlan};
pub use variogram::{empirical_variogram, Bins, PairBudget, PairSet, Variogram};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::grid::RegularGrid;
use crate::par::{self, Execution};

/// `M(d)` per bin, pooled over draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticCurve {
    pub centers: Vec<f64>,
    /// Posterior mean of the draw-wise ratios, `None` where no draw defines it.
    pub values: Vec<Option<f64>>,
    pub draws: Vec<Vec<Option<f64>>>,
    pub counts: Vec<usize>,
}

/// `γ_φ / (γ_{φ+β₁L} + γ_{β₁L})` for one draw, over a shared pair set.
pub fn discrepancy_ratio(pairs: &PairSet, phi: &[f64], l: &[f64], beta1: f64) -> Vec<Option<f64>> {
    let bl: Vec<f64> = l.iter().map(|x| beta1 * x).collect();
    let total: Vec<f64> = phi.iter().zip(&bl).map(|(p, b)| p + b).collect();
    let gp = pairs.variogram(phi);
    let gt = pairs.variogram(&total);
    let gb = pairs.variogram(&bl);
    (0..gp.semivariance.len())
        .map(|k| {
            let den = gt.semivariance[k] + gb.semivariance[k];
            (gp.counts[k] > 0 && den > 0.0).then(|| gp.semivariance[k] / den)
        })
        .collect()
}

/// Posterior `M(d)` from matched draws of `φ`, `L` (on the discrepancy grid), and `β₁`.
pub fn discrepancy_diagnostic(
    grid: &RegularGrid,
    mask: &[bool],
    phi: &[Vec<f64>],
    l: &[Vec<f64>],
    beta1: &[f64],
    bins: &Bins,
    budget: &PairBudget,
) -> Result<DiagnosticCurve> {
    discrepancy_diagnostic_with(Execution::default(), grid, mask, phi, l, beta1, bins, budget)
}

/// [`discrepancy_diagnostic`] with the per-draw work spread as `exec` says.
#[allow(clippy::too_many_arguments)]
pub fn discrepancy_diagnostic_with(
    exec: Execution,
    grid: &RegularGrid,
    mask: &[bool],
    phi: &[Vec<f64>],
    l: &[Vec<f64>],
    beta1: &[f64],
    bins: &Bins,
    budget: &PairBudget,
) -> Result<DiagnosticCurve> {
    if phi.len() != l.len() || phi.len() != beta1.len() {
        return Err(Error::DimensionMismatch("φ, L, and β₁ draws must be matched".into()));
    }
    if phi.is_empty() {
        return Err(Error::Data("no draws for the discrepancy diagnostic".into()));
    }
    for (p, x) in phi.iter().zip(l) {
        if p.len() != grid.len() || x.len() != grid.len() {
            return Err(Error::DimensionMismatch("draws do not match the discrepancy grid".into()));
        }
    }
    let pairs = PairSet::new(grid, mask, bins, budget)?;
    let draws = par::map_range(exec, phi.len(), |i| discrepancy_ratio(&pairs, &phi[i], &l[i], beta1[i]));
    let nb = bins.n_bins();
    let mut values = vec![None; nb];
    let mut counts = vec![0; nb];
    for k in 0..nb {
        let defined: Vec<f64> = draws.iter().filter_map(|d| d[k]).collect();
        counts[k] = defined.len();
        if !defined.is_empty() {
            values[k] = Some(defined.iter().sum::<f64>() / defined.len() as f64);
        }
    }
    Ok(DiagnosticCurve {
        centers: bins.centers(),
        values,
        draws,
        counts,
    })
}

/// Mean squared prediction error over the masked-in cells.
pub fn mspe(predicted: &[f64], truth: &[f64], mask: &[bool]) -> Result<f64> {
    if predicted.len() != truth.len() || mask.len() != truth.len() {
        return Err(Error::DimensionMismatch("prediction, truth, and mask lengths differ".into()));
    }
    let (sum, n) = predicted
        .iter()
        .zip(truth)
        .zip(mask)
        .filter(|(_, m)| **m)
        .fold((0.0, 0usize), |(s, n), ((p, t), _)| (s + (p - t).powi(2), n + 1));
    if n == 0 {
        return Err(Error::Data("mask selects no cells".into()));
    }
    Ok(sum / n as f64)
}

/// Hold-out predictive scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveScores {
    /// Squared correlation of predicted and observed.
    pub r2: f64,
    pub rmspe: f64,
    pub coverage: f64,
    pub n: usize,
}

pub const DEFAULT_INTERVAL_LEVEL: f64 = 0.90;

pub fn predictive_scores(
    mean: &[f64],
    sd: &[f64],
    observed: &[f64],
    level: f64,
) -> Result<PredictiveScores> {
    let n = observed.len();
    if mean.len() != n || sd.len() != n {
        return Err(Error::DimensionMismatch("prediction and observation lengths differ".into()));
    }
    if n == 0 {
        return Err(Error::Data("no held-out observations".into()));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(0.5 + 0.5 * level);
    let nf = n as f64;
    let mp = mean.iter().sum::<f64>() / nf;
    let mo = observed.iter().sum::<f64>() / nf;
    let spp: f64 = mean.iter().map(|p| (p - mp).powi(2)).sum();
    let soo: f64 = observed.iter().map(|o| (o - mo).powi(2)).sum();
    let spo: f64 = mean.iter().zip(observed).map(|(p, o)| (p - mp) * (o - mo)).sum();
    let r2 = if spp > 0.0 && soo > 0.0 { spo * spo / (spp * soo) } else { 0.0 };
    let rmspe = (mean.iter().zip(observed).map(|(p, o)| (p - o).powi(2)).sum::<f64>() / nf).sqrt();
    let covered = (0..n)
        .filter(|&i| (observed[i] - mean[i]).abs() <= z * sd[i])
        .count();
    Ok(PredictiveScores {
        r2,
        rmspe,
        coverage: covered as f64 / nf,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mspe_of_offset_is_square() {
        let t = [1.0, 2.0, 3.0];
        let p: Vec<f64> = t.iter().map(|x| x + 0.5).collect();
        assert_eq!(mspe(&t, &t, &[true; 3]).unwrap(), 0.0);
        assert!((mspe(&p, &t, &[true; 3]).unwrap() - 0.25).abs() < 1e-15);
        assert!(mspe(&p, &t, &[false; 3]).is_err());
    }

    #[test]
    fn perfect_and_mean_predictors() {
        let o = [1.0, 3.0, 2.0, 5.0];
        let s = perfect(&o);
        assert!((s.r2 - 1.0).abs() < 1e-15 && s.rmspe == 0.0);
        let m = [2.75; 4];
        let s = predictive_scores(&m, &[1.0; 4], &o, 0.9).unwrap();
        assert_eq!(s.r2, 0.0);
    }

    fn perfect(o: &[f64]) -> PredictiveScores {
        predictive_scores(o, &vec![0.1; o.len()], o, 0.9).unwrap()
    }
}
