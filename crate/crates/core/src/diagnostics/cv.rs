use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{predictive_scores, PredictiveScores, DEFAULT_INTERVAL_LEVEL};
use crate::error::{Error, Result};
use crate::par::{self, Execution};

/// Held-out observation rows per fold. Sites never straddle folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub test_rows: Vec<Vec<usize>>,
    /// Folds merged into a neighbour for holding fewer than two sites.
    pub merged: usize,
}

impl FoldPlan {
    pub fn n_folds(&self) -> usize {
        self.test_rows.len()
    }

    /// Complement of fold `k` among `n` observations.
    pub fn train_rows(&self, k: usize, n: usize) -> Vec<usize> {
        let mut held = vec![false; n];
        for &i in &self.test_rows[k] {
            held[i] = true;
        }
        (0..n).filter(|&i| !held[i]).collect()
    }
}

/// Shuffle the distinct sites and deal them round-robin into `folds` groups.
pub fn assign_site_folds(site_of_obs: &[usize], folds: usize, seed: u64) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {folds}")));
    }
    let mut sites: Vec<usize> = site_of_obs.to_vec();
    sites.sort_unstable();
    sites.dedup();
    if sites.len() < 2 {
        return Err(Error::Data("cross-validation needs at least two sites".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sites.shuffle(&mut rng);
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); folds.min(sites.len())];
    let ng = groups.len();
    for (i, s) in sites.into_iter().enumerate() {
        groups[i % ng].push(s);
    }
    let mut merged = 0;
    let mut k = 0;
    while k < groups.len() {
        if groups[k].len() < 2 && groups.len() > 1 {
            let small = groups.remove(k);
            let target = if k < groups.len() { k } else { k - 1 };
            log::warn!(
                "fold {} holds {} site(s); merged into a neighbouring fold",
                k + merged,
                small.len()
            );
            groups[target].extend(small);
            merged += 1;
        } else {
            k += 1;
        }
    }
    let test_rows = groups
        .iter()
        .map(|g| {
            let mut rows: Vec<usize> = (0..site_of_obs.len())
                .filter(|&i| g.contains(&site_of_obs[i]))
                .collect();
            rows.sort_unstable();
            rows
        })
        .collect();
    Ok(FoldPlan { test_rows, merged })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub plan: FoldPlan,
    pub per_fold: Vec<PredictiveScores>,
    pub pooled: PredictiveScores,
    /// Predictive mean and sd for every observation, from the fold that held it out.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Refit on each fold's complement and score the held-out predictions.
///
/// `fit_predict(train, test)` returns predictive means and sds for the `test` rows.
pub fn cross_validate<F>(
    site_of_obs: &[usize],
    observed: &[f64],
    folds: usize,
    seed: u64,
    exec: Execution,
    fit_predict: F,
) -> Result<CvResult>
where
    F: Fn(usize, &[usize], &[usize]) -> Result<(Vec<f64>, Vec<f64>)> + Sync + Send,
{
    let n = observed.len();
    if site_of_obs.len() != n {
        return Err(Error::DimensionMismatch("site ids and observations differ in length".into()));
    }
    let plan = assign_site_folds(site_of_obs, folds, seed)?;
    let results = par::map_range(exec, plan.n_folds(), |k| {
        let train = plan.train_rows(k, n);
        fit_predict(k, &train, &plan.test_rows[k])
    });
    let mut mean = vec![f64::NAN; n];
    let mut sd = vec![f64::NAN; n];
    let mut per_fold = Vec::with_capacity(plan.n_folds());
    for (k, r) in results.into_iter().enumerate() {
        let (m, s) = r?;
        let rows = &plan.test_rows[k];
        if m.len() != rows.len() || s.len() != rows.len() {
            return Err(Error::DimensionMismatch(format!("fold {k} returned the wrong number of predictions")));
        }
        let obs: Vec<f64> = rows.iter().map(|&i| observed[i]).collect();
        per_fold.push(predictive_scores(&m, &s, &obs, DEFAULT_INTERVAL_LEVEL)?);
        for (j, &i) in rows.iter().enumerate() {
            mean[i] = m[j];
            sd[i] = s[j];
        }
    }
    let pooled = predictive_scores(&mean, &sd, observed, DEFAULT_INTERVAL_LEVEL)?;
    Ok(CvResult { plan, per_fold, pooled, mean, sd })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn co_located_rows_leave_together() {
        let sites = [0, 1, 1, 2, 3, 4, 5, 5, 6, 7];
        let plan = assign_site_folds(&sites, 3, 1).unwrap();
        let mut all: Vec<usize> = plan.test_rows.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        for rows in &plan.test_rows {
            assert!(rows.contains(&1) == rows.contains(&2));
            assert!(rows.contains(&6) == rows.contains(&7));
        }
    }

    #[test]
    fn tiny_folds_are_merged() {
        let sites = [0, 1, 2, 3, 4];
        let plan = assign_site_folds(&sites, 4, 9).unwrap();
        assert!(plan.merged > 0);
        assert!(plan.test_rows.iter().all(|r| r.len() >= 2));
    }

    #[test]
    fn perfect_cv() {
        let obs: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let sites: Vec<usize> = (0..12).collect();
        let r = cross_validate(&sites, &obs, 4, 3, Execution::Sequential, |_, _, test| {
            Ok((test.iter().map(|&i| obs[i]).collect(), vec![0.1; test.len()]))
        })
        .unwrap();
        assert!((r.pooled.r2 - 1.0).abs() < 1e-12);
        assert_eq!(r.pooled.rmspe, 0.0);
        assert_eq!(r.pooled.coverage, 1.0);
    }
}
