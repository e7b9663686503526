use serde::{Deserialize, Serialize};

use super::theta::HyperState;
use crate::error::{Error, Result};

/// Daily sample counts behind one monthly average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DayCounts {
    pub n: u32,
    pub n_month: u32,
}

impl DayCounts {
    pub fn full(n_month: u32) -> Self {
        Self { n: n_month, n_month }
    }

    /// `k(n) = 1/n − 1/n_month`, the variance factor of a subsampled average.
    pub fn subsample_factor(&self) -> Result<f64> {
        if self.n == 0 || self.n > self.n_month {
            return Err(Error::Data(format!(
                "daily count {} must be in 1..={}",
                self.n, self.n_month
            )));
        }
        Ok(1.0 / self.n as f64 - 1.0 / self.n_month as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsMeta {
    pub counts: DayCounts,
    /// Index into δ for monitors sharing a site; `None` integrates the site effect.
    pub site_effect: Option<usize>,
}

/// Diagonal of `V_Y`: `σ²_ε/n_i + k(n_i)σ²_sub`, plus `σ²_δ` for monitors
/// whose site effect is integrated out.
pub fn obs_variance(theta: &HyperState, meta: &[ObsMeta]) -> Result<Vec<f64>> {
    meta.iter()
        .map(|m| {
            let k = m.counts.subsample_factor()?;
            let mut v = theta.sigma2_eps / m.counts.n as f64 + k * theta.sigma2_sub;
            if m.site_effect.is_none() {
                v += theta.sigma2_delta;
            }
            Ok(v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "counts")]
pub enum ProxyKind {
    /// Model output available every day: `V_A = σ²_A I`.
    Homoscedastic,
    /// Retrieval averages with per-cell counts: `σ²_A + k(n_i)σ²_α`.
    CountWeighted(Vec<DayCounts>),
}

pub fn proxy_variance(theta: &HyperState, n_cells: usize, kind: &ProxyKind) -> Result<Vec<f64>> {
    match kind {
        ProxyKind::Homoscedastic => Ok(vec![theta.sigma2_a; n_cells]),
        ProxyKind::CountWeighted(counts) => {
            if counts.len() != n_cells {
                return Err(Error::Data(format!(
                    "{} retrieval counts for {n_cells} proxy cells",
                    counts.len()
                )));
            }
            counts
                .iter()
                .map(|c| Ok(theta.sigma2_a + c.subsample_factor()? * theta.sigma2_alpha))
                .collect()
        }
    }
}
