//! Fitting a dataset end to end and predicting from the fit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::build::{build_model, BuiltModel, ModelConfig};
use crate::data::{Dataset, Observation, Table};
use crate::diagnostics::{discrepancy_diagnostic, Bins, DiagnosticCurve, PairBudget};
use crate::error::{Error, Result};
use crate::grid::RegularGrid;
use crate::mcmc::{run_chain, ChainConfig, ChainOutput};
use crate::model::{latent_surface, linear_predictor, obs_variance, surface_on_discrepancy_grid, ObsMeta, DayCounts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticConfig {
    /// Bin edges; empty means unit lags up to half the grid diagonal.
    pub bin_edges: Vec<f64>,
    pub budget: PairBudget,
    pub enabled: bool,
}

impl Default for DiagnosticConfig {
    fn default() -> Self {
        Self {
            bin_edges: Vec::new(),
            budget: PairBudget::default(),
            enabled: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub model: BuiltModel,
    pub chain: ChainOutput,
    /// Posterior mean and sd of `L` on the base grid.
    pub surface_mean: Vec<f64>,
    pub surface_sd: Vec<f64>,
    pub diagnostic: Option<DiagnosticCurve>,
}

pub fn fit(
    data: &Dataset,
    model_cfg: &ModelConfig,
    chain_cfg: &ChainConfig,
    diag_cfg: &DiagnosticConfig,
) -> Result<FitOutput> {
    let model = build_model(data, model_cfg)?;
    fit_built(model, chain_cfg, diag_cfg)
}

pub fn fit_built(model: BuiltModel, chain_cfg: &ChainConfig, diag_cfg: &DiagnosticConfig) -> Result<FitOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(chain_cfg.seed);
    let chain = run_chain(&model.spec, chain_cfg, &mut rng)?;
    let summary = chain
        .surface
        .as_ref()
        .ok_or_else(|| Error::Config("model has no prediction grid".into()))?;
    let surface_mean = summary.mean();
    let surface_sd = summary.sd();
    let diagnostic = match (&model.discrepancy_grid, diag_cfg.enabled && !chain.latents.is_empty()) {
        (Some(g), true) => Some(diagnostic_curve(&model, &chain, g, diag_cfg)?),
        _ => None,
    };
    Ok(FitOutput {
        model,
        chain,
        surface_mean,
        surface_sd,
        diagnostic,
    })
}

fn diagnostic_curve(
    model: &BuiltModel,
    chain: &ChainOutput,
    grid: &RegularGrid,
    cfg: &DiagnosticConfig,
) -> Result<DiagnosticCurve> {
    let bins = if cfg.bin_edges.is_empty() {
        Bins::unit_lags(grid)
    } else {
        Bins { edges: cfg.bin_edges.clone() }
    };
    let mut phi = Vec::new();
    let mut l = Vec::new();
    let mut beta1 = Vec::new();
    for r in &chain.latents {
        let Some(p) = r.draw.phi.as_ref() else { continue };
        let surface = latent_surface(&model.spec, &r.draw)?;
        l.push(surface_on_discrepancy_grid(&model.spec, &surface)?);
        phi.push(p.clone());
        beta1.push(r.draw.beta1);
    }
    discrepancy_diagnostic(grid, grid.land_mask(), &phi, &l, &beta1, &bins, &cfg.budget)
}

/// Posterior predictive mean and sd of new observations.
///
/// The mean averages the conditional means over the recorded states; the
/// variance adds the spread of the drawn linear predictors to the average
/// observation-error variance.
pub fn predict_observations(
    fit: &FitOutput,
    grid: &RegularGrid,
    grid_covariates: &Table,
    obs: &[Observation],
    obs_covariates: &Table,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if fit.chain.latents.is_empty() {
        return Err(Error::Config("prediction needs recorded latent draws (keep_latents)".into()));
    }
    let (z_y, z_l, cells) = fit.model.observation_design(grid, grid_covariates, obs, obs_covariates)?;
    // new sites carry an integrated site effect
    let meta: Vec<ObsMeta> = obs
        .iter()
        .map(|o| ObsMeta { counts: DayCounts { n: o.n_days, n_month: o.n_month }, site_effect: None })
        .collect();
    let n = obs.len();
    let mut mean = vec![0.0; n];
    let mut sum = vec![0.0; n];
    let mut sum_sq = vec![0.0; n];
    let mut noise = vec![0.0; n];
    let spec = &fit.model.spec;
    for r in &fit.chain.latents {
        let mut m = linear_predictor(spec, &z_y, &z_l, &r.mean.b)?;
        let mut d = linear_predictor(spec, &z_y, &z_l, &r.draw.b)?;
        if let Some(g) = &r.mean.g {
            m.iter_mut().zip(&cells).for_each(|(v, &c)| *v += g[c]);
        }
        if let Some(g) = &r.draw.g {
            d.iter_mut().zip(&cells).for_each(|(v, &c)| *v += g[c]);
        }
        let v = obs_variance(&r.theta, &meta)?;
        for i in 0..n {
            mean[i] += m[i];
            sum[i] += d[i];
            sum_sq[i] += d[i] * d[i];
            noise[i] += v[i];
        }
    }
    let k = fit.chain.latents.len() as f64;
    let sd = (0..n)
        .map(|i| {
            let md = sum[i] / k;
            let spread = (sum_sq[i] / k - md * md).max(0.0);
            (spread + noise[i] / k).sqrt()
        })
        .collect();
    Ok((mean.iter().map(|s| s / k).collect(), sd))
}

/// Cross-validated predictive scores, refitting on each fold's complement.
pub fn cross_validate_dataset(
    data: &Dataset,
    model_cfg: &ModelConfig,
    chain_cfg: &ChainConfig,
    folds: usize,
    seed: u64,
    exec: crate::par::Execution,
) -> Result<crate::diagnostics::CvResult> {
    let sites: Vec<usize> = data.observations.iter().map(|o| o.site).collect();
    let observed: Vec<f64> = data.observations.iter().map(|o| o.value).collect();
    let chain_cfg = ChainConfig { keep_latents: true, ..chain_cfg.clone() };
    let diag = DiagnosticConfig { enabled: false, ..DiagnosticConfig::default() };
    crate::diagnostics::cross_validate(&sites, &observed, folds, seed, exec, |k, train, test| {
        let cfg = ChainConfig { seed: chain_cfg.seed.wrapping_add(k as u64), ..chain_cfg.clone() };
        let f = fit(&data.subset(train), model_cfg, &cfg, &diag)?;
        let held: Vec<Observation> = test.iter().map(|&i| data.observations[i].clone()).collect();
        let cov = data.obs_covariates.select_rows(test);
        predict_observations(&f, &data.grid, &data.grid_covariates, &held, &cov)
    })
}
