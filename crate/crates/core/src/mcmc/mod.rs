//! Adaptive blocked Metropolis over the hyperparameters, with Gibbs updates
//! of the site effects and offline draws of the latent fields.

mod adaptive;
mod ess;
mod init;

pub use adaptive::{
    acceptance_probability, run_adaptive, AdaptConfig, AdaptiveRun, BlockProposal, Target,
};
pub use ess::{effective_sample_size, mcse, Ess, MIN_TRACE};
pub use init::grid_search_start;

use std::collections::BTreeMap;

use log::{debug, warn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    evaluate_with, latent_means, latent_surface, orthogonalize, sample_delta,
    sample_latents_offline, surface_on_discrepancy_grid, Family, FusionModelSpec, HyperState,
    LatentDraws, ParamId, PosteriorEvaluator, SurfaceSummary,
};

/// How the free parameters are grouped into Metropolis blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BlockScheme {
    /// `{β₁, κ, κ_g}`, observation variances, proxy variances, smooth variances.
    #[default]
    Families,
    Single,
    Individual,
    /// Named groups; parameters not listed get a block each.
    Custom(Vec<Vec<String>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub burn_in: usize,
    pub post_burn: usize,
    pub thin: usize,
    /// Latent fields are drawn every this many post-burn-in iterations.
    pub latent_stride: usize,
    pub blocks: BlockScheme,
    pub adapt: AdaptConfig,
    pub seed: u64,
    /// Parameters held at their starting values.
    pub hold: Vec<String>,
    /// Starting values by parameter name.
    pub initial: BTreeMap<String, f64>,
    pub init_grid_points: usize,
    pub init_passes: usize,
    /// Keep every latent draw (needed for M(d)); summaries are always kept.
    pub keep_latents: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            burn_in: 10_000,
            post_burn: 25_000,
            thin: 10,
            latent_stride: 10,
            blocks: BlockScheme::Families,
            adapt: AdaptConfig::default(),
            seed: 1,
            hold: Vec::new(),
            initial: BTreeMap::new(),
            init_grid_points: 9,
            init_passes: 2,
            keep_latents: true,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.latent_stride == 0 {
            return Err(Error::Config("thin and latent_stride must be positive".into()));
        }
        if !self.post_burn.is_multiple_of(self.thin) {
            return Err(Error::Config(format!(
                "thin {} does not divide post_burn {}",
                self.thin, self.post_burn
            )));
        }
        if self.post_burn == 0 {
            return Err(Error::Config("post_burn must be positive".into()));
        }
        Ok(())
    }
}

/// A latent draw with the state it was drawn at.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedLatent {
    pub theta: HyperState,
    pub draw: LatentDraws,
    /// Conditional means given θ (Rao-Blackwellized).
    pub mean: LatentDraws,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub param_names: Vec<String>,
    /// Natural-scale values of the free parameters, one row per retained draw.
    pub theta_trace: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub delta_trace: Vec<Vec<f64>>,
    pub latents: Vec<RecordedLatent>,
    pub blocks: Vec<Vec<String>>,
    pub acceptance: Vec<f64>,
    pub post_burn_acceptance: Vec<f64>,
    pub ess: Vec<Ess>,
    /// Posterior summary of `L` on the base grid, when the model has one.
    pub surface: Option<SurfaceSummary>,
    pub numeric_rejections: usize,
    pub initial_state: HyperState,
}

impl ChainOutput {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.param_names.iter().position(|n| n == name)?;
        Some(self.theta_trace.iter().map(|r| r[k]).collect())
    }

    pub fn posterior_mean(&self, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        Some(c.iter().sum::<f64>() / c.len().max(1) as f64)
    }
}

fn param_by_name(params: &[ParamId], name: &str) -> Result<ParamId> {
    params
        .iter()
        .copied()
        .find(|p| p.name() == name)
        .ok_or_else(|| Error::Config(format!("unknown or fixed parameter '{name}'")))
}

fn build_blocks(scheme: &BlockScheme, params: &[ParamId]) -> Result<Vec<Vec<usize>>> {
    let idx = |p: ParamId| params.iter().position(|q| *q == p).expect("listed parameter");
    let blocks: Vec<Vec<usize>> = match scheme {
        BlockScheme::Single => vec![(0..params.len()).collect()],
        BlockScheme::Individual => (0..params.len()).map(|i| vec![i]).collect(),
        BlockScheme::Families => {
            let mut by: BTreeMap<Family, Vec<usize>> = BTreeMap::new();
            for &p in params {
                by.entry(p.family()).or_default().push(idx(p));
            }
            by.into_values().collect()
        }
        BlockScheme::Custom(groups) => {
            let mut used = vec![false; params.len()];
            let mut out = Vec::new();
            for g in groups {
                let mut b = Vec::new();
                for name in g {
                    let i = idx(param_by_name(params, name)?);
                    if used[i] {
                        return Err(Error::Config(format!("parameter '{name}' is in two blocks")));
                    }
                    used[i] = true;
                    b.push(i);
                }
                if !b.is_empty() {
                    out.push(b);
                }
            }
            out.extend((0..params.len()).filter(|i| !used[*i]).map(|i| vec![i]));
            out
        }
    };
    Ok(blocks.into_iter().filter(|b| !b.is_empty()).collect())
}

/// Sampling-scale target over the moving parameters of a fusion model.
struct FusionTarget<'a, 'b> {
    eval: &'b mut PosteriorEvaluator<'a>,
    free: Vec<ParamId>,
    moving: Vec<ParamId>,
    theta: HyperState,
    numeric_rejections: usize,
}

impl FusionTarget<'_, '_> {
    fn state_at(&self, x: &[f64]) -> HyperState {
        let mut t = self.theta.clone();
        for (id, v) in self.moving.iter().zip(x) {
            t.set(*id, id.from_sampling(*v));
        }
        t
    }

    fn jacobian(&self, t: &HyperState) -> f64 {
        self.free
            .iter()
            .filter(|id| id.log_scale())
            .map(|id| id.to_sampling(t.get(*id)))
            .sum()
    }

    fn log_density_at(&mut self, t: &HyperState) -> Result<f64> {
        match self.eval.log_posterior(t) {
            Ok(lp) => Ok(lp + if lp.is_finite() { self.jacobian(t) } else { 0.0 }),
            Err(e @ Error::NonFinite(_)) => Err(e),
            Err(e) => {
                self.numeric_rejections += 1;
                debug!("proposal rejected: {e}");
                Ok(f64::NEG_INFINITY)
            }
        }
    }
}

/// Runs one chain on the marginal posterior of a fusion model.
pub fn run_chain<R: Rng + ?Sized>(
    spec: &FusionModelSpec,
    config: &ChainConfig,
    rng: &mut R,
) -> Result<ChainOutput> {
    config.validate()?;
    let free = spec.free_params();
    let mut theta = spec.default_state();
    for (name, v) in &config.initial {
        let id = param_by_name(&free, name)?;
        theta.set(id, *v);
    }
    let held: Vec<ParamId> = config
        .hold
        .iter()
        .map(|n| param_by_name(&free, n))
        .collect::<Result<_>>()?;
    let moving: Vec<ParamId> = free.iter().copied().filter(|p| !held.contains(p)).collect();

    let mut eval = PosteriorEvaluator::new(spec);
    if !eval.log_posterior(&theta)?.is_finite() {
        return Err(Error::Config("initial state has zero posterior density".into()));
    }
    let (start, sd) = grid_search_start(
        &mut eval,
        theta,
        &moving,
        &free,
        config.init_grid_points,
        config.init_passes,
    )?;
    theta = start;
    if spec.obs.n_delta > 0 {
        if let Some(ev) = eval.evaluate(&theta)? {
            theta.delta = crate::model::delta_conditional(&ev.b, theta.sigma2_delta)?
                .0
                .iter()
                .copied()
                .collect();
        }
    }
    let initial_state = theta.clone();

    let blocks = build_blocks(&config.blocks, &moving)?;
    let mut x: Vec<f64> = moving.iter().map(|id| id.to_sampling(theta.get(*id))).collect();
    let mut props: Vec<BlockProposal> = blocks
        .iter()
        .map(|b| {
            let c: Vec<f64> = b.iter().map(|&i| x[i]).collect();
            let s: Vec<f64> = b.iter().map(|&i| sd[i]).collect();
            BlockProposal::new(b.clone(), &c, &s)
        })
        .collect();

    let mut target = FusionTarget {
        eval: &mut eval,
        free: free.clone(),
        moving: moving.clone(),
        theta,
        numeric_rejections: 0,
    };
    let mut lp = target.log_density_at(&target.theta.clone())?;
    if !lp.is_finite() {
        return Err(Error::Numeric("starting state has zero posterior density".into()));
    }

    let total = config.burn_in + config.post_burn;
    let mut theta_trace = Vec::with_capacity(config.post_burn / config.thin);
    let mut lp_trace = Vec::with_capacity(config.post_burn / config.thin);
    let mut delta_trace = Vec::new();
    let mut latents = Vec::new();
    let mut surface = spec.prediction.as_ref().map(|_| SurfaceSummary::default());
    for it in 0..total {
        if it == config.burn_in {
            props.iter_mut().for_each(BlockProposal::reset_recent);
        }
        for p in props.iter_mut() {
            let y = p.propose(&x, rng);
            let t = target.state_at(&y);
            let lq = target.log_density_at(&t)?;
            let alpha = acceptance_probability(lp, lq);
            let accept = rng.random::<f64>() < alpha;
            if accept {
                x = y;
                lp = lq;
                target.theta = t;
            }
            p.record(accept);
            let adapt = &config.adapt;
            if adapt.enabled && !(adapt.freeze_after_burn_in && it >= config.burn_in) {
                p.adapt(adapt, &x, alpha);
            }
        }
        if spec.obs.n_delta > 0 {
            let current = target.theta.clone();
            let ev = target
                .eval
                .evaluate(&current)?
                .ok_or_else(|| Error::Numeric("current state left the support".into()))?;
            target.theta.delta = sample_delta(&ev.b, current.sigma2_delta, rng)?;
            let t = target.theta.clone();
            lp = target.log_density_at(&t)?;
        }
        if it < config.burn_in {
            continue;
        }
        let k = it - config.burn_in;
        if k.is_multiple_of(config.thin) {
            theta_trace.push(free.iter().map(|id| target.theta.get(*id)).collect::<Vec<_>>());
            lp_trace.push(lp);
            delta_trace.push(target.theta.delta.clone());
        }
        if k.is_multiple_of(config.latent_stride) {
            let t = target.theta.clone();
            let coupled = target.eval.coupled(&t)?;
            let ev = evaluate_with(spec, &t, coupled)?;
            let mut draw = sample_latents_offline(spec, &t, coupled, &ev.b, k, rng)?;
            let mut mean = latent_means(spec, &t, coupled, &ev.b)?;
            mean.index = k;
            if let Some(s) = surface.as_mut() {
                let l_draw = latent_surface(spec, &draw)?;
                let l_mean = latent_surface(spec, &mean)?;
                if spec.variant.orthogonalize {
                    for (d, l) in [(&mut draw, &l_draw), (&mut mean, &l_mean)] {
                        if let Some(phi) = d.phi.as_ref() {
                            let lg = surface_on_discrepancy_grid(spec, l)?;
                            let o = orthogonalize(phi, &lg)?;
                            d.phi = Some(o.phi);
                            d.beta1 += o.slope;
                            d.proxy_offset += o.intercept;
                        }
                    }
                }
                s.add(&l_draw, &l_mean);
            }
            if config.keep_latents {
                latents.push(RecordedLatent { theta: t, draw, mean });
            }
        }
    }
    let numeric_rejections = target.numeric_rejections;
    if numeric_rejections > 0 {
        warn!("{numeric_rejections} proposals rejected after numerical failures");
    }
    let ess = (0..free.len())
        .map(|j| {
            let col: Vec<f64> = theta_trace.iter().map(|r| r[j]).collect();
            effective_sample_size(&col).unwrap_or(Ess { value: f64::NAN, constant: false })
        })
        .collect();
    Ok(ChainOutput {
        param_names: free.iter().map(ParamId::name).collect(),
        theta_trace,
        log_posterior: lp_trace,
        delta_trace,
        latents,
        blocks: blocks
            .iter()
            .map(|b| b.iter().map(|&i| moving[i].name()).collect())
            .collect(),
        acceptance: props.iter().map(BlockProposal::acceptance_rate).collect(),
        post_burn_acceptance: props.iter().map(BlockProposal::recent_acceptance_rate).collect(),
        ess,
        surface,
        numeric_rejections,
        initial_state,
    })
}
