use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Diminishing adaptation schedule for the block proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub target_acceptance: f64,
    /// Step size at adaptation step `t` is `(t + 10)^{-exponent}`.
    pub exponent: f64,
    /// Stop adapting once burn-in ends.
    pub freeze_after_burn_in: bool,
    pub enabled: bool,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            target_acceptance: 0.234,
            exponent: 0.6,
            freeze_after_burn_in: false,
            enabled: true,
        }
    }
}

/// Offset of the adaptation clock, so the first updates do not discard the
/// initial covariance.
const SCHEDULE_OFFSET: usize = 10;

/// A log density on an unconstrained coordinate vector.
pub trait Target {
    fn dim(&self) -> usize;
    /// Returns `-∞` outside the support.
    fn log_density(&mut self, x: &[f64]) -> Result<f64>;
}

/// Random-walk proposal for one block, tuned by a stochastic-approximation
/// update of the scale, mean, and covariance.
#[derive(Debug, Clone)]
pub struct BlockProposal {
    pub indices: Vec<usize>,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    log_scale: f64,
    floor: Vec<f64>,
    factor: DMatrix<f64>,
    steps: usize,
    accepted: usize,
    proposed: usize,
    recent_accepted: usize,
    recent_proposed: usize,
}

impl BlockProposal {
    pub fn new(indices: Vec<usize>, center: &[f64], sd: &[f64]) -> Self {
        let d = indices.len();
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(d, sd.iter().map(|s| s * s)));
        let mut out = Self {
            indices,
            mean: DVector::from_column_slice(center),
            cov,
            log_scale: (2.38f64 * 2.38 / d as f64).ln(),
            floor: sd.iter().map(|s| 1e-6 * s * s).collect(),
            factor: DMatrix::zeros(d, d),
            steps: 0,
            accepted: 0,
            proposed: 0,
            recent_accepted: 0,
            recent_proposed: 0,
        };
        out.refactor();
        out
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    fn refactor(&mut self) {
        let d = self.dim();
        let mut c = &self.cov * self.log_scale.exp();
        let jitter = 1e-10 * (c.trace() / d as f64).max(1e-300);
        for _ in 0..8 {
            if let Some(ch) = c.clone().cholesky() {
                self.factor = ch.l();
                return;
            }
            for i in 0..d {
                c[(i, i)] += jitter;
            }
        }
        // fall back to the diagonal
        self.factor = DMatrix::from_fn(d, d, |i, j| if i == j { c[(i, i)].abs().sqrt() } else { 0.0 });
    }

    pub fn propose<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &self.factor * z;
        let mut out = x.to_vec();
        for (k, &i) in self.indices.iter().enumerate() {
            out[i] += step[k];
        }
        out
    }

    pub fn record(&mut self, accepted: bool) {
        self.proposed += 1;
        self.recent_proposed += 1;
        if accepted {
            self.accepted += 1;
            self.recent_accepted += 1;
        }
    }

    /// One adaptation step with acceptance probability `alpha` at the current state `x`.
    pub fn adapt(&mut self, cfg: &AdaptConfig, x: &[f64], alpha: f64) {
        let gamma = ((self.steps + SCHEDULE_OFFSET) as f64).powf(-cfg.exponent);
        self.steps += 1;
        self.log_scale += gamma * (alpha - cfg.target_acceptance);
        self.log_scale = self.log_scale.clamp(-30.0, 30.0);
        let xb = DVector::from_iterator(self.dim(), self.indices.iter().map(|&i| x[i]));
        let diff = &xb - &self.mean;
        self.mean += &diff * gamma;
        self.cov = &self.cov * (1.0 - gamma) + (&diff * diff.transpose()) * gamma;
        for (i, f) in self.floor.iter().enumerate() {
            self.cov[(i, i)] = self.cov[(i, i)].max(*f);
        }
        self.refactor();
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Acceptance since the last call to [`BlockProposal::reset_recent`].
    pub fn recent_acceptance_rate(&self) -> f64 {
        if self.recent_proposed == 0 {
            0.0
        } else {
            self.recent_accepted as f64 / self.recent_proposed as f64
        }
    }

    pub fn reset_recent(&mut self) {
        self.recent_accepted = 0;
        self.recent_proposed = 0;
    }

    /// Current proposal covariance `λΣ`.
    pub fn proposal_covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }
}

/// Metropolis acceptance probability for a log-density difference.
pub fn acceptance_probability(current: f64, proposed: f64) -> f64 {
    if proposed.is_nan() || proposed == f64::NEG_INFINITY {
        return 0.0;
    }
    (proposed - current).min(0.0).exp()
}

/// Output of [`run_adaptive`].
#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub draws: Vec<Vec<f64>>,
    pub acceptance: Vec<f64>,
    /// Acceptance over the post-burn-in iterations.
    pub post_burn_acceptance: Vec<f64>,
}

/// Adaptive blocked random-walk Metropolis on a generic target.
#[allow(clippy::too_many_arguments)]
pub fn run_adaptive<T: Target, R: Rng + ?Sized>(
    target: &mut T,
    x0: &[f64],
    blocks: &[Vec<usize>],
    initial_sd: &[f64],
    burn_in: usize,
    iterations: usize,
    thin: usize,
    adapt: &AdaptConfig,
    rng: &mut R,
) -> Result<AdaptiveRun> {
    let mut x = x0.to_vec();
    let mut lp = target.log_density(&x)?;
    let mut props: Vec<BlockProposal> = blocks
        .iter()
        .map(|b| {
            let c: Vec<f64> = b.iter().map(|&i| x[i]).collect();
            let s: Vec<f64> = b.iter().map(|&i| initial_sd[i]).collect();
            BlockProposal::new(b.clone(), &c, &s)
        })
        .collect();
    let mut draws = Vec::with_capacity(iterations / thin.max(1));
    for it in 0..burn_in + iterations {
        if it == burn_in {
            props.iter_mut().for_each(BlockProposal::reset_recent);
        }
        for p in props.iter_mut() {
            let y = p.propose(&x, rng);
            let lq = target.log_density(&y)?;
            let alpha = acceptance_probability(lp, lq);
            let accept = rng.random::<f64>() < alpha;
            if accept {
                x = y;
                lp = lq;
            }
            p.record(accept);
            if adapt.enabled && !(adapt.freeze_after_burn_in && it >= burn_in) {
                p.adapt(adapt, &x, alpha);
            }
        }
        if it >= burn_in && (it - burn_in).is_multiple_of(thin.max(1)) {
            draws.push(x.clone());
        }
    }
    Ok(AdaptiveRun {
        draws,
        acceptance: props.iter().map(BlockProposal::acceptance_rate).collect(),
        post_burn_acceptance: props.iter().map(BlockProposal::recent_acceptance_rate).collect(),
    })
}
