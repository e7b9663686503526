//! Hyperparameters, their sampling transforms, and their priors.

use serde::{Deserialize, Serialize};

/// Hyperparameter vector θ together with the site effects δ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperState {
    pub beta1: f64,
    /// Daily-subsampling variance of the observation averages.
    pub sigma2_sub: f64,
    /// Site-effect variance: sampled δ for co-located sites, integrated for the rest.
    pub sigma2_delta: f64,
    /// Daily instrument error variance.
    pub sigma2_eps: f64,
    pub sigma2_a: f64,
    /// Retrieval-count variance of proxy averages (count-weighted proxy only).
    pub sigma2_alpha: f64,
    pub smooth_y: Vec<f64>,
    pub smooth_l: Vec<f64>,
    pub smooth_a: Vec<f64>,
    /// Discrepancy field precision.
    pub kappa: f64,
    /// Residual field precision when `g` is an MRF.
    pub kappa_g: f64,
    pub delta: Vec<f64>,
}

impl HyperState {
    pub fn get(&self, id: ParamId) -> f64 {
        match id {
            ParamId::Beta1 => self.beta1,
            ParamId::Sigma2Sub => self.sigma2_sub,
            ParamId::Sigma2Delta => self.sigma2_delta,
            ParamId::Sigma2Eps => self.sigma2_eps,
            ParamId::Sigma2A => self.sigma2_a,
            ParamId::Sigma2Alpha => self.sigma2_alpha,
            ParamId::SmoothY(k) => self.smooth_y[k],
            ParamId::SmoothL(k) => self.smooth_l[k],
            ParamId::SmoothA(k) => self.smooth_a[k],
            ParamId::Kappa => self.kappa,
            ParamId::KappaG => self.kappa_g,
        }
    }

    pub fn set(&mut self, id: ParamId, v: f64) {
        match id {
            ParamId::Beta1 => self.beta1 = v,
            ParamId::Sigma2Sub => self.sigma2_sub = v,
            ParamId::Sigma2Delta => self.sigma2_delta = v,
            ParamId::Sigma2Eps => self.sigma2_eps = v,
            ParamId::Sigma2A => self.sigma2_a = v,
            ParamId::Sigma2Alpha => self.sigma2_alpha = v,
            ParamId::SmoothY(k) => self.smooth_y[k] = v,
            ParamId::SmoothL(k) => self.smooth_l[k] = v,
            ParamId::SmoothA(k) => self.smooth_a[k] = v,
            ParamId::Kappa => self.kappa = v,
            ParamId::KappaG => self.kappa_g = v,
        }
    }

    /// Smooth variance components in coefficient-prior order (y, L, a).
    pub fn smooth_components(&self) -> Vec<f64> {
        self.smooth_y
            .iter()
            .chain(&self.smooth_l)
            .chain(&self.smooth_a)
            .copied()
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamId {
    Beta1,
    Sigma2Sub,
    Sigma2Delta,
    Sigma2Eps,
    Sigma2A,
    Sigma2Alpha,
    SmoothY(usize),
    SmoothL(usize),
    SmoothA(usize),
    Kappa,
    KappaG,
}

/// Parameter family, used for the default Metropolis blocking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Field,
    Observation,
    Proxy,
    Smooth,
}

impl ParamId {
    pub fn name(&self) -> String {
        match self {
            ParamId::Beta1 => "beta1".into(),
            ParamId::Sigma2Sub => "sigma2_sub".into(),
            ParamId::Sigma2Delta => "sigma2_delta".into(),
            ParamId::Sigma2Eps => "sigma2_eps".into(),
            ParamId::Sigma2A => "sigma2_a".into(),
            ParamId::Sigma2Alpha => "sigma2_alpha".into(),
            ParamId::SmoothY(k) => format!("sigma2_b_y{k}"),
            ParamId::SmoothL(k) => format!("sigma2_b_l{k}"),
            ParamId::SmoothA(k) => format!("sigma2_b_a{k}"),
            ParamId::Kappa => "kappa".into(),
            ParamId::KappaG => "kappa_g".into(),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            ParamId::Beta1 | ParamId::Kappa | ParamId::KappaG => Family::Field,
            ParamId::Sigma2Sub | ParamId::Sigma2Delta | ParamId::Sigma2Eps => Family::Observation,
            ParamId::Sigma2A | ParamId::Sigma2Alpha => Family::Proxy,
            ParamId::SmoothY(_) | ParamId::SmoothL(_) | ParamId::SmoothA(_) => Family::Smooth,
        }
    }

    pub fn is_smooth(&self) -> bool {
        self.family() == Family::Smooth
    }

    /// Whether this parameter is a precision rather than a variance.
    pub fn is_precision(&self) -> bool {
        matches!(self, ParamId::Kappa | ParamId::KappaG)
    }

    /// β₁ is sampled on its natural scale, everything else on the log scale.
    pub fn log_scale(&self) -> bool {
        !matches!(self, ParamId::Beta1)
    }

    pub fn to_sampling(&self, v: f64) -> f64 {
        if self.log_scale() {
            v.ln()
        } else {
            v
        }
    }

    pub fn from_sampling(&self, x: f64) -> f64 {
        if self.log_scale() {
            x.exp()
        } else {
            x
        }
    }
}

/// Prior settings: uniform priors on standard deviations and a bounded
/// normal prior on β₁.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperPriors {
    /// Upper bound on every standard deviation (data units).
    pub sd_upper: f64,
    /// Tighter cap on smooth-coefficient standard deviations.
    pub smooth_sd_cap: f64,
    pub beta1_mean: f64,
    pub beta1_sd: f64,
    pub beta1_bound: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        Self {
            sd_upper: 100.0,
            smooth_sd_cap: 10.0,
            beta1_mean: 0.0,
            beta1_sd: 100.0,
            beta1_bound: 500.0,
        }
    }
}

impl HyperPriors {
    /// Log prior density of the sampling-scale coordinate `x` for `id`,
    /// including the Jacobian of the transform, up to a constant.
    /// Returns `-∞` outside the support.
    pub fn log_density(&self, id: ParamId, x: f64) -> f64 {
        if !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        match id {
            ParamId::Beta1 => {
                if x.abs() > self.beta1_bound {
                    return f64::NEG_INFINITY;
                }
                let z = (x - self.beta1_mean) / self.beta1_sd;
                -0.5 * z * z
            }
            _ => {
                let bound = if id.is_smooth() {
                    self.sd_upper.min(self.smooth_sd_cap)
                } else {
                    self.sd_upper
                };
                let log_b2 = 2.0 * bound.ln();
                if id.is_precision() {
                    // sd = κ^{-1/2} ~ U(0, B)  ⇒  p(log κ) ∝ κ^{-1/2}
                    if x <= -log_b2 {
                        return f64::NEG_INFINITY;
                    }
                    -0.5 * x
                } else {
                    // sd = v^{1/2} ~ U(0, B)  ⇒  p(log v) ∝ v^{1/2}
                    if x >= log_b2 {
                        return f64::NEG_INFINITY;
                    }
                    0.5 * x
                }
            }
        }
    }
}
