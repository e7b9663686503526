use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::theta::{HyperPriors, HyperState, ParamId};
use super::variance::{ObsMeta, ProxyKind};
use crate::error::{Error, Result};
use crate::grid::MappingMatrix;
use crate::mrf::IntrinsicPrecision;
use crate::splines::PriorCovariance;

/// Which likelihoods the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Observation and proxy likelihoods sharing `L`.
    TwoLikelihood,
    /// Observations only, with the proxy as an extra covariate of `L`.
    ProxyAsCovariate,
    /// Observations only.
    NoProxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantFlags {
    pub mode: ModelMode,
    pub include_discrepancy: bool,
    pub fix_kappa: Option<f64>,
    pub fix_beta1: Option<f64>,
    /// Fixed daily instrument error variance; `None` samples it.
    pub fix_sigma2_eps: Option<f64>,
    pub orthogonalize: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        Self {
            mode: ModelMode::TwoLikelihood,
            include_discrepancy: true,
            fix_kappa: None,
            fix_beta1: None,
            fix_sigma2_eps: Some(1.5),
            orthogonalize: false,
        }
    }
}

/// Observation rows: `Y = Z_y b_y + Z_L b_L + P_δ δ + ε`.
#[derive(Debug, Clone)]
pub struct ObservationBlock {
    pub y: Vec<f64>,
    pub meta: Vec<ObsMeta>,
    pub n_delta: usize,
    pub z_y: DMatrix<f64>,
    /// Design of `L` at the observation locations.
    pub z_l: DMatrix<f64>,
}

/// Proxy rows: `A = P_φ φ + Z_a b_a + β₁ P_A Z_L b_L + e`.
#[derive(Debug, Clone)]
pub struct ProxyBlock {
    pub a: Vec<f64>,
    pub kind: ProxyKind,
    /// `P_A Z_L`
    pub z_l: DMatrix<f64>,
    pub z_a: DMatrix<f64>,
}

/// An intrinsic GMRF entering the likelihood through sparse mappings.
#[derive(Debug, Clone)]
pub struct FieldBlock {
    pub prior: IntrinsicPrecision,
    pub precision: ParamId,
    /// Mapping into observation rows (residual field `g` only).
    pub obs_map: Option<MappingMatrix>,
    /// Mapping into proxy rows.
    pub proxy_map: Option<MappingMatrix>,
    /// Whether the proxy rows see `β₁ · field` (true for `g`, false for `φ`).
    pub proxy_scaled_by_beta1: bool,
}

/// Quantities used only after fitting: predicting `L` on the base grid.
#[derive(Debug, Clone)]
pub struct PredictionBlock {
    /// `Z_L` at every base-grid cell.
    pub z_l_grid: DMatrix<f64>,
    /// Base cell → residual-field cell, when `g` is an MRF.
    pub g_map: Option<MappingMatrix>,
    /// Base cell → discrepancy cell averaging, used to put `L` on the `φ` grid.
    pub to_discrepancy: Option<MappingMatrix>,
}

/// Column layout of the extended design `[data | y | L(obs rows) | L(proxy rows) | a | δ]`.
///
/// The `L` columns are split by likelihood so that `β₁` can be applied after
/// the expensive Gram products are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtLayout {
    pub p_y: usize,
    pub p_l: usize,
    pub p_a: usize,
    pub n_delta: usize,
}

impl ExtLayout {
    pub const DATA: usize = 0;
    pub fn y(&self, j: usize) -> usize {
        1 + j
    }
    pub fn l_obs(&self, j: usize) -> usize {
        1 + self.p_y + j
    }
    pub fn l_proxy(&self, j: usize) -> usize {
        1 + self.p_y + self.p_l + j
    }
    pub fn a(&self, j: usize) -> usize {
        1 + self.p_y + 2 * self.p_l + j
    }
    pub fn delta(&self, k: usize) -> usize {
        1 + self.p_y + 2 * self.p_l + self.p_a + k
    }
    pub fn len(&self) -> usize {
        1 + self.p_y + 2 * self.p_l + self.p_a + self.n_delta
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn n_coef(&self) -> usize {
        self.p_y + self.p_l + self.p_a
    }
}

#[derive(Debug, Clone)]
pub struct FusionModelSpec {
    pub obs: ObservationBlock,
    pub proxy: Option<ProxyBlock>,
    /// Discrepancy `φ` (if any) and residual `g` (joint mode).
    pub fields: Vec<FieldBlock>,
    /// Prior over `[b_y, b_L, b_a]`.
    pub coef_prior: PriorCovariance,
    /// Number of smooth variance components in the y, L, and a families.
    pub n_smooth: (usize, usize, usize),
    pub priors: HyperPriors,
    pub variant: VariantFlags,
    pub prediction: Option<PredictionBlock>,
    layout: ExtLayout,
    x_obs: DMatrix<f64>,
    x_proxy: Option<DMatrix<f64>>,
}

impl FusionModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        obs: ObservationBlock,
        proxy: Option<ProxyBlock>,
        fields: Vec<FieldBlock>,
        coef_prior: PriorCovariance,
        n_smooth: (usize, usize, usize),
        priors: HyperPriors,
        variant: VariantFlags,
        prediction: Option<PredictionBlock>,
    ) -> Result<Self> {
        let n = obs.y.len();
        let p_y = obs.z_y.ncols();
        let p_l = obs.z_l.ncols();
        let p_a = proxy.as_ref().map_or(0, |p| p.z_a.ncols());
        if obs.meta.len() != n || obs.z_y.nrows() != n || obs.z_l.nrows() != n {
            return Err(Error::DimensionMismatch(
                "observation vector, metadata, and designs disagree in length".into(),
            ));
        }
        for m in &obs.meta {
            m.counts.subsample_factor()?;
            if let Some(k) = m.site_effect {
                if k >= obs.n_delta {
                    return Err(Error::Data(format!("site effect index {k} out of range")));
                }
            }
        }
        if coef_prior.len() != p_y + p_l + p_a {
            return Err(Error::DimensionMismatch(format!(
                "coefficient prior covers {} columns, design has {}",
                coef_prior.len(),
                p_y + p_l + p_a
            )));
        }
        if coef_prior.n_components() > n_smooth.0 + n_smooth.1 + n_smooth.2 {
            return Err(Error::Config("coefficient prior references missing variance components".into()));
        }
        if let Some(p) = &proxy {
            let na = p.a.len();
            if p.z_l.nrows() != na || p.z_a.nrows() != na || p.z_l.ncols() != p_l {
                return Err(Error::DimensionMismatch("proxy designs disagree with proxy data".into()));
            }
            if variant.mode != ModelMode::TwoLikelihood {
                return Err(Error::Config("proxy rows given for a single-likelihood model".into()));
            }
        } else if variant.mode == ModelMode::TwoLikelihood {
            return Err(Error::Config("two-likelihood model needs proxy data".into()));
        }
        for f in &fields {
            let m = f.prior.dim();
            if let Some(map) = &f.obs_map {
                if map.nrows() != n || map.ncols() != m {
                    return Err(Error::DimensionMismatch("field observation map shape".into()));
                }
            }
            match (&f.proxy_map, &proxy) {
                (Some(map), Some(p)) => {
                    if map.nrows() != p.a.len() || map.ncols() != m {
                        return Err(Error::DimensionMismatch("field proxy map shape".into()));
                    }
                }
                (Some(_), None) => {
                    return Err(Error::Config("field maps into proxy rows but there is no proxy".into()))
                }
                _ => {}
            }
        }
        let layout = ExtLayout {
            p_y,
            p_l,
            p_a,
            n_delta: obs.n_delta,
        };
        let mut x_obs = DMatrix::zeros(n, layout.len());
        for i in 0..n {
            x_obs[(i, ExtLayout::DATA)] = obs.y[i];
            for j in 0..p_y {
                x_obs[(i, layout.y(j))] = obs.z_y[(i, j)];
            }
            for j in 0..p_l {
                x_obs[(i, layout.l_obs(j))] = obs.z_l[(i, j)];
            }
            if let Some(k) = obs.meta[i].site_effect {
                x_obs[(i, layout.delta(k))] = 1.0;
            }
        }
        let x_proxy = proxy.as_ref().map(|p| {
            let na = p.a.len();
            let mut x = DMatrix::zeros(na, layout.len());
            for i in 0..na {
                x[(i, ExtLayout::DATA)] = p.a[i];
                for j in 0..p_l {
                    x[(i, layout.l_proxy(j))] = p.z_l[(i, j)];
                }
                for j in 0..p_a {
                    x[(i, layout.a(j))] = p.z_a[(i, j)];
                }
            }
            x
        });
        Ok(Self {
            obs,
            proxy,
            fields,
            coef_prior,
            n_smooth,
            priors,
            variant,
            prediction,
            layout,
            x_obs,
            x_proxy,
        })
    }

    pub fn layout(&self) -> ExtLayout {
        self.layout
    }

    pub(crate) fn x_obs(&self) -> &DMatrix<f64> {
        &self.x_obs
    }

    pub(crate) fn x_proxy(&self) -> Option<&DMatrix<f64>> {
        self.x_proxy.as_ref()
    }

    pub fn n_obs(&self) -> usize {
        self.obs.y.len()
    }

    pub fn n_proxy(&self) -> usize {
        self.proxy.as_ref().map_or(0, |p| p.a.len())
    }

    /// Whether any field couples observation rows (joint `{g, φ}` integration).
    pub fn is_joint(&self) -> bool {
        self.fields.iter().any(|f| f.obs_map.is_some())
    }

    pub fn discrepancy(&self) -> Option<&FieldBlock> {
        self.fields.iter().find(|f| f.precision == ParamId::Kappa)
    }

    /// Parameters moved by the sampler, in a fixed order.
    pub fn free_params(&self) -> Vec<ParamId> {
        let mut out = Vec::new();
        let has_proxy = self.proxy.is_some();
        if has_proxy && self.variant.fix_beta1.is_none() {
            out.push(ParamId::Beta1);
        }
        if self.discrepancy().is_some() && self.variant.fix_kappa.is_none() {
            out.push(ParamId::Kappa);
        }
        if self.fields.iter().any(|f| f.precision == ParamId::KappaG) {
            out.push(ParamId::KappaG);
        }
        let any_sub = self
            .obs
            .meta
            .iter()
            .any(|m| m.counts.subsample_factor().is_ok_and(|k| k > 0.0));
        if any_sub {
            out.push(ParamId::Sigma2Sub);
        }
        if self.obs.n_delta > 0 || self.obs.meta.iter().any(|m| m.site_effect.is_none()) {
            out.push(ParamId::Sigma2Delta);
        }
        if self.variant.fix_sigma2_eps.is_none() {
            out.push(ParamId::Sigma2Eps);
        }
        if let Some(p) = &self.proxy {
            out.push(ParamId::Sigma2A);
            if let ProxyKind::CountWeighted(c) = &p.kind {
                if c.iter().any(|c| c.n < c.n_month) {
                    out.push(ParamId::Sigma2Alpha);
                }
            }
        }
        out.extend((0..self.n_smooth.0).map(ParamId::SmoothY));
        out.extend((0..self.n_smooth.1).map(ParamId::SmoothL));
        out.extend((0..self.n_smooth.2).map(ParamId::SmoothA));
        out
    }

    /// Parameters whose change invalidates the cached field integration.
    pub(crate) fn coupled_params(&self) -> Vec<ParamId> {
        let mut out = vec![ParamId::Kappa, ParamId::KappaG, ParamId::Sigma2A, ParamId::Sigma2Alpha];
        if self.is_joint() {
            out.extend([
                ParamId::Beta1,
                ParamId::Sigma2Sub,
                ParamId::Sigma2Delta,
                ParamId::Sigma2Eps,
            ]);
        }
        out
    }

    /// Applies the fixed values from the variant flags.
    pub fn apply_fixed(&self, theta: &mut HyperState) {
        if let Some(k) = self.variant.fix_kappa {
            theta.kappa = k;
        }
        if let Some(b) = self.variant.fix_beta1 {
            theta.beta1 = b;
        }
        if let Some(e) = self.variant.fix_sigma2_eps {
            theta.sigma2_eps = e;
        }
        if self.proxy.is_none() {
            theta.beta1 = 0.0;
        }
    }

    /// A neutral starting state scaled to the data.
    pub fn default_state(&self) -> HyperState {
        let var = |v: &[f64]| {
            let n = v.len().max(1) as f64;
            let m = v.iter().sum::<f64>() / n;
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).max(1e-6)
        };
        let vy = var(&self.obs.y);
        let va = self.proxy.as_ref().map_or(1.0, |p| var(&p.a));
        let mut t = HyperState {
            beta1: if self.proxy.is_some() { 0.5 } else { 0.0 },
            sigma2_sub: 0.5 * vy,
            sigma2_delta: 0.25 * vy,
            sigma2_eps: 1.5,
            sigma2_a: 0.25 * va,
            sigma2_alpha: 0.25 * va,
            smooth_y: vec![1.0; self.n_smooth.0],
            smooth_l: vec![1.0; self.n_smooth.1],
            smooth_a: vec![1.0; self.n_smooth.2],
            kappa: 1.0,
            kappa_g: 1.0,
            delta: vec![0.0; self.obs.n_delta],
        };
        self.apply_fixed(&mut t);
        t
    }
}
