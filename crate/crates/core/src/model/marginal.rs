//! Exact integration of the intrinsic fields and the regression coefficients.
//!
//! Every quadratic form the marginal posterior needs is a block of the Gram
//! matrix `G = XᵀΣ⁻¹X` of the extended design (see [`ExtLayout`]). The part of
//! `G` that involves the proxy rows is the expensive one and only depends on
//! the field precisions and the proxy variances, so it is cached across
//! proposals that leave those fixed.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::spec::{ExtLayout, FusionModelSpec};
use super::theta::{HyperState, ParamId};
use super::variance::{obs_variance, proxy_variance};
use crate::error::{Error, Result};
use crate::grid::MappingMatrix;
use crate::linalg::dense::{self, DenseCholesky};
use crate::linalg::{factorize, CholeskyFactor, SparseSymmetric};

/// A Gaussian likelihood block `r ~ N(P u, V)` with an intrinsic prior
/// `u ~ N(0, (blockdiag κ_k Q_k)⁻)`, integrated over `u`.
#[derive(Debug, Clone)]
pub struct MarginalizedField {
    vinv: Vec<f64>,
    map: MappingMatrix,
    factor: CholeskyFactor,
    blocks: Vec<(usize, usize)>,
    log_det_half: f64,
}

impl MarginalizedField {
    /// Builds the integration for stacked `fields = [(mapping, Q, κ, rank)]`.
    pub fn new(
        var: &[f64],
        fields: &[(&MappingMatrix, &SparseSymmetric, f64, usize)],
    ) -> Result<Self> {
        let rows = var.len();
        if var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Numeric("likelihood variance must be positive".into()));
        }
        let mut blocks = Vec::with_capacity(fields.len());
        let mut offset = 0;
        let mut prior_trip = Vec::new();
        let mut log_kappa = 0.0;
        let mut map_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for (map, q, kappa, rank) in fields {
            if map.nrows() != rows || map.ncols() != q.dim() {
                return Err(Error::DimensionMismatch("field mapping shape".into()));
            }
            if !(*kappa > 0.0 && kappa.is_finite()) {
                return Err(Error::Numeric(format!("field precision must be positive, got {kappa}")));
            }
            for (i, row) in map_rows.iter_mut().enumerate() {
                row.extend(map.row(i).map(|(c, v)| (c + offset, v)));
            }
            prior_trip.extend(q.iter_lower().map(|(i, j, v)| (i + offset, j + offset, kappa * v)));
            log_kappa += 0.5 * *rank as f64 * kappa.ln();
            blocks.push((offset, q.dim()));
            offset += q.dim();
        }
        let map = MappingMatrix::from_rows(offset, map_rows)?;
        let vinv: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
        let prior = SparseSymmetric::from_triplets(offset, prior_trip)?;
        let prec = map.weighted_gram(&vinv).add_scaled(&prior, 1.0)?;
        let factor = factorize(&prec)?;
        let log_det_half =
            log_kappa + 0.5 * vinv.iter().map(|w| w.ln()).sum::<f64>() - 0.5 * factor.log_det();
        Ok(Self {
            vinv,
            map,
            factor,
            blocks,
            log_det_half,
        })
    }

    /// `log|Σ|^{-1/2}` up to the constant generalized determinants of the `Q_k`.
    pub fn log_det_half(&self) -> f64 {
        self.log_det_half
    }

    pub fn n_rows(&self) -> usize {
        self.vinv.len()
    }

    pub fn field_dim(&self) -> usize {
        self.map.ncols()
    }

    /// Column range `(offset, len)` of each stacked field.
    pub fn blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    /// Factor of `V_u⁻¹ = PᵀV⁻¹P + blockdiag(κ_k Q_k)`.
    pub fn factor(&self) -> &CholeskyFactor {
        &self.factor
    }

    /// `Σ⁻¹x` by Woodbury.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.apply_dense(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(m.as_slice().to_vec())
    }

    pub fn apply_dense(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x.nrows())?;
        let wx = self.scale_rows(x);
        let s = self.factor.solve(&self.map.apply_transpose_dense(&wx))?;
        Ok(wx - self.scale_rows(&self.map.apply_dense(&s)))
    }

    /// `XᵀΣ⁻¹X` without forming `Σ⁻¹`.
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x.nrows())?;
        let wx = self.scale_rows(x);
        let t = self.map.apply_transpose_dense(&wx);
        let s = self.factor.solve(&t)?;
        let mut g = x.transpose() * &wx - t.transpose() * s;
        dense::symmetrize(&mut g);
        Ok(g)
    }

    /// `E[u | r] = V_u PᵀV⁻¹ r`.
    pub fn conditional_mean(&self, r: &[f64]) -> Result<Vec<f64>> {
        self.check_rows(r.len())?;
        let w: Vec<f64> = r.iter().zip(&self.vinv).map(|(a, b)| a * b).collect();
        self.factor.solve_vec(&self.map.apply_transpose(&w))
    }

    /// One draw of `u | r`.
    pub fn sample<R: Rng + ?Sized>(&self, r: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mean = self.conditional_mean(r)?;
        let z: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
        let dev = self.factor.whiten_inverse(&z);
        Ok(mean.iter().zip(dev).map(|(m, d)| m + d).collect())
    }

    fn scale_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x.clone();
        for (i, w) in self.vinv.iter().enumerate() {
            out.row_mut(i).scale_mut(*w);
        }
        out
    }

    fn check_rows(&self, n: usize) -> Result<()> {
        if n != self.vinv.len() {
            return Err(Error::DimensionMismatch(format!(
                "{n} rows against a {}-row likelihood",
                self.vinv.len()
            )));
        }
        Ok(())
    }
}

/// Integrates the discrepancy `φ` out of the proxy likelihood.
pub fn marginalize_phi(spec: &FusionModelSpec, theta: &HyperState) -> Result<MarginalizedField> {
    let proxy = spec
        .proxy
        .as_ref()
        .ok_or_else(|| Error::Config("model has no proxy likelihood".into()))?;
    let field = spec
        .discrepancy()
        .ok_or_else(|| Error::Config("model has no discrepancy field".into()))?;
    let map = field
        .proxy_map
        .as_ref()
        .ok_or_else(|| Error::Config("discrepancy field has no proxy mapping".into()))?;
    let var = proxy_variance(theta, proxy.a.len(), &proxy.kind)?;
    MarginalizedField::new(&var, &[(map, &field.prior.q, theta.kappa, field.prior.rank())])
}

/// Integrates every field jointly over the stacked `[Y; A]` rows.
pub fn marginalize_joint(spec: &FusionModelSpec, theta: &HyperState) -> Result<MarginalizedField> {
    let n = spec.n_obs();
    let na = spec.n_proxy();
    let mut var = obs_variance(theta, &spec.obs.meta)?;
    if let Some(p) = &spec.proxy {
        var.extend(proxy_variance(theta, na, &p.kind)?);
    }
    let mut maps = Vec::with_capacity(spec.fields.len());
    for f in &spec.fields {
        let m = f.prior.dim();
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n + na);
        for i in 0..n {
            rows.push(f.obs_map.as_ref().map_or_else(Vec::new, |p| p.row(i).collect()));
        }
        let scale = if f.proxy_scaled_by_beta1 { theta.beta1 } else { 1.0 };
        for i in 0..na {
            rows.push(f.proxy_map.as_ref().map_or_else(Vec::new, |p| {
                p.row(i).map(|(c, v)| (c, scale * v)).collect()
            }));
        }
        maps.push(MappingMatrix::from_rows(m, rows)?);
    }
    let fields: Vec<_> = spec
        .fields
        .iter()
        .zip(&maps)
        .map(|(f, map)| (map, &f.prior.q, theta.get(f.precision), f.prior.rank()))
        .collect();
    MarginalizedField::new(&var, &fields)
}

/// Field-dependent part of the Gram matrix over the extended design.
#[derive(Debug, Clone)]
pub struct CoupledPart {
    pub gram: DMatrix<f64>,
    pub log_det_half: f64,
    pub field: Option<MarginalizedField>,
    /// Whether `gram` already includes the observation rows.
    pub includes_obs: bool,
}

fn stacked_design(spec: &FusionModelSpec) -> DMatrix<f64> {
    let xo = spec.x_obs();
    let n = xo.nrows();
    match spec.x_proxy() {
        Some(xp) => {
            let mut x = DMatrix::zeros(n + xp.nrows(), xo.ncols());
            x.rows_mut(0, n).copy_from(xo);
            x.rows_mut(n, xp.nrows()).copy_from(xp);
            x
        }
        None => xo.clone(),
    }
}

fn proxy_columns(layout: &ExtLayout) -> Vec<usize> {
    let mut cols = vec![ExtLayout::DATA];
    cols.extend((0..layout.p_l).map(|j| layout.l_proxy(j)));
    cols.extend((0..layout.p_a).map(|j| layout.a(j)));
    cols
}

/// The expensive part of the Gram matrix: proxy rows (or all rows in joint mode).
pub fn coupled_part(spec: &FusionModelSpec, theta: &HyperState) -> Result<CoupledPart> {
    let layout = spec.layout();
    let ext = layout.len();
    if spec.is_joint() {
        let field = marginalize_joint(spec, theta)?;
        let gram = field.gram(&stacked_design(spec))?;
        return Ok(CoupledPart {
            gram,
            log_det_half: field.log_det_half(),
            field: Some(field),
            includes_obs: true,
        });
    }
    let Some(proxy) = &spec.proxy else {
        return Ok(CoupledPart {
            gram: DMatrix::zeros(ext, ext),
            log_det_half: 0.0,
            field: None,
            includes_obs: false,
        });
    };
    let xp = spec.x_proxy().expect("proxy design exists with proxy data");
    let cols = proxy_columns(&layout);
    let sub = xp.select_columns(&cols);
    let (small, log_det_half, field) = if spec.discrepancy().is_some() {
        let field = marginalize_phi(spec, theta)?;
        (field.gram(&sub)?, field.log_det_half(), Some(field))
    } else {
        let var = proxy_variance(theta, proxy.a.len(), &proxy.kind)?;
        if var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Numeric("proxy variance must be positive".into()));
        }
        let mut w = sub.clone();
        for (i, v) in var.iter().enumerate() {
            w.row_mut(i).scale_mut(1.0 / v);
        }
        let ld = -0.5 * var.iter().map(|v| v.ln()).sum::<f64>();
        (sub.transpose() * w, ld, None)
    };
    let mut gram = DMatrix::zeros(ext, ext);
    for (a, &ca) in cols.iter().enumerate() {
        for (b, &cb) in cols.iter().enumerate() {
            gram[(ca, cb)] = small[(a, b)];
        }
    }
    Ok(CoupledPart {
        gram,
        log_det_half,
        field,
        includes_obs: false,
    })
}

/// Observation-row Gram `X_YᵀV_Y⁻¹X_Y` and `log|V_Y|^{-1/2}`.
pub fn obs_gram(spec: &FusionModelSpec, theta: &HyperState) -> Result<(DMatrix<f64>, f64)> {
    let var = obs_variance(theta, &spec.obs.meta)?;
    if var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Numeric("observation variance must be positive".into()));
    }
    let x = spec.x_obs();
    let mut w = x.clone();
    for (i, v) in var.iter().enumerate() {
        w.row_mut(i).scale_mut(1.0 / v);
    }
    let mut g = x.transpose() * w;
    dense::symmetrize(&mut g);
    Ok((g, -0.5 * var.iter().map(|v| v.ln()).sum::<f64>()))
}

/// Collapses the extended Gram onto `[data | b | δ]` for a given `β₁`.
pub fn reduce_gram(layout: &ExtLayout, g: &DMatrix<f64>, beta1: f64) -> DMatrix<f64> {
    let p = layout.n_coef();
    let r = 1 + p + layout.n_delta;
    let mut w = DMatrix::zeros(layout.len(), r);
    w[(ExtLayout::DATA, 0)] = 1.0;
    for j in 0..layout.p_y {
        w[(layout.y(j), 1 + j)] = 1.0;
    }
    for j in 0..layout.p_l {
        w[(layout.l_obs(j), 1 + layout.p_y + j)] = 1.0;
        w[(layout.l_proxy(j), 1 + layout.p_y + j)] = beta1;
    }
    for j in 0..layout.p_a {
        w[(layout.a(j), 1 + layout.p_y + layout.p_l + j)] = 1.0;
    }
    for k in 0..layout.n_delta {
        w[(layout.delta(k), 1 + p + k)] = 1.0;
    }
    let mut out = w.transpose() * g * w;
    dense::symmetrize(&mut out);
    out
}

/// Result of integrating out the coefficients `b` given θ and δ.
#[derive(Debug, Clone)]
pub struct BStage {
    /// Reduced Gram `[data | b | δ]`, independent of δ and of Λ.
    pub reduced: DMatrix<f64>,
    pub prior_var: Vec<f64>,
    /// Cholesky factor of `V_b⁻¹`.
    pub precision: DenseCholesky,
    pub mean: DVector<f64>,
    /// `dᵀΣ⁻¹d − M_bᵀV_b⁻¹M_b` at the given δ.
    pub quad: f64,
}

impl BStage {
    pub fn n_coef(&self) -> usize {
        self.prior_var.len()
    }

    pub fn n_delta(&self) -> usize {
        self.reduced.nrows() - 1 - self.n_coef()
    }

    /// `−½log|Λ| − ½log|V_b⁻¹|`
    pub fn log_det_half(&self) -> f64 {
        -0.5 * self.prior_var.iter().map(|v| v.ln()).sum::<f64>()
            - 0.5 * dense::chol_log_det(&self.precision)
    }

    /// Covariance `V_b`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let p = self.n_coef();
        let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        // V_b⁻¹ = L Lᵀ  ⇒  M + L⁻ᵀz has covariance V_b
        let dev = self
            .precision
            .l_dirty()
            .lower_triangle()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + dev
    }
}

/// Integrates `b` out given the reduced Gram, the prior variances, and δ.
pub fn marginalize_b(reduced: DMatrix<f64>, prior_var: Vec<f64>, delta: &[f64]) -> Result<BStage> {
    let p = prior_var.len();
    let nd = reduced.nrows() - 1 - p;
    if delta.len() != nd {
        return Err(Error::DimensionMismatch(format!(
            "{} site effects for {nd} co-located sites",
            delta.len()
        )));
    }
    if prior_var.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Numeric("coefficient prior variance must be positive".into()));
    }
    let d = DVector::from_column_slice(delta);
    let g_dd = reduced[(0, 0)];
    let g_bd = reduced.view((1, 0), (p, 1)).column(0).into_owned();
    let g_bb = reduced.view((1, 1), (p, p)).into_owned();
    let (dd, bd) = if nd > 0 {
        let g_del_d = reduced.view((1 + p, 0), (nd, 1)).column(0).into_owned();
        let g_del_del = reduced.view((1 + p, 1 + p), (nd, nd)).into_owned();
        let g_b_del = reduced.view((1, 1 + p), (p, nd)).into_owned();
        (
            g_dd - 2.0 * g_del_d.dot(&d) + (&g_del_del * &d).dot(&d),
            g_bd - g_b_del * &d,
        )
    } else {
        (g_dd, g_bd)
    };
    let mut prec = g_bb;
    for (j, v) in prior_var.iter().enumerate() {
        prec[(j, j)] += 1.0 / v;
    }
    let precision = dense::cholesky(prec, "coefficient posterior precision (collinear design?)")?;
    let mean = precision.solve(&bd);
    let quad = dd - mean.dot(&bd);
    Ok(BStage {
        reduced,
        prior_var,
        precision,
        mean,
        quad,
    })
}

/// Natural-scale log prior of the free hyperparameters, `−∞` outside the support.
pub fn log_prior(spec: &FusionModelSpec, theta: &HyperState) -> f64 {
    let mut lp = 0.0;
    for id in spec.free_params() {
        let v = theta.get(id);
        if id.log_scale() && !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        let x = id.to_sampling(v);
        lp += spec.priors.log_density(id, x);
        if id.log_scale() {
            lp -= x;
        }
    }
    lp
}

fn delta_log_prior(theta: &HyperState) -> f64 {
    if theta.delta.is_empty() {
        return 0.0;
    }
    let s2 = theta.sigma2_delta;
    -0.5 * theta.delta.iter().map(|d| d * d).sum::<f64>() / s2
        - 0.5 * theta.delta.len() as f64 * s2.ln()
}

/// All pieces of one evaluation of the marginal posterior.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub log_posterior: f64,
    pub log_prior: f64,
    pub b: BStage,
}

fn in_support(spec: &FusionModelSpec, theta: &HyperState) -> bool {
    if !log_prior(spec, theta).is_finite() {
        return false;
    }
    let positive = [
        theta.sigma2_eps,
        theta.sigma2_a,
        theta.kappa,
        theta.kappa_g,
    ];
    positive.iter().all(|v| *v > 0.0)
        && theta.sigma2_sub >= 0.0
        && theta.sigma2_delta > 0.0
        && theta.sigma2_alpha >= 0.0
        && theta.smooth_components().iter().all(|v| *v > 0.0)
        && theta.beta1.is_finite()
}

/// Combines a (possibly cached) coupled part with the cheap observation part.
pub fn evaluate_with(
    spec: &FusionModelSpec,
    theta: &HyperState,
    coupled: &CoupledPart,
) -> Result<Evaluation> {
    let layout = spec.layout();
    let (gram, log_det_rows) = if coupled.includes_obs {
        (coupled.gram.clone(), coupled.log_det_half)
    } else {
        let (g, ld) = obs_gram(spec, theta)?;
        (g + &coupled.gram, ld + coupled.log_det_half)
    };
    let reduced = reduce_gram(&layout, &gram, theta.beta1);
    let prior_var = spec.coef_prior.diagonal(&theta.smooth_components());
    let b = marginalize_b(reduced, prior_var, &theta.delta)?;
    let lp = log_prior(spec, theta);
    let log_posterior = log_det_rows + b.log_det_half() - 0.5 * b.quad + delta_log_prior(theta) + lp;
    if !log_posterior.is_finite() {
        return Err(Error::NonFinite(describe(spec, theta)));
    }
    Ok(Evaluation {
        log_posterior,
        log_prior: lp,
        b,
    })
}

pub(crate) fn describe(spec: &FusionModelSpec, theta: &HyperState) -> String {
    spec.free_params()
        .iter()
        .map(|id| format!("{}={:.6e}", id.name(), theta.get(*id)))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Log marginal posterior of θ and δ, up to a θ-independent constant.
///
/// Returns `−∞` outside the prior support.
pub fn log_marginal_posterior(spec: &FusionModelSpec, theta: &HyperState) -> Result<f64> {
    if !in_support(spec, theta) {
        return Ok(f64::NEG_INFINITY);
    }
    let coupled = coupled_part(spec, theta)?;
    Ok(evaluate_with(spec, theta, &coupled)?.log_posterior)
}

/// Caches the coupled part between evaluations that share its parameters.
#[derive(Debug, Clone)]
pub struct PosteriorEvaluator<'a> {
    spec: &'a FusionModelSpec,
    keys: Vec<ParamId>,
    cache: Vec<(Vec<f64>, CoupledPart)>,
    hits: usize,
    misses: usize,
}

impl<'a> PosteriorEvaluator<'a> {
    pub fn new(spec: &'a FusionModelSpec) -> Self {
        Self {
            spec,
            keys: spec.coupled_params(),
            cache: Vec::with_capacity(2),
            hits: 0,
            misses: 0,
        }
    }

    pub fn spec(&self) -> &'a FusionModelSpec {
        self.spec
    }

    fn key(&self, theta: &HyperState) -> Vec<f64> {
        self.keys.iter().map(|id| theta.get(*id)).collect()
    }

    /// Coupled part for θ, keeping the two most recent entries so that a
    /// rejected proposal does not evict the current state.
    pub fn coupled(&mut self, theta: &HyperState) -> Result<&CoupledPart> {
        let key = self.key(theta);
        match self.cache.iter().position(|(k, _)| *k == key) {
            Some(i) => {
                self.hits += 1;
                if i != 0 {
                    self.cache.swap(0, i);
                }
            }
            None => {
                self.misses += 1;
                let part = coupled_part(self.spec, theta)?;
                self.cache.insert(0, (key, part));
                self.cache.truncate(2);
            }
        }
        Ok(&self.cache[0].1)
    }

    pub fn evaluate(&mut self, theta: &HyperState) -> Result<Option<Evaluation>> {
        if !in_support(self.spec, theta) {
            return Ok(None);
        }
        let spec = self.spec;
        let coupled = self.coupled(theta)?;
        evaluate_with(spec, theta, coupled).map(Some)
    }

    pub fn log_posterior(&mut self, theta: &HyperState) -> Result<f64> {
        Ok(self
            .evaluate(theta)?
            .map_or(f64::NEG_INFINITY, |e| e.log_posterior))
    }

    /// `(hits, misses)` of the coupled-part cache.
    pub fn cache_stats(&self) -> (usize, usize) {
        (self.hits, self.misses)
    }
}
