//! Turns a [`Dataset`] and a [`ModelConfig`] into a [`FusionModelSpec`],
//! keeping what is needed to rebuild design rows for new sites.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, Table};
use crate::error::{Error, Result};
use crate::grid::{overlap_weights, point_to_cell, MappingMatrix, RegularGrid, DEFAULT_LAND_RETENTION};
use crate::model::{
    DayCounts, FieldBlock, FusionModelSpec, HyperPriors, ModelMode, ObsMeta, ObservationBlock,
    ParamId, PredictionBlock, ProxyBlock, ProxyKind, VariantFlags,
};
use crate::mrf::{self, MrfKind};
use crate::splines::{knots_quantile, space_filling_knots, CoefficientPrior, PriorCovariance, SmoothBasis};

/// Representation of the residual spatial surface `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ResidualKind {
    None,
    /// Thin-plate mixed-model spline in `Z_L`.
    Spline { knots: usize },
    /// Thin-plate MRF on the base grid, integrated jointly with `φ`.
    Mrf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: VariantFlags,
    /// Linear and smooth terms of the observation-level design `Z_y`.
    pub obs_linear: Vec<String>,
    pub obs_smooth: Vec<String>,
    /// Linear and smooth terms of the `L` design `Z_L`.
    pub grid_linear: Vec<String>,
    pub grid_smooth: Vec<String>,
    /// Linear terms of the proxy-only design `Z_a`.
    pub proxy_linear: Vec<String>,
    pub smooth_knots: usize,
    pub residual: ResidualKind,
    pub discrepancy_prior: MrfKind,
    pub priors: HyperPriors,
    pub fixed_variance: f64,
    /// Coarse proxy pixels with at most this land fraction are dropped.
    pub land_retention: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: VariantFlags::default(),
            obs_linear: Vec::new(),
            obs_smooth: Vec::new(),
            grid_linear: Vec::new(),
            grid_smooth: Vec::new(),
            proxy_linear: Vec::new(),
            smooth_knots: 5,
            residual: ResidualKind::Spline { knots: 55 },
            discrepancy_prior: MrfKind::ThinPlate,
            priors: HyperPriors::default(),
            fixed_variance: crate::splines::DEFAULT_FIXED_VARIANCE,
            land_retention: DEFAULT_LAND_RETENTION,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smooth_knots < 2 && !(self.obs_smooth.is_empty() && self.grid_smooth.is_empty()) {
            return Err(Error::Config("smooth_knots must be at least 2".into()));
        }
        if let ResidualKind::Spline { knots } = self.residual {
            if knots < 3 {
                return Err(Error::Config("spatial spline needs at least 3 knots".into()));
            }
        }
        if !(self.fixed_variance > 0.0) {
            return Err(Error::Config("fixed_variance must be positive".into()));
        }
        if let Some(k) = self.variant.fix_kappa {
            if !(k > 0.0) {
                return Err(Error::Config("fix_kappa must be positive".into()));
            }
        }
        if self.variant.mode != ModelMode::TwoLikelihood
            && (self.variant.fix_beta1.is_some() || self.variant.fix_kappa.is_some() || self.variant.orthogonalize)
        {
            return Err(Error::Config(
                "fix_beta1, fix_kappa, and orthogonalize need the two-likelihood mode".into(),
            ));
        }
        Ok(())
    }
}

/// How each `Z_L` / `Z_y` column is produced, so new rows can be built.
#[derive(Debug, Clone)]
struct DesignRecipe {
    obs_linear: Vec<String>,
    obs_smooth: Vec<(String, SmoothBasis)>,
    intercept: bool,
    grid_linear: Vec<String>,
    grid_smooth: Vec<(String, SmoothBasis)>,
    spatial: Option<SmoothBasis>,
    /// Proxy value per base cell, when the proxy is a covariate.
    proxy_covariate: Option<Vec<f64>>,
    /// Training means of the `Z_y` columns; observation-level terms are
    /// centred so the level of `L` stays identified.
    z_y_center: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BuiltModel {
    pub spec: FusionModelSpec,
    /// Names of the coefficient columns `[b_y | b_L | b_a]`.
    pub coef_names: Vec<String>,
    /// Grid carrying `φ`, with the cells inside the proxy likelihood marked as land.
    pub discrepancy_grid: Option<RegularGrid>,
    recipe: DesignRecipe,
}

fn column_block(table: &Table, names: &[String], rows: &[usize]) -> Result<Vec<Vec<f64>>> {
    names
        .iter()
        .map(|n| {
            let c = table.get(n)?;
            Ok(rows.iter().map(|&i| c[i]).collect())
        })
        .collect()
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

impl DesignRecipe {
    fn z_y(&self, cov: &Table, rows: &[usize]) -> Result<DMatrix<f64>> {
        let mut cols = column_block(cov, &self.obs_linear, rows)?;
        for (name, basis) in &self.obs_smooth {
            let x: Vec<f64> = rows.iter().map(|&i| cov.get(name).map(|c| c[i])).collect::<Result<_>>()?;
            push_term(&mut cols, basis, &x.iter().map(|&v| (v, 0.0)).collect::<Vec<_>>());
        }
        for (c, m) in cols.iter_mut().zip(&self.z_y_center) {
            c.iter_mut().for_each(|v| *v -= m);
        }
        Ok(to_matrix(rows.len(), cols))
    }

    /// `Z_L` at arbitrary points, with covariates read from the containing cells.
    fn z_l(&self, grid_cov: &Table, cells: &[usize], points: &[(f64, f64)]) -> Result<DMatrix<f64>> {
        let mut cols = Vec::new();
        if self.intercept {
            cols.push(vec![1.0; cells.len()]);
        }
        cols.extend(column_block(grid_cov, &self.grid_linear, cells)?);
        for (name, basis) in &self.grid_smooth {
            let c = grid_cov.get(name)?;
            let pts: Vec<(f64, f64)> = cells.iter().map(|&i| (c[i], 0.0)).collect();
            push_term(&mut cols, basis, &pts);
        }
        if let Some(b) = &self.spatial {
            push_term(&mut cols, b, points);
        }
        if let Some(a) = &self.proxy_covariate {
            cols.push(cells.iter().map(|&i| a[i]).collect());
        }
        Ok(to_matrix(cells.len(), cols))
    }
}

fn push_term(cols: &mut Vec<Vec<f64>>, basis: &SmoothBasis, pts: &[(f64, f64)]) {
    let t = basis.evaluate(pts);
    for m in [&t.fixed, &t.random] {
        for j in 0..m.ncols() {
            cols.push(m.column(j).iter().copied().collect());
        }
    }
}

fn to_matrix(n: usize, cols: Vec<Vec<f64>>) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

fn same_lattice(a: &RegularGrid, b: &RegularGrid) -> bool {
    a.nrow() == b.nrow() && a.ncol() == b.ncol() && a.cell_size() == b.cell_size() && a.origin() == b.origin()
}

fn land_values(values: &[f64], grid: &RegularGrid) -> Vec<f64> {
    grid.land_cells().into_iter().map(|i| values[i]).collect()
}

/// Builds the model for `data` under `cfg`.
pub fn build_model(data: &Dataset, cfg: &ModelConfig) -> Result<BuiltModel> {
    data.validate()?;
    cfg.validate()?;
    let grid = &data.grid;
    let n = data.observations.len();
    let mode = cfg.variant.mode;
    let two = mode == ModelMode::TwoLikelihood;
    if mode != ModelMode::NoProxy && data.proxy.is_none() {
        return Err(Error::Config(format!("mode {mode:?} needs proxy data")));
    }
    let points: Vec<(f64, f64)> = data.observations.iter().map(|o| (o.x, o.y)).collect();
    let obs_cells = point_to_cell(grid, &points)?.as_selection().expect("point map is a selection");
    let centroids = grid.centroids();
    let land_cells = grid.land_cells();
    if land_cells.is_empty() {
        return Err(Error::Data("grid has no land cells".into()));
    }

    // smooth bases with knots from the fitting data
    let mut warnings = Vec::new();
    let mut obs_smooth = Vec::new();
    for name in &cfg.obs_smooth {
        let k = knots_quantile(data.obs_covariates.get(name)?, cfg.smooth_knots)?;
        warnings.extend(k.warning);
        obs_smooth.push((name.clone(), SmoothBasis::cubic(&k.locations)?));
    }
    let mut grid_smooth = Vec::new();
    for name in &cfg.grid_smooth {
        let vals = land_values(data.grid_covariates.get(name)?, grid);
        let k = knots_quantile(&vals, cfg.smooth_knots)?;
        warnings.extend(k.warning);
        grid_smooth.push((name.clone(), SmoothBasis::cubic(&k.locations)?));
    }
    let spatial = match cfg.residual {
        ResidualKind::Spline { knots } => {
            let cand: Vec<(f64, f64)> = land_cells.iter().map(|&i| centroids[i]).collect();
            Some(SmoothBasis::thin_plate(&space_filling_knots(&cand, knots))?)
        }
        _ => None,
    };
    for w in &warnings {
        log::warn!("{w}");
    }

    let proxy_covariate = if mode == ModelMode::ProxyAsCovariate {
        Some(proxy_on_base_grid(data)?)
    } else {
        None
    };
    let mut recipe = DesignRecipe {
        obs_linear: cfg.obs_linear.clone(),
        obs_smooth,
        intercept: cfg.residual != ResidualKind::Mrf,
        grid_linear: cfg.grid_linear.clone(),
        grid_smooth,
        spatial,
        proxy_covariate,
        z_y_center: Vec::new(),
    };

    // coefficient layout and prior groups
    let mut names = Vec::new();
    let mut groups = Vec::new();
    let mut comp = 0usize;
    names.extend(cfg.obs_linear.iter().map(|s| format!("y:{s}")));
    groups.extend(cfg.obs_linear.iter().map(|_| CoefficientPrior::Fixed));
    for (name, b) in &recipe.obs_smooth {
        names.push(format!("y:{name}"));
        groups.push(CoefficientPrior::Fixed);
        names.extend((0..b.n_random()).map(|j| format!("y:{name}:u{j}")));
        groups.extend((0..b.n_random()).map(|_| CoefficientPrior::Penalized(comp)));
        comp += 1;
    }
    let n_smooth_y = recipe.obs_smooth.len();
    if recipe.intercept {
        names.push("l:intercept".into());
        groups.push(CoefficientPrior::Fixed);
    }
    names.extend(cfg.grid_linear.iter().map(|s| format!("l:{s}")));
    groups.extend(cfg.grid_linear.iter().map(|_| CoefficientPrior::Fixed));
    for (name, b) in &recipe.grid_smooth {
        names.push(format!("l:{name}"));
        groups.push(CoefficientPrior::Fixed);
        names.extend((0..b.n_random()).map(|j| format!("l:{name}:u{j}")));
        groups.extend((0..b.n_random()).map(|_| CoefficientPrior::Penalized(comp)));
        comp += 1;
    }
    if let Some(b) = &recipe.spatial {
        names.extend(["l:space_x".to_string(), "l:space_y".to_string()]);
        groups.extend([CoefficientPrior::Fixed; 2]);
        names.extend((0..b.n_random()).map(|j| format!("l:space:u{j}")));
        groups.extend((0..b.n_random()).map(|_| CoefficientPrior::Penalized(comp)));
        comp += 1;
    }
    if recipe.proxy_covariate.is_some() {
        names.push("l:proxy".into());
        groups.push(CoefficientPrior::Fixed);
    }
    let n_smooth_l = comp - n_smooth_y;

    // observation block
    let all = all_rows(n);
    let raw = recipe.z_y(&data.obs_covariates, &all)?;
    recipe.z_y_center = raw.column_iter().map(|c| c.mean()).collect();
    let z_y = recipe.z_y(&data.obs_covariates, &all)?;
    let z_l_obs = recipe.z_l(&data.grid_covariates, &obs_cells, &points)?;
    let mut delta_index: BTreeMap<usize, usize> = BTreeMap::new();
    for o in data.observations.iter().filter(|o| o.colocated) {
        let k = delta_index.len();
        delta_index.entry(o.site).or_insert(k);
    }
    let meta: Vec<ObsMeta> = data
        .observations
        .iter()
        .map(|o| ObsMeta {
            counts: DayCounts { n: o.n_days, n_month: o.n_month },
            site_effect: if o.colocated { delta_index.get(&o.site).copied() } else { None },
        })
        .collect();
    let obs = ObservationBlock {
        y: data.observations.iter().map(|o| o.value).collect(),
        meta,
        n_delta: delta_index.len(),
        z_y,
        z_l: z_l_obs,
    };

    let z_l_grid = recipe.z_l(&data.grid_covariates, &all_rows(grid.len()), &centroids)?;
    let mut fields = Vec::new();
    let mut proxy_block = None;
    let mut discrepancy_grid = None;
    let mut to_discrepancy = None;
    let mut p_a_rows: Option<MappingMatrix> = None;
    let n_smooth_a = 0;
    if two {
        let p = data.proxy.as_ref().expect("checked above");
        let pg = p.grid(grid);
        let p_a = overlap_weights(grid, pg, true, cfg.land_retention)?;
        let rows: Vec<usize> = (0..pg.len())
            .filter(|&j| !p_a.is_excluded(j) && p.values[j].is_some())
            .collect();
        if rows.is_empty() {
            return Err(Error::Data("no proxy cells with data inside the land retention".into()));
        }
        let p_a_r = p_a.select_rows(&rows);
        let z_l_proxy = p_a_r.apply_dense(&z_l_grid);
        let mut zcols = column_block(&p.covariates, &cfg.proxy_linear, &rows)?;
        for name in &cfg.proxy_linear {
            names.push(format!("a:{name}"));
            groups.push(CoefficientPrior::Fixed);
        }
        if !cfg.variant.include_discrepancy {
            zcols.push(vec![1.0; rows.len()]);
            names.push("a:intercept".into());
            groups.push(CoefficientPrior::Fixed);
        }
        let kind = match &p.counts {
            Some(c) => ProxyKind::CountWeighted(
                rows.iter().map(|&j| DayCounts { n: c[j], n_month: p.n_month }).collect(),
            ),
            None => ProxyKind::Homoscedastic,
        };
        proxy_block = Some(ProxyBlock {
            a: rows.iter().map(|&j| p.values[j].expect("filtered")).collect(),
            kind,
            z_l: z_l_proxy,
            z_a: to_matrix(rows.len(), zcols),
        });
        if cfg.variant.include_discrepancy {
            fields.push(FieldBlock {
                prior: mrf::precision(cfg.discrepancy_prior, pg)?,
                precision: ParamId::Kappa,
                obs_map: None,
                proxy_map: Some(MappingMatrix::selection(pg.len(), &rows)?),
                proxy_scaled_by_beta1: false,
            });
            let mut mask = vec![false; pg.len()];
            rows.iter().for_each(|&j| mask[j] = true);
            discrepancy_grid = Some(pg.with_land_mask(mask)?);
            if !same_lattice(pg, grid) {
                to_discrepancy = Some(p_a.clone());
            }
        }
        p_a_rows = Some(p_a_r);
    }
    let mut g_map = None;
    if cfg.residual == ResidualKind::Mrf {
        fields.push(FieldBlock {
            prior: mrf::precision(MrfKind::ThinPlate, grid)?,
            precision: ParamId::KappaG,
            obs_map: Some(MappingMatrix::selection(grid.len(), &obs_cells)?),
            proxy_map: p_a_rows.clone(),
            proxy_scaled_by_beta1: true,
        });
        g_map = Some(MappingMatrix::selection(grid.len(), &all_rows(grid.len()))?);
    }

    let mut coef_prior = PriorCovariance::new(groups);
    coef_prior.fixed_variance = cfg.fixed_variance;
    let spec = FusionModelSpec::new(
        obs,
        proxy_block,
        fields,
        coef_prior,
        (n_smooth_y, n_smooth_l, n_smooth_a),
        cfg.priors.clone(),
        cfg.variant.clone(),
        Some(PredictionBlock { z_l_grid, g_map, to_discrepancy }),
    )?;
    Ok(BuiltModel {
        spec,
        coef_names: names,
        discrepancy_grid,
        recipe,
    })
}

/// Proxy value at each base cell; cells without data get the mean of those with data.
fn proxy_on_base_grid(data: &Dataset) -> Result<Vec<f64>> {
    let p = data.proxy.as_ref().ok_or_else(|| Error::Config("no proxy data".into()))?;
    let pg = p.grid(&data.grid);
    let observed: Vec<f64> = p.values.iter().flatten().copied().collect();
    if observed.is_empty() {
        return Err(Error::Data("proxy has no observed cells".into()));
    }
    let fill = observed.iter().sum::<f64>() / observed.len() as f64;
    Ok(data
        .grid
        .centroids()
        .into_iter()
        .map(|(x, y)| pg.locate(x, y).and_then(|j| p.values[j]).unwrap_or(fill))
        .collect())
}

impl BuiltModel {
    /// `(Z_y, Z_L, base cell)` for observation records not necessarily in the fit.
    pub fn observation_design(
        &self,
        grid: &RegularGrid,
        grid_covariates: &Table,
        obs: &[Observation],
        obs_covariates: &Table,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>, Vec<usize>)> {
        let points: Vec<(f64, f64)> = obs.iter().map(|o| (o.x, o.y)).collect();
        let cells = point_to_cell(grid, &points)?.as_selection().expect("point map is a selection");
        let z_y = self.recipe.z_y(obs_covariates, &all_rows(obs.len()))?;
        let z_l = self.recipe.z_l(grid_covariates, &cells, &points)?;
        Ok((z_y, z_l, cells))
    }
}
