use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StudentT};
use serde::{Deserialize, Serialize};

use super::matern::{GpSampler, Matern};
use crate::data::{Dataset, Observation, ProxyData, Table};
use crate::error::{Error, Result};
use crate::grid::RegularGrid;

/// Settings shared by all scenarios of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub nrow: usize,
    pub ncol: usize,
    pub n_obs: usize,
    /// Observation count of the sparse scenario (6).
    pub n_obs_sparse: usize,
    pub proxy_noise_sd: f64,
    pub obs_noise_sd: f64,
    pub local_sd: f64,
    pub covariate_effect_sd: f64,
    pub residual_sd: f64,
    pub small_discrepancy_sd: f64,
    pub large_discrepancy_sd: f64,
    pub nu: f64,
    /// Effective ranges in cells of the reference 175-column domain.
    pub residual_range: f64,
    pub large_range: f64,
    pub small_range: f64,
    /// Multiplier on every range, normally `ncol / 175`.
    pub range_scale: f64,
    /// Generating coefficients of log population, log elevation, and the
    /// square roots of two road densities and county emissions.
    pub coefficients: [f64; 5],
    /// Grids above this many cells are sampled coarsely and refined.
    pub max_dense_cells: usize,
    pub n_days: u32,
}

impl SimSettings {
    pub fn full_scale() -> Self {
        Self {
            nrow: 100,
            ncol: 175,
            n_obs: 171,
            n_obs_sparse: 40,
            proxy_noise_sd: 0.55,
            obs_noise_sd: 1.73,
            local_sd: 0.84,
            covariate_effect_sd: 0.93,
            residual_sd: 2.5,
            small_discrepancy_sd: 1.64,
            large_discrepancy_sd: 2.0,
            nu: 2.0,
            residual_range: 340.0,
            large_range: 413.0,
            small_range: 24.0,
            range_scale: 1.0,
            coefficients: [0.2, -0.3, 0.01, 0.01, 0.1],
            max_dense_cells: 10_000,
            n_days: 30,
        }
    }

    /// 60×40 grid with ranges scaled to keep their ratio to the domain.
    pub fn desk() -> Self {
        Self {
            nrow: 40,
            ncol: 60,
            n_obs: 60,
            n_obs_sparse: 20,
            range_scale: 60.0 / 175.0,
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nrow < 4 || self.ncol < 4 {
            return Err(Error::Config("simulation grid must be at least 4x4".into()));
        }
        if self.n_obs < 2 || self.n_obs_sparse < 2 || self.n_obs_sparse > self.n_obs {
            return Err(Error::Config("need 2 ≤ n_obs_sparse ≤ n_obs".into()));
        }
        if !(self.nu > 0.0 && self.range_scale > 0.0) {
            return Err(Error::Config("ν and range_scale must be positive".into()));
        }
        Ok(())
    }
}

impl Default for SimSettings {
    fn default() -> Self {
        Self::desk()
    }
}

/// Which discrepancy components are present and the proxy slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioShape {
    pub large: bool,
    pub small: bool,
    pub beta1: f64,
    pub sparse: bool,
}

pub fn scenario_shape(id: u8) -> Result<ScenarioShape> {
    let s = |large, small, beta1, sparse| ScenarioShape { large, small, beta1, sparse };
    Ok(match id {
        1 => s(true, true, 1.0, false),
        2 => s(true, true, 0.0, false),
        3 => s(false, false, 1.0, false),
        4 => s(true, false, 1.0, false),
        5 => s(false, true, 1.0, false),
        6 => s(true, true, 1.0, true),
        _ => return Err(Error::Config(format!("scenario must be 1-6, got {id}"))),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub scenario: u8,
    pub settings: SimSettings,
    pub replicate: usize,
    pub seed: u64,
}

/// Everything a scenario needs from one replicate, before the proxy is composed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateWorld {
    pub grid: RegularGrid,
    pub truth: Vec<f64>,
    pub covariate_effect: Vec<f64>,
    pub g: Vec<f64>,
    pub phi_large: Vec<f64>,
    pub phi_small: Vec<f64>,
    pub proxy_noise: Vec<f64>,
    /// Covariates used to generate `L`.
    pub generation_covariates: Table,
    /// Misspecified covariates given to the model.
    pub fitting_covariates: Table,
    /// Sites in sampling order; the sparse scenario uses a prefix.
    pub observations: Vec<Observation>,
    pub obs_covariates: Table,
    pub local: Vec<f64>,
    /// Multipliers applied to the generating coefficients and the local
    /// formula to reach the target standard deviations.
    pub covariate_scale: f64,
    pub local_scale: f64,
}

/// One scenario of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateData {
    pub scenario: u8,
    pub replicate: usize,
    pub dataset: Dataset,
    pub truth: Vec<f64>,
    pub proxy: Vec<f64>,
    pub phi_large: Vec<f64>,
    pub phi_small: Vec<f64>,
    pub beta1: f64,
}

impl ReplicateData {
    pub fn land_mask(&self) -> &[bool] {
        self.dataset.grid.land_mask()
    }
}

/// Deterministic coastline: water along the east edge with a wavy shore and a bay.
pub fn land_mask(nrow: usize, ncol: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(nrow * ncol);
    for r in 0..nrow {
        let y = r as f64 / nrow as f64;
        let shore = 0.84 + 0.06 * (2.0 * std::f64::consts::PI * 1.3 * y).sin()
            + 0.03 * (2.0 * std::f64::consts::PI * 3.7 * y + 0.8).sin();
        for c in 0..ncol {
            let x = c as f64 / ncol as f64;
            let bay = (x - 0.72).powi(2) / 0.004 + (y - 0.55).powi(2) / 0.006 < 1.0;
            m.push(x < shore && !bay);
        }
    }
    m
}

/// Seed for stream `tag` of replicate `rep`, independent of the order jobs run in.
pub fn derive_seed(master: u64, rep: u64, tag: u64) -> u64 {
    // splitmix64 over the combined key
    let mut z = master
        .wrapping_add(rep.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(tag.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates replicates; the Matérn factors are built once and reused.
#[derive(Debug, Clone)]
pub struct ScenarioGenerator {
    pub settings: SimSettings,
    grid: RegularGrid,
    residual: GpSampler,
    large: GpSampler,
    small: GpSampler,
    broad: GpSampler,
    fine: GpSampler,
}

const COVARIATE_MAX_DENSE: usize = 1200;
const LOCAL_REFERENCE_DRAWS: usize = 20_000;

impl ScenarioGenerator {
    pub fn new(settings: SimSettings) -> Result<Self> {
        settings.validate()?;
        let grid = RegularGrid::with_mask(
            settings.nrow,
            settings.ncol,
            1.0,
            (0.0, 0.0),
            land_mask(settings.nrow, settings.ncol),
        )?;
        let s = settings.range_scale;
        let nu = settings.nu;
        let mk = |range: f64, max: usize| -> Result<GpSampler> {
            GpSampler::new(&grid, &Matern::with_effective_range(nu, range * s)?, max)
        };
        let max = settings.max_dense_cells;
        Ok(Self {
            residual: mk(settings.residual_range, max)?,
            large: mk(settings.large_range, max)?,
            small: mk(settings.small_range, max)?,
            broad: mk(150.0, COVARIATE_MAX_DENSE)?,
            fine: mk(40.0, COVARIATE_MAX_DENSE)?,
            grid,
            settings,
        })
    }

    pub fn grid(&self) -> &RegularGrid {
        &self.grid
    }

    pub fn replicate(&self, master_seed: u64, rep: usize) -> Result<ReplicateWorld> {
        let st = &self.settings;
        let grid = &self.grid;
        let m = grid.len();
        let land = grid.land_cells();
        let rng_for = |tag: u64| ChaCha8Rng::seed_from_u64(derive_seed(master_seed, rep as u64, tag));

        // covariate surfaces
        let mut rng = rng_for(1);
        let heavy = StudentT::new(3.0).expect("valid dof");
        let z_pop = self.fine.sample(1.0, &mut rng);
        let log_pop: Vec<f64> = z_pop
            .iter()
            .map(|z| 4.0 + 1.4 * z + 0.3 * Distribution::<f64>::sample(&heavy, &mut rng).clamp(-6.0, 6.0))
            .collect();
        let z_elev = self.broad.sample(1.0, &mut rng);
        let elev: Vec<f64> = z_elev.iter().map(|z| 250.0 * (0.9 * z).exp()).collect();
        let mut roads = Vec::new();
        for k in 0..3 {
            let z = self.fine.sample(1.0, &mut rng);
            let level = [-1.5, -0.8, 0.2][k];
            roads.push(
                (0..m)
                    .map(|i| (level + 0.6 * (log_pop[i] - 4.0) + 0.7 * z[i]).exp())
                    .collect::<Vec<f64>>(),
            );
        }
        let z_emis = self.broad.sample(1.0, &mut rng);
        // county-level emissions: constant over 6x6 blocks (scaled with the grid)
        let block = ((6.0 * st.ncol as f64 / 60.0).round() as usize).max(2);
        let emis: Vec<f64> = (0..m)
            .map(|i| {
                let (r, c) = grid.row_col(i);
                let anchor = grid.index((r / block) * block, (c / block) * block);
                (2.0 + 0.8 * z_emis[anchor] + 0.3 * (log_pop[anchor] - 4.0)).exp()
            })
            .collect();
        let gen_cols: [Vec<f64>; 5] = [
            log_pop.clone(),
            elev.iter().map(|e| e.ln()).collect(),
            roads[0].iter().map(|v| v.sqrt()).collect(),
            roads[1].iter().map(|v| v.sqrt()).collect(),
            emis.iter().map(|v| v.sqrt()).collect(),
        ];
        let raw_effect: Vec<f64> = (0..m)
            .map(|i| (0..5).map(|k| st.coefficients[k] * gen_cols[k][i]).sum())
            .collect();
        let sd_land = sd_over(&raw_effect, &land);
        let covariate_scale = if sd_land > 0.0 { st.covariate_effect_sd / sd_land } else { 1.0 };
        let covariate_effect: Vec<f64> = raw_effect.iter().map(|v| v * covariate_scale).collect();

        let mut rng = rng_for(2);
        let g = self.residual.sample(st.residual_sd.powi(2), &mut rng);
        let truth: Vec<f64> = covariate_effect.iter().zip(&g).map(|(a, b)| a + b).collect();
        let mut rng = rng_for(3);
        let phi_large = self.large.sample(st.large_discrepancy_sd.powi(2), &mut rng);
        let mut rng = rng_for(4);
        let phi_small = self.small.sample(st.small_discrepancy_sd.powi(2), &mut rng);
        let mut rng = rng_for(5);
        let pn = Normal::new(0.0, st.proxy_noise_sd).expect("valid sd");
        let proxy_noise: Vec<f64> = (0..m).map(|_| pn.sample(&mut rng)).collect();

        // sites, local variability, and observations
        let mut rng = rng_for(6);
        let mut cells = land.clone();
        if cells.len() < st.n_obs {
            return Err(Error::Config("more observations than land cells".into()));
        }
        cells.shuffle(&mut rng);
        cells.truncate(st.n_obs);
        let dist1 = Normal::new(800f64.ln(), 1.0).expect("valid");
        let dist2 = Normal::new(300f64.ln(), 1.0).expect("valid");
        let draw_d = |rng: &mut ChaCha8Rng, d: &Normal<f64>| d.sample(rng).exp().max(1.0);
        let local_raw = |d1: f64, d2: f64| 50.0 * d1.powf(-0.77) + 10.0 * d2.powf(-0.77);
        let mut ref_rng = rng_for(7);
        let reference: Vec<f64> = (0..LOCAL_REFERENCE_DRAWS)
            .map(|_| {
                let d1 = draw_d(&mut ref_rng, &dist1);
                let d2 = draw_d(&mut ref_rng, &dist2);
                local_raw(d1, d2)
            })
            .collect();
        let ref_sd = sd_over(&reference, &(0..reference.len()).collect::<Vec<_>>());
        let local_scale = st.local_sd / ref_sd;
        // within-pixel variability averages zero over the pixel
        let ref_mean = reference.iter().sum::<f64>() / reference.len() as f64;
        let on = Normal::new(0.0, st.obs_noise_sd).expect("valid sd");
        let mut observations = Vec::with_capacity(st.n_obs);
        let mut d1s = Vec::new();
        let mut d2s = Vec::new();
        let mut local = Vec::new();
        for (site, &cell) in cells.iter().enumerate() {
            let (r, c) = grid.row_col(cell);
            let x = c as f64 + rng.random_range(0.05..0.95);
            let y = r as f64 + rng.random_range(0.05..0.95);
            let d1 = draw_d(&mut rng, &dist1);
            let d2 = draw_d(&mut rng, &dist2);
            let lv = local_scale * (local_raw(d1, d2) - ref_mean);
            let value = truth[cell] + lv + on.sample(&mut rng);
            observations.push(Observation {
                site,
                x,
                y,
                value,
                n_days: st.n_days,
                n_month: st.n_days,
                colocated: false,
            });
            d1s.push(d1);
            d2s.push(d2);
            local.push(lv);
        }
        let obs_covariates = Table::from_columns(
            st.n_obs,
            vec![
                ("d1".into(), d1s.iter().map(|d| d.clamp(10.0, 500.0)).collect()),
                ("d2".into(), d2s.iter().map(|d| d.clamp(10.0, 500.0)).collect()),
            ],
        )?;
        let generation_covariates = Table::from_columns(
            m,
            vec![
                ("log_pop".into(), gen_cols[0].clone()),
                ("log_elev".into(), gen_cols[1].clone()),
                ("sqrt_road1".into(), gen_cols[2].clone()),
                ("sqrt_road2".into(), gen_cols[3].clone()),
                ("sqrt_emis".into(), gen_cols[4].clone()),
            ],
        )?;
        let fitting_covariates = Table::from_columns(
            m,
            vec![
                ("log_pop".into(), log_pop),
                ("elev_trunc".into(), elev.iter().map(|e| e.min(500.0)).collect()),
                ("road3".into(), roads[2].clone()),
                ("log_emis".into(), emis.iter().map(|e| e.ln()).collect()),
            ],
        )?;
        Ok(ReplicateWorld {
            grid: grid.clone(),
            truth,
            covariate_effect,
            g,
            phi_large,
            phi_small,
            proxy_noise,
            generation_covariates,
            fitting_covariates,
            observations,
            obs_covariates,
            local,
            covariate_scale,
            local_scale,
        })
    }
}

fn sd_over(v: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let m = idx.iter().map(|&i| v[i]).sum::<f64>() / n;
    (idx.iter().map(|&i| (v[i] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

impl ReplicateWorld {
    /// Composes the proxy for `scenario` and packages the fitting data.
    pub fn scenario(&self, scenario: u8, settings: &SimSettings, replicate: usize) -> Result<ReplicateData> {
        let shape = scenario_shape(scenario)?;
        let m = self.grid.len();
        let zero = vec![0.0; m];
        let phi_large = if shape.large { self.phi_large.clone() } else { zero.clone() };
        let phi_small = if shape.small { self.phi_small.clone() } else { zero };
        let proxy: Vec<f64> = (0..m)
            .map(|i| phi_large[i] + phi_small[i] + shape.beta1 * self.truth[i] + self.proxy_noise[i])
            .collect();
        let n = if shape.sparse { settings.n_obs_sparse } else { settings.n_obs };
        let rows: Vec<usize> = (0..n).collect();
        let dataset = Dataset {
            grid: self.grid.clone(),
            observations: self.observations[..n].to_vec(),
            obs_covariates: self.obs_covariates.select_rows(&rows),
            grid_covariates: self.fitting_covariates.clone(),
            proxy: Some(ProxyData {
                grid: None,
                values: proxy.iter().map(|&v| Some(v)).collect(),
                counts: None,
                n_month: settings.n_days,
                covariates: Table::new(m),
            }),
        };
        Ok(ReplicateData {
            scenario,
            replicate,
            dataset,
            truth: self.truth.clone(),
            proxy,
            phi_large,
            phi_small,
            beta1: shape.beta1,
        })
    }
}

/// One scenario replicate from scratch.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<ReplicateData> {
    let gen = ScenarioGenerator::new(cfg.settings.clone())?;
    gen.replicate(cfg.seed, cfg.replicate)?
        .scenario(cfg.scenario, &cfg.settings, cfg.replicate)
}
