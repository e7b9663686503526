//! The simulation study: every scenario × model variant × replicate, scored
//! by MSPE of the predicted `L` over land cells.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::build::{build_model, ModelConfig, ResidualKind};
use crate::diagnostics::{mspe, DiagnosticCurve};
use crate::error::{Error, Result};
use crate::fusion::{fit_built, DiagnosticConfig};
use crate::mcmc::ChainConfig;
use crate::model::ModelMode;
use crate::par::{self, Execution};
use crate::sim::{derive_seed, ReplicateWorld, ScenarioGenerator, SimSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyVariant {
    Full,
    NoProxy,
    NoDiscrepancy,
    LargeScale,
    FixBeta1,
    ProxyAsCovariate,
}

impl StudyVariant {
    pub const ALL: [StudyVariant; 6] = [
        StudyVariant::Full,
        StudyVariant::NoProxy,
        StudyVariant::NoDiscrepancy,
        StudyVariant::LargeScale,
        StudyVariant::FixBeta1,
        StudyVariant::ProxyAsCovariate,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StudyVariant::Full => "full",
            StudyVariant::NoProxy => "no_proxy",
            StudyVariant::NoDiscrepancy => "no_discrepancy",
            StudyVariant::LargeScale => "large_scale",
            StudyVariant::FixBeta1 => "fix_beta1",
            StudyVariant::ProxyAsCovariate => "proxy_as_covariate",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant {s}")))
    }

    /// Whether the variant is run for the sparse scenario.
    pub fn runs_in_sparse(&self) -> bool {
        matches!(self, StudyVariant::Full | StudyVariant::NoProxy | StudyVariant::ProxyAsCovariate)
    }

    /// Applies the variant to a base model configuration.
    pub fn configure(&self, base: &ModelConfig, large_scale_kappa: f64) -> ModelConfig {
        let mut c = base.clone();
        let v = &mut c.variant;
        match self {
            StudyVariant::Full => {}
            StudyVariant::NoProxy => v.mode = ModelMode::NoProxy,
            StudyVariant::NoDiscrepancy => v.include_discrepancy = false,
            StudyVariant::LargeScale => v.fix_kappa = Some(large_scale_kappa),
            StudyVariant::FixBeta1 => v.fix_beta1 = Some(1.0),
            StudyVariant::ProxyAsCovariate => v.mode = ModelMode::ProxyAsCovariate,
        }
        if *self == StudyVariant::NoProxy || *self == StudyVariant::ProxyAsCovariate {
            v.fix_beta1 = None;
            v.fix_kappa = None;
            v.orthogonalize = false;
        }
        c
    }
}

impl fmt::Display for StudyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub settings: SimSettings,
    pub scenarios: Vec<u8>,
    pub variants: Vec<StudyVariant>,
    pub replicates: usize,
    pub seed: u64,
    pub chain: ChainConfig,
    /// Fitting model shared by all variants before the variant flags are applied.
    pub model: ModelConfig,
    pub large_scale_kappa: f64,
    pub diagnostic: DiagnosticConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            settings: SimSettings::desk(),
            scenarios: vec![1, 2, 3, 4, 5, 6],
            variants: StudyVariant::ALL.to_vec(),
            replicates: 3,
            seed: 2024,
            chain: ChainConfig {
                burn_in: 1000,
                post_burn: 2000,
                thin: 5,
                latent_stride: 20,
                ..ChainConfig::default()
            },
            model: simulation_model(30),
            large_scale_kappa: 1000.0,
            diagnostic: DiagnosticConfig::default(),
        }
    }
}

/// The fitting model for simulated data: the misspecified land-use covariates
/// and truncated road distances as linear terms, plus a thin-plate spatial spline.
pub fn simulation_model(spatial_knots: usize) -> ModelConfig {
    ModelConfig {
        obs_linear: vec!["d1".into(), "d2".into()],
        grid_linear: vec!["log_pop".into(), "elev_trunc".into(), "road3".into(), "log_emis".into()],
        residual: ResidualKind::Spline { knots: spatial_knots },
        ..ModelConfig::default()
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.settings.validate()?;
        self.chain.validate()?;
        self.model.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.scenarios.is_empty() || self.variants.is_empty() {
            return Err(Error::Config("study needs at least one scenario and one variant".into()));
        }
        for s in &self.scenarios {
            crate::sim::scenario_shape(*s)?;
        }
        Ok(())
    }
}

/// Identifies one fit. The no-proxy fit of scenarios 1-5 is shared and keyed
/// by `data_scenario = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct JobKey {
    pub replicate: usize,
    pub data_scenario: u8,
    pub variant: StudyVariant,
}

impl JobKey {
    fn scenario_for_data(&self) -> u8 {
        if self.data_scenario == 0 {
            1
        } else {
            self.data_scenario
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub key: JobKey,
    pub mspe: Option<f64>,
    /// Share of land cells whose truth lies in the 90% posterior interval.
    pub coverage: Option<f64>,
    pub mean_sd: Option<f64>,
    pub beta1_mean: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub diagnostic: Option<DiagnosticCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub variant: StudyVariant,
    pub scenario: u8,
    pub mean_mspe: f64,
    pub std_error: f64,
    pub n_ok: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub scenario: u8,
    pub minuend: StudyVariant,
    pub subtrahend: StudyVariant,
    pub mean: f64,
    pub std_error: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub jobs: Vec<JobResult>,
    pub table: Vec<TableCell>,
    pub paired: Vec<PairedDifference>,
}

impl StudyResult {
    pub fn cell(&self, variant: StudyVariant, scenario: u8) -> Option<&TableCell> {
        self.table.iter().find(|c| c.variant == variant && c.scenario == scenario)
    }

    pub fn paired(&self, scenario: u8, a: StudyVariant, b: StudyVariant) -> Option<&PairedDifference> {
        self.paired
            .iter()
            .find(|p| p.scenario == scenario && p.minuend == a && p.subtrahend == b)
    }

    /// Job result behind a table cell for one replicate.
    pub fn job(&self, replicate: usize, variant: StudyVariant, scenario: u8) -> Option<&JobResult> {
        let key = job_key(replicate, scenario, variant);
        self.jobs.iter().find(|j| j.key == key)
    }
}

fn job_key(replicate: usize, scenario: u8, variant: StudyVariant) -> JobKey {
    let data_scenario = if variant == StudyVariant::NoProxy && scenario <= 5 { 0 } else { scenario };
    JobKey { replicate, data_scenario, variant }
}

/// Comparisons reported alongside the table, as (minuend, subtrahend).
pub const PAIRED_COMPARISONS: [(StudyVariant, StudyVariant); 5] = [
    (StudyVariant::Full, StudyVariant::NoProxy),
    (StudyVariant::NoDiscrepancy, StudyVariant::Full),
    (StudyVariant::LargeScale, StudyVariant::Full),
    (StudyVariant::FixBeta1, StudyVariant::Full),
    (StudyVariant::ProxyAsCovariate, StudyVariant::NoProxy),
];

fn variant_tag(v: StudyVariant) -> u64 {
    StudyVariant::ALL.iter().position(|x| *x == v).expect("listed") as u64
}

fn run_job(gen: &ScenarioGenerator, cfg: &StudyConfig, key: JobKey, world: &ReplicateWorld) -> JobResult {
    let mut out = JobResult {
        key,
        mspe: None,
        coverage: None,
        mean_sd: None,
        beta1_mean: None,
        error: None,
        diagnostic: None,
    };
    let attempt = || -> Result<JobResult> {
        let data = world.scenario(key.scenario_for_data(), &gen.settings, key.replicate)?;
        let model_cfg = key.variant.configure(&cfg.model, cfg.large_scale_kappa);
        let dataset = if key.variant == StudyVariant::NoProxy {
            data.dataset.without_proxy()
        } else {
            data.dataset.clone()
        };
        let built = build_model(&dataset, &model_cfg)?;
        let seed = derive_seed(
            cfg.seed,
            key.replicate as u64,
            1000 + 10 * key.data_scenario as u64 + variant_tag(key.variant),
        );
        let chain = ChainConfig { seed, ..cfg.chain.clone() };
        let fit = fit_built(built, &chain, &cfg.diagnostic)?;
        let land = data.land_mask();
        let z = 1.6448536269514722;
        let (mut covered, mut sd_sum, mut n) = (0usize, 0.0, 0usize);
        for i in 0..land.len() {
            if land[i] {
                n += 1;
                sd_sum += fit.surface_sd[i];
                if (data.truth[i] - fit.surface_mean[i]).abs() <= z * fit.surface_sd[i] {
                    covered += 1;
                }
            }
        }
        Ok(JobResult {
            mspe: Some(mspe(&fit.surface_mean, &data.truth, land)?),
            coverage: Some(covered as f64 / n as f64),
            mean_sd: Some(sd_sum / n as f64),
            beta1_mean: fit.chain.posterior_mean("beta1"),
            diagnostic: fit.diagnostic,
            ..out.clone()
        })
    };
    match attempt() {
        Ok(r) => r,
        Err(e) => {
            log::warn!(
                "replicate {} scenario {} variant {} failed: {e}",
                key.replicate,
                key.data_scenario,
                key.variant
            );
            out.error = Some(e.to_string());
            out
        }
    }
}

/// The distinct fits a study needs, in a fixed order.
pub fn plan_jobs(cfg: &StudyConfig) -> Vec<JobKey> {
    let mut keys = Vec::new();
    for r in 0..cfg.replicates {
        for &s in &cfg.scenarios {
            for &v in &cfg.variants {
                if s == 6 && !v.runs_in_sparse() {
                    continue;
                }
                let k = job_key(r, s, v);
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
        }
    }
    keys
}

pub fn run_study(cfg: &StudyConfig, exec: Execution) -> Result<StudyResult> {
    cfg.validate()?;
    let gen = ScenarioGenerator::new(cfg.settings.clone())?;
    let keys = plan_jobs(cfg);
    let jobs = par::map(exec, keys, |key| match gen.replicate(cfg.seed, key.replicate) {
        Ok(world) => run_job(&gen, cfg, key, &world),
        Err(e) => JobResult {
            key,
            mspe: None,
            coverage: None,
            mean_sd: None,
            beta1_mean: None,
            error: Some(e.to_string()),
            diagnostic: None,
        },
    });
    let failed = jobs.iter().filter(|j| j.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} of {} fits failed and are excluded", jobs.len());
    }
    Ok(summarize(cfg, jobs))
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
    } else {
        f64::NAN
    };
    (m, se)
}

pub fn summarize(cfg: &StudyConfig, jobs: Vec<JobResult>) -> StudyResult {
    let by_key: BTreeMap<JobKey, &JobResult> = jobs.iter().map(|j| (j.key, j)).collect();
    let lookup = |r: usize, s: u8, v: StudyVariant| by_key.get(&job_key(r, s, v)).and_then(|j| j.mspe);
    let mut table = Vec::new();
    for &v in &cfg.variants {
        for &s in &cfg.scenarios {
            if s == 6 && !v.runs_in_sparse() {
                continue;
            }
            let vals: Vec<f64> = (0..cfg.replicates).filter_map(|r| lookup(r, s, v)).collect();
            let n_failed = cfg.replicates - vals.len();
            let (mean_mspe, std_error) = if vals.is_empty() { (f64::NAN, f64::NAN) } else { mean_se(&vals) };
            table.push(TableCell {
                variant: v,
                scenario: s,
                mean_mspe,
                std_error,
                n_ok: vals.len(),
                n_failed,
            });
        }
    }
    let mut paired = Vec::new();
    for &s in &cfg.scenarios {
        for (a, b) in PAIRED_COMPARISONS {
            if !cfg.variants.contains(&a) || !cfg.variants.contains(&b) {
                continue;
            }
            if s == 6 && !(a.runs_in_sparse() && b.runs_in_sparse()) {
                continue;
            }
            let diffs: Vec<f64> = (0..cfg.replicates)
                .filter_map(|r| Some(lookup(r, s, a)? - lookup(r, s, b)?))
                .collect();
            if diffs.is_empty() {
                continue;
            }
            let (mean, std_error) = mean_se(&diffs);
            paired.push(PairedDifference {
                scenario: s,
                minuend: a,
                subtrahend: b,
                mean,
                std_error,
                n_pairs: diffs.len(),
            });
        }
    }
    StudyResult { jobs, table, paired }
}
