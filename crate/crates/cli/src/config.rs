//! Run configuration: a single TOML file whose keys can be overridden with
//! `--set key.path=value`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use proxyfuse::build::ModelConfig;
use proxyfuse::fusion::DiagnosticConfig;
use proxyfuse::grid::RegularGrid;
use proxyfuse::mcmc::ChainConfig;
use proxyfuse::par::Execution;
use proxyfuse::study::StudyConfig;
use proxyfuse::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionMode {
    #[default]
    Parallel,
    Sequential,
}

impl From<ExecutionMode> for Execution {
    fn from(m: ExecutionMode) -> Self {
        match m {
            ExecutionMode::Parallel => Execution::Parallel,
            ExecutionMode::Sequential => Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nrow: usize,
    pub ncol: usize,
    #[serde(default = "unit")]
    pub cell_size: f64,
    #[serde(default)]
    pub origin: [f64; 2],
    /// CSV with a 0/1 `land` column in row-major cell order; all land when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub land_mask: Option<PathBuf>,
}

fn unit() -> f64 {
    1.0
}

impl GridConfig {
    pub fn from_grid(grid: &RegularGrid, land_mask: Option<PathBuf>) -> Self {
        let (x0, y0) = grid.origin();
        Self {
            nrow: grid.nrow(),
            ncol: grid.ncol(),
            cell_size: grid.cell_size(),
            origin: [x0, y0],
            land_mask,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Columns `site, x, y, value, n_days, n_month`, optional `colocated`;
    /// every other column is an observation-level covariate.
    pub observations: PathBuf,
    /// One row per base cell; an optional `cell` column must count up from 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_covariates: Option<PathBuf>,
    /// Columns `cell, value`, optional `count`; one row per proxy cell, empty value when missing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<PathBuf>,
    #[serde(default = "one")]
    pub proxy_n_month: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    /// Sites in the observation format; `value` may be absent.
    pub sites: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { folds: 10, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub execution: ExecutionMode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    /// Lattice of the proxy; the base grid when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proxy_grid: Option<GridConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<DataPaths>,
    pub model: ModelConfig,
    pub chain: ChainConfig,
    pub diagnostic: DiagnosticConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predict: Option<PredictConfig>,
    pub cv: CvConfig,
    pub study: StudyConfig,
    /// Write every simulated replicate as a fit-ready dataset.
    pub export_datasets: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            execution: ExecutionMode::default(),
            grid: None,
            proxy_grid: None,
            data: None,
            model: ModelConfig::default(),
            chain: ChainConfig::default(),
            diagnostic: DiagnosticConfig::default(),
            predict: None,
            cv: CvConfig::default(),
            study: StudyConfig::default(),
            export_datasets: false,
        }
    }
}

fn config_error(msg: String) -> anyhow::Error {
    Error::Config(msg).into()
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| config_error(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(config_error(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_error(format!("override {key}: {part} is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(value.trim()));
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads the file, applies overrides, and resolves relative paths
    /// against the file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        if !overrides.is_empty() {
            let mut table: toml::Table = toml::from_str(&text).expect("parsed above");
            for o in overrides {
                apply_override(&mut table, o)?;
            }
            cfg = RunConfig::deserialize(toml::Value::Table(table))
                .map_err(|e| config_error(format!("after overrides {overrides:?}: {e}")))?;
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        for g in [&mut self.grid, &mut self.proxy_grid].into_iter().flatten() {
            if let Some(p) = g.land_mask.as_mut() {
                resolve(base, p);
            }
        }
        if let Some(d) = self.data.as_mut() {
            resolve(base, &mut d.observations);
            for p in [&mut d.grid_covariates, &mut d.proxy].into_iter().flatten() {
                resolve(base, p);
            }
        }
        if let Some(p) = self.predict.as_mut() {
            resolve(base, &mut p.sites);
        }
    }

    /// Checks everything a data-driven command needs before any compute.
    pub fn validate_for_data(&self) -> Result<()> {
        let grid = self
            .grid
            .as_ref()
            .ok_or_else(|| config_error("missing [grid] section".into()))?;
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| config_error("missing [data] section".into()))?;
        let mut files = vec![&data.observations];
        files.extend(data.grid_covariates.iter());
        files.extend(data.proxy.iter());
        files.extend(grid.land_mask.iter());
        files.extend(self.proxy_grid.iter().filter_map(|g| g.land_mask.as_ref()));
        for f in files {
            if !f.is_file() {
                return Err(config_error(format!("referenced file {} does not exist", f.display())));
            }
        }
        if self.proxy_grid.is_some() && data.proxy.is_none() {
            return Err(config_error("[proxy_grid] given without data.proxy".into()));
        }
        self.model.validate()?;
        self.chain.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).context("serializing the resolved configuration")
    }
}
