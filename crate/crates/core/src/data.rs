//! In-memory form of the input tables: a base grid with land mask, point
//! observations, an optional gridded proxy, and named covariate columns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::RegularGrid;

/// Named numeric columns of equal length.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    rows: usize,
}

impl Table {
    pub fn new(rows: usize) -> Self {
        Self {
            names: Vec::new(),
            columns: Vec::new(),
            rows,
        }
    }

    pub fn from_columns(rows: usize, cols: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let mut t = Self::new(rows);
        for (n, c) in cols {
            t.push(n, c)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.rows {
            return Err(Error::DimensionMismatch(format!(
                "column {name} has {} rows, table has {}",
                values.len(),
                self.rows
            )));
        }
        if self.names.contains(&name) {
            return Err(Error::Data(format!("duplicate column {name}")));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|k| self.columns[k].as_slice())
            .ok_or_else(|| Error::Data(format!("unknown covariate column {name}")))
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            rows: rows.len(),
        }
    }
}

/// One monitor-month.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub site: usize,
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub n_days: u32,
    pub n_month: u32,
    /// Shares its site with another monitor; its site effect is sampled.
    pub colocated: bool,
}

/// Gridded proxy. Values are per cell of `grid`, which defaults to the base grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyData {
    pub grid: Option<RegularGrid>,
    pub values: Vec<Option<f64>>,
    /// Retrieval counts per cell; present for count-weighted proxies.
    pub counts: Option<Vec<u32>>,
    pub n_month: u32,
    /// Proxy-only covariates per proxy cell.
    pub covariates: Table,
}

impl ProxyData {
    pub fn grid<'a>(&'a self, base: &'a RegularGrid) -> &'a RegularGrid {
        self.grid.as_ref().unwrap_or(base)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub grid: RegularGrid,
    pub observations: Vec<Observation>,
    /// Covariates of the observation rows (local, within-cell effects).
    pub obs_covariates: Table,
    /// Covariates of `L`, one row per base-grid cell.
    pub grid_covariates: Table,
    pub proxy: Option<ProxyData>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let n = self.observations.len();
        if n == 0 {
            return Err(Error::Data("no observations".into()));
        }
        if self.obs_covariates.n_rows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} observation covariate rows for {n} observations",
                self.obs_covariates.n_rows()
            )));
        }
        if self.grid_covariates.n_rows() != self.grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} grid covariate rows for {} cells",
                self.grid_covariates.n_rows(),
                self.grid.len()
            )));
        }
        for (i, o) in self.observations.iter().enumerate() {
            if !o.value.is_finite() {
                return Err(Error::Data(format!("observation {i} is not finite")));
            }
            if o.n_days == 0 || o.n_days > o.n_month {
                return Err(Error::Data(format!(
                    "observation {i}: daily count {} outside 1..={}",
                    o.n_days, o.n_month
                )));
            }
            if self.grid.locate(o.x, o.y).is_none() {
                return Err(Error::PointOutsideGrid { index: i, x: o.x, y: o.y });
            }
        }
        if let Some(p) = &self.proxy {
            let g = p.grid(&self.grid);
            if p.values.len() != g.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} proxy values for {} proxy cells",
                    p.values.len(),
                    g.len()
                )));
            }
            if let Some(c) = &p.counts {
                if c.len() != g.len() {
                    return Err(Error::DimensionMismatch("proxy counts do not match proxy grid".into()));
                }
                if c.iter().zip(&p.values).any(|(c, v)| v.is_some() && (*c == 0 || *c > p.n_month)) {
                    return Err(Error::Data("proxy count outside 1..=n_month for an observed cell".into()));
                }
            }
            if p.covariates.n_rows() != g.len() {
                return Err(Error::DimensionMismatch("proxy covariates do not match proxy grid".into()));
            }
        }
        Ok(())
    }

    /// Observations restricted to `rows`, everything else shared.
    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            observations: rows.iter().map(|&i| self.observations[i].clone()).collect(),
            obs_covariates: self.obs_covariates.select_rows(rows),
            grid_covariates: self.grid_covariates.clone(),
            proxy: self.proxy.clone(),
        }
    }

    pub fn without_proxy(&self) -> Self {
        Self {
            proxy: None,
            ..self.clone()
        }
    }
}
