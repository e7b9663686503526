//! CSV readers and writers. Numbers are written in the shortest form that
//! parses back to the same double.

use std::fs::File;
use std::path::Path;

use anyhow::Result;

use proxyfuse::data::{Observation, ProxyData, Table};
use proxyfuse::grid::RegularGrid;
use proxyfuse::Error;

const OBS_FIELDS: [&str; 7] = ["site", "x", "y", "value", "n_days", "n_month", "colocated"];

pub fn fmt(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        v.to_string()
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// A CSV file held in memory, with line numbers for error messages.
struct Sheet {
    path: String,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn data_error(msg: String) -> anyhow::Error {
    Error::Data(msg).into()
}

impl Sheet {
    fn read(path: &Path) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let shown = path.display().to_string();
        let headers = rdr
            .headers()
            .map_err(|e| data_error(format!("{shown}: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| data_error(format!("{shown}: {e}")))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec.iter().map(str::to_string).collect()));
        }
        Ok(Self { path: shown, headers, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| data_error(format!("{}: missing column {name:?}", self.path)))
    }

    fn cell(&self, row: usize, col: usize) -> &str {
        self.rows[row].1.get(col).map(String::as_str).unwrap_or("")
    }

    fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        let s = self.cell(row, col);
        s.parse().map_err(|_| {
            data_error(format!(
                "{} line {}: column {:?} has invalid value {s:?}",
                self.path, self.rows[row].0, self.headers[col]
            ))
        })
    }

    fn parse_opt(&self, row: usize, col: usize) -> Result<Option<f64>> {
        if self.cell(row, col).is_empty() {
            Ok(None)
        } else {
            self.parse(row, col).map(Some)
        }
    }

    fn parse_bool(&self, row: usize, col: usize) -> Result<bool> {
        match self.cell(row, col) {
            "1" | "true" | "TRUE" | "True" => Ok(true),
            "0" | "false" | "FALSE" | "False" | "" => Ok(false),
            s => Err(data_error(format!(
                "{} line {}: {:?} is not a boolean",
                self.path, self.rows[row].0, s
            ))),
        }
    }

    /// Remaining numeric columns as a covariate table.
    fn covariates(&self, skip: &[&str]) -> Result<Table> {
        let mut t = Table::new(self.rows.len());
        for (j, h) in self.headers.iter().enumerate() {
            if skip.contains(&h.as_str()) {
                continue;
            }
            let v = (0..self.rows.len()).map(|i| self.parse(i, j)).collect::<Result<_>>()?;
            t.push(h.clone(), v)?;
        }
        Ok(t)
    }

    fn check_cells(&self, n: usize) -> Result<()> {
        if self.rows.len() != n {
            return Err(data_error(format!("{}: expected {n} rows (one per cell), found {}", self.path, self.rows.len())));
        }
        if let Some(c) = self.column("cell") {
            for i in 0..n {
                if self.parse::<usize>(i, c)? != i {
                    return Err(data_error(format!(
                        "{} line {}: cells must be listed in order 0..{n}",
                        self.path, self.rows[i].0
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn read_land_mask(path: &Path, n: usize) -> Result<Vec<bool>> {
    let s = Sheet::read(path)?;
    s.check_cells(n)?;
    let c = s.require("land")?;
    (0..n).map(|i| s.parse_bool(i, c)).collect()
}

/// Observations and their covariates. `need_value` is false for prediction sites.
pub fn read_observations(path: &Path, need_value: bool) -> Result<(Vec<Observation>, Table)> {
    let s = Sheet::read(path)?;
    let x = s.require("x")?;
    let y = s.require("y")?;
    let site = s.column("site");
    let value = if need_value { Some(s.require("value")?) } else { s.column("value") };
    let n_days = s.column("n_days");
    let n_month = s.column("n_month");
    let colocated = s.column("colocated");
    let mut obs = Vec::with_capacity(s.rows.len());
    for i in 0..s.rows.len() {
        obs.push(Observation {
            site: site.map(|c| s.parse(i, c)).transpose()?.unwrap_or(i),
            x: s.parse(i, x)?,
            y: s.parse(i, y)?,
            value: match value {
                Some(c) => s.parse_opt(i, c)?.unwrap_or(f64::NAN),
                None => f64::NAN,
            },
            n_days: n_days.map(|c| s.parse(i, c)).transpose()?.unwrap_or(1),
            n_month: n_month.map(|c| s.parse(i, c)).transpose()?.unwrap_or(1),
            colocated: colocated.map(|c| s.parse_bool(i, c)).transpose()?.unwrap_or(false),
        });
    }
    if need_value {
        if let Some(i) = obs.iter().position(|o| !o.value.is_finite()) {
            return Err(data_error(format!("{} line {}: missing observation value", s.path, s.rows[i].0)));
        }
    }
    let cov = s.covariates(&OBS_FIELDS)?;
    Ok((obs, cov))
}

pub fn read_grid_covariates(path: &Path, n: usize) -> Result<Table> {
    let s = Sheet::read(path)?;
    s.check_cells(n)?;
    s.covariates(&["cell"])
}

pub fn read_proxy(path: &Path, grid: Option<RegularGrid>, n_cells: usize, n_month: u32) -> Result<ProxyData> {
    let s = Sheet::read(path)?;
    s.check_cells(n_cells)?;
    let v = s.require("value")?;
    let values = (0..n_cells).map(|i| s.parse_opt(i, v)).collect::<Result<Vec<_>>>()?;
    let counts = match s.column("count") {
        Some(c) => Some((0..n_cells).map(|i| s.parse(i, c)).collect::<Result<Vec<u32>>>()?),
        None => None,
    };
    Ok(ProxyData {
        grid,
        values,
        counts,
        n_month,
        covariates: s.covariates(&["cell", "value", "count"])?,
    })
}

/// Writes a header and rows, creating parent directories.
pub fn write_csv<I>(path: &Path, headers: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(headers)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

fn table_rows<'a>(t: &'a Table, lead: impl Fn(usize) -> Vec<String> + 'a) -> impl Iterator<Item = Vec<String>> + 'a {
    (0..t.n_rows()).map(move |i| {
        let mut r = lead(i);
        r.extend(t.names().iter().map(|n| fmt(t.get(n).expect("listed")[i])));
        r
    })
}

pub fn write_observations(path: &Path, obs: &[Observation], cov: &Table) -> Result<()> {
    let mut headers: Vec<&str> = OBS_FIELDS.to_vec();
    headers.extend(cov.names().iter().map(String::as_str));
    let rows = table_rows(cov, |i| {
        let o = &obs[i];
        vec![
            o.site.to_string(),
            fmt(o.x),
            fmt(o.y),
            fmt(o.value),
            o.n_days.to_string(),
            o.n_month.to_string(),
            u8::from(o.colocated).to_string(),
        ]
    });
    write_csv(path, &headers, rows)
}

pub fn write_grid_covariates(path: &Path, cov: &Table) -> Result<()> {
    let mut headers = vec!["cell"];
    headers.extend(cov.names().iter().map(String::as_str));
    write_csv(path, &headers, table_rows(cov, |i| vec![i.to_string()]))
}

pub fn write_proxy(path: &Path, proxy: &ProxyData) -> Result<()> {
    let mut headers = vec!["cell", "value"];
    if proxy.counts.is_some() {
        headers.push("count");
    }
    headers.extend(proxy.covariates.names().iter().map(String::as_str));
    let mut cov = proxy.covariates.clone();
    if cov.n_rows() != proxy.values.len() {
        cov = Table::new(proxy.values.len());
    }
    let rows = table_rows(&cov, |i| {
        let mut r = vec![i.to_string(), fmt_opt(proxy.values[i])];
        if let Some(c) = &proxy.counts {
            r.push(c[i].to_string());
        }
        r
    });
    write_csv(path, &headers, rows)
}

pub fn write_land_mask(path: &Path, grid: &RegularGrid) -> Result<()> {
    let rows = (0..grid.len()).map(|i| vec![i.to_string(), u8::from(grid.is_land(i)).to_string()]);
    write_csv(path, &["cell", "land"], rows)
}

/// Per-cell fields with their grid positions.
pub fn write_cell_fields(path: &Path, grid: &RegularGrid, fields: &[(&str, &[f64])]) -> Result<()> {
    let mut headers = vec!["cell", "row", "col", "x", "y", "land"];
    headers.extend(fields.iter().map(|f| f.0));
    let rows = (0..grid.len()).map(|i| {
        let (r, c) = grid.row_col(i);
        let (x, y) = grid.centroid(i);
        let mut row = vec![
            i.to_string(),
            r.to_string(),
            c.to_string(),
            fmt(x),
            fmt(y),
            u8::from(grid.is_land(i)).to_string(),
        ];
        row.extend(fields.iter().map(|f| fmt(f.1[i])));
        row
    });
    write_csv(path, &headers, rows)
}
