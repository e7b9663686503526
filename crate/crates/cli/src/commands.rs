//! The five commands. Each validates its configuration, computes, and writes
//! CSV outputs plus a `manifest.json` into the output directory.

use std::path::{Path, PathBuf};

use anyhow::Result;
use serde_json::json;

use proxyfuse::data::{Dataset, Table};
use proxyfuse::diagnostics::{empirical_variogram, Bins, DiagnosticCurve, Variogram};
use proxyfuse::fusion::{cross_validate_dataset, fit, predict_observations, DiagnosticConfig, FitOutput};
use proxyfuse::grid::RegularGrid;
use proxyfuse::sim::ScenarioGenerator;
use proxyfuse::study::{run_study, StudyResult, StudyVariant};
use proxyfuse::Error;

use crate::config::{DataPaths, GridConfig, RunConfig};
use crate::io::{self, fmt, fmt_opt};

fn build_grid(g: &GridConfig) -> Result<RegularGrid> {
    let origin = (g.origin[0], g.origin[1]);
    let n = g.nrow * g.ncol;
    let mask = match &g.land_mask {
        Some(p) => io::read_land_mask(p, n)?,
        None => vec![true; n],
    };
    Ok(RegularGrid::with_mask(g.nrow, g.ncol, g.cell_size, origin, mask)?)
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    cfg.validate_for_data()?;
    let grid = build_grid(cfg.grid.as_ref().expect("validated"))?;
    let d = cfg.data.as_ref().expect("validated");
    let (observations, obs_covariates) = io::read_observations(&d.observations, true)?;
    let grid_covariates = match &d.grid_covariates {
        Some(p) => io::read_grid_covariates(p, grid.len())?,
        None => Table::new(grid.len()),
    };
    let proxy = match &d.proxy {
        Some(p) => {
            let pg = cfg.proxy_grid.as_ref().map(build_grid).transpose()?;
            let m = pg.as_ref().map_or(grid.len(), RegularGrid::len);
            Some(io::read_proxy(p, pg, m, d.proxy_n_month)?)
        }
        None => None,
    };
    let data = Dataset {
        grid,
        observations,
        obs_covariates,
        grid_covariates,
        proxy,
    };
    data.validate()?;
    Ok(data)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn manifest(mut self, command: &str, cfg: &RunConfig, seed: u64, summary: serde_json::Value) -> Result<()> {
        let path = self.path("manifest.json");
        let m = json!({
            "command": command,
            "seed": seed,
            "config": cfg,
            "summary": summary,
            "files": self.files,
        });
        std::fs::write(path, serde_json::to_string_pretty(&m)? + "\n")?;
        Ok(())
    }
}

fn write_curve(path: &Path, c: &DiagnosticCurve) -> Result<()> {
    let rows = (0..c.centers.len()).map(|k| {
        let defined = c.draws.iter().filter(|d| d[k].is_some()).count();
        vec![fmt(c.centers[k]), fmt_opt(c.values[k]), c.counts[k].to_string(), defined.to_string()]
    });
    io::write_csv(path, &["center", "value", "count", "draws"], rows)
}

fn write_variogram(path: &Path, v: &Variogram) -> Result<()> {
    let centers = v.centers();
    let rows = (0..centers.len()).map(|k| {
        vec![fmt(centers[k]), fmt(v.semivariance[k]), v.counts[k].to_string(), fmt(v.std_error[k])]
    });
    io::write_csv(path, &["center", "semivariance", "count", "std_error"], rows)
}

fn chain_summary(f: &FitOutput) -> serde_json::Value {
    let c = &f.chain;
    let params: Vec<_> = c
        .param_names
        .iter()
        .zip(&c.ess)
        .map(|(n, e)| json!({ "name": n, "mean": c.posterior_mean(n), "ess": e.value, "constant": e.constant }))
        .collect();
    let blocks: Vec<_> = c
        .blocks
        .iter()
        .enumerate()
        .map(|(k, b)| {
            json!({
                "parameters": b,
                "acceptance": c.acceptance[k],
                "post_burn_acceptance": c.post_burn_acceptance[k],
            })
        })
        .collect();
    json!({
        "draws": c.theta_trace.len(),
        "latent_draws": c.latents.len(),
        "numeric_rejections": c.numeric_rejections,
        "parameters": params,
        "blocks": blocks,
        "discrepancy_diagnostic": f.diagnostic.is_some(),
    })
}

fn write_fit(out: &mut Outputs, data: &Dataset, f: &FitOutput) -> Result<()> {
    let c = &f.chain;
    let mut headers: Vec<&str> = vec!["draw"];
    headers.extend(c.param_names.iter().map(String::as_str));
    headers.push("log_posterior");
    let rows = c.theta_trace.iter().zip(&c.log_posterior).enumerate().map(|(i, (t, lp))| {
        let mut r = vec![i.to_string()];
        r.extend(t.iter().map(|v| fmt(*v)));
        r.push(fmt(*lp));
        r
    });
    io::write_csv(&out.path("trace.csv"), &headers, rows)?;

    let n_delta = c.delta_trace.first().map_or(0, Vec::len);
    if n_delta > 0 {
        let names: Vec<String> = (0..n_delta).map(|k| format!("delta_{k}")).collect();
        let mut headers: Vec<&str> = vec!["draw"];
        headers.extend(names.iter().map(String::as_str));
        let rows = c.delta_trace.iter().enumerate().map(|(i, d)| {
            let mut r = vec![i.to_string()];
            r.extend(d.iter().map(|v| fmt(*v)));
            r
        });
        io::write_csv(&out.path("delta_trace.csv"), &headers, rows)?;
    }

    io::write_cell_fields(
        &out.path("surface.csv"),
        &data.grid,
        &[("mean", &f.surface_mean), ("sd", &f.surface_sd)],
    )?;

    if !c.latents.is_empty() {
        let k = c.latents.len() as f64;
        let rows = f.model.coef_names.iter().enumerate().map(|(j, name)| {
            let m = c.latents.iter().map(|r| r.mean.b[j]).sum::<f64>() / k;
            vec![name.clone(), fmt(m)]
        });
        io::write_csv(&out.path("coefficients.csv"), &["name", "mean"], rows)?;
    }

    if let Some(curve) = &f.diagnostic {
        write_curve(&out.path("discrepancy_ratio.csv"), curve)?;
    }
    Ok(())
}

pub fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let f = fit(&data, &cfg.model, &cfg.chain, &cfg.diagnostic)?;
    write_fit(&mut out, &data, &f)?;
    out.manifest("fit", cfg, cfg.chain.seed, chain_summary(&f))
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let sites = cfg
        .predict
        .as_ref()
        .ok_or_else(|| Error::Config("predict needs a [predict] section with `sites`".into()))?;
    if !sites.sites.is_file() {
        return Err(Error::Config(format!("referenced file {} does not exist", sites.sites.display())).into());
    }
    let data = load_dataset(cfg)?;
    let (new_obs, new_cov) = io::read_observations(&sites.sites, false)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let f = fit(&data, &cfg.model, &cfg.chain, &cfg.diagnostic)?;
    let (mean, sd) = predict_observations(&f, &data.grid, &data.grid_covariates, &new_obs, &new_cov)?;
    let rows = new_obs.iter().enumerate().map(|(i, o)| {
        vec![i.to_string(), o.site.to_string(), fmt(o.x), fmt(o.y), fmt(mean[i]), fmt(sd[i])]
    });
    io::write_csv(&out.path("predictions.csv"), &["row", "site", "x", "y", "mean", "sd"], rows)?;
    write_fit(&mut out, &data, &f)?;
    let mut summary = chain_summary(&f);
    summary["predicted_sites"] = json!(new_obs.len());
    out.manifest("predict", cfg, cfg.chain.seed, summary)
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let diag = DiagnosticConfig { enabled: true, ..cfg.diagnostic.clone() };
    let chain = proxyfuse::mcmc::ChainConfig { keep_latents: true, ..cfg.chain.clone() };
    let f = fit(&data, &cfg.model, &chain, &diag)?;
    write_fit(&mut out, &data, &f)?;

    let bins_for = |g: &RegularGrid| {
        if diag.bin_edges.is_empty() {
            Bins::unit_lags(g)
        } else {
            Bins { edges: diag.bin_edges.clone() }
        }
    };
    let base = &data.grid;
    let v = empirical_variogram(base, &f.surface_mean, base.land_mask(), &bins_for(base), &diag.budget)?;
    write_variogram(&out.path("variogram_surface.csv"), &v)?;
    if let (Some(pg), Some(proxy)) = (&f.model.discrepancy_grid, &data.proxy) {
        let values: Vec<f64> = proxy.values.iter().map(|v| v.unwrap_or(0.0)).collect();
        let v = empirical_variogram(pg, &values, pg.land_mask(), &bins_for(pg), &diag.budget)?;
        write_variogram(&out.path("variogram_proxy.csv"), &v)?;
        let phis: Vec<&Vec<f64>> = f.chain.latents.iter().filter_map(|r| r.mean.phi.as_ref()).collect();
        if !phis.is_empty() {
            let k = phis.len() as f64;
            let mean: Vec<f64> = (0..pg.len()).map(|i| phis.iter().map(|p| p[i]).sum::<f64>() / k).collect();
            let v = empirical_variogram(pg, &mean, pg.land_mask(), &bins_for(pg), &diag.budget)?;
            write_variogram(&out.path("variogram_discrepancy.csv"), &v)?;
        }
    }
    out.manifest("diagnose", cfg, cfg.chain.seed, chain_summary(&f))
}

pub fn cmd_cv(cfg: &RunConfig) -> Result<()> {
    let data = load_dataset(cfg)?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    let cv = cross_validate_dataset(&data, &cfg.model, &cfg.chain, cfg.cv.folds, cfg.cv.seed, cfg.execution.into())?;
    let mut fold_of = vec![0usize; data.observations.len()];
    for (k, rows) in cv.plan.test_rows.iter().enumerate() {
        rows.iter().for_each(|&i| fold_of[i] = k);
    }
    let rows = data.observations.iter().enumerate().map(|(i, o)| {
        vec![
            i.to_string(),
            o.site.to_string(),
            fold_of[i].to_string(),
            fmt(o.value),
            fmt(cv.mean[i]),
            fmt(cv.sd[i]),
        ]
    });
    io::write_csv(
        &out.path("cv_predictions.csv"),
        &["row", "site", "fold", "observed", "mean", "sd"],
        rows,
    )?;
    let score_row = |label: String, s: &proxyfuse::diagnostics::PredictiveScores| {
        vec![label, s.n.to_string(), fmt(s.r2), fmt(s.rmspe), fmt(s.coverage)]
    };
    let mut rows: Vec<Vec<String>> =
        cv.per_fold.iter().enumerate().map(|(k, s)| score_row(k.to_string(), s)).collect();
    rows.push(score_row("pooled".into(), &cv.pooled));
    io::write_csv(&out.path("cv_scores.csv"), &["fold", "n", "r2", "rmspe", "coverage"], rows)?;
    let summary = json!({
        "folds": cv.plan.n_folds(),
        "merged_folds": cv.plan.merged,
        "pooled": { "r2": cv.pooled.r2, "rmspe": cv.pooled.rmspe, "coverage": cv.pooled.coverage, "n": cv.pooled.n },
    });
    out.manifest("cv", cfg, cfg.chain.seed, summary)
}

fn write_study(out: &mut Outputs, cfg: &RunConfig, r: &StudyResult) -> Result<()> {
    let study = &cfg.study;
    let names: Vec<String> = study
        .scenarios
        .iter()
        .flat_map(|s| [format!("s{s}_mean"), format!("s{s}_se")])
        .collect();
    let mut headers = vec!["model"];
    headers.extend(names.iter().map(String::as_str));
    let rows = study.variants.iter().map(|&v| {
        let mut row = vec![v.name().to_string()];
        for &s in &study.scenarios {
            match r.cell(v, s) {
                Some(c) => row.extend([fmt(c.mean_mspe), fmt(c.std_error)]),
                None => row.extend([String::new(), String::new()]),
            }
        }
        row
    });
    io::write_csv(&out.path("table1.csv"), &headers, rows)?;

    let rows = r.table.iter().map(|c| {
        vec![
            c.variant.name().into(),
            c.scenario.to_string(),
            fmt(c.mean_mspe),
            fmt(c.std_error),
            c.n_ok.to_string(),
            c.n_failed.to_string(),
        ]
    });
    io::write_csv(
        &out.path("table1_long.csv"),
        &["model", "scenario", "mean_mspe", "std_error", "n_ok", "n_failed"],
        rows,
    )?;

    let rows = r.paired.iter().map(|p| {
        vec![
            p.scenario.to_string(),
            p.minuend.name().into(),
            p.subtrahend.name().into(),
            fmt(p.mean),
            fmt(p.std_error),
            p.n_pairs.to_string(),
        ]
    });
    io::write_csv(
        &out.path("paired_differences.csv"),
        &["scenario", "model", "minus", "mean_difference", "std_error", "n_pairs"],
        rows,
    )?;

    let rows = r.jobs.iter().map(|j| {
        vec![
            j.key.replicate.to_string(),
            j.key.data_scenario.to_string(),
            j.key.variant.name().into(),
            fmt_opt(j.mspe),
            fmt_opt(j.coverage),
            fmt_opt(j.mean_sd),
            fmt_opt(j.beta1_mean),
            j.error.clone().unwrap_or_default(),
        ]
    });
    io::write_csv(
        &out.path("jobs.csv"),
        &["replicate", "scenario", "model", "mspe", "coverage", "mean_sd", "beta1_mean", "error"],
        rows,
    )?;
    Ok(())
}

/// Writes each simulated replicate as a dataset `fit` can read, with a ready config.
fn export_datasets(out: &mut Outputs, cfg: &RunConfig) -> Result<()> {
    let study = &cfg.study;
    let gen = ScenarioGenerator::new(study.settings.clone())?;
    for r in 0..study.replicates {
        let world = gen.replicate(study.seed, r)?;
        for &s in &study.scenarios {
            let rd = world.scenario(s, &gen.settings, r)?;
            let name = format!("datasets/r{r}_s{s}");
            let ds = &rd.dataset;
            io::write_observations(&out.path(&format!("{name}/observations.csv")), &ds.observations, &ds.obs_covariates)?;
            io::write_grid_covariates(&out.path(&format!("{name}/grid_covariates.csv")), &ds.grid_covariates)?;
            io::write_land_mask(&out.path(&format!("{name}/land.csv")), &ds.grid)?;
            io::write_cell_fields(&out.path(&format!("{name}/truth.csv")), &ds.grid, &[("truth", &rd.truth)])?;
            let proxy = ds.proxy.as_ref().expect("simulated data has a proxy");
            io::write_proxy(&out.path(&format!("{name}/proxy.csv")), proxy)?;
            let fit_cfg = RunConfig {
                output_dir: PathBuf::from("fit"),
                execution: cfg.execution,
                grid: Some(GridConfig::from_grid(&ds.grid, Some("land.csv".into()))),
                proxy_grid: proxy.grid.as_ref().map(|g| GridConfig::from_grid(g, None)),
                data: Some(DataPaths {
                    observations: "observations.csv".into(),
                    grid_covariates: Some("grid_covariates.csv".into()),
                    proxy: Some("proxy.csv".into()),
                    proxy_n_month: proxy.n_month,
                }),
                model: study.model.clone(),
                chain: study.chain.clone(),
                diagnostic: study.diagnostic.clone(),
                ..RunConfig::default()
            };
            std::fs::write(out.path(&format!("{name}/fit.toml")), fit_cfg.to_toml()?)?;
        }
    }
    Ok(())
}

pub fn cmd_simulate_study(cfg: &RunConfig) -> Result<()> {
    cfg.study.validate()?;
    let mut out = Outputs::new(&cfg.output_dir)?;
    if cfg.export_datasets {
        export_datasets(&mut out, cfg)?;
    }
    let r = run_study(&cfg.study, cfg.execution.into())?;
    write_study(&mut out, cfg, &r)?;
    let failed = r.jobs.iter().filter(|j| j.error.is_some()).count();
    let summary = json!({
        "fits": r.jobs.len(),
        "failed_fits": failed,
        "replicates": cfg.study.replicates,
        "scenarios": cfg.study.scenarios,
        "models": cfg.study.variants.iter().map(StudyVariant::name).collect::<Vec<_>>(),
    });
    out.manifest("simulate-study", cfg, cfg.study.seed, summary)
}
