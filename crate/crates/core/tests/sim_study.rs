use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use proxyfuse::grid::RegularGrid;
use proxyfuse::mcmc::ChainConfig;
use proxyfuse::model::ModelMode;
use proxyfuse::par::Execution;
use proxyfuse::sim::{generate_scenario, GpSampler, Matern, ScenarioConfig, ScenarioGenerator, SimSettings};
use proxyfuse::study::{
    plan_jobs, run_study, simulation_model, summarize, JobKey, JobResult, StudyConfig, StudyVariant,
};

fn tiny() -> SimSettings {
    SimSettings {
        nrow: 12,
        ncol: 16,
        n_obs: 20,
        n_obs_sparse: 8,
        range_scale: 16.0 / 175.0,
        ..SimSettings::desk()
    }
}

fn sample_moments(s: &GpSampler, draws: usize, a: usize, b: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut va, mut vb, mut cab) = (0.0, 0.0, 0.0);
    for _ in 0..draws {
        let x = s.sample(1.0, &mut rng);
        va += x[a] * x[a];
        vb += x[b] * x[b];
        cab += x[a] * x[b];
    }
    let n = draws as f64;
    (va / n, cab / (va * vb).sqrt())
}

#[test]
fn dense_sampler_has_unit_variance_and_calibrated_range() {
    let grid = RegularGrid::unit(10, 12);
    let m = Matern::with_effective_range(2.0, 5.0).unwrap();
    let s = GpSampler::new(&grid, &m, 10_000).unwrap();
    assert!(s.is_exact());
    let (var, corr) = sample_moments(&s, 2000, grid.index(5, 3), grid.index(5, 8));
    assert!((var - 1.0).abs() < 0.15, "variance {var}");
    // correlation 0.05 at the effective range; se ≈ 0.022 at 2000 draws
    assert!((corr - 0.05).abs() < 0.08, "correlation {corr}");
    let (_, near) = sample_moments(&s, 2000, grid.index(5, 3), grid.index(5, 4));
    assert!((near - m.correlation(1.0)).abs() < 0.05, "{near} vs {}", m.correlation(1.0));
}

#[test]
fn coarse_sampler_keeps_the_variance_on_its_lattice() {
    let grid = RegularGrid::unit(21, 21);
    let m = Matern::with_effective_range(2.0, 12.0).unwrap();
    let s = GpSampler::new(&grid, &m, 150).unwrap();
    assert!(!s.is_exact());
    let (var, _) = sample_moments(&s, 1000, grid.index(0, 0), grid.index(20, 20));
    assert!((var - 1.0).abs() < 0.15, "variance {var}");
}

#[test]
fn replicates_are_deterministic_and_distinct() {
    let cfg = ScenarioConfig { scenario: 1, settings: tiny(), replicate: 0, seed: 5 };
    let a = generate_scenario(&cfg).unwrap();
    let b = generate_scenario(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_scenario(&ScenarioConfig { replicate: 1, ..cfg.clone() }).unwrap();
    assert_ne!(a.truth, c.truth);
    let d = generate_scenario(&ScenarioConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.truth, d.truth);
}

#[test]
fn scenarios_compose_the_proxy_as_specified() {
    let st = tiny();
    let gen = ScenarioGenerator::new(st.clone()).unwrap();
    let w = gen.replicate(3, 0).unwrap();
    let land = w.grid.land_cells();
    assert!(!land.is_empty() && land.len() < w.grid.len(), "mask needs land and sea");

    let s = |id| w.scenario(id, &st, 0).unwrap();
    let (s1, s2, s3, s4, s5, s6) = (s(1), s(2), s(3), s(4), s(5), s(6));
    for i in 0..w.grid.len() {
        let t = w.truth[i];
        let e = w.proxy_noise[i];
        let (pl, ps) = (w.phi_large[i], w.phi_small[i]);
        assert!((s1.proxy[i] - (pl + ps + t + e)).abs() < 1e-12);
        // no signal in the proxy
        assert!((s2.proxy[i] - (pl + ps + e)).abs() < 1e-12);
        // no discrepancy
        assert!((s3.proxy[i] - (t + e)).abs() < 1e-12);
        assert!((s4.proxy[i] - (pl + t + e)).abs() < 1e-12);
        assert!((s5.proxy[i] - (ps + t + e)).abs() < 1e-12);
    }
    assert_eq!(s2.beta1, 0.0);
    for d in [&s2, &s3, &s4, &s5] {
        assert_eq!(d.dataset.observations, s1.dataset.observations);
        assert_eq!(d.truth, s1.truth);
    }
    assert_eq!(s6.dataset.observations.len(), st.n_obs_sparse);
    assert_eq!(s6.dataset.observations[..], s1.dataset.observations[..st.n_obs_sparse]);
    assert_eq!(s6.proxy, s1.proxy);
}

#[test]
fn components_hit_their_target_spread() {
    let st = tiny();
    let gen = ScenarioGenerator::new(st.clone()).unwrap();
    let w = gen.replicate(4, 0).unwrap();
    let land = w.grid.land_cells();
    let n = land.len() as f64;
    let mean = land.iter().map(|&i| w.covariate_effect[i]).sum::<f64>() / n;
    let sd = (land.iter().map(|&i| (w.covariate_effect[i] - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd - st.covariate_effect_sd).abs() < 1e-9, "{sd}");
    for i in 0..w.grid.len() {
        assert!((w.truth[i] - w.covariate_effect[i] - w.g[i]).abs() < 1e-12);
    }
    let elev = w.fitting_covariates.get("elev_trunc").unwrap();
    assert!(elev.iter().all(|&e| e > 0.0 && e <= 500.0));
    for name in ["d1", "d2"] {
        assert!(w.obs_covariates.get(name).unwrap().iter().all(|&d| (10.0..=500.0).contains(&d)));
    }
    assert!(w.observations.iter().all(|o| w.grid.is_land(w.grid.locate(o.x, o.y).unwrap())));
}

fn job(replicate: usize, data_scenario: u8, variant: StudyVariant, mspe: Option<f64>) -> JobResult {
    JobResult {
        key: JobKey { replicate, data_scenario, variant },
        mspe,
        coverage: None,
        mean_sd: None,
        beta1_mean: None,
        error: mspe.is_none().then(|| "failed".to_string()),
        diagnostic: None,
    }
}

#[test]
fn plan_shares_no_proxy_fits_and_skips_sparse_variants() {
    let cfg = StudyConfig { replicates: 2, ..StudyConfig::default() };
    let jobs = plan_jobs(&cfg);
    // per replicate: 5 scenarios × 5 proxy models, one shared no-proxy fit, three sparse fits
    assert_eq!(jobs.len(), 2 * (25 + 1 + 3));
    let np: Vec<_> = jobs.iter().filter(|k| k.variant == StudyVariant::NoProxy).collect();
    assert_eq!(np.len(), 4);
    assert!(jobs.iter().filter(|k| k.data_scenario == 6).all(|k| k.variant.runs_in_sparse()));
}

#[test]
fn summary_means_standard_errors_and_pairs() {
    let cfg = StudyConfig {
        replicates: 3,
        scenarios: vec![1, 2],
        variants: vec![StudyVariant::Full, StudyVariant::NoProxy],
        ..StudyConfig::default()
    };
    let jobs = vec![
        job(0, 1, StudyVariant::Full, Some(1.0)),
        job(1, 1, StudyVariant::Full, Some(2.0)),
        job(2, 1, StudyVariant::Full, Some(4.0)),
        job(0, 2, StudyVariant::Full, Some(1.0)),
        job(1, 2, StudyVariant::Full, None),
        job(2, 2, StudyVariant::Full, Some(3.0)),
        job(0, 0, StudyVariant::NoProxy, Some(0.5)),
        job(1, 0, StudyVariant::NoProxy, Some(2.5)),
        job(2, 0, StudyVariant::NoProxy, Some(3.0)),
    ];
    let r = summarize(&cfg, jobs);
    let c = r.cell(StudyVariant::Full, 1).unwrap();
    assert!((c.mean_mspe - 7.0 / 3.0).abs() < 1e-12);
    // sd of {1, 2, 4} is sqrt(7/3); se divides by sqrt(3)
    assert!((c.std_error - (7.0f64 / 9.0).sqrt()).abs() < 1e-12);
    let c2 = r.cell(StudyVariant::Full, 2).unwrap();
    assert_eq!((c2.n_ok, c2.n_failed), (2, 1));
    let (n1, n2) = (r.cell(StudyVariant::NoProxy, 1).unwrap(), r.cell(StudyVariant::NoProxy, 2).unwrap());
    assert_eq!((n1.mean_mspe, n1.std_error), (n2.mean_mspe, n2.std_error));

    let p = r.paired(1, StudyVariant::Full, StudyVariant::NoProxy).unwrap();
    // differences 0.5, -0.5, 1.0
    assert!((p.mean - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(p.n_pairs, 3);
    let p2 = r.paired(2, StudyVariant::Full, StudyVariant::NoProxy).unwrap();
    assert_eq!(p2.n_pairs, 2);
}

#[test]
fn variants_configure_the_model() {
    let base = simulation_model(10);
    let v = |x: StudyVariant| x.configure(&base, 1000.0).variant;
    assert_eq!(v(StudyVariant::Full), base.variant);
    assert_eq!(v(StudyVariant::NoProxy).mode, ModelMode::NoProxy);
    assert!(!v(StudyVariant::NoDiscrepancy).include_discrepancy);
    assert_eq!(v(StudyVariant::LargeScale).fix_kappa, Some(1000.0));
    assert_eq!(v(StudyVariant::FixBeta1).fix_beta1, Some(1.0));
    assert_eq!(v(StudyVariant::ProxyAsCovariate).mode, ModelMode::ProxyAsCovariate);
    assert!(StudyVariant::parse("fix_beta1").is_ok());
    assert!(StudyVariant::parse("bogus").is_err());
}

#[test]
fn study_results_do_not_depend_on_scheduling() {
    let cfg = StudyConfig {
        settings: tiny(),
        scenarios: vec![3],
        variants: vec![StudyVariant::Full, StudyVariant::NoDiscrepancy],
        replicates: 2,
        chain: ChainConfig {
            burn_in: 60,
            post_burn: 100,
            thin: 2,
            latent_stride: 10,
            init_grid_points: 3,
            init_passes: 1,
            ..ChainConfig::default()
        },
        model: simulation_model(8),
        ..StudyConfig::default()
    };
    let a = run_study(&cfg, Execution::Sequential).unwrap();
    let b = run_study(&cfg, Execution::Parallel).unwrap();
    assert_eq!(a.table, b.table);
    assert_eq!(a.paired, b.paired);
    assert!(a.jobs.iter().all(|j| j.error.is_none() && j.mspe.unwrap() > 0.0));
}
