//! Random small fusion instances and a dense joint-Gaussian oracle that
//! integrates the fields and coefficients in one step, sharing none of the
//! library's Woodbury or Gram machinery.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use proxyfuse::grid::{MappingMatrix, RegularGrid};
use proxyfuse::model::{
    log_marginal_posterior, DayCounts, FieldBlock, FusionModelSpec, HyperPriors, HyperState,
    ModelMode, ObsMeta, ObservationBlock, ParamId, ProxyBlock, ProxyKind, VariantFlags,
};
use proxyfuse::mrf::tps_precision;
use proxyfuse::splines::{CoefficientPrior, PriorCovariance};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Shape {
    Full,
    NoDiscrepancy,
    Joint,
    NoProxy,
}

/// Raw dense ingredients, kept apart from the spec so the oracle is independent.
pub struct Instance {
    pub spec: FusionModelSpec,
    pub shape: Shape,
    pub y: DVector<f64>,
    pub a: DVector<f64>,
    pub z_y: DMatrix<f64>,
    pub z_l_obs: DMatrix<f64>,
    pub z_l_proxy: DMatrix<f64>,
    pub z_a: DMatrix<f64>,
    pub p_phi: DMatrix<f64>,
    pub p_g_obs: DMatrix<f64>,
    pub p_g_proxy: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub counts: Vec<(f64, f64)>,
    pub proxy_counts: Option<Vec<(f64, f64)>>,
    pub site: Vec<Option<usize>>,
    pub groups: Vec<Option<usize>>,
    pub grid: RegularGrid,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

pub fn random_instance(seed: u64, shape: Shape) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nr = rng.random_range(4..=6);
    let nc = rng.random_range(4..=6);
    let grid = RegularGrid::unit(nr, nc);
    let m = grid.len();
    let prior = tps_precision(&grid).unwrap();
    let n = rng.random_range(6..=15);
    let obs_cells: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();

    // first two monitors share a site half of the time
    let colocated = rng.random_bool(0.5);
    let site: Vec<Option<usize>> = (0..n)
        .map(|i| if colocated && i < 2 { Some(0) } else { None })
        .collect();
    let n_delta = usize::from(colocated);
    let counts: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(5..=30) as f64, 30.0))
        .collect();

    let x_grid: Vec<f64> = (0..m).map(|_| normal(&mut rng)).collect();
    let s_grid = randn(&mut rng, m, 2);
    let with_intercept = shape != Shape::Joint;
    let p_l = if with_intercept { 4 } else { 3 };
    let z_l_grid = DMatrix::from_fn(m, p_l, |i, j| {
        let j = if with_intercept { j } else { j + 1 };
        match j {
            0 => 1.0,
            1 => x_grid[i],
            k => s_grid[(i, k - 2)],
        }
    });
    let z_y = randn(&mut rng, n, 1);
    let z_l_obs = DMatrix::from_fn(n, p_l, |i, j| z_l_grid[(obs_cells[i], j)]);
    let y = DVector::from_fn(n, |_, _| 10.0 + 2.0 * normal(&mut rng));

    let has_proxy = shape != Shape::NoProxy;
    // proxy on a random subset of cells (at least three quarters)
    let proxy_cells: Vec<usize> = if has_proxy {
        let mut c: Vec<usize> = (0..m).filter(|_| rng.random_bool(0.85)).collect();
        if c.len() < 3 * m / 4 {
            c = (0..m).collect();
        }
        c
    } else {
        Vec::new()
    };
    let na = proxy_cells.len();
    let z_l_proxy = DMatrix::from_fn(na, p_l, |i, j| z_l_grid[(proxy_cells[i], j)]);
    let p_a_cols = match shape {
        Shape::NoProxy => 0,
        Shape::NoDiscrepancy => 2,
        _ => 1,
    };
    let z_a = DMatrix::from_fn(na, p_a_cols, |i, j| {
        if j == 0 {
            0.5 * normal(&mut rng)
        } else {
            let _ = i;
            1.0
        }
    });
    let a = DVector::from_fn(na, |_, _| 8.0 + 3.0 * normal(&mut rng));
    let count_weighted = has_proxy && rng.random_bool(0.5);
    let proxy_counts: Option<Vec<(f64, f64)>> = count_weighted
        .then(|| (0..na).map(|_| (rng.random_range(3..=30) as f64, 30.0)).collect());

    let sel = |cells: &[usize]| {
        DMatrix::from_fn(cells.len(), m, |i, j| if cells[i] == j { 1.0 } else { 0.0 })
    };
    let p_phi = if matches!(shape, Shape::Full | Shape::Joint) { sel(&proxy_cells) } else { DMatrix::zeros(na, 0) };
    let (p_g_obs, p_g_proxy) = if shape == Shape::Joint {
        (sel(&obs_cells), sel(&proxy_cells))
    } else {
        (DMatrix::zeros(n, 0), DMatrix::zeros(na, 0))
    };

    let mut groups: Vec<Option<usize>> = vec![None];
    groups.extend((0..p_l).map(|j| {
        let smooth = if with_intercept { j >= 2 } else { j >= 1 };
        smooth.then_some(0)
    }));
    groups.extend((0..p_a_cols).map(|_| None));

    let meta: Vec<ObsMeta> = (0..n)
        .map(|i| ObsMeta {
            counts: DayCounts { n: counts[i].0 as u32, n_month: 30 },
            site_effect: site[i],
        })
        .collect();
    let obs = ObservationBlock {
        y: y.iter().copied().collect(),
        meta,
        n_delta,
        z_y: z_y.clone(),
        z_l: z_l_obs.clone(),
    };
    let kind = match &proxy_counts {
        Some(c) => ProxyKind::CountWeighted(
            c.iter().map(|(k, mm)| DayCounts { n: *k as u32, n_month: *mm as u32 }).collect(),
        ),
        None => ProxyKind::Homoscedastic,
    };
    let proxy = has_proxy.then(|| ProxyBlock {
        a: a.iter().copied().collect(),
        kind,
        z_l: z_l_proxy.clone(),
        z_a: z_a.clone(),
    });
    let mut fields = Vec::new();
    let proxy_map = MappingMatrix::selection(m, &proxy_cells).unwrap();
    if shape == Shape::Joint {
        fields.push(FieldBlock {
            prior: prior.clone(),
            precision: ParamId::KappaG,
            obs_map: Some(MappingMatrix::selection(m, &obs_cells).unwrap()),
            proxy_map: Some(proxy_map.clone()),
            proxy_scaled_by_beta1: true,
        });
    }
    if matches!(shape, Shape::Full | Shape::Joint) {
        fields.push(FieldBlock {
            prior: prior.clone(),
            precision: ParamId::Kappa,
            obs_map: None,
            proxy_map: Some(proxy_map),
            proxy_scaled_by_beta1: false,
        });
    }
    let coef_prior = PriorCovariance::new(
        groups
            .iter()
            .map(|g| g.map_or(CoefficientPrior::Fixed, CoefficientPrior::Penalized))
            .collect(),
    );
    let variant = VariantFlags {
        mode: if has_proxy { ModelMode::TwoLikelihood } else { ModelMode::NoProxy },
        include_discrepancy: matches!(shape, Shape::Full | Shape::Joint),
        ..VariantFlags::default()
    };
    let spec = FusionModelSpec::new(
        obs,
        proxy,
        fields,
        coef_prior,
        (0, 1, 0),
        HyperPriors::default(),
        variant,
        None,
    )
    .unwrap();
    Instance {
        spec,
        shape,
        y,
        a,
        z_y,
        z_l_obs,
        z_l_proxy,
        z_a,
        p_phi,
        p_g_obs,
        p_g_proxy,
        q: prior.q.to_dense(),
        counts,
        proxy_counts,
        site,
        groups,
        grid,
    }
}

pub fn random_theta(inst: &Instance, rng: &mut ChaCha8Rng) -> HyperState {
    let lognormal = |rng: &mut ChaCha8Rng, s: f64| (s * normal(rng)).exp();
    let nd = inst.spec.obs.n_delta;
    let mut t = HyperState {
        beta1: 0.7 + 0.3 * normal(rng),
        sigma2_sub: lognormal(rng, 0.5),
        sigma2_delta: 0.5 * lognormal(rng, 0.5),
        sigma2_eps: 1.5,
        sigma2_a: lognormal(rng, 0.5),
        sigma2_alpha: lognormal(rng, 0.5),
        smooth_y: vec![],
        smooth_l: vec![lognormal(rng, 0.5)],
        smooth_a: vec![],
        kappa: lognormal(rng, 1.0),
        kappa_g: lognormal(rng, 1.0),
        delta: (0..nd).map(|_| 0.3 * normal(rng)).collect(),
    };
    inst.spec.apply_fixed(&mut t);
    t
}

pub const FIXED_VAR: f64 = 1e6;

/// `log p(Y, A, δ | θ) + log p(θ)` by direct integration over `u = (g, φ, b)`,
/// up to θ-independent constants.
pub fn oracle_log_posterior(inst: &Instance, t: &HyperState) -> f64 {
    let n = inst.y.len();
    let na = inst.a.len();
    let p_y = inst.z_y.ncols();
    let p_l = inst.z_l_obs.ncols();
    let p_a = inst.z_a.ncols();
    let mg = inst.p_g_obs.ncols();
    let mp = inst.p_phi.ncols();
    let p = p_y + p_l + p_a;
    let du = mg + mp + p;

    let mut v = Vec::with_capacity(n + na);
    for i in 0..n {
        let (ni, nm) = inst.counts[i];
        let mut vi = t.sigma2_eps / ni + (1.0 / ni - 1.0 / nm) * t.sigma2_sub;
        if inst.site[i].is_none() {
            vi += t.sigma2_delta;
        }
        v.push(vi);
    }
    for i in 0..na {
        let mut vi = t.sigma2_a;
        if let Some(c) = &inst.proxy_counts {
            vi += (1.0 / c[i].0 - 1.0 / c[i].1) * t.sigma2_alpha;
        }
        v.push(vi);
    }

    let mut k = DMatrix::zeros(n + na, du);
    let mut d = DVector::zeros(n + na);
    for i in 0..n {
        for j in 0..mg {
            k[(i, j)] = inst.p_g_obs[(i, j)];
        }
        for j in 0..p_y {
            k[(i, mg + mp + j)] = inst.z_y[(i, j)];
        }
        for j in 0..p_l {
            k[(i, mg + mp + p_y + j)] = inst.z_l_obs[(i, j)];
        }
        d[i] = inst.y[i] - inst.site[i].map_or(0.0, |s| t.delta[s]);
    }
    for i in 0..na {
        let r = n + i;
        for j in 0..mg {
            k[(r, j)] = t.beta1 * inst.p_g_proxy[(i, j)];
        }
        for j in 0..mp {
            k[(r, mg + j)] = inst.p_phi[(i, j)];
        }
        for j in 0..p_l {
            k[(r, mg + mp + p_y + j)] = t.beta1 * inst.z_l_proxy[(i, j)];
        }
        for j in 0..p_a {
            k[(r, mg + mp + p_y + p_l + j)] = inst.z_a[(i, j)];
        }
        d[r] = inst.a[i];
    }
    let vinv = DMatrix::from_diagonal(&DVector::from_iterator(v.len(), v.iter().map(|x| 1.0 / x)));
    let mut h = k.transpose() * &vinv * &k;
    let lambda: Vec<f64> = inst
        .groups
        .iter()
        .map(|g| g.map_or(FIXED_VAR, |_| t.smooth_l[0]))
        .collect();
    for a in 0..mg {
        for b in 0..mg {
            h[(a, b)] += t.kappa_g * inst.q[(a, b)];
        }
    }
    for a in 0..mp {
        for b in 0..mp {
            h[(mg + a, mg + b)] += t.kappa * inst.q[(a, b)];
        }
    }
    for j in 0..p {
        h[(mg + mp + j, mg + mp + j)] += 1.0 / lambda[j];
    }
    let hv = k.transpose() * &vinv * &d;
    let chol = h.clone().cholesky().expect("joint precision is positive definite");
    let log_det_h: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
    let quad = (d.transpose() * &vinv * &d)[(0, 0)] - hv.dot(&chol.solve(&hv));

    let mut lp = 0.0;
    if mg > 0 {
        lp += 0.5 * (mg - 3) as f64 * t.kappa_g.ln();
    }
    if mp > 0 {
        lp += 0.5 * (mp - 3) as f64 * t.kappa.ln();
    }
    lp -= 0.5 * lambda.iter().map(|x| x.ln()).sum::<f64>();
    lp -= 0.5 * v.iter().map(|x| x.ln()).sum::<f64>();
    lp -= 0.5 * log_det_h;
    lp -= 0.5 * quad;
    if !t.delta.is_empty() {
        lp -= 0.5 * t.delta.iter().map(|x| x * x).sum::<f64>() / t.sigma2_delta;
        lp -= 0.5 * t.delta.len() as f64 * t.sigma2_delta.ln();
    }
    // natural-scale priors: uniform sd ⇒ p(v) ∝ v^{-1/2}, p(κ) ∝ κ^{-3/2}
    for id in inst.spec.free_params() {
        let x = t.get(id);
        lp += match id {
            ParamId::Beta1 => -0.5 * (x / 100.0).powi(2),
            ParamId::Kappa | ParamId::KappaG => -1.5 * x.ln(),
            _ => -0.5 * x.ln(),
        };
    }
    lp
}

/// Dense `Σ_A⁻¹` for the discrepancy-integrated proxy likelihood.
pub fn dense_sigma_a_inv(inst: &Instance, t: &HyperState) -> DMatrix<f64> {
    let na = inst.a.len();
    let v: Vec<f64> = (0..na)
        .map(|i| {
            let mut vi = t.sigma2_a;
            if let Some(c) = &inst.proxy_counts {
                vi += (1.0 / c[i].0 - 1.0 / c[i].1) * t.sigma2_alpha;
            }
            vi
        })
        .collect();
    let vinv = DMatrix::from_diagonal(&DVector::from_iterator(na, v.iter().map(|x| 1.0 / x)));
    let p = &inst.p_phi;
    let prec = p.transpose() * &vinv * p + &inst.q * t.kappa;
    let vphi = prec.try_inverse().unwrap();
    &vinv - &vinv * p * vphi * p.transpose() * &vinv
}

/// Largest discrepancy between implementation and oracle after aligning the constant at θ₀.
pub fn max_aligned_error(shape: Shape, seed: u64, n_theta: usize) -> f64 {
    let inst = random_instance(seed, shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let thetas: Vec<_> = (0..n_theta).map(|_| random_theta(&inst, &mut rng)).collect();
    let imp: Vec<f64> = thetas
        .iter()
        .map(|t| log_marginal_posterior(&inst.spec, t).unwrap())
        .collect();
    let ora: Vec<f64> = thetas.iter().map(|t| oracle_log_posterior(&inst, t)).collect();
    (1..n_theta)
        .map(|i| {
            let a = imp[i] - imp[0];
            let b = ora[i] - ora[0];
            (a - b).abs() / b.abs().max(1.0)
        })
        .fold(0.0, f64::max)
}

/// A model whose `L` design lies in the discrepancy null space, so `β₁` only
/// multiplies directions the proxy likelihood cannot see and its marginal
/// posterior equals its N(0, 1) prior.
pub fn rigged_spec() -> FusionModelSpec {
    let grid = RegularGrid::unit(6, 6);
    let m = grid.len();
    let prior = tps_precision(&grid).unwrap();
    let z_grid = DMatrix::from_fn(m, 3, |i, j| {
        let (r, c) = grid.row_col(i);
        [1.0, c as f64, r as f64][j]
    });
    let obs_cells = [0usize, 7, 14, 20, 27, 33, 35, 3];
    let n = obs_cells.len();
    let obs = ObservationBlock {
        y: (0..n).map(|i| 5.0 + (i as f64).sin()).collect(),
        meta: vec![ObsMeta { counts: DayCounts::full(30), site_effect: None }; n],
        n_delta: 0,
        z_y: DMatrix::zeros(n, 0),
        z_l: DMatrix::from_fn(n, 3, |i, j| z_grid[(obs_cells[i], j)]),
    };
    let cells: Vec<usize> = (0..m).collect();
    let proxy = ProxyBlock {
        a: (0..m).map(|i| (i as f64 * 0.3).cos()).collect(),
        kind: ProxyKind::Homoscedastic,
        z_l: z_grid.clone(),
        z_a: DMatrix::zeros(m, 0),
    };
    let field = FieldBlock {
        prior,
        precision: ParamId::Kappa,
        obs_map: None,
        proxy_map: Some(MappingMatrix::selection(m, &cells).unwrap()),
        proxy_scaled_by_beta1: false,
    };
    let priors = HyperPriors { beta1_sd: 1.0, ..HyperPriors::default() };
    FusionModelSpec::new(
        obs,
        Some(proxy),
        vec![field],
        PriorCovariance::new(vec![CoefficientPrior::Fixed; 3]),
        (0, 0, 0),
        priors,
        VariantFlags::default(),
        None,
    )
    .unwrap()
}
