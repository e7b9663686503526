use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::grid::RegularGrid;

/// Correlation at the effective range.
pub const EFFECTIVE_RANGE_CORRELATION: f64 = 0.05;

/// Modified Bessel function of the second kind, `K_ν(x) = ∫₀^∞ e^{−x cosh t} cosh(νt) dt`,
/// by the trapezoid rule (exponentially convergent for this integrand).
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    let h: f64 = 0.02;
    let mut sum = 0.5 * (-x).exp();
    let mut t = h;
    loop {
        let term = (-x * t.cosh() + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
        sum += term;
        if term < 1e-17 * sum || t > 50.0 {
            break;
        }
        t += h;
    }
    sum * h
}

/// `2^{1−ν}/Γ(ν) · (φd)^ν K_ν(φd)`, with `φ` the decay (inverse range).
pub fn matern_correlation(d: f64, nu: f64, decay: f64) -> f64 {
    let u = d.abs() * decay;
    if u < 1e-12 {
        return 1.0;
    }
    let c = 2f64.powf(1.0 - nu) / gamma(nu) * u.powf(nu) * bessel_k(nu, u);
    c.clamp(0.0, 1.0)
}

/// Decay such that the correlation equals [`EFFECTIVE_RANGE_CORRELATION`] at `range`.
pub fn decay_for_effective_range(nu: f64, range: f64) -> Result<f64> {
    if !(nu > 0.0 && range > 0.0) {
        return Err(Error::Config(format!("Matérn needs ν > 0 and range > 0, got ν={nu}, range={range}")));
    }
    // the correlation depends on φd only: solve ρ(u) = 0.05 in u
    let f = |u: f64| matern_correlation(u, nu, 1.0) - EFFECTIVE_RANGE_CORRELATION;
    let (mut lo, mut hi) = (1e-6, 1.0);
    while f(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi) / range)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matern {
    pub nu: f64,
    pub decay: f64,
}

impl Matern {
    pub fn with_effective_range(nu: f64, range: f64) -> Result<Self> {
        Ok(Self {
            nu,
            decay: decay_for_effective_range(nu, range)?,
        })
    }

    pub fn correlation(&self, d: f64) -> f64 {
        matern_correlation(d, self.nu, self.decay)
    }
}

/// Cached square root of a Matérn correlation matrix on a grid.
///
/// Grids above `max_dense` cells are sampled on a coarser lattice (every
/// `stride`-th row and column, plus the last) and refined bilinearly.
#[derive(Debug, Clone)]
pub struct GpSampler {
    nrow: usize,
    ncol: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    factor: DMatrix<f64>,
}

fn coarse_axis(n: usize, stride: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).step_by(stride).collect();
    if *v.last().expect("non-empty axis") != n - 1 {
        v.push(n - 1);
    }
    v
}

impl GpSampler {
    pub fn new(grid: &RegularGrid, corr: &Matern, max_dense: usize) -> Result<Self> {
        let (nr, nc) = (grid.nrow(), grid.ncol());
        let mut stride = 1;
        while coarse_axis(nr, stride).len() * coarse_axis(nc, stride).len() > max_dense.max(4) {
            stride += 1;
        }
        let rows = coarse_axis(nr, stride);
        let cols = coarse_axis(nc, stride);
        let h = grid.cell_size();
        let m = rows.len() * cols.len();
        // lattice points: correlation depends only on the row and column offsets
        let offsets: Vec<f64> = (0..nr * nc)
            .map(|k| corr.correlation(h * (((k / nc).pow(2) + (k % nc).pow(2)) as f64).sqrt()))
            .collect();
        let idx: Vec<(usize, usize)> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        let cov = DMatrix::from_fn(m, m, |i, j| {
            let dr = idx[i].0.abs_diff(idx[j].0);
            let dc = idx[i].1.abs_diff(idx[j].1);
            offsets[dr * nc + dc]
        });
        let mut factor = None;
        for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
            let mut c = cov.clone();
            for i in 0..m {
                c[(i, i)] += jitter;
            }
            if let Some(ch) = c.cholesky() {
                factor = Some(ch.unpack());
                break;
            }
        }
        let factor = factor.ok_or_else(|| {
            Error::Numeric("Matérn covariance is not positive definite after jitter 1e-8".into())
        })?;
        Ok(Self {
            nrow: nr,
            ncol: nc,
            rows,
            cols,
            factor,
        })
    }

    pub fn is_exact(&self) -> bool {
        self.rows.len() == self.nrow && self.cols.len() == self.ncol
    }

    /// One zero-mean draw with the given variance, row-major over the grid.
    pub fn sample<R: Rng + ?Sized>(&self, variance: f64, rng: &mut R) -> Vec<f64> {
        let m = self.factor.nrows();
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let coarse = &self.factor * z * variance.sqrt();
        if self.is_exact() {
            return coarse.iter().copied().collect();
        }
        let nc = self.cols.len();
        let at = |i: usize, j: usize| coarse[i * nc + j];
        let bracket = |axis: &[usize], x: usize| {
            let k = axis.partition_point(|&a| a <= x).saturating_sub(1).min(axis.len() - 2);
            let t = (x - axis[k]) as f64 / (axis[k + 1] - axis[k]) as f64;
            (k, t)
        };
        let mut out = Vec::with_capacity(self.nrow * self.ncol);
        for r in 0..self.nrow {
            let (i, ty) = bracket(&self.rows, r);
            for c in 0..self.ncol {
                let (j, tx) = bracket(&self.cols, c);
                let v = (1.0 - ty) * ((1.0 - tx) * at(i, j) + tx * at(i, j + 1))
                    + ty * ((1.0 - tx) * at(i + 1, j) + tx * at(i + 1, j + 1));
                out.push(v);
            }
        }
        out
    }
}
