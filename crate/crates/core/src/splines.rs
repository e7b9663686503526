//! Penalized spline bases in mixed-model form.
//!
//! A smooth is split into unpenalized polynomial columns and radial-basis
//! columns. The radial block is post-multiplied by `|Ω|^{-1/2}`, the inverse
//! symmetric square root of the knot kernel matrix (eigenvalues replaced by
//! their magnitudes, since radial kernels are only conditionally positive
//! definite). With coefficients `u ~ N(0, σ²_b I)` the implied penalty on the
//! original radial coefficients `β = |Ω|^{-1/2} u` is `βᵀ|Ω|β / σ²_b`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::dense;

/// Eigen-directions of the knot kernel below this relative size are dropped.
const KERNEL_RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Knots {
    pub locations: Vec<f64>,
    pub warning: Option<String>,
}

/// `k` knots at the empirical quantiles `j/(k+1)`.
pub fn knots_quantile(values: &[f64], k: usize) -> Result<Knots> {
    if values.is_empty() || k == 0 {
        return Err(Error::Data("knot placement needs values and k ≥ 1".into()));
    }
    let mut sorted: Vec<f64> = values.to_vec();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite covariate value".into()));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Ok(Knots {
            locations: distinct.clone(),
            warning: Some(format!(
                "only {} distinct values; using {} knots instead of {k}",
                distinct.len(),
                distinct.len()
            )),
        });
    }
    let n = sorted.len();
    let quantile = |p: f64| {
        let h = (n - 1) as f64 * p;
        let lo = h.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    };
    let mut knots: Vec<f64> = (1..=k).map(|j| quantile(j as f64 / (k + 1) as f64)).collect();
    knots.dedup();
    if knots.len() < k {
        let (lo, hi) = (sorted[0], sorted[n - 1]);
        knots = (1..=k)
            .map(|j| lo + (hi - lo) * j as f64 / (k + 1) as f64)
            .collect();
    }
    Ok(Knots {
        locations: knots,
        warning: None,
    })
}

/// Greedy maximin selection of `k` spatial knots from candidate points,
/// starting from the candidate closest to their centroid.
pub fn space_filling_knots(points: &[(f64, f64)], k: usize) -> Vec<(f64, f64)> {
    let mut uniq: Vec<(f64, f64)> = Vec::new();
    for &p in points {
        if !uniq.contains(&p) {
            uniq.push(p);
        }
    }
    if uniq.len() <= k {
        return uniq;
    }
    let n = uniq.len() as f64;
    let cx = uniq.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = uniq.iter().map(|p| p.1).sum::<f64>() / n;
    let d2 = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
    let start = (0..uniq.len())
        .min_by(|&a, &b| d2(uniq[a], (cx, cy)).partial_cmp(&d2(uniq[b], (cx, cy))).unwrap())
        .unwrap();
    let mut chosen = vec![start];
    let mut nearest: Vec<f64> = uniq.iter().map(|&p| d2(p, uniq[start])).collect();
    while chosen.len() < k {
        let next = (0..uniq.len())
            .max_by(|&a, &b| nearest[a].partial_cmp(&nearest[b]).unwrap().then(b.cmp(&a)))
            .unwrap();
        chosen.push(next);
        for (i, p) in uniq.iter().enumerate() {
            nearest[i] = nearest[i].min(d2(*p, uniq[next]));
        }
    }
    chosen.into_iter().map(|i| uniq[i]).collect()
}

fn cubic_kernel(r: f64) -> f64 {
    r.abs().powi(3)
}

/// `r² log r`, continuous at zero.
pub fn tps_kernel(r: f64) -> f64 {
    if r <= 0.0 {
        0.0
    } else {
        r * r * r.ln()
    }
}

/// A fitted basis that can be evaluated at any location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SmoothBasis {
    /// `[x | |x−κ_j|³ · T]`
    Cubic1d { knots: Vec<f64>, transform: Vec<f64>, rank: usize },
    /// `[x, y | η(‖s−κ_j‖) · T]`
    ThinPlate2d { knots: Vec<(f64, f64)>, transform: Vec<f64>, rank: usize },
}

/// Design columns for one smooth term at a set of locations.
#[derive(Debug, Clone)]
pub struct SmoothTerm {
    /// Unpenalized polynomial columns (no intercept; the model carries one).
    pub fixed: DMatrix<f64>,
    /// Reparameterized radial columns sharing one variance component.
    pub random: DMatrix<f64>,
    pub basis: SmoothBasis,
    pub warnings: Vec<String>,
}

impl SmoothTerm {
    /// `[1 | fixed | random]`, for standalone fits.
    pub fn full_design(&self) -> DMatrix<f64> {
        let n = self.fixed.nrows();
        let (f, r) = (self.fixed.ncols(), self.random.ncols());
        DMatrix::from_fn(n, 1 + f + r, |i, j| match j {
            0 => 1.0,
            j if j <= f => self.fixed[(i, j - 1)],
            j => self.random[(i, j - 1 - f)],
        })
    }
}

fn kernel_transform(omega: &DMatrix<f64>) -> (Vec<f64>, usize) {
    let t = dense::abs_inv_sqrt(omega, KERNEL_RANK_TOL);
    let rank = t.ncols();
    (t.as_slice().to_vec(), rank)
}

impl SmoothBasis {
    pub fn cubic(knots: &[f64]) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::Config("cubic radial basis needs at least 2 knots".into()));
        }
        let mut s = knots.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if s.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Data("coincident knots in cubic radial basis".into()));
        }
        let k = knots.len();
        let omega = DMatrix::from_fn(k, k, |i, j| cubic_kernel(knots[i] - knots[j]));
        let (transform, rank) = kernel_transform(&omega);
        Ok(SmoothBasis::Cubic1d {
            knots: knots.to_vec(),
            transform,
            rank,
        })
    }

    pub fn thin_plate(knots: &[(f64, f64)]) -> Result<Self> {
        if knots.len() < 3 {
            return Err(Error::Config("thin-plate basis needs at least 3 knots".into()));
        }
        let k = knots.len();
        let omega = DMatrix::from_fn(k, k, |i, j| tps_kernel(dist(knots[i], knots[j])));
        let (transform, rank) = kernel_transform(&omega);
        Ok(SmoothBasis::ThinPlate2d {
            knots: knots.to_vec(),
            transform,
            rank,
        })
    }

    pub fn n_fixed(&self) -> usize {
        match self {
            SmoothBasis::Cubic1d { .. } => 1,
            SmoothBasis::ThinPlate2d { .. } => 2,
        }
    }

    pub fn n_random(&self) -> usize {
        match self {
            SmoothBasis::Cubic1d { rank, .. } | SmoothBasis::ThinPlate2d { rank, .. } => *rank,
        }
    }

    fn transform_matrix(&self) -> DMatrix<f64> {
        match self {
            SmoothBasis::Cubic1d { knots, transform, rank } => {
                DMatrix::from_column_slice(knots.len(), *rank, transform)
            }
            SmoothBasis::ThinPlate2d { knots, transform, rank } => {
                DMatrix::from_column_slice(knots.len(), *rank, transform)
            }
        }
    }

    /// Radial columns before reparameterization, `[η(x_i − κ_j)]`.
    pub fn raw_radial(&self, points: &[(f64, f64)]) -> DMatrix<f64> {
        match self {
            SmoothBasis::Cubic1d { knots, .. } => {
                DMatrix::from_fn(points.len(), knots.len(), |i, j| {
                    cubic_kernel(points[i].0 - knots[j])
                })
            }
            SmoothBasis::ThinPlate2d { knots, .. } => {
                DMatrix::from_fn(points.len(), knots.len(), |i, j| {
                    tps_kernel(dist(points[i], knots[j]))
                })
            }
        }
    }

    /// Knot kernel matrix `Ω`.
    pub fn knot_kernel(&self) -> DMatrix<f64> {
        match self {
            SmoothBasis::Cubic1d { knots, .. } => {
                let pts: Vec<(f64, f64)> = knots.iter().map(|&k| (k, 0.0)).collect();
                self.raw_radial(&pts)
            }
            SmoothBasis::ThinPlate2d { knots, .. } => self.raw_radial(knots),
        }
    }

    /// Evaluates the term at `points`; 1-D bases read the first coordinate.
    pub fn evaluate(&self, points: &[(f64, f64)]) -> SmoothTerm {
        let n = points.len();
        let fixed = match self {
            SmoothBasis::Cubic1d { .. } => DMatrix::from_fn(n, 1, |i, _| points[i].0),
            SmoothBasis::ThinPlate2d { .. } => DMatrix::from_fn(n, 2, |i, j| {
                if j == 0 {
                    points[i].0
                } else {
                    points[i].1
                }
            }),
        };
        let random = self.raw_radial(points) * self.transform_matrix();
        SmoothTerm {
            fixed,
            random,
            basis: self.clone(),
            warnings: Vec::new(),
        }
    }

    pub fn evaluate_1d(&self, x: &[f64]) -> SmoothTerm {
        let pts: Vec<(f64, f64)> = x.iter().map(|&v| (v, 0.0)).collect();
        self.evaluate(&pts)
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

pub fn cubic_rbf_basis(x: &[f64], knots: &[f64]) -> Result<SmoothTerm> {
    let basis = SmoothBasis::cubic(knots)?;
    Ok(basis.evaluate_1d(x))
}

pub fn tps2d_basis(coords: &[(f64, f64)], knots: &[(f64, f64)]) -> Result<SmoothTerm> {
    let basis = SmoothBasis::thin_plate(knots)?;
    let mut term = basis.evaluate(coords);
    let poly = DMatrix::from_fn(knots.len(), 3, |i, j| match j {
        0 => 1.0,
        1 => knots[i].0,
        _ => knots[i].1,
    });
    let sv = poly.singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        term.warnings.push("thin-plate knots are collinear; linear part is rank deficient".into());
    }
    Ok(term)
}

/// One coefficient group of the prior covariance `Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoefficientPrior {
    /// Diffuse fixed effect with a large constant variance.
    Fixed,
    /// Exchangeable random effect sharing variance component `k`.
    Penalized(usize),
}

/// Diagonal prior covariance of the stacked coefficient vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCovariance {
    pub groups: Vec<CoefficientPrior>,
    pub fixed_variance: f64,
}

/// Prior variance for unpenalized coefficients.
pub const DEFAULT_FIXED_VARIANCE: f64 = 1e6;

impl PriorCovariance {
    pub fn new(groups: Vec<CoefficientPrior>) -> Self {
        Self {
            groups,
            fixed_variance: DEFAULT_FIXED_VARIANCE,
        }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn n_components(&self) -> usize {
        self.groups
            .iter()
            .filter_map(|g| match g {
                CoefficientPrior::Penalized(k) => Some(k + 1),
                CoefficientPrior::Fixed => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Diagonal of `Λ` for the given smooth variance components.
    pub fn diagonal(&self, components: &[f64]) -> Vec<f64> {
        self.groups
            .iter()
            .map(|g| match g {
                CoefficientPrior::Fixed => self.fixed_variance,
                CoefficientPrior::Penalized(k) => components[*k],
            })
            .collect()
    }
}

/// Gaussian mixed-model smoother with fixed variances: returns the posterior
/// mean coefficients and the effective degrees of freedom `tr(H)`.
pub fn mixed_model_fit(
    design: &DMatrix<f64>,
    prior_var: &[f64],
    y: &[f64],
    noise_var: f64,
) -> Result<(DVector<f64>, f64)> {
    let p = design.ncols();
    let mut prec = design.transpose() * design / noise_var;
    for j in 0..p {
        prec[(j, j)] += 1.0 / prior_var[j];
    }
    let chol = dense::cholesky(prec, "mixed-model precision")?;
    let rhs = design.transpose() * DVector::from_column_slice(y) / noise_var;
    let coef = chol.solve(&rhs);
    let edf = (chol.inverse() * design.transpose() * design / noise_var).trace();
    Ok((coef, edf))
}
