use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::marginal::{BStage, CoupledPart, MarginalizedField};
use super::spec::{ExtLayout, FusionModelSpec};
use super::theta::HyperState;
use crate::error::{Error, Result};
use crate::linalg::dense;

/// Exact draw of the co-located site effects from their Gaussian conditional.
///
/// Uses only the δ-independent reduced Gram stored in `b`.
pub fn sample_delta<R: Rng + ?Sized>(b: &BStage, sigma2_delta: f64, rng: &mut R) -> Result<Vec<f64>> {
    let (mean, chol) = delta_conditional(b, sigma2_delta)?;
    let nd = mean.len();
    if nd == 0 {
        return Ok(Vec::new());
    }
    let z = DVector::from_fn(nd, |_, _| rng.sample::<f64, _>(StandardNormal));
    let dev = chol
        .l_dirty()
        .lower_triangle()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    Ok((mean + dev).iter().copied().collect())
}

/// Mean and precision factor of `δ | θ, data`.
pub fn delta_conditional(
    b: &BStage,
    sigma2_delta: f64,
) -> Result<(DVector<f64>, dense::DenseCholesky)> {
    let p = b.n_coef();
    let nd = b.n_delta();
    if nd == 0 {
        let empty = dense::cholesky(DMatrix::identity(0, 0), "empty")?;
        return Ok((DVector::zeros(0), empty));
    }
    if !(sigma2_delta > 0.0) {
        return Err(Error::Numeric("site-effect variance must be positive".into()));
    }
    let g = &b.reduced;
    let g_bd = g.view((1, 0), (p, 1)).into_owned();
    let g_b_del = g.view((1, 1 + p), (p, nd)).into_owned();
    let g_del_d = g.view((1 + p, 0), (nd, 1)).into_owned();
    let g_del_del = g.view((1 + p, 1 + p), (nd, nd)).into_owned();
    let vb_g_b_del = b.precision.solve(&g_b_del);
    let vb_g_bd = b.precision.solve(&g_bd);
    let mut prec = g_del_del - g_b_del.transpose() * &vb_g_b_del;
    for k in 0..nd {
        prec[(k, k)] += 1.0 / sigma2_delta;
    }
    dense::symmetrize(&mut prec);
    let rhs = (g_del_d - g_b_del.transpose() * vb_g_bd).column(0).into_owned();
    let chol = dense::cholesky(prec, "site-effect posterior precision")?;
    let mean = chol.solve(&rhs);
    Ok((mean, chol))
}

/// One joint draw of the latent quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentDraws {
    pub index: usize,
    /// `β₁` of the draw, including any orthogonalization adjustment.
    pub beta1: f64,
    /// Constant moved out of `φ` by orthogonalization.
    pub proxy_offset: f64,
    /// Coefficients `[b_y, b_L, b_a]`.
    pub b: Vec<f64>,
    /// Discrepancy `φ`, when present.
    pub phi: Option<Vec<f64>>,
    /// Residual field `g`, in joint mode.
    pub g: Option<Vec<f64>>,
}

/// Extended-design coefficients turning `X` into the residual after `b` and δ.
fn residual_coefs(layout: &ExtLayout, b: &[f64], beta1: f64, delta: &[f64]) -> DVector<f64> {
    let mut c = DVector::zeros(layout.len());
    c[ExtLayout::DATA] = 1.0;
    for j in 0..layout.p_y {
        c[layout.y(j)] = -b[j];
    }
    for j in 0..layout.p_l {
        c[layout.l_obs(j)] = -b[layout.p_y + j];
        c[layout.l_proxy(j)] = -beta1 * b[layout.p_y + j];
    }
    for j in 0..layout.p_a {
        c[layout.a(j)] = -b[layout.p_y + layout.p_l + j];
    }
    for k in 0..layout.n_delta {
        c[layout.delta(k)] = -delta[k];
    }
    c
}

/// Residual of the rows that the integrated field sees.
fn field_residual(
    spec: &FusionModelSpec,
    coupled: &CoupledPart,
    b: &[f64],
    theta: &HyperState,
) -> DVector<f64> {
    let c = residual_coefs(&spec.layout(), b, theta.beta1, &theta.delta);
    let xp = spec.x_proxy();
    if coupled.includes_obs {
        let ro = spec.x_obs() * &c;
        match xp {
            Some(x) => {
                let ra = x * &c;
                DVector::from_iterator(ro.len() + ra.len(), ro.iter().chain(ra.iter()).copied())
            }
            None => ro,
        }
    } else {
        xp.map_or_else(|| DVector::zeros(0), |x| x * &c)
    }
}

fn split_fields(spec: &FusionModelSpec, field: &MarginalizedField, u: Vec<f64>) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut phi = None;
    let mut g = None;
    for (f, &(off, len)) in spec.fields.iter().zip(field.blocks()) {
        let part = u[off..off + len].to_vec();
        if f.precision == super::theta::ParamId::Kappa {
            phi = Some(part);
        } else {
            g = Some(part);
        }
    }
    (phi, g)
}

/// Draws `b | θ, δ, data` and then the fields given `b`.
pub fn sample_latents_offline<R: Rng + ?Sized>(
    spec: &FusionModelSpec,
    theta: &HyperState,
    coupled: &CoupledPart,
    b_stage: &BStage,
    index: usize,
    rng: &mut R,
) -> Result<LatentDraws> {
    let b: Vec<f64> = b_stage.sample(rng).iter().copied().collect();
    let (phi, g) = match &coupled.field {
        Some(field) => {
            let r = field_residual(spec, coupled, &b, theta);
            let u = field.sample(r.as_slice(), rng)?;
            split_fields(spec, field, u)
        }
        None => (None, None),
    };
    Ok(LatentDraws {
        index,
        beta1: theta.beta1,
        proxy_offset: 0.0,
        b,
        phi,
        g,
    })
}

/// Conditional means of the fields with `b` at its conditional mean
/// (the Rao-Blackwellized field estimate for this θ).
pub fn latent_means(
    spec: &FusionModelSpec,
    theta: &HyperState,
    coupled: &CoupledPart,
    b_stage: &BStage,
) -> Result<LatentDraws> {
    let b: Vec<f64> = b_stage.mean.iter().copied().collect();
    let (phi, g) = match &coupled.field {
        Some(field) => {
            let r = field_residual(spec, coupled, &b, theta);
            let u = field.conditional_mean(r.as_slice())?;
            split_fields(spec, field, u)
        }
        None => (None, None),
    };
    Ok(LatentDraws {
        index: 0,
        beta1: theta.beta1,
        proxy_offset: 0.0,
        b,
        phi,
        g,
    })
}

/// Outcome of removing the `{1, L}` component from `φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthogonalized {
    pub phi: Vec<f64>,
    pub intercept: f64,
    /// Slope of `φ` on `L`, added to `β₁` so the fitted proxy mean is unchanged.
    pub slope: f64,
}

/// Replaces `φ` by its least-squares residual on `span{1, L}`.
pub fn orthogonalize(phi: &[f64], l: &[f64]) -> Result<Orthogonalized> {
    let n = phi.len();
    if l.len() != n {
        return Err(Error::DimensionMismatch("φ and L must share a grid".into()));
    }
    if n == 0 {
        return Ok(Orthogonalized { phi: Vec::new(), intercept: 0.0, slope: 0.0 });
    }
    let nf = n as f64;
    let mp = phi.iter().sum::<f64>() / nf;
    let ml = l.iter().sum::<f64>() / nf;
    let sll: f64 = l.iter().map(|x| (x - ml).powi(2)).sum();
    let slp: f64 = l.iter().zip(phi).map(|(x, p)| (x - ml) * (p - mp)).sum();
    let scale = l.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1.0);
    let slope = if sll > 1e-24 * nf * scale * scale { slp / sll } else { 0.0 };
    let intercept = mp - slope * ml;
    let out = phi
        .iter()
        .zip(l)
        .map(|(p, x)| p - intercept - slope * x)
        .collect();
    Ok(Orthogonalized { phi: out, intercept, slope })
}
