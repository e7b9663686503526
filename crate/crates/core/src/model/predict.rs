use nalgebra::DMatrix;

use super::latent::LatentDraws;
use super::spec::FusionModelSpec;
use crate::error::{Error, Result};

/// `L = Z_L b_L (+ g)` on the base grid for one set of latents.
pub fn latent_surface(spec: &FusionModelSpec, draw: &LatentDraws) -> Result<Vec<f64>> {
    let pred = spec
        .prediction
        .as_ref()
        .ok_or_else(|| Error::Config("model has no prediction grid".into()))?;
    let layout = spec.layout();
    let b_l = &draw.b[layout.p_y..layout.p_y + layout.p_l];
    let z = &pred.z_l_grid;
    let mut l: Vec<f64> = (0..z.nrows())
        .map(|i| (0..layout.p_l).map(|j| z[(i, j)] * b_l[j]).sum())
        .collect();
    if let (Some(map), Some(g)) = (&pred.g_map, &draw.g) {
        for (li, gi) in l.iter_mut().zip(map.apply(g)) {
            *li += gi;
        }
    }
    Ok(l)
}

/// `L` averaged onto the discrepancy grid.
pub fn surface_on_discrepancy_grid(spec: &FusionModelSpec, l: &[f64]) -> Result<Vec<f64>> {
    let m = spec
        .discrepancy()
        .map(|f| f.prior.dim())
        .ok_or_else(|| Error::Config("model has no discrepancy field".into()))?;
    match spec.prediction.as_ref().and_then(|p| p.to_discrepancy.as_ref()) {
        Some(map) => Ok(map.apply(l)),
        None if l.len() == m => Ok(l.to_vec()),
        None => Err(Error::DimensionMismatch(format!(
            "base grid has {} cells but the discrepancy grid has {m}",
            l.len()
        ))),
    }
}

/// Linear predictor `Z_y b_y + Z_L b_L` at new observation rows.
pub fn linear_predictor(
    spec: &FusionModelSpec,
    z_y: &DMatrix<f64>,
    z_l: &DMatrix<f64>,
    b: &[f64],
) -> Result<Vec<f64>> {
    let layout = spec.layout();
    if z_y.ncols() != layout.p_y || z_l.ncols() != layout.p_l || z_y.nrows() != z_l.nrows() {
        return Err(Error::DimensionMismatch("prediction design shape".into()));
    }
    Ok((0..z_y.nrows())
        .map(|i| {
            (0..layout.p_y).map(|j| z_y[(i, j)] * b[j]).sum::<f64>()
                + (0..layout.p_l)
                    .map(|j| z_l[(i, j)] * b[layout.p_y + j])
                    .sum::<f64>()
        })
        .collect())
}

/// Running mean and variance of grid surfaces across draws.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SurfaceSummary {
    pub count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    rb_sum: Vec<f64>,
}

impl SurfaceSummary {
    pub fn add(&mut self, draw: &[f64], rao_blackwell: &[f64]) {
        if self.count == 0 {
            self.sum = vec![0.0; draw.len()];
            self.sum_sq = vec![0.0; draw.len()];
            self.rb_sum = vec![0.0; draw.len()];
        }
        self.count += 1;
        for i in 0..draw.len() {
            self.sum[i] += draw[i];
            self.sum_sq[i] += draw[i] * draw[i];
            self.rb_sum[i] += rao_blackwell[i];
        }
    }

    /// Posterior mean from the Rao-Blackwellized conditional means.
    pub fn mean(&self) -> Vec<f64> {
        let n = self.count.max(1) as f64;
        self.rb_sum.iter().map(|s| s / n).collect()
    }

    /// Posterior standard deviation from the raw draws.
    pub fn sd(&self) -> Vec<f64> {
        let n = self.count as f64;
        if self.count < 2 {
            return vec![0.0; self.sum.len()];
        }
        self.sum
            .iter()
            .zip(&self.sum_sq)
            .map(|(s, ss)| {
                let m = s / n;
                ((ss / n - m * m).max(0.0) * n / (n - 1.0)).sqrt()
            })
            .collect()
    }
}
