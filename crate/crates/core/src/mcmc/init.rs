use crate::error::Result;
use crate::model::{HyperState, ParamId, PosteriorEvaluator};

/// Half-width of the first search window on the sampling scale.
fn initial_span(id: ParamId) -> f64 {
    if id.log_scale() {
        4.0
    } else {
        2.0
    }
}

fn sampling_log_density(
    eval: &mut PosteriorEvaluator<'_>,
    theta: &HyperState,
    free: &[ParamId],
) -> Result<f64> {
    let lp = eval.log_posterior(theta)?;
    let jac: f64 = free
        .iter()
        .filter(|id| id.log_scale())
        .map(|id| id.to_sampling(theta.get(*id)))
        .sum();
    Ok(lp + jac)
}

/// Coordinate-wise grid search for a high-density starting point.
///
/// Returns the improved state and a proposal standard deviation per
/// parameter, taken from the local curvature of the last pass.
pub fn grid_search_start(
    eval: &mut PosteriorEvaluator<'_>,
    start: HyperState,
    params: &[ParamId],
    free: &[ParamId],
    points: usize,
    passes: usize,
) -> Result<(HyperState, Vec<f64>)> {
    let points = points.max(3) | 1;
    let mut theta = start;
    let mut sd: Vec<f64> = params.iter().map(|id| 0.25 * initial_span(*id)).collect();
    for pass in 0..passes.max(1) {
        for (k, &id) in params.iter().enumerate() {
            let x0 = id.to_sampling(theta.get(id));
            let span = initial_span(id) / (1 << pass) as f64;
            let h = 2.0 * span / (points - 1) as f64;
            let mut best = (f64::NEG_INFINITY, x0);
            let mut values = Vec::with_capacity(points);
            for i in 0..points {
                let x = x0 - span + h * i as f64;
                let mut t = theta.clone();
                t.set(id, id.from_sampling(x));
                let lp = sampling_log_density(eval, &t, free).unwrap_or(f64::NEG_INFINITY);
                values.push(lp);
                if lp > best.0 {
                    best = (lp, x);
                }
            }
            if best.0.is_finite() {
                theta.set(id, id.from_sampling(best.1));
                let i = ((best.1 - (x0 - span)) / h).round() as usize;
                if i > 0 && i + 1 < points {
                    let curv = -(values[i + 1] - 2.0 * values[i] + values[i - 1]) / (h * h);
                    if curv.is_finite() && curv > 0.0 {
                        sd[k] = (1.0 / curv.sqrt()).clamp(1e-3, 2.0);
                    }
                }
            }
        }
    }
    Ok((theta, sd))
}
