use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Effective sample size of one scalar trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ess {
    pub value: f64,
    /// Set when the trace is constant and the estimate is meaningless.
    pub constant: bool,
}

/// Minimum trace length accepted by [`effective_sample_size`].
pub const MIN_TRACE: usize = 50;

/// Geyer's initial monotone sequence estimator.
pub fn effective_sample_size(trace: &[f64]) -> Result<Ess> {
    let n = trace.len();
    if n < MIN_TRACE {
        return Err(Error::Data(format!("trace of length {n} is shorter than {MIN_TRACE}")));
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let c: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| -> f64 {
        c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let g0 = autocov(0);
    let scale = mean.abs().max(1.0);
    if g0 <= (1e-14 * scale).powi(2) {
        return Ok(Ess { value: 0.0, constant: true });
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let mut pair = autocov(2 * k) + autocov(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev {
            pair = prev;
        }
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = (-1.0 + 2.0 * sum / g0).max(1e-12);
    Ok(Ess {
        value: (n as f64 / tau).min(n as f64 * (n as f64).log10().max(1.0)),
        constant: false,
    })
}

/// Monte Carlo standard error of the mean of `trace`.
pub fn mcse(trace: &[f64]) -> Result<f64> {
    let e = effective_sample_size(trace)?;
    let n = trace.len() as f64;
    let mean = trace.iter().sum::<f64>() / n;
    let var = trace.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if e.constant {
        return Ok(0.0);
    }
    Ok((var / e.value).sqrt())
}
