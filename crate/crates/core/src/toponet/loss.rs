use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Predictions are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the logs.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub total: f64,
    pub conf: f64,
    pub vol: f64,
}

fn check(pred: &[f64], target: &[f64], beta: f64) -> Result<()> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!("beta must be >= 0, got {beta}")));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Binary cross-entropy plus `beta` times the squared volume mismatch.
pub fn loss(pred: &[f64], target: &[f64], beta: f64) -> Result<LossParts> {
    check(pred, target, beta)?;
    let ce: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            t * p.ln() + (1.0 - t) * (1.0 - p).ln()
        })
        .sum();
    let conf = -ce / pred.len() as f64;
    let vol = (mean(pred) - mean(target)).powi(2);
    Ok(LossParts {
        total: conf + beta * vol,
        conf,
        vol,
    })
}

/// Gradient of [`loss`]`.total` with respect to `pred`.
pub fn loss_backward(pred: &[f64], target: &[f64], beta: f64) -> Result<Vec<f64>> {
    check(pred, target, beta)?;
    let n = pred.len() as f64;
    let dvol = 2.0 * beta * (mean(pred) - mean(target)) / n;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let dconf = if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                (-t / p + (1.0 - t) / (1.0 - p)) / n
            } else {
                0.0
            };
            dconf + dvol
        })
        .collect())
}
