use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub const QUANTILES: [f64; 9] = [0.02, 0.10, 0.20, 0.30, 0.50, 0.70, 0.80, 0.90, 0.98];

pub fn huber(u: f64, delta: f64) -> f64 {
    if u.abs() <= delta {
        0.5 * u * u
    } else {
        delta * (u.abs() - 0.5 * delta)
    }
}

fn huber_grad(u: f64, delta: f64) -> f64 {
    u.clamp(-delta, delta)
}

/// Mean over rows and quantiles of `|q − 1[u<0]| · Huber_δ(u)` with
/// `u = target − pred`. Returns the loss and its gradient w.r.t. `pred`.
pub fn huber_quantile_loss(
    pred: &Array2<f64>,
    target: ArrayView1<f64>,
    quantiles: &[f64],
    delta: f64,
) -> Result<(f64, Array2<f64>)> {
    if pred.ncols() != quantiles.len() || pred.nrows() != target.len() {
        return Err(Error::Contract(format!(
            "quantile loss: prediction {:?} vs {} targets and {} quantiles",
            pred.shape(),
            target.len(),
            quantiles.len()
        )));
    }
    let count = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros(pred.raw_dim());
    for ((r, c), &p) in pred.indexed_iter() {
        let u = target[r] - p;
        let weight = (quantiles[c] - if u < 0.0 { 1.0 } else { 0.0 }).abs();
        loss += weight * huber(u, delta);
        grad[[r, c]] = -weight * huber_grad(u, delta) / count;
    }
    Ok((loss / count, grad))
}
