use super::{Result, TrainError};

/// `(1/N)·Σ_masked (pred − label)² + λ·(1/W)·Σ w²`, with `N` the masked
/// pixel count and `W` the number of parameters (biases included).
pub fn loss(pred: &[f32], labels: &[f32], mask: &[bool], weights: &[f32], lambda: f64) -> Result<f64> {
    let (sq, n) = masked_squared_error(pred, labels, mask)?;
    if n == 0 {
        return Err(TrainError::EmptyMask);
    }
    Ok(sq / n as f64 + l2_penalty(weights, lambda))
}

/// `λ·(1/W)·Σ w²`.
pub fn l2_penalty(weights: &[f32], lambda: f64) -> f64 {
    if lambda == 0.0 || weights.is_empty() {
        return 0.0;
    }
    lambda * weights.iter().map(|&w| w as f64 * w as f64).sum::<f64>() / weights.len() as f64
}

/// Sum of squared errors over masked pixels and the masked count.
pub fn masked_squared_error(pred: &[f32], labels: &[f32], mask: &[bool]) -> Result<(f64, usize)> {
    if pred.len() != labels.len() || pred.len() != mask.len() {
        return Err(TrainError::Shape(format!(
            "pred {}, labels {}, mask {}",
            pred.len(),
            labels.len(),
            mask.len()
        )));
    }
    let mut sq = 0.0;
    let mut n = 0;
    for ((&p, &l), &m) in pred.iter().zip(labels).zip(mask) {
        if m {
            let d = p as f64 - l as f64;
            sq += d * d;
            n += 1;
        }
    }
    Ok((sq, n))
}

/// `∂/∂pred` of `(1/n_total)·Σ_masked (pred − label)²`; exactly zero at
/// unmasked pixels whatever their predictions.
pub fn masked_mse_grad(pred: &[f32], labels: &[f32], mask: &[bool], n_total: usize) -> Vec<f32> {
    let scale = 2.0 / n_total as f64;
    pred.iter()
        .zip(labels)
        .zip(mask)
        .map(|((&p, &l), &m)| if m { (scale * (p as f64 - l as f64)) as f32 } else { 0.0 })
        .collect()
}

/// Adds `∂/∂w` of [`l2_penalty`] to `grads`.
pub fn add_l2_grad(weights: &[f32], lambda: f64, grads: &mut [f64]) {
    if lambda == 0.0 || weights.is_empty() {
        return;
    }
    let scale = 2.0 * lambda / weights.len() as f64;
    for (g, &w) in grads.iter_mut().zip(weights) {
        *g += scale * w as f64;
    }
}
