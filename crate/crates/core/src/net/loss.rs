//! Periodic cosine loss.
//!
//! `ℓ(ψ, ψ̃) = 1 − cos(ψ − ψ̃)` behaves like `½(ψ − ψ̃)²` for small errors
//! but is invariant to `2π` shifts of the estimate.

use ndarray::{Array1, Array3};

use super::model::{Mode, MountNetModel};
use super::NetError;

pub fn cos_loss(psi: f64, estimate: f64) -> f64 {
    1.0 - (psi - estimate).cos()
}

/// `∂ℓ/∂ψ̃ = sin(ψ̃ − ψ)`
pub fn cos_loss_grad(psi: f64, estimate: f64) -> f64 {
    (estimate - psi).sin()
}

/// Mean cosine loss of a set of predictions.
pub fn mean_cos_loss(labels: &[f64], predictions: &Array1<f64>) -> f64 {
    let n = labels.len() as f64;
    labels
        .iter()
        .zip(predictions)
        .map(|(p, e)| cos_loss(*p, *e))
        .sum::<f64>()
        / n
}

/// `mean ℓ + λ‖W‖²` on a batch, in the given batch-norm mode.
pub fn total_loss(
    model: &MountNetModel,
    x: &Array3<f64>,
    labels: &[f64],
    lambda: f64,
    mode: Mode,
) -> Result<f64, NetError> {
    if labels.is_empty() || x.dim().0 == 0 {
        return Err(NetError::EmptyBatch);
    }
    if labels.len() != x.dim().0 {
        return Err(NetError::CacheMismatch);
    }
    let (pred, _) = model.forward(x, mode)?;
    Ok(mean_cos_loss(labels, &pred) + lambda * model.weight_norm_sq())
}
