//! Central finite-difference oracle for [`MountNetModel::backward`].

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

use super::loss::total_loss;
use super::model::{kaiming_init, Mode, MountNetModel, TENSOR_NAMES};
use super::NetError;
use crate::seed;
use crate::signal::{CHANNELS, WINDOW_LEN};

/// Worst agreement observed for one tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel: f64,
    pub max_abs: f64,
}

/// Gradient magnitude below which agreement is judged absolutely: central
/// differences at `h = 1e-5` carry about `1e-11` of rounding noise on an
/// `O(1)` loss, so relative error is only meaningful above this.
pub const FLOOR: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A randomized model and batch for gradient checks. Biases, γ and β are
/// drawn away from their initial constants so every gradient is generic;
/// β is mostly positive so that few units sit at the ReLU kink.
pub fn fixture(seed_value: u64, batch: usize) -> (MountNetModel, Array3<f64>, Vec<f64>) {
    let mut model = kaiming_init(seed_value);
    let mut rng = seed::rng(seed::derive(seed_value, "gradcheck", 0));
    for (c, bn) in model.conv.iter_mut().zip(model.bn.iter_mut()) {
        c.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.1..0.1));
        bn.gamma.iter_mut().for_each(|g| *g = rng.gen_range(0.2..0.4));
        bn.beta.iter_mut().for_each(|b| {
            let sign = if rng.gen_bool(0.8) { 1.0 } else { -1.0 };
            *b = sign * rng.gen_range(0.8..1.2);
        });
    }
    model.dense1.bias.iter_mut().for_each(|b| *b = rng.gen_range(0.2..0.5));
    model.dense2.bias[0] = rng.gen_range(-0.5..0.5);
    let x = Array3::from_shape_fn((batch, WINDOW_LEN, CHANNELS), |_| rng.sample::<f64, _>(StandardNormal));
    let y = (0..batch).map(|_| rng.gen_range(-3.0..3.0)).collect();
    (model, x, y)
}

/// Compares analytic gradients with central differences for every
/// `stride`-th parameter of every trainable tensor (`stride = 1` checks all).
pub fn check_gradients(
    model: &MountNetModel,
    x: &Array3<f64>,
    labels: &[f64],
    lambda: f64,
    h: f64,
    floor: f64,
    stride: usize,
) -> Result<Vec<TensorCheck>, NetError> {
    let (pred, cache) = model.forward(x, Mode::Train)?;
    let grads = model.backward(&cache.expect("train mode"), &pred, labels, lambda)?;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(TENSOR_NAMES.len());
    for (t, name) in TENSOR_NAMES.iter().enumerate() {
        let mut check = TensorCheck {
            name,
            checked: 0,
            max_rel: 0.0,
            max_abs: 0.0,
        };
        let len = analytic[t].len();
        for j in (0..len).step_by(stride.max(1)) {
            let w = probe.trainable()[t][j];
            probe.trainable_mut()[t][j] = w + h;
            let up = total_loss(&probe, x, labels, lambda, Mode::Train)?;
            probe.trainable_mut()[t][j] = w - h;
            let down = total_loss(&probe, x, labels, lambda, Mode::Train)?;
            probe.trainable_mut()[t][j] = w;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[t][j];
            check.checked += 1;
            check.max_abs = check.max_abs.max((a - numeric).abs());
            check.max_rel = check.max_rel.max(relative_error(a, numeric, floor));
        }
        out.push(check);
    }
    Ok(out)
}
