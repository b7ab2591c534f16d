//! The MountNet architecture: three Conv1D → BatchNorm → ReLU blocks, mean
//! pooling over time, then Dense(128→36) → ReLU → Dense(36→1).

use ndarray::{Array1, Array2, Array3, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layers::{mean_pool, mean_pool_backward, relu, relu_backward, BatchNorm, BatchNormCache, Conv1d, Dense};
use super::loss;
use super::NetError;
use crate::seed;
use crate::signal::{ImuWindow, CHANNELS, WINDOW_LEN};

/// Hidden dense width.
pub const HIDDEN: usize = 36;
/// (out channels, kernel, stride) per convolution.
pub const CONV_SPECS: [(usize, usize, usize); 3] = [(32, 20, 5), (64, 3, 1), (128, 3, 1)];
/// Trainable parameters of the architecture.
pub const PARAMETER_COUNT: usize = 39_913;

/// Names of the trainable tensors, in canonical order.
pub const TENSOR_NAMES: [&str; 16] = [
    "conv1.weight",
    "conv1.bias",
    "bn1.gamma",
    "bn1.beta",
    "conv2.weight",
    "conv2.bias",
    "bn2.gamma",
    "bn2.beta",
    "conv3.weight",
    "conv3.bias",
    "bn3.gamma",
    "bn3.beta",
    "dense1.weight",
    "dense1.bias",
    "dense2.weight",
    "dense2.bias",
];

/// Batch-norm hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MountNetModel {
    pub conv: [Conv1d; 3],
    pub bn: [BatchNorm; 3],
    pub dense1: Dense,
    pub dense2: Dense,
    pub bn_config: BnConfig,
}

/// Gradients, one buffer per trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub conv: [(Array2<f64>, Array1<f64>); 3],
    pub bn: [(Array1<f64>, Array1<f64>); 3],
    pub dense1: (Array2<f64>, Array1<f64>),
    pub dense2: (Array2<f64>, Array1<f64>),
}

impl GradientSet {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(16);
        for i in 0..3 {
            out.push(self.conv[i].0.as_slice().expect("contiguous"));
            out.push(self.conv[i].1.as_slice().expect("contiguous"));
            out.push(self.bn[i].0.as_slice().expect("contiguous"));
            out.push(self.bn[i].1.as_slice().expect("contiguous"));
        }
        out.push(self.dense1.0.as_slice().expect("contiguous"));
        out.push(self.dense1.1.as_slice().expect("contiguous"));
        out.push(self.dense2.0.as_slice().expect("contiguous"));
        out.push(self.dense2.1.as_slice().expect("contiguous"));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Activations recorded by a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    lens: [usize; 4],
    patches: [Array2<f64>; 3],
    bn: [BatchNormCache; 3],
    bn_out: [Array2<f64>; 3],
    pooled: Array2<f64>,
    hidden_pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

fn check_finite(layer: &'static str, x: &Array2<f64>) -> Result<(), NetError> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(NetError::NumericFault { layer })
    }
}

impl MountNetModel {
    /// Architecture with all parameters zero and fresh batch-norm statistics.
    pub fn zeros() -> Self {
        let mut in_ch = CHANNELS;
        let conv = CONV_SPECS.map(|(out, k, s)| {
            let c = Conv1d::zeros(in_ch, out, k, s);
            in_ch = out;
            c
        });
        Self {
            conv,
            bn: CONV_SPECS.map(|(out, _, _)| BatchNorm::new(out)),
            dense1: Dense::zeros(CONV_SPECS[2].0, HIDDEN),
            dense2: Dense::zeros(HIDDEN, 1),
            bn_config: BnConfig::default(),
        }
    }

    /// Temporal length after each convolution for an input of `len` steps.
    pub fn temporal_lengths(&self, len: usize) -> [usize; 3] {
        let l1 = self.conv[0].out_len(len);
        let l2 = self.conv[1].out_len(l1);
        [l1, l2, self.conv[2].out_len(l2)]
    }

    pub fn trainable(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(16);
        for i in 0..3 {
            out.push(self.conv[i].weight.as_slice().expect("contiguous"));
            out.push(self.conv[i].bias.as_slice().expect("contiguous"));
            out.push(self.bn[i].gamma.as_slice().expect("contiguous"));
            out.push(self.bn[i].beta.as_slice().expect("contiguous"));
        }
        out.push(self.dense1.weight.as_slice().expect("contiguous"));
        out.push(self.dense1.bias.as_slice().expect("contiguous"));
        out.push(self.dense2.weight.as_slice().expect("contiguous"));
        out.push(self.dense2.bias.as_slice().expect("contiguous"));
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(16);
        let Self {
            conv,
            bn,
            dense1,
            dense2,
            ..
        } = self;
        for (c, b) in conv.iter_mut().zip(bn.iter_mut()) {
            out.push(c.weight.as_slice_mut().expect("contiguous"));
            out.push(c.bias.as_slice_mut().expect("contiguous"));
            out.push(b.gamma.as_slice_mut().expect("contiguous"));
            out.push(b.beta.as_slice_mut().expect("contiguous"));
        }
        out.push(dense1.weight.as_slice_mut().expect("contiguous"));
        out.push(dense1.bias.as_slice_mut().expect("contiguous"));
        out.push(dense2.weight.as_slice_mut().expect("contiguous"));
        out.push(dense2.bias.as_slice_mut().expect("contiguous"));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|t| t.len()).sum()
    }

    /// `‖W‖₂²` over every trainable tensor (running statistics excluded).
    pub fn weight_norm_sq(&self) -> f64 {
        self.trainable().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }

    /// Eval-mode forward pass on a `(B, 100, 6)` batch.
    pub fn predict_batch(&self, x: &Array3<f64>) -> Result<Array1<f64>, NetError> {
        Ok(self.forward(x, Mode::Eval)?.0)
    }

    /// Yaw estimate in radians for one window (not wrapped).
    pub fn predict(&self, window: &ImuWindow) -> Result<f64, NetError> {
        let x = window.data().view().insert_axis(Axis(0)).to_owned();
        Ok(self.predict_batch(&x)?[0])
    }

    /// Forward pass; in train mode batch statistics are used and the cache
    /// for [`MountNetModel::backward`] is returned.
    pub fn forward(&self, x: &Array3<f64>, mode: Mode) -> Result<(Array1<f64>, Option<ForwardCache>), NetError> {
        let (batch, len, ch) = x.dim();
        if batch == 0 {
            return Err(NetError::EmptyBatch);
        }
        if ch != CHANNELS || len < self.conv[0].kernel {
            return Err(NetError::InputShape { len, channels: ch });
        }
        let eps = self.bn_config.eps;
        let mut act = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * len, ch))
            .expect("contiguous input");
        let mut lens = [len, 0, 0, 0];
        let names = ["conv1", "conv2", "conv3"];
        let mut patches_cache = Vec::new();
        let mut bn_cache = Vec::new();
        let mut bn_out = Vec::new();
        for i in 0..3 {
            let conv = &self.conv[i];
            let patches = conv.patches(act.view(), batch, lens[i]);
            lens[i + 1] = conv.out_len(lens[i]);
            let z = conv.forward(&patches);
            check_finite(names[i], &z)?;
            let y = match mode {
                Mode::Train => {
                    let (y, cache) = self.bn[i].forward_train(&z, eps);
                    bn_cache.push(cache);
                    y
                }
                Mode::Eval => self.bn[i].forward_eval(&z, eps),
            };
            act = relu(&y);
            if mode == Mode::Train {
                patches_cache.push(patches);
                bn_out.push(y);
            }
        }
        let pooled = mean_pool(&act, batch, lens[3]);
        let hidden_pre = self.dense1.forward(&pooled);
        check_finite("dense1", &hidden_pre)?;
        let hidden = relu(&hidden_pre);
        let out = self.dense2.forward(&hidden);
        check_finite("dense2", &out)?;
        let out = out.column(0).to_owned();
        let cache = match mode {
            Mode::Eval => None,
            Mode::Train => Some(ForwardCache {
                batch,
                lens,
                patches: vec_to_array(patches_cache),
                bn: vec_to_array(bn_cache),
                bn_out: vec_to_array(bn_out),
                pooled,
                hidden_pre,
                hidden,
            }),
        };
        Ok((out, cache))
    }

    /// Gradients of `mean(1 − cos(ψ − ψ̃)) + λ‖W‖²` given a train-mode cache.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        predictions: &Array1<f64>,
        labels: &[f64],
        lambda: f64,
    ) -> Result<GradientSet, NetError> {
        let batch = cache.batch;
        if predictions.len() != batch || labels.len() != batch {
            return Err(NetError::CacheMismatch);
        }
        let dout = Array2::from_shape_fn((batch, 1), |(b, _)| {
            loss::cos_loss_grad(labels[b], predictions[b]) / batch as f64
        });
        let d2w = standard(cache.hidden.t().dot(&dout));
        let d2b = dout.sum_axis(Axis(0));
        let dhidden = relu_backward(&dout.dot(&self.dense2.weight.t()), &cache.hidden_pre);
        let d1w = standard(cache.pooled.t().dot(&dhidden));
        let d1b = dhidden.sum_axis(Axis(0));
        let dpooled = dhidden.dot(&self.dense1.weight.t());
        let mut dact = mean_pool_backward(&dpooled, cache.lens[3]);

        let mut conv_grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(3);
        let mut bn_grads: Vec<(Array1<f64>, Array1<f64>)> = Vec::with_capacity(3);
        for i in (0..3).rev() {
            let dy = relu_backward(&dact, &cache.bn_out[i]);
            let (dz, dgamma, dbeta) = self.bn[i].backward(&dy, &cache.bn[i]);
            let conv = &self.conv[i];
            let dw = standard(cache.patches[i].t().dot(&dz));
            let db = dz.sum_axis(Axis(0));
            if i > 0 {
                let dpatches = dz.dot(&conv.weight.t());
                dact = conv.fold_patches(&dpatches, batch, cache.lens[i]);
            }
            conv_grads.push((dw, db));
            bn_grads.push((dgamma, dbeta));
        }
        conv_grads.reverse();
        bn_grads.reverse();
        let mut grads = GradientSet {
            conv: vec_to_array(conv_grads),
            bn: vec_to_array(bn_grads),
            dense1: (d1w, d1b),
            dense2: (d2w, d2b),
        };
        if lambda != 0.0 {
            add_regularization(&mut grads, self, lambda);
        }
        Ok(grads)
    }

    /// Folds batch statistics from a train-mode pass into the running estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let momentum = self.bn_config.momentum;
        for i in 0..3 {
            let rows = cache.batch * cache.lens[i + 1];
            self.bn[i].update_running(&cache.bn[i], rows, momentum);
        }
    }
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn vec_to_array<T, const N: usize>(v: Vec<T>) -> [T; N] {
    v.try_into().unwrap_or_else(|_| unreachable!("layer count is fixed"))
}

fn add_regularization(grads: &mut GradientSet, model: &MountNetModel, lambda: f64) {
    let add = |g: &mut [f64], w: &[f64]| {
        for (g, w) in g.iter_mut().zip(w) {
            *g += 2.0 * lambda * w;
        }
    };
    let weights = model.trainable();
    let mut targets: Vec<&mut [f64]> = Vec::with_capacity(16);
    let GradientSet {
        conv,
        bn,
        dense1,
        dense2,
    } = grads;
    for (c, b) in conv.iter_mut().zip(bn.iter_mut()) {
        targets.push(c.0.as_slice_mut().expect("contiguous"));
        targets.push(c.1.as_slice_mut().expect("contiguous"));
        targets.push(b.0.as_slice_mut().expect("contiguous"));
        targets.push(b.1.as_slice_mut().expect("contiguous"));
    }
    targets.push(dense1.0.as_slice_mut().expect("contiguous"));
    targets.push(dense1.1.as_slice_mut().expect("contiguous"));
    targets.push(dense2.0.as_slice_mut().expect("contiguous"));
    targets.push(dense2.1.as_slice_mut().expect("contiguous"));
    for (g, w) in targets.into_iter().zip(weights) {
        add(g, w);
    }
}

/// He/Kaiming normal initialization: weights `N(0, 2/fan_in)`, biases zero,
/// batch-norm `γ = 1`, `β = 0`, running mean 0 and variance 1.
pub fn kaiming_init(seed: u64) -> MountNetModel {
    let mut model = MountNetModel::zeros();
    let mut rng = seed::rng(seed::derive(seed, "kaiming", 0));
    let mut fill = |w: &mut Array2<f64>, fan_in: usize| {
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        w.iter_mut().for_each(|v| *v = dist.sample(&mut rng));
    };
    for conv in &mut model.conv {
        let fan_in = conv.fan_in();
        fill(&mut conv.weight, fan_in);
    }
    let fan_in = model.dense1.weight.nrows();
    fill(&mut model.dense1.weight, fan_in);
    let fan_in = model.dense2.weight.nrows();
    fill(&mut model.dense2.weight, fan_in);
    model
}

/// Convenience for the common single-window input length.
pub fn standard_temporal_lengths() -> [usize; 3] {
    MountNetModel::zeros().temporal_lengths(WINDOW_LEN)
}
