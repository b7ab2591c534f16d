//! Layer primitives on row-major `(rows, channels)` activations.
//!
//! A batch of sequences `(B, L, C)` is stored as `(B·L, C)`, so a strided
//! valid convolution becomes a matrix product over extracted patches.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

/// Strided valid 1D convolution. Weight rows are indexed `(tap, in_channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub kernel: usize,
    pub stride: usize,
    pub in_channels: usize,
}

impl Conv1d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            weight: Array2::zeros((kernel * in_channels, out_channels)),
            bias: Array1::zeros(out_channels),
            kernel,
            stride,
            in_channels,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.in_channels
    }

    /// `⌊(L − k)/s⌋ + 1`
    pub fn out_len(&self, len: usize) -> usize {
        (len - self.kernel) / self.stride + 1
    }

    /// Gathers every receptive field into a `(B·L_out, k·C_in)` matrix.
    pub fn patches(&self, input: ArrayView2<f64>, batch: usize, len: usize) -> Array2<f64> {
        let out_len = self.out_len(len);
        let width = self.kernel * self.in_channels;
        let flat = input.as_slice().expect("contiguous activations");
        let mut p = Array2::zeros((batch * out_len, width));
        let dst = p.as_slice_mut().expect("fresh array");
        for b in 0..batch {
            for o in 0..out_len {
                let src = (b * len + o * self.stride) * self.in_channels;
                let row = (b * out_len + o) * width;
                dst[row..row + width].copy_from_slice(&flat[src..src + width]);
            }
        }
        p
    }

    pub fn forward(&self, patches: &Array2<f64>) -> Array2<f64> {
        let mut z = patches.dot(&self.weight);
        z += &self.bias;
        z
    }

    /// Scatter-adds patch gradients back onto the `(B·L, C_in)` input.
    pub fn fold_patches(&self, dpatches: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
        let out_len = self.out_len(len);
        let width = self.kernel * self.in_channels;
        let mut dx = Array2::zeros((batch * len, self.in_channels));
        let dst = dx.as_slice_mut().expect("fresh array");
        let src = dpatches.as_slice().expect("contiguous");
        for b in 0..batch {
            for o in 0..out_len {
                let at = (b * len + o * self.stride) * self.in_channels;
                let row = (b * out_len + o) * width;
                for (d, g) in dst[at..at + width].iter_mut().zip(&src[row..row + width]) {
                    *d += g;
                }
            }
        }
        dx
    }
}

/// Per-channel batch normalization over all rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Batch statistics and normalized activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub mean: Array1<f64>,
    /// Biased batch variance.
    pub var: Array1<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub fn forward_train(&self, z: &Array2<f64>, eps: f64) -> (Array2<f64>, BatchNormCache) {
        let n = z.nrows() as f64;
        let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = z - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (
            y,
            BatchNormCache {
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    pub fn forward_eval(&self, z: &Array2<f64>, eps: f64) -> Array2<f64> {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + eps).sqrt());
        let shift = &self.beta - &(&self.running_mean * &scale);
        z * &scale + &shift
    }

    /// Returns `(dz, dgamma, dbeta)` for upstream gradient `dy`.
    pub fn backward(&self, dy: &Array2<f64>, cache: &BatchNormCache) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let n = dy.nrows() as f64;
        let dbeta = dy.sum_axis(Axis(0));
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dz = dxhat * n;
        dz -= &sum_dxhat;
        dz -= &(&cache.xhat * &sum_dxhat_xhat);
        dz *= &(&cache.inv_std / n);
        (dz, dgamma, dbeta)
    }

    /// Exponential update of the running statistics (unbiased variance).
    pub fn update_running(&mut self, cache: &BatchNormCache, rows: usize, momentum: f64) {
        let correction = if rows > 1 { rows as f64 / (rows - 1) as f64 } else { 1.0 };
        self.running_mean = &self.running_mean * (1.0 - momentum) + &cache.mean * momentum;
        self.running_var = &self.running_var * (1.0 - momentum) + &cache.var * (momentum * correction);
    }
}

/// Fully connected layer, weight `(in, out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU; the subgradient at exactly zero is zero.
pub fn relu_backward(dy: &Array2<f64>, pre: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(pre, |g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

/// Mean over the time axis of `(B·L, C)` activations, giving `(B, C)`.
pub fn mean_pool(x: &Array2<f64>, batch: usize, len: usize) -> Array2<f64> {
    let c = x.ncols();
    let mut out = Array2::zeros((batch, c));
    for b in 0..batch {
        let block = x.slice(s![b * len..(b + 1) * len, ..]);
        out.row_mut(b).assign(&block.mean_axis(Axis(0)).expect("len > 0"));
    }
    out
}

/// Spreads `(B, C)` gradients uniformly over the `len` time steps.
pub fn mean_pool_backward(dy: &Array2<f64>, len: usize) -> Array2<f64> {
    let (batch, c) = dy.dim();
    let mut dx = Array2::zeros((batch * len, c));
    let scale = 1.0 / len as f64;
    for b in 0..batch {
        let g = dy.row(b).mapv(|v| v * scale);
        for t in 0..len {
            dx.row_mut(b * len + t).assign(&g);
        }
    }
    dx
}
