//! Single-precision inference copy with batch norm folded into the
//! preceding convolution.

use ndarray::{Array1, Array2, Axis};

use super::model::MountNetModel;
use super::NetError;
use crate::signal::ImuWindow;

#[derive(Debug, Clone)]
struct FoldedConv {
    weight: Array2<f32>,
    bias: Array1<f32>,
    kernel: usize,
    stride: usize,
    in_channels: usize,
}

#[derive(Debug, Clone)]
pub struct FrozenModel {
    conv: Vec<FoldedConv>,
    dense1: (Array2<f32>, Array1<f32>),
    dense2: (Array2<f32>, Array1<f32>),
}

impl FrozenModel {
    pub fn from_model(model: &MountNetModel) -> Self {
        let eps = model.bn_config.eps;
        let conv = model
            .conv
            .iter()
            .zip(&model.bn)
            .map(|(c, bn)| {
                let scale = &bn.gamma / &bn.running_var.mapv(|v| (v + eps).sqrt());
                let weight = (&c.weight * &scale).mapv(|v| v as f32);
                let bias = ((&c.bias - &bn.running_mean) * &scale + &bn.beta).mapv(|v| v as f32);
                FoldedConv {
                    weight,
                    bias,
                    kernel: c.kernel,
                    stride: c.stride,
                    in_channels: c.in_channels,
                }
            })
            .collect();
        let cast = |w: &Array2<f64>, b: &Array1<f64>| (w.mapv(|v| v as f32), b.mapv(|v| v as f32));
        Self {
            conv,
            dense1: cast(&model.dense1.weight, &model.dense1.bias),
            dense2: cast(&model.dense2.weight, &model.dense2.bias),
        }
    }

    pub fn predict(&self, window: &ImuWindow) -> Result<f64, NetError> {
        let mut act = window.data().mapv(|v| v as f32);
        for c in &self.conv {
            let len = act.nrows();
            let out_len = (len - c.kernel) / c.stride + 1;
            let width = c.kernel * c.in_channels;
            let flat = act.as_slice().expect("contiguous");
            let mut p = Array2::<f32>::zeros((out_len, width));
            for (o, mut row) in p.rows_mut().into_iter().enumerate() {
                let at = o * c.stride * c.in_channels;
                row.as_slice_mut()
                    .expect("contiguous")
                    .copy_from_slice(&flat[at..at + width]);
            }
            let mut z = p.dot(&c.weight);
            z += &c.bias;
            z.mapv_inplace(|v| v.max(0.0));
            act = z;
        }
        let pooled = act.mean_axis(Axis(0)).expect("non-empty");
        let mut h = pooled.dot(&self.dense1.0) + &self.dense1.1;
        h.mapv_inplace(|v| v.max(0.0));
        let out = h.dot(&self.dense2.0)[0] + self.dense2.1[0];
        if out.is_finite() {
            Ok(out as f64)
        } else {
            Err(NetError::NumericFault { layer: "dense2" })
        }
    }
}
