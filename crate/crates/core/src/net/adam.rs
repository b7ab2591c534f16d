use super::model::{GradientSet, MountNetModel};

/// Adam moments for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(model: &MountNetModel) -> Self {
        let shapes: Vec<usize> = model.trainable().iter().map(|t| t.len()).collect();
        Self {
            step: 0,
            m: shapes.iter().map(|n| vec![0.0; *n]).collect(),
            v: shapes.iter().map(|n| vec![0.0; *n]).collect(),
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, model: &mut MountNetModel, grads: &GradientSet, p: &AdamParams) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - p.beta1.powi(t);
        let c2 = 1.0 - p.beta2.powi(t);
        for (((w, g), m), v) in model
            .trainable_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..w.len() {
                m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g[i];
                v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= p.lr * m_hat / (v_hat.sqrt() + p.eps);
            }
        }
    }
}
