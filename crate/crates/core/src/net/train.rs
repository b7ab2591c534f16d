use ndarray::{s, Array3};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{AdamParams, AdamState};
use super::loss::mean_cos_loss;
use super::model::{kaiming_init, Mode, MountNetModel};
use super::NetError;
use crate::angle::wrap_pi;
use crate::dataset::PairSet;
use crate::seed;
use crate::signal::{CHANNELS, WINDOW_LEN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Draw fresh training rotations from this range every epoch.
    pub redraw_range: Option<(f64, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 128,
            epochs: 1400,
            lambda: 1e-6,
            seed: 0,
            redraw_range: None,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size < 2 {
            return Err(NetError::Config("batch_size must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NetError::Config(format!("lr {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NetError::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(NetError::Config(format!("lambda {}", self.lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mae_deg: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: MountNetModel,
    pub best_epoch: usize,
    pub last: MountNetModel,
    pub history: Vec<EpochLog>,
}

/// Copies pairs `idx` into a `(B, 100, 6)` batch.
pub fn gather(set: &PairSet, idx: &[usize]) -> (Array3<f64>, Vec<f64>) {
    let mut x = Array3::zeros((idx.len(), WINDOW_LEN, CHANNELS));
    let mut y = Vec::with_capacity(idx.len());
    for (b, &i) in idx.iter().enumerate() {
        set.write_input(i, x.slice_mut(s![b, .., ..]));
        y.push(set.label(i));
    }
    (x, y)
}

/// Eval-mode loss (without the weight penalty) and mean absolute wrapped
/// error in degrees.
pub fn evaluate_set(model: &MountNetModel, set: &PairSet) -> Result<(f64, f64), NetError> {
    if set.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    let (mut loss, mut abs) = (0.0, 0.0);
    for chunk in idx.chunks(512) {
        let (x, y) = gather(set, chunk);
        let pred = model.predict_batch(&x)?;
        loss += mean_cos_loss(&y, &pred) * chunk.len() as f64;
        abs += y.iter().zip(&pred).map(|(t, p)| wrap_pi(p - t).abs()).sum::<f64>();
    }
    let n = set.len() as f64;
    Ok((loss / n, (abs / n).to_degrees()))
}

/// Trains from a seeded Kaiming initialization; see [`train_from`].
pub fn train(
    train_set: &mut PairSet,
    val_set: &PairSet,
    config: &TrainConfig,
    on_epoch: impl FnMut(&EpochLog, &MountNetModel, bool),
) -> Result<TrainOutcome, NetError> {
    train_from(kaiming_init(config.seed), train_set, val_set, config, on_epoch)
}

/// Mini-batch Adam on the cosine loss. Batches are reshuffled every epoch
/// from a seed derived from `(config.seed, epoch)`; a trailing batch of one
/// sample is skipped because batch statistics are undefined for it.
/// `on_epoch` receives each log entry, the current model, and whether it is
/// the best so far by validation loss.
pub fn train_from(
    mut model: MountNetModel,
    train_set: &mut PairSet,
    val_set: &PairSet,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &MountNetModel, bool),
) -> Result<TrainOutcome, NetError> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(NetError::EmptyBatch);
    }
    let adam = config.adam();
    let mut opt = AdamState::new(&model);
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        if let Some(range) = config.redraw_range {
            train_set
                .redraw(range, seed::derive(config.seed, "redraw", epoch as u64))
                .map_err(|e| NetError::Config(e.to_string()))?;
        }
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive(config.seed, "shuffle", epoch as u64)));
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let diverged = |model: &MountNetModel| NetError::Diverged {
                epoch,
                batch: bi,
                last_good: Box::new(model.clone()),
            };
            let (x, y) = gather(train_set, chunk);
            let (pred, cache) = match model.forward(&x, Mode::Train) {
                Ok(r) => r,
                Err(NetError::NumericFault { .. }) => return Err(diverged(&best)),
                Err(e) => return Err(e),
            };
            let cache = cache.expect("train mode records a cache");
            let batch_loss = mean_cos_loss(&y, &pred);
            if !batch_loss.is_finite() {
                return Err(diverged(&best));
            }
            let grads = model.backward(&cache, &pred, &y, config.lambda)?;
            if !grads.is_finite() {
                return Err(diverged(&best));
            }
            opt.step(&mut model, &grads, &adam);
            model.update_running_stats(&cache);
            loss_sum += batch_loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = loss_sum / seen.max(1) as f64 + config.lambda * model.weight_norm_sq();
        let (val_loss, val_mae_deg) = match evaluate_set(&model, val_set) {
            Ok(v) => v,
            Err(NetError::NumericFault { .. }) => {
                return Err(NetError::Diverged {
                    epoch,
                    batch: 0,
                    last_good: Box::new(best),
                })
            }
            Err(e) => return Err(e),
        };
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_mae_deg,
        };
        let is_best = val_loss < best_loss;
        if is_best {
            best_loss = val_loss;
            best_epoch = epoch;
            best = model.clone();
        }
        log::info!("epoch {epoch} train {train_loss:.5} val {val_loss:.5} mae {val_mae_deg:.2} deg");
        on_epoch(&log, &model, is_best);
        history.push(log);
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: model,
        history,
    })
}

/// Writes the training log as CSV.
pub fn write_log(path: &std::path::Path, history: &[EpochLog]) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,train_loss,val_loss,val_mae_deg")?;
    for h in history {
        writeln!(
            f,
            "{},{:.8},{:.8},{:.4}",
            h.epoch, h.train_loss, h.val_loss, h.val_mae_deg
        )?;
    }
    f.flush()
}
