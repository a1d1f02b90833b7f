//! Mini-batch training with Adam, step learning-rate decay, early stopping
//! on validation loss and best-checkpoint retention.
//!
//! Targets are trained in kPa; patch sets carry them in Pa. Training runs on
//! one thread and is deterministic for a given seed.

use std::fmt::Write as _;

use elastolab_core::patch::PatchSet;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::ModelParams;
use crate::tape::{apply_bn_updates, Mode};
use crate::tensor::{Scalar, Tensor};
use crate::unet::{forward, init_params, loss_and_gradients, UNetConfig};
use crate::loss::loss;

/// RNG stream for mini-batch shuffling.
pub const SHUFFLE_STREAM: u64 = 5;

/// Pa to kPa.
pub const TARGET_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Factor applied to the learning rate every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub tv_lambda: f64,
    pub tv_epsilon: f64,
    /// Stop after this many consecutive epochs without a new best
    /// validation loss.
    pub early_stopping_patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            batch_size: 32,
            epochs: 50,
            lr_decay: 0.8,
            decay_every: 20,
            tv_lambda: 1e-3,
            tv_epsilon: 1e-8,
            early_stopping_patience: 10,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(config(format!("lr_decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if !(self.tv_epsilon > 0.0) || !(self.tv_lambda >= 0.0) {
            return Err(config("need tv_epsilon > 0 and tv_lambda >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 || self.early_stopping_patience == 0 {
            return Err(config("batch_size, epochs, decay_every and early_stopping_patience must be positive"));
        }
        Ok(())
    }

    /// Learning rate for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over a validation-loss curve.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, since_best: 0 }
    }

    pub fn update(&mut self, val_loss: f64) -> Verdict {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_best = 0;
            Verdict::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                Verdict::Stop
            } else {
                Verdict::Continue
            }
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0-based epoch index.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub params: ModelParams<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,train_loss,val_loss\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_loss);
    }
    out
}

/// Stacks the selected patches into (input, target-in-kPa) tensors.
pub fn batch_tensors<T: Scalar>(set: &PatchSet, indices: &[usize]) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    let s = set.patch_size;
    let n = indices.len();
    let mut input = Vec::with_capacity(n * 2 * s * s);
    let mut target = Vec::with_capacity(n * s * s);
    let mut has_target = true;
    for &i in indices {
        let p = &set.patches[i];
        input.extend(p.input.iter().map(|&v| T::from_f64_lossy(v)));
        match &p.target {
            Some(t) => target.extend(t.iter().map(|&v| T::from_f64_lossy(v * TARGET_SCALE))),
            None => has_target = false,
        }
    }
    let input = Tensor::new(vec![n, 2, s, s], input)?;
    let target = if has_target { Some(Tensor::new(vec![n, 1, s, s], target)?) } else { None };
    Ok((input, target))
}

/// Mean training target in kPa.
pub fn mean_target(set: &PatchSet) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in set.patches.iter().filter_map(|p| p.target.as_ref()) {
        sum += t.iter().sum::<f64>();
        n += t.len();
    }
    if n == 0 { 0.0 } else { sum / n as f64 * TARGET_SCALE }
}

/// Starts the output at the target mean so early steps fit structure rather
/// than the offset.
fn set_head_bias(params: &mut ModelParams<f32>, value: f64) -> Result<()> {
    let bias = params.get_mut("head.bias").ok_or_else(|| config("missing head.bias"))?;
    bias.data_mut().iter_mut().for_each(|b| *b = value as f32);
    Ok(())
}

fn require_targets(set: &PatchSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::EmptyDataset(format!("{what} set has no patches")));
    }
    if !set.has_targets() {
        return Err(Error::EmptyDataset(format!("{what} set has no stiffness targets")));
    }
    Ok(())
}

/// Mean composite loss over `set` in inference mode, weighting each batch by
/// its number of samples.
pub fn evaluate_loss(
    unet: &UNetConfig,
    params: &ModelParams<f32>,
    set: &PatchSet,
    cfg: &TrainConfig,
) -> Result<f64> {
    require_targets(set, "evaluation")?;
    let order: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let (x, y) = batch_tensors::<f32>(set, chunk)?;
        let y = y.expect("targets checked");
        let (pred, _) = forward(unet, params, x, Mode::Eval)?;
        total += loss(&pred, &y, cfg.tv_lambda, cfg.tv_epsilon)? * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

pub fn train(unet: &UNetConfig, train_set: &PatchSet, val_set: &PatchSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(unet, train_set, val_set, cfg, |_| {})
}

/// As `train`, calling `on_epoch` after every completed epoch.
pub fn train_with_progress(
    unet: &UNetConfig,
    train_set: &PatchSet,
    val_set: &PatchSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    require_targets(train_set, "training")?;
    require_targets(val_set, "validation")?;
    if train_set.patch_size != val_set.patch_size {
        return Err(config("training and validation patch sizes differ"));
    }
    let mut params = init_params::<f32>(unet, cfg.seed)?;
    set_head_bias(&mut params, mean_target(train_set))?;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut state = AdamState::new(&params);
    let mut rng = elastolab_core::rng::stream(cfg.seed, SHUFFLE_STREAM);
    let mut stopper = EarlyStopping::new(cfg.early_stopping_patience);
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = batch_tensors::<f32>(train_set, chunk)?;
            let y = y.expect("targets checked");
            let step = match loss_and_gradients(unet, &params, x, &y, cfg.tv_lambda, cfg.tv_epsilon) {
                Err(Error::NonFiniteGradient { .. }) => {
                    return Err(Error::Divergence { epoch, last_good: Box::new(best_params) })
                }
                other => other?,
            };
            if !step.loss.is_finite() {
                return Err(Error::Divergence { epoch, last_good: Box::new(best_params) });
            }
            total += step.loss * chunk.len() as f64;
            adam_step(&mut params, &step.gradients, &mut state, lr, &cfg.adam)?;
            apply_bn_updates(&mut params, step.bn_updates)?;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = evaluate_loss(unet, &params, val_set, cfg)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, last_good: Box::new(best_params) });
        }
        let record = EpochRecord { epoch, lr, train_loss, val_loss };
        on_epoch(&record);
        history.push(record);
        match stopper.update(val_loss) {
            Verdict::Improved => {
                best_params = params.clone();
                best_epoch = epoch;
            }
            Verdict::Continue => {}
            Verdict::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best_params, history, best_epoch, best_val_loss: stopper.best(), stopped_early })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_decay_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 3e-4);
        assert_eq!(cfg.lr_at(19), 3e-4);
        assert!((cfg.lr_at(20) - 2.4e-4).abs() < 1e-18);
        assert!((cfg.lr_at(40) - 1.92e-4).abs() < 1e-18);
    }

    #[test]
    fn patience_on_worsening_curve() {
        let mut stopper = EarlyStopping::new(5);
        let mut epochs = 0;
        for k in 0..100 {
            epochs += 1;
            if stopper.update(1.0 + k as f64) == Verdict::Stop {
                break;
            }
        }
        assert_eq!(epochs, 6);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut stopper = EarlyStopping::new(2);
        assert_eq!(stopper.update(3.0), Verdict::Improved);
        assert_eq!(stopper.update(4.0), Verdict::Continue);
        assert_eq!(stopper.update(2.0), Verdict::Improved);
        assert_eq!(stopper.update(2.0), Verdict::Continue);
        assert_eq!(stopper.update(5.0), Verdict::Stop);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { lr: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { lr_decay: 1.5, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { tv_epsilon: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn history_csv_header() {
        let csv = history_csv(&[EpochRecord { epoch: 0, lr: 3e-4, train_loss: 1.5, val_loss: 2.0 }]);
        assert_eq!(csv, "epoch,lr,train_loss,val_loss\n0,0.0003,1.5,2\n");
    }
}
