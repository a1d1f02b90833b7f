//! Encoder-decoder network with skip connections.
//!
//! Every block is two `reflect-pad -> 3x3 conv -> LeakyReLU -> batch norm`
//! stages. Encoder level `l` has `base * 2^l` channels and is followed by 2x2
//! max pooling; a bottleneck block at the deepest width sits below level
//! `levels - 1`. Each decoder level upsamples (nearest, x2), applies a 3x3
//! conv + LeakyReLU down to the level width, concatenates the matching skip
//! and runs a block. A 1x1 head produces one output channel.
//!
//! Inputs are reflect-padded to a multiple of `2^levels` (split evenly,
//! extra sample at the bottom/right) and the output is cropped back.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, shape, Result};
use crate::loss::loss_and_grad;
use crate::params::{Gradients, ModelParams};
use crate::tape::{BnUpdates, Mode, Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// RNG stream used for weight initialization.
pub const INIT_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub levels: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    /// Scale each input sample to unit RMS before the first layer. The
    /// stiffness map does not depend on the displacement amplitude, so this
    /// removes a nuisance factor.
    pub normalize_input: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            base_channels: 32,
            levels: 4,
            leaky_slope: 0.01,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            normalize_input: true,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_channels == 0 || self.levels == 0 {
            return Err(config("in_channels, base_channels and levels must be positive"));
        }
        if self.levels > 8 {
            return Err(config(format!("{} levels is too deep", self.levels)));
        }
        if !(self.bn_eps > 0.0 && (0.0..=1.0).contains(&self.bn_momentum) && self.leaky_slope.is_finite()) {
            return Err(config("need bn_eps > 0, bn_momentum in [0, 1] and a finite leaky_slope"));
        }
        Ok(())
    }

    /// Channels at encoder level `l`; the bottleneck reuses the deepest width.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level.min(self.levels - 1)
    }

    /// Spatial multiple the input is padded to.
    pub fn multiple(&self) -> usize {
        1 << self.levels
    }
}

fn conv_params<T: Scalar, R: Rng>(p: &mut ModelParams<T>, name: &str, cin: usize, cout: usize, k: usize, rng: &mut R) {
    let fan_in = (cin * k * k) as f64;
    let bound = (6.0 / fan_in).sqrt();
    let w: Vec<T> = (0..cout * cin * k * k).map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound))).collect();
    p.insert(format!("{name}.weight"), Tensor::new(vec![cout, cin, k, k], w).expect("dims match"));
    p.insert(format!("{name}.bias"), Tensor::zeros(&[cout]));
}

fn bn_params<T: Scalar>(p: &mut ModelParams<T>, name: &str, c: usize) {
    p.insert(format!("{name}.gamma"), Tensor::full(&[c], T::one()));
    p.insert(format!("{name}.beta"), Tensor::zeros(&[c]));
    p.insert(format!("{name}.running_mean"), Tensor::zeros(&[c]));
    p.insert(format!("{name}.running_var"), Tensor::full(&[c], T::one()));
}

fn block_params<T: Scalar, R: Rng>(p: &mut ModelParams<T>, name: &str, cin: usize, cout: usize, rng: &mut R) {
    conv_params(p, &format!("{name}.conv1"), cin, cout, 3, rng);
    bn_params(p, &format!("{name}.bn1"), cout);
    conv_params(p, &format!("{name}.conv2"), cout, cout, 3, rng);
    bn_params(p, &format!("{name}.bn2"), cout);
}

/// Kaiming-uniform (fan-in) conv weights, zero biases, unit/zero batch-norm
/// scale/shift. Values are drawn in f64, so f32 and f64 models built from
/// the same seed agree up to rounding.
pub fn init_params<T: Scalar>(cfg: &UNetConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut rng = elastolab_core::rng::stream(seed, INIT_STREAM);
    let mut p = ModelParams::new();
    let mut cin = cfg.in_channels;
    for l in 0..cfg.levels {
        block_params(&mut p, &format!("enc{l}"), cin, cfg.channels(l), &mut rng);
        cin = cfg.channels(l);
    }
    block_params(&mut p, "mid", cin, cfg.channels(cfg.levels), &mut rng);
    cin = cfg.channels(cfg.levels);
    for l in (0..cfg.levels).rev() {
        let c = cfg.channels(l);
        conv_params(&mut p, &format!("dec{l}.up"), cin, c, 3, &mut rng);
        block_params(&mut p, &format!("dec{l}"), 2 * c, c, &mut rng);
        cin = c;
    }
    conv_params(&mut p, "head", cin, 1, 1, &mut rng);
    Ok(p)
}

fn conv3<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, name: &str) -> Result<Var> {
    let padded = tape.pad(x, [1, 1, 1, 1]);
    tape.conv(padded, name)
}

fn block<T: Scalar>(cfg: &UNetConfig, tape: &mut Tape<'_, T>, x: Var, name: &str) -> Result<Var> {
    let mut v = x;
    for i in 1..=2 {
        v = conv3(tape, v, &format!("{name}.conv{i}"))?;
        v = tape.leaky_relu(v, cfg.leaky_slope);
        v = tape.batch_norm(v, &format!("{name}.bn{i}"), cfg.bn_eps, cfg.bn_momentum)?;
    }
    Ok(v)
}

/// Per-sample scaling to unit RMS; all-zero samples are left as is.
pub fn normalize_input<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ..) = x.nchw()?;
    let per = x.len() / n;
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_exact_mut(per) {
        let rms = (chunk.iter().map(|v| v.as_f64().powi(2)).sum::<f64>() / per as f64).sqrt();
        if rms > 0.0 {
            let s = T::from_f64_lossy(1.0 / rms);
            chunk.iter_mut().for_each(|v| *v *= s);
        }
    }
    Ok(out)
}

/// Records the network on `tape` and returns the output variable.
pub fn record<T: Scalar>(cfg: &UNetConfig, tape: &mut Tape<'_, T>, input: Tensor<T>) -> Result<Var> {
    let (_, c, h, w) = input.nchw()?;
    if c != cfg.in_channels {
        return Err(shape(format!("input has {c} channels, network expects {}", cfg.in_channels)));
    }
    let input = if cfg.normalize_input { normalize_input(&input)? } else { input };
    let m = cfg.multiple();
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let (top, left) = ((ph - h) / 2, (pw - w) / 2);
    let x = tape.input(input)?;
    let mut v = tape.pad(x, [top, ph - h - top, left, pw - w - left]);
    let mut skips = Vec::with_capacity(cfg.levels);
    for l in 0..cfg.levels {
        let e = block(cfg, tape, v, &format!("enc{l}"))?;
        skips.push(e);
        v = tape.max_pool(e)?;
    }
    v = block(cfg, tape, v, "mid")?;
    for l in (0..cfg.levels).rev() {
        let up = tape.upsample(v);
        let up = conv3(tape, up, &format!("dec{l}.up"))?;
        let up = tape.leaky_relu(up, cfg.leaky_slope);
        let joined = tape.concat(skips[l], up)?;
        v = block(cfg, tape, joined, &format!("dec{l}"))?;
    }
    let out = tape.conv(v, "head")?;
    tape.crop(out, top, left, h, w)
}

/// Prediction for `input` (N, C, H, W) -> (N, 1, H, W). In training mode the
/// new running statistics are returned rather than written to `params`.
pub fn forward<T: Scalar>(
    cfg: &UNetConfig,
    params: &ModelParams<T>,
    input: Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BnUpdates<T>)> {
    let mut tape = Tape::new(params, mode);
    let out = record(cfg, &mut tape, input)?;
    let updates = tape.take_bn_updates();
    Ok((tape.value(out).clone(), updates))
}

pub struct StepResult<T> {
    pub loss: f64,
    pub prediction: Tensor<T>,
    pub gradients: Gradients<T>,
    pub bn_updates: BnUpdates<T>,
}

/// Training-mode forward pass, composite loss and reverse pass.
pub fn loss_and_gradients<T: Scalar>(
    cfg: &UNetConfig,
    params: &ModelParams<T>,
    input: Tensor<T>,
    target: &Tensor<T>,
    tv_lambda: f64,
    tv_epsilon: f64,
) -> Result<StepResult<T>> {
    let mut tape = Tape::new(params, Mode::Train);
    let out = record(cfg, &mut tape, input)?;
    let prediction = tape.value(out).clone();
    let (loss, seed) = loss_and_grad(&prediction, target, tv_lambda, tv_epsilon)?;
    let gradients = tape.backward(out, seed)?;
    let bn_updates = tape.take_bn_updates();
    Ok(StepResult { loss, prediction, gradients, bn_updates })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn micro() -> UNetConfig {
        UNetConfig { base_channels: 2, ..UNetConfig::default() }
    }

    #[test]
    fn output_matches_input_size() {
        let cfg = micro();
        let params = init_params::<f32>(&cfg, 1).unwrap();
        let x = Tensor::full(&[1, 2, 30, 30], 0.5f32);
        let (y, updates) = forward(&cfg, &params, x, Mode::Eval).unwrap();
        assert_eq!(y.dims(), &[1, 1, 30, 30]);
        assert!(updates.is_empty());
        let x = Tensor::full(&[3, 2, 20, 17], 0.5f32);
        let (y, updates) = forward(&cfg, &params, x, Mode::Train).unwrap();
        assert_eq!(y.dims(), &[3, 1, 20, 17]);
        assert_eq!(updates.len(), 2 * 2 * (2 * cfg.levels + 1));
    }

    #[test]
    fn zero_input_with_zero_head_weights_gives_bias() {
        let cfg = micro();
        let mut params = init_params::<f64>(&cfg, 3).unwrap();
        params.get_mut("head.weight").unwrap().data_mut().iter_mut().for_each(|v| *v = 0.0);
        params.get_mut("head.bias").unwrap().data_mut()[0] = 2.5;
        let (y, _) = forward(&cfg, &params, Tensor::zeros(&[2, 2, 16, 16]), Mode::Eval).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = micro();
        let a = init_params::<f32>(&cfg, 9).unwrap();
        let b = init_params::<f32>(&cfg, 9).unwrap();
        assert_eq!(a, b);
        let x = Tensor::new(vec![1, 2, 16, 16], (0..512).map(|i| (i as f32 * 0.1).sin()).collect()).unwrap();
        let (y1, _) = forward(&cfg, &a, x.clone(), Mode::Eval).unwrap();
        let (y2, _) = forward(&cfg, &b, x, Mode::Eval).unwrap();
        assert_eq!(y1, y2);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let cfg = micro();
        let params = init_params::<f32>(&cfg, 1).unwrap();
        assert!(forward(&cfg, &params, Tensor::zeros(&[1, 3, 16, 16]), Mode::Eval).is_err());
    }

    #[test]
    fn normalization_gives_unit_rms() {
        let x = Tensor::new(vec![2, 1, 1, 2], vec![3.0f64, 4.0, 0.0, 0.0]).unwrap();
        let y = normalize_input(&x).unwrap();
        let rms = ((y.data()[0].powi(2) + y.data()[1].powi(2)) / 2.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-12);
        assert_eq!(&y.data()[2..], &[0.0, 0.0]);
    }
}
