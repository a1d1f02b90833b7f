//! Full-field inversion by overlapping patch inference and overlap averaging.

use elastolab_core::field::{ComplexField, ScalarField};
use elastolab_core::patch::{aggregate, extract_inference, PatchPrediction};
use rayon::prelude::*;

use crate::error::{config, Result};
use crate::params::ModelParams;
use crate::tape::Mode;
use crate::tensor::Tensor;
use crate::train::{batch_tensors, TARGET_SCALE};
use crate::unet::{forward, UNetConfig};

/// Patches per forward call during inference.
pub const INFER_BATCH: usize = 32;

/// Maps a batch of displacement patches `[N, 2, H, W]` to stiffness in kPa
/// `[N, 1, H, W]`.
pub trait Predictor: Sync {
    fn predict(&self, input: Tensor<f32>) -> Result<Tensor<f32>>;
}

/// A trained U-Net evaluated with running batch-norm statistics.
#[derive(Debug, Clone, Copy)]
pub struct UNetPredictor<'a> {
    pub cfg: &'a UNetConfig,
    pub params: &'a ModelParams<f32>,
}

impl Predictor for UNetPredictor<'_> {
    fn predict(&self, input: Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(forward(self.cfg, self.params, input, Mode::Eval)?.0)
    }
}

/// Stiffness map in Pa from a trained network.
pub fn dime_invert(
    cfg: &UNetConfig,
    params: &ModelParams<f32>,
    u: &ComplexField,
    size: usize,
    stride: usize,
) -> Result<ScalarField> {
    invert_with(&UNetPredictor { cfg, params }, u, size, stride)
}

/// Tiles `u`, predicts every patch and averages the overlaps. Batches are
/// fixed before dispatch so the result does not depend on thread count.
pub fn invert_with(model: &impl Predictor, u: &ComplexField, size: usize, stride: usize) -> Result<ScalarField> {
    let set = extract_inference(u, size, stride)?;
    let index: Vec<usize> = (0..set.len()).collect();
    let batches: Vec<Vec<PatchPrediction>> = index
        .par_chunks(INFER_BATCH)
        .map(|chunk| {
            let (x, _) = batch_tensors::<f32>(&set, chunk)?;
            let y = model.predict(x)?;
            if y.dims() != [chunk.len(), 1, size, size] {
                return Err(config(format!("predictor returned dims {:?}", y.dims())));
            }
            let per = size * size;
            Ok(chunk
                .iter()
                .enumerate()
                .map(|(k, &i)| PatchPrediction {
                    origin: set.patches[i].origin,
                    height: size,
                    width: size,
                    values: y.data()[k * per..(k + 1) * per].iter().map(|&v| v as f64 / TARGET_SCALE).collect(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let predictions: Vec<PatchPrediction> = batches.into_iter().flatten().collect();
    let (map, _) = aggregate(&predictions, u.shape(), u.spacing())?;
    Ok(map)
}
