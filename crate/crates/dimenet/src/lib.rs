//! Learned stiffness inversion: a small reverse-mode tensor engine, a U-Net
//! mapping complex displacement patches to stiffness patches, the composite
//! MSE + total-variation loss, Adam, training and patch-based inference.

pub mod checkpoint;
pub mod error;
pub mod infer;
pub mod loss;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use params::{Gradients, ModelParams};
pub use tape::{Mode, Tape, Var};
pub use tensor::{Scalar, Tensor, Tensor4};
pub use train::{train, TrainConfig, TrainOutcome};
pub use infer::dime_invert;
pub use unet::UNetConfig;

