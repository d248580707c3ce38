//! A deliberately small neural-network engine.
//!
//! Only the layers needed for the tactile force-regression network are
//! provided: 3×3 same-padded convolution, batch normalization, ReLU,
//! 2×2 max pooling, dense layers with sigmoid/ReLU/linear activation and
//! inverted dropout. Every layer implements its own reverse-mode backward
//! pass. The network is generic over [`Scalar`] so the same code runs in
//! `f32` for training and in `f64` for finite-difference gradient checks.

mod error;
mod scalar;
mod tensor;

pub mod adam;
pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod network;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::{NnError, Result};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{
    conv2d_forward, dropout, fc_forward, maxpool_half, Activation, BatchNorm, Conv2d, Dense,
    Dropout, ForwardCtx, Layer, MaxPool2, Mode,
};
pub use loss::{loss_and_grad, LossKind};
pub use network::{Architecture, Network, NetworkModel};
pub use scalar::Scalar;
pub use tensor::Tensor;
