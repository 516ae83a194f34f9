//! Minimal tensor and manual reverse-mode differentiation core.
//!
//! This is the only numeric substrate the model, losses and optimizer use:
//! dense n-d tensors over `f32`/`f64`, direct convolution with half padding,
//! ReLU / leaky ReLU, 2x2 max pooling, and a central-finite-difference
//! gradient oracle. All forward ops use a fixed summation order so identical
//! inputs produce bitwise-identical outputs. Training runs in `f32`;
//! gradient checks run in `f64`.

mod gradcheck;
mod ops;
mod tensor;

pub use gradcheck::finite_diff_grad;
pub use ops::{
    conv2d_backward, conv2d_forward, leaky_relu, leaky_relu_backward, maxpool2,
    maxpool2_backward, relu, relu_backward, ConvLayer,
};
pub use tensor::{Scalar, Tensor};

use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Error, Debug, Clone, PartialEq, Eq)]
pub enum NumError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("spatial dims must be even for 2x2 pooling, got {height}x{width}")]
    OddDimension { height: usize, width: usize },
}
