//! GAN-based data augmentation for image classification on the CPU.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f32`, the precision used for training.

pub mod classifier;
pub mod dataio;
pub mod dcgan;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{Rng, Var};

pub type Tensor = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Tape = tensor::Tape<f32>;
pub type Network = nn::Network<f32>;
pub type Adam = optim::Adam<f32>;
pub type GanTrainer = dcgan::GanTrainer<f32>;
pub type ClfTrainer = classifier::ClfTrainer<f32>;
