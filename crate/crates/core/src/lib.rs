//! Continuous-decomposition fusion of registered infrared/visible image pairs.
//!
//! The crate is generic over the floating-point type through [`Scalar`];
//! `f32` is the working precision for training and fusion, `f64` is used for
//! gradient checks and bit-exact reproducibility tests.

pub mod autograd;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;

pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
