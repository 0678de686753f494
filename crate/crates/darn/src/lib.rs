//! Energy-preserving intrinsic image decomposition.
//!
//! Splits an image `I` into albedo `A` and shading `S` with `I = A * S` held
//! exactly by construction: a residual convolutional generator regresses one
//! component through a positivity map and derives the other by elementwise
//! division. Training pairs a supervised data/gradient loss with two
//! adversarial discriminators; evaluation covers scale-invariant metrics
//! (si-MSE, si-LMSE, DSSIM) and scale-aware ones (MSE, rs-MSE).
//!
//! Numeric code is generic over the [`scalar::Scalar`] type: `f32` is the
//! training default, `f64` backs gradient verification and the metric
//! oracles. Concrete aliases for both live at the crate root.

pub mod array;
pub mod data;
pub mod error;
pub mod image;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Training-precision aliases.
pub type Array32 = array::Array<f32>;
pub type Graph32 = tensor::Graph<f32>;
pub type Tensor32 = tensor::Tensor<f32>;
pub type Image32 = image::Image<f32>;

/// Verification-precision aliases.
pub type Array64 = array::Array<f64>;
pub type Graph64 = tensor::Graph<f64>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Image64 = image::Image<f64>;
