//! Blind super-resolution with iterative kernel correction.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used for training and for gradient checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degrade;
pub mod error;
pub mod eval;
pub mod ikc;
pub mod image;
pub mod kernels;
pub mod models;
pub mod nn;
pub mod scalar;
pub mod toyset;
pub mod train;

pub use error::{IkcError, Result};
pub use image::Image;
pub use scalar::Scalar;

pub type Image32 = image::Image<f32>;
pub type Image64 = image::Image<f64>;
pub type Tensor32 = nn::Tensor<f32>;
pub type Tensor64 = nn::Tensor<f64>;
pub type BlurKernel32 = kernels::BlurKernel<f32>;
pub type BlurKernel64 = kernels::BlurKernel<f64>;
pub type PcaCodec32 = kernels::PcaCodec<f32>;
pub type PcaCodec64 = kernels::PcaCodec<f64>;
pub type Sftmd32 = models::Sftmd<f32>;
pub type Predictor32 = models::Predictor<f32>;
pub type Corrector32 = models::Corrector<f32>;
