// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// the profiler's layer table takes convolution geometry as plain arguments
#![allow(clippy::too_many_arguments)]

pub mod archive;
pub mod dsp;
pub mod error;
pub mod frontend;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod profiler;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = model::TtsModel<f32>;
pub type Model64 = model::TtsModel<f64>;
