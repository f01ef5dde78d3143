//! Neural-layer primitives. Each forward kernel is a pure function of its
//! inputs; the matching backward kernels are used by [`crate::tape`].

pub mod activation;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;

pub use activation::{activation, Activation};
pub use attention::{self_attention, self_attention_forward, AttentionVars};
pub use conv::{conv1d_forward, conv1d_transposed_forward, ConvSpec};
pub use linear::linear_forward;
pub use norm::{layer_norm_forward, softmax_rows, LAYER_NORM_EPS};
