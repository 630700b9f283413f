//! Differentiable layer kernels with explicit forward/backward pairs.
//!
//! Activations use NHWC layout; convolution weights are `[kh, kw, cin, cout]`
//! and dense weights are `[in, out]`. Every kernel is a pure function of its
//! arguments (dropout additionally of the supplied RNG state).

mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;

pub use conv::{conv2d_backward, conv2d_forward, ConvCache, ConvSpec, Padding};
pub use dense::{dense_backward, dense_forward, DenseCache};
pub use dropout::{dropout_backward, dropout_forward, DropoutMask};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use pool::{maxpool_backward, maxpool_forward, PoolCache, PoolSpec};
