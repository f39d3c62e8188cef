//! Minimal CNN kernels with hand-written backward passes and Adam.
//!
//! Kernels are generic over [`Scalar`] so that gradient checks can run in
//! f64; models are trained in f32. Every op is a free function returning its
//! output plus a cache consumed by the matching backward function.

mod adam;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod layers;
mod loss;
mod pool;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::{batchnorm2d_backward, batchnorm2d_forward, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d_backward, conv2d_forward, conv_out_dim, Conv2dCache};
pub use dense::{dense_backward, dense_forward, DenseCache};
pub use dropout::{dropout_backward, dropout_forward, DropoutCache};
pub use layers::{Layer, LayerCache, LayerSpec, Sequential};
pub use loss::mse_loss;
pub use pool::{global_avg_pool_backward, global_avg_pool_forward};
pub use tensor::{relu_backward, relu_forward, Param, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
