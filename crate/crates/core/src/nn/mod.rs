//! Neural-network primitives with forward and backward rules.

mod activation;
mod concat;
mod conv;
mod norm;
mod pool;
mod upsample;

pub use activation::{relu, sigmoid, softmax};
pub use concat::{concat_channels, narrow_channels};
pub use conv::{conv2d, depthwise_conv2d};
pub use norm::{batchnorm2d, BatchNormState, BN_EPSILON, BN_MOMENTUM};
pub use pool::{global_avg_pool, maxpool2x2};
pub use upsample::bilinear_upsample_x2;

/// Whether batch norm uses batch statistics (and updates running ones) or
/// the stored running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
