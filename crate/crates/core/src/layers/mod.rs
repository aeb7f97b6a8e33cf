//! Differentiable 3D building blocks.

pub mod activation;
pub mod conv;
pub mod dropout;
pub mod exec;
pub mod norm;
pub mod pool;
pub mod upsample;

pub use activation::{activation, relu, sigmoid, softmax_channels, Activation};
pub use conv::{
    conv3d_backward, conv3d_forward, conv_out_extent, conv_transpose3d_backward,
    conv_transpose3d_forward, ConvGeometry,
};
pub use dropout::{channel_dropout, channel_mask, DropoutKey, DropoutSpec, Mode};
pub use exec::{Eager, Exec};
pub use norm::{default_groups, group_norm_backward, group_norm_forward, GroupNormOut, GroupNormSpec, GROUP_NORM_EPS};
pub use pool::{max_pool3d_backward, max_pool3d_forward, Pooled};
pub use upsample::{upsample_nearest2, upsample_nearest2_backward};

/// Fan-in scaled normal init: `std = sqrt(2 / (C_in * k^3))`.
pub fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}
