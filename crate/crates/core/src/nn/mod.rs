//! Neural-network building blocks shared by the generators and the
//! discriminator.
//!
//! Feature maps are channel-first `[B, C, H, W]`; per-vertex features are
//! `[B, C, N]` so that the same channel-wise kernels serve both.

mod layers;
mod params;
mod sample;

pub use layers::{
    adain, conv_in_relu, instance_norm_2d, AdaInParams, Conv2d, ConvTranspose2d, Linear, Mlp, ResBlock, NORM_EPS,
};
pub use params::{grad_check_param, Bound, ParamBuilder, ParamId, ParamStore};
pub use sample::{bilinear_sample, bilinear_weights};
