//! Lifting-and-projection human pose transfer on CPU.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors, reverse-mode autodiff, gradient checking, Adam
//! - [`nn`]: convolution, normalization, AdaIN, MLP and sampling layers
//! - [`body`]: procedural articulated body template, linear blend skinning,
//!   weak-perspective camera
//! - [`render`]: z-buffered rasterizer differentiable in vertex features
//! - [`graph`]: mesh graph, graph convolutions, lifting-and-projection block
//! - [`generators`]: foreground, background and fusion networks
//! - [`losses`]: reconstruction, perceptual, least-squares adversarial, mask
//! - [`synth`]: procedural paired dataset
//! - [`harness`]: configuration, checkpoints, training, evaluation, SSIM

#![allow(clippy::needless_range_loop)]

pub mod binfile;
pub mod body;
pub mod error;
pub mod generators;
pub mod graph;
pub mod harness;
pub mod losses;
pub mod nn;
pub mod render;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
