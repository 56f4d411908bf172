//! Crowd-counting via density-map regression with hybrid attention, built
//! from scratch on an f64 tensor engine with reverse-mode autodiff.
//!
//! Layering, bottom to top:
//! - [`tensor`] / [`ops`] / [`tape`]: NCHW tensors, forward/backward kernels,
//!   and the autodiff tape that strings them together.
//! - [`params`] / [`nn`]: named parameter storage and layers (conv, batch
//!   norm, linear).
//! - [`attention`] / [`model`]: spatial + channel attention modules, the
//!   cascade, and the full backbone/cascade/backend network.
//! - [`groundtruth`] / [`data`]: Gaussian density-map synthesis and dataset
//!   plumbing (manifests, patches, augmentation, synthetic corpus).
//! - [`train`] / [`config`] / [`checkpoint`]: SGD loop, MAE/RMSE evaluation,
//!   ablation harness, and serialization.

pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod groundtruth;
pub mod model;
pub mod nn;
pub mod ops;
pub mod params;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{IterationUnit, OptimConfig, RunConfig};
pub use error::{Error, Result};
pub use model::{BackbonePlan, HaNet, ModelConfig};
pub use nn::Mode;
pub use tape::{Tape, Var};
pub use tensor::{Shape, Tensor};
