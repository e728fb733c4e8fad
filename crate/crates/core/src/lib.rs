//! Dense-correspondence warping and pose-guided video synthesis.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor_nn`]: feature maps, exact-gradient layers, optimizers.
//! - [`iuv_io`]: IUV maps, the `.dwt` tensor container, sequence directories
//!   and a synthetic scene generator with closed-form ground-truth warps.
//! - [`correspondence`]: coarse warp grids from per-part UV nearest neighbours.
//! - [`warp`]: warp-grid algebra and differentiable bilinear sampling.
//! - [`refiner`]: the residual warp-refinement network.
//! - [`generator`]: pose encoder, warp paths and decoder, markovian rollout
//!   and the training step.
//! - [`losses`]: LSGAN, feature-matching and perceptual objectives.
//! - [`metrics`]: perceptual distance, Fréchet distance and AKD.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). Training and
//! inference run in `f32`; gradient checks run in `f64`. The aliases below name
//! the concrete instantiations.

pub mod correspondence;
mod error;
pub mod generator;
pub mod iuv_io;
pub mod losses;
pub mod metrics;
pub mod refiner;
mod scalar;
pub mod tensor_nn;
pub mod warp;

pub use error::{Error, FormatError, Result};
pub use scalar::Scalar;

pub use iuv_io::{Frame, IuvMap, VideoSample};
pub use tensor_nn::{FeatureMap, ParamTensor, Shape};
pub use warp::WarpGrid;

/// Number of body parts in the DensePose labelling.
pub const DEFAULT_PARTS: usize = 24;

pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type WarpGrid32 = WarpGrid<f32>;
pub type WarpGrid64 = WarpGrid<f64>;
pub type IuvMap32 = IuvMap<f32>;
pub type IuvMap64 = IuvMap<f64>;
pub type GeneratorNet32 = generator::GeneratorNet<f32>;
pub type GeneratorNet64 = generator::GeneratorNet<f64>;
pub type RefinerNet32 = refiner::RefinerNet<f32>;
pub type RefinerNet64 = refiner::RefinerNet<f64>;
