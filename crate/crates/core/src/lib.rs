//! Compression toolkit for 3D Gaussian splatting scenes.
//!
//! The pipeline takes a trained checkpoint through three stages:
//!
//! 1. [`pruning`]: iterative removal of Gaussians whose activated opacity and
//!    accumulated gradient are both below the per-round quantile, with
//!    fine-tuning between rounds;
//! 2. [`quantization`]: learned-step-size fake quantization of every
//!    attribute group with straight-through gradients;
//! 3. [`codec`]: Morton-ordered, per-attribute DEFLATE container.
//!
//! A CPU differentiable splatting renderer ([`render`]) supplies the loss
//! gradients both stages rely on, [`synth`] builds deterministic test scenes
//! and [`pipeline`] wires everything together.
//!
//! Numeric code is generic over [`Real`]; the aliases below fix the scalar to
//! the checkpoint precision (`f32`) or to `f64` for reference computations.

pub mod codec;
mod linalg;
pub mod metrics;
pub mod pipeline;
pub mod ply;
pub mod pruning;
pub mod quantization;
pub mod render;
pub mod scalar;
pub mod scene;
pub mod synth;
pub mod views;

pub use scalar::Real;
pub use scene::{Attribute, Gaussian, GaussianScene, GradientScore};

/// Scene at checkpoint precision.
pub type Scene = GaussianScene<f32>;
/// Scene in double precision, used by gradient checks.
pub type Scene64 = GaussianScene<f64>;
pub type Image = render::Image<f32>;
pub type Image64 = render::Image<f64>;
pub type View = render::View<f32>;
pub type View64 = render::View<f64>;
pub type SceneGradients = render::SceneGradients<f32>;
