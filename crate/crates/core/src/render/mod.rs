//! CPU differentiable Gaussian splatting.

mod camera;
mod image;
pub mod loss;
mod raster;
mod train;

use thiserror::Error;

pub use camera::{Camera, CameraRecord};
pub use image::Image;
pub use loss::{loss, loss_with, loss_with_grad, LossConfig};
pub use raster::{
    backward, backward_with, project, rasterize, rasterize_detailed, rasterize_with, Projection,
    RasterConfig, RenderOutput, SH_C0,
};
pub use train::{
    accumulate_scores, finetune, Adam, FinetuneConfig, Finetuner, LearningRates, View,
};

use crate::metrics::MetricError;
use crate::scene::{GaussianScene, SceneError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RenderError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{0}")]
    InvalidInput(String),
}

/// d loss / d raw parameter, laid out exactly like the scene it was taken from.
pub type SceneGradients<T> = GaussianScene<T>;
