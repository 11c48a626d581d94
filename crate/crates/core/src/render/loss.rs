use serde::{Deserialize, Serialize};

use super::{Image, RenderError};
use crate::metrics::{ssim_value_and_grad, SsimConfig};
use crate::scalar::Real;

/// Photometric loss `(1-λ)·L1 + λ·(1-SSIM)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub lambda: f64,
    pub ssim: SsimConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            ssim: SsimConfig::default(),
        }
    }
}

pub fn loss<T: Real>(rendered: &Image<T>, truth: &Image<T>) -> Result<T, RenderError> {
    loss_with(rendered, truth, &LossConfig::default())
}

pub fn loss_with<T: Real>(
    rendered: &Image<T>,
    truth: &Image<T>,
    cfg: &LossConfig,
) -> Result<T, RenderError> {
    Ok(evaluate(rendered, truth, cfg, false)?.0)
}

/// Loss value and its gradient with respect to every channel of `rendered`.
pub fn loss_with_grad<T: Real>(
    rendered: &Image<T>,
    truth: &Image<T>,
    cfg: &LossConfig,
) -> Result<(T, Image<T>), RenderError> {
    evaluate(rendered, truth, cfg, true)
}

fn evaluate<T: Real>(
    rendered: &Image<T>,
    truth: &Image<T>,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(T, Image<T>), RenderError> {
    rendered.same_shape(truth)?;
    let n = rendered.data.len();
    if n == 0 {
        return Err(RenderError::DimensionMismatch("empty images".into()));
    }
    let lambda = T::of(cfg.lambda);
    let l1_weight = (T::one() - lambda) / T::of(n as f64);

    let mut l1 = T::zero();
    let mut grad = Image::new(rendered.width, rendered.height);
    for ((g, &a), &b) in grad.data.iter_mut().zip(&rendered.data).zip(&truth.data) {
        let d = a - b;
        l1 += d.abs();
        if want_grad && d != T::zero() {
            *g = l1_weight * d.signum();
        }
    }
    let mut value = l1 * l1_weight;

    if cfg.lambda != 0.0 {
        let (s, ds) = ssim_value_and_grad(rendered, truth, &cfg.ssim, want_grad)?;
        value += lambda * (T::one() - s);
        if want_grad {
            for (g, d) in grad.data.iter_mut().zip(ds) {
                *g -= lambda * d;
            }
        }
    }
    Ok((value, grad))
}
