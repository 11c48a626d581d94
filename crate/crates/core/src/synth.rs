//! Deterministic synthetic scenes with self-rendered ground truth.
//!
//! Visible Gaussians follow the chosen layout with attributes that vary
//! smoothly along it. A prescribed fraction are made redundant: their
//! opacity is tiny (below 1%, in practice ≤ 5·10⁻⁴) and they sit inside the
//! opaque body of the scene, so their effect on any image stays below the
//! 8-bit quantization step while their loss gradients remain nonzero.

use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{rasterize, Camera, RenderError, View};
use crate::scalar::Real;
use crate::scene::{opacity_logit, Gaussian, GaussianScene, SH_REST_LEN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("fraction_redundant must lie in [0, 1], got {0}")]
    InvalidFraction(f64),
    #[error("image size must be at least 1×1")]
    EmptyImage,
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// A closed knot-like space curve.
    Curve,
    /// Isotropic blobs around a handful of centers.
    Cluster,
    /// A regular lattice filling a cube.
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_gaussians: usize,
    pub fraction_redundant: f64,
    pub layout: Layout,
    pub n_views: usize,
    pub width: usize,
    pub height: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_gaussians: 256,
            fraction_redundant: 0.5,
            layout: Layout::Curve,
            n_views: 4,
            width: 32,
            height: 32,
        }
    }
}

/// Opacity logit of every visible Gaussian.
pub const VISIBLE_LOGIT: f64 = 6.0;
/// Redundant opacities are drawn from this range.
pub const REDUNDANT_ALPHA: (f64, f64) = (1e-5, 5e-4);
/// Cameras orbit the origin at this distance.
pub const CAMERA_DISTANCE: f64 = 4.0;

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(0.0..=1.0).contains(&self.fraction_redundant) {
            return Err(SynthError::InvalidFraction(self.fraction_redundant));
        }
        if self.width == 0 || self.height == 0 {
            return Err(SynthError::EmptyImage);
        }
        Ok(())
    }

    pub fn redundant_count(&self) -> usize {
        (self.fraction_redundant * self.n_gaussians as f64).floor() as usize
    }
}

/// Point on the layout at parameter `t ∈ [0, 1)`, plus a jitter direction.
fn layout_point(layout: Layout, t: f64, index: usize, n: usize, rng: &mut ChaCha8Rng) -> [f64; 3] {
    match layout {
        Layout::Curve => {
            // Trefoil knot scaled into roughly [-1, 1]³.
            let s = TAU * t;
            [
                0.35 * ((s).sin() + 2.0 * (2.0 * s).sin()),
                0.35 * ((s).cos() - 2.0 * (2.0 * s).cos()),
                -0.35 * (3.0 * s).sin(),
            ]
        }
        Layout::Cluster => {
            const CENTERS: [[f64; 3]; 5] = [
                [0.0, 0.0, 0.0],
                [0.6, 0.4, -0.2],
                [-0.5, 0.5, 0.3],
                [-0.4, -0.6, -0.3],
                [0.5, -0.5, 0.4],
            ];
            let c = CENTERS[index * CENTERS.len() / n.max(1)];
            let r = 0.25 * rng.gen::<f64>().cbrt();
            let theta = (2.0 * rng.gen::<f64>() - 1.0).acos();
            let phi = TAU * rng.gen::<f64>();
            [
                c[0] + r * theta.sin() * phi.cos(),
                c[1] + r * theta.sin() * phi.sin(),
                c[2] + r * theta.cos(),
            ]
        }
        Layout::Grid => {
            let side = (n as f64).cbrt().ceil().max(1.0) as usize;
            let (i, j, k) = (index % side, (index / side) % side, index / (side * side));
            let coord = |v: usize| {
                if side == 1 {
                    0.0
                } else {
                    -0.8 + 1.6 * v as f64 / (side - 1) as f64
                }
            };
            [coord(i), coord(j), coord(k)]
        }
    }
}

fn quaternion_about(axis: [f64; 3], angle: f64) -> [f64; 4] {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt().max(1e-12);
    let (s, c) = (0.5 * angle).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

/// Builds the scene in `f64`, in layout order, redundant Gaussians included.
pub fn make_gaussians(spec: &SynthSpec) -> Result<GaussianScene<f64>, SynthError> {
    spec.validate()?;
    let n = spec.n_gaussians;
    let n_redundant = spec.redundant_count();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut redundant = vec![false; n];
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(&mut rng);
    for &i in &slots[..n_redundant] {
        redundant[i] = true;
    }

    let phase: [f64; 3] = std::array::from_fn(|_| TAU * rng.gen::<f64>());
    let mut scene = GaussianScene::with_capacity(n);
    for (i, &is_redundant) in redundant.iter().enumerate() {
        let t = (i as f64 + 0.5 * rng.gen::<f64>()) / n.max(1) as f64;
        let base = layout_point(spec.layout, t, i, n, &mut rng);
        let jitter = 0.02;
        let position = base.map(|c| c + jitter * (2.0 * rng.gen::<f64>() - 1.0));

        let angle = PI * (0.5 + 0.5 * (TAU * t + phase[0]).sin());
        let rotation = quaternion_about([1.0, (TAU * t).cos(), (TAU * t).sin()], angle);
        let size = 0.075 + 0.02 * (TAU * 2.0 * t + phase[1]).sin();
        let log_scale = [
            (size * 1.3).ln(),
            (size * 0.9).ln(),
            (size * 0.7).ln(),
        ];
        let hue = TAU * t + phase[2];
        let sh_dc = [
            1.4 * hue.sin(),
            1.4 * (hue + TAU / 3.0).sin(),
            1.4 * (hue + 2.0 * TAU / 3.0).sin(),
        ];
        let sh_rest = std::array::from_fn::<f64, SH_REST_LEN, _>(|k| {
            0.05 * (TAU * t * (1 + k % 3) as f64 + k as f64).sin()
        });

        let opacity_logit = if is_redundant {
            let (lo, hi) = REDUNDANT_ALPHA;
            opacity_logit(lo * (hi / lo).powf(rng.gen::<f64>()))
        } else {
            VISIBLE_LOGIT
        };
        // Redundant Gaussians shrink slightly so they stay inside the body.
        let log_scale = if is_redundant {
            log_scale.map(|s| s + 0.5f64.ln())
        } else {
            log_scale
        };
        scene.push(Gaussian {
            position,
            rotation,
            log_scale,
            opacity_logit,
            sh_dc,
            sh_rest,
        });
    }
    Ok(scene)
}

/// Evenly spaced cameras orbiting the origin, slightly above the equator.
pub fn make_cameras(spec: &SynthSpec) -> Result<Vec<Camera>, SynthError> {
    spec.validate()?;
    let focal = 0.45 * CAMERA_DISTANCE * spec.width.min(spec.height) as f64 / 1.6;
    (0..spec.n_views)
        .map(|k| {
            let azimuth = TAU * k as f64 / spec.n_views.max(1) as f64 + 0.3;
            let elevation = 0.35 * (k as f64 * 1.7).sin();
            let eye = [
                CAMERA_DISTANCE * elevation.cos() * azimuth.sin(),
                CAMERA_DISTANCE * elevation.sin(),
                CAMERA_DISTANCE * elevation.cos() * azimuth.cos(),
            ];
            Ok(Camera::look_at(
                spec.width,
                spec.height,
                focal,
                eye,
                [0.0; 3],
                [0.0, 1.0, 0.0],
            )?)
        })
        .collect()
}

/// Scene plus views whose images are the scene's own renderings.
pub fn make_scene<T: Real>(spec: &SynthSpec) -> Result<(GaussianScene<T>, Vec<View<T>>), SynthError> {
    let scene: GaussianScene<T> = make_gaussians(spec)?.cast();
    let views = make_cameras(spec)?
        .into_iter()
        .map(|camera| {
            let image = rasterize(&scene, &camera)?;
            Ok(View { camera, image })
        })
        .collect::<Result<_, RenderError>>()?;
    Ok((scene, views))
}
