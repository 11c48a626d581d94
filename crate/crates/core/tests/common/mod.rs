//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use splatpress_core::render::{backward, loss, rasterize, Camera, Image};
use splatpress_core::scene::{opacity_logit, Gaussian, SH_REST_LEN};
use splatpress_core::{Attribute, Scene64};

/// Step used for central differences on raw parameters in small unit checks.
pub const FD_STEP: f64 = 1e-3;
/// Step for the many-Gaussian sweep: with up to twenty overlapping splats a
/// 1e-3 nudge regularly carries a pixel across the L1 kink at its target
/// value, so the difference quotient stops measuring the derivative.
pub const SWEEP_FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;

/// Camera orbiting the origin at distance 3–5 with a field of view of roughly 50°.
pub fn random_camera(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Camera {
    let dist = rng.gen_range(3.0..5.0);
    let az = rng.gen_range(0.0..std::f64::consts::TAU);
    let el = rng.gen_range(-0.5..0.5f64);
    let eye = [dist * el.cos() * az.sin(), dist * el.sin(), dist * el.cos() * az.cos()];
    let focal = 1.1 * width.min(height) as f64;
    Camera::look_at(width, height, focal, eye, [0.0; 3], [0.0, 1.0, 0.0]).unwrap()
}

/// Gaussians kept away from the renderer's non-smooth points: opacities stay
/// below the 0.99 cap and colors inside (0, 1).
pub fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Scene64 {
    Scene64::from_gaussians((0..n).map(|_| {
        let mut rotation: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        rotation[0] += 1.5;
        Gaussian {
            position: std::array::from_fn(|_| rng.gen_range(-0.6..0.6)),
            rotation,
            log_scale: std::array::from_fn(|_| rng.gen_range(-2.3..-1.2)),
            opacity_logit: opacity_logit(rng.gen_range(0.1..0.7)),
            sh_dc: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
            sh_rest: [0.0; SH_REST_LEN],
        }
    }))
}

pub fn random_image(rng: &mut ChaCha8Rng, width: usize, height: usize) -> Image<f64> {
    Image::from_data(width, height, (0..width * height * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub entries: usize,
    pub failures: usize,
    /// Largest |analytic − fd| / max(|fd|, 1e-12) among entries above ABS_TOL.
    pub worst_rel: f64,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        self.entries += other.entries;
        self.failures += other.failures;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
    }
}

/// Compares every analytic gradient entry with a central difference.
pub fn check_gradients(scene: &Scene64, camera: &Camera, truth: &Image<f64>, step: f64) -> GradCheck {
    let (_, grads) = backward(scene, camera, truth).unwrap();
    let eval = |s: &Scene64| loss(&rasterize(s, camera).unwrap(), truth).unwrap();
    let mut out = GradCheck::default();
    for attr in Attribute::ALL {
        for k in 0..scene.group(attr).len() {
            let mut plus = scene.clone();
            plus.group_mut(attr)[k] += step;
            let mut minus = scene.clone();
            minus.group_mut(attr)[k] -= step;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * step);
            let an = grads.group(attr)[k];
            let err = (an - fd).abs();
            out.entries += 1;
            if err > ABS_TOL {
                let rel = err / fd.abs().max(1e-12);
                out.worst_rel = out.worst_rel.max(rel);
                if rel > REL_TOL {
                    out.failures += 1;
                }
            }
        }
    }
    out
}
