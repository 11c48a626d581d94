//! Forward rasterization and its analytic backward pass.
//!
//! Each Gaussian is projected with the affine (EWA) approximation, sorted
//! front-to-back by camera depth (ties broken by storage index) and
//! alpha-composited over a black background. The backward pass replays the
//! per-pixel compositing in reverse and chains the pixel gradients through
//! the 2D conic, the projection Jacobian and the covariance factorization
//! down to the raw checkpoint parameters.

use serde::{Deserialize, Serialize};

use super::loss::{loss_with_grad, LossConfig};
use super::{Camera, Image, RenderError, SceneGradients};
use crate::linalg::{self, Mat2, Mat3, Vec3};
use crate::scalar::Real;
use crate::scene::{activate_opacity, covariance3d, rotation_matrix, GaussianScene};

/// Zeroth-order real spherical-harmonic basis constant.
pub const SH_C0: f64 = 0.282_094_791_773_878_1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    /// Gaussians with camera-space depth at or below this are culled.
    pub near: f64,
    /// Added to both diagonal entries of the projected covariance (px²).
    pub dilation: f64,
    pub alpha_max: f64,
    /// Compositing stops once transmittance falls below this.
    pub min_transmittance: f64,
    /// Per-pixel contributions with α·G below this are skipped.
    pub min_contribution: f64,
    pub tile_size: usize,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            near: 0.01,
            dilation: 0.3,
            alpha_max: 0.99,
            min_transmittance: 1e-4,
            min_contribution: 1e-8,
            tile_size: 16,
        }
    }
}

/// Screen-space footprint of a projected Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<T> {
    pub mean2d: [T; 2],
    pub cov2d: Mat2<T>,
    pub depth: T,
}

/// Projects a world-space Gaussian. Returns `None` when the center is not in
/// front of the near plane.
pub fn project<T: Real>(
    mean: Vec3<T>,
    cov3d: &Mat3<T>,
    camera: &Camera,
    cfg: &RasterConfig,
) -> Option<Projection<T>> {
    let view = ViewTransform::new(camera);
    let t = view.apply(mean);
    if !(t[2] > T::of(cfg.near)) {
        return None;
    }
    let jw = view.jacobian_times_rotation(t);
    Some(Projection {
        mean2d: view.pixel(t),
        cov2d: project_cov(&jw, cov3d, T::of(cfg.dilation)),
        depth: t[2],
    })
}

/// J·W_r·Σ·W_rᵀ·Jᵀ + dilation·I for the 2×3 matrix `jw` = J·W_r.
fn project_cov<T: Real>(jw: &[[T; 3]; 2], cov: &Mat3<T>, dilation: T) -> Mat2<T> {
    let mut tmp = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            tmp[i][j] = (0..3).map(|k| jw[i][k] * cov[k][j]).sum();
        }
    }
    let mut out = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = (0..3).map(|k| tmp[i][k] * jw[j][k]).sum();
        }
    }
    out[0][0] += dilation;
    out[1][1] += dilation;
    out
}

struct ViewTransform<T> {
    rotation: Mat3<T>,
    translation: Vec3<T>,
    fx: T,
    fy: T,
    cx: T,
    cy: T,
}

impl<T: Real> ViewTransform<T> {
    fn new(camera: &Camera) -> Self {
        Self {
            rotation: camera.rotation.map(|r| r.map(T::of)),
            translation: camera.translation.map(T::of),
            fx: T::of(camera.fx),
            fy: T::of(camera.fy),
            cx: T::of(camera.cx),
            cy: T::of(camera.cy),
        }
    }

    fn apply(&self, x: Vec3<T>) -> Vec3<T> {
        let r = linalg::mat_vec(&self.rotation, x);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    fn pixel(&self, t: Vec3<T>) -> [T; 2] {
        [
            self.fx * t[0] / t[2] + self.cx,
            self.fy * t[1] / t[2] + self.cy,
        ]
    }

    fn jacobian(&self, t: Vec3<T>) -> [[T; 3]; 2] {
        let iz = T::one() / t[2];
        let iz2 = iz * iz;
        [
            [self.fx * iz, T::zero(), -self.fx * t[0] * iz2],
            [T::zero(), self.fy * iz, -self.fy * t[1] * iz2],
        ]
    }

    fn jacobian_times_rotation(&self, t: Vec3<T>) -> [[T; 3]; 2] {
        let j = self.jacobian(t);
        let mut out = [[T::zero(); 3]; 2];
        for i in 0..2 {
            for c in 0..3 {
                out[i][c] = (0..3).map(|k| j[i][k] * self.rotation[k][c]).sum();
            }
        }
        out
    }
}

/// Everything the forward and backward passes need about one visible Gaussian.
struct Splat<T> {
    index: usize,
    depth: T,
    mean2d: [T; 2],
    /// Inverse 2D covariance as (A, B, C) of [[A, B], [B, C]].
    conic: [T; 3],
    alpha: T,
    color: [T; 3],
    bbox: [usize; 4],
    // Backward-only intermediates.
    t_cam: Vec3<T>,
    jw: [[T; 3]; 2],
    cov3d: Mat3<T>,
    rot: Mat3<T>,
    scale: Vec3<T>,
}

struct Prepared<T> {
    splats: Vec<Splat<T>>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
}

fn prepare<T: Real>(
    scene: &GaussianScene<T>,
    camera: &Camera,
    cfg: &RasterConfig,
) -> Result<Prepared<T>, RenderError> {
    scene.validate()?;
    camera.validate()?;
    let view = ViewTransform::new(camera);
    let c0 = T::of(SH_C0);
    let half = T::of(0.5);
    let min_contrib = T::of(cfg.min_contribution);
    let (w, h) = (camera.width, camera.height);

    let mut splats = Vec::new();
    for i in 0..scene.len() {
        let t_cam = view.apply(scene.positions[i]);
        if !(t_cam[2] > T::of(cfg.near)) {
            continue;
        }
        let alpha = activate_opacity(scene.opacity_logits[i]);
        if !(alpha >= min_contrib) {
            continue;
        }
        let scale = scene.log_scales[i].map(T::exp);
        let cov3d = covariance3d(scene.rotations[i], scale)?;
        let rot = rotation_matrix(scene.rotations[i])?;
        let jw = view.jacobian_times_rotation(t_cam);
        let cov2d = project_cov(&jw, &cov3d, T::of(cfg.dilation));
        let det = linalg::det2(&cov2d);
        if !(det > T::of(1e-12)) || !det.is_finite() {
            continue;
        }
        let conic = [cov2d[1][1] / det, -cov2d[0][1] / det, cov2d[0][0] / det];
        let mean2d = view.pixel(t_cam);

        // Radius beyond which α·G < min_contribution along the major axis.
        let mid = half * (cov2d[0][0] + cov2d[1][1]);
        let lambda_max = mid + (mid * mid - det).max(T::zero()).sqrt();
        let radius = ((T::one() + T::one()) * (alpha / min_contrib).ln().max(T::zero()) * lambda_max).sqrt();
        let lo_x = (mean2d[0] - radius).ceil().as_f64();
        let hi_x = (mean2d[0] + radius).floor().as_f64();
        let lo_y = (mean2d[1] - radius).ceil().as_f64();
        let hi_y = (mean2d[1] + radius).floor().as_f64();
        if !(hi_x >= 0.0 && hi_y >= 0.0 && lo_x <= (w - 1) as f64 && lo_y <= (h - 1) as f64) {
            continue;
        }
        let bbox = [
            lo_x.max(0.0) as usize,
            hi_x.min((w - 1) as f64) as usize,
            lo_y.max(0.0) as usize,
            hi_y.min((h - 1) as f64) as usize,
        ];
        let color = scene.sh_dc[i].map(|d| half + c0 * d);
        splats.push(Splat {
            index: i,
            depth: t_cam[2],
            mean2d,
            conic,
            alpha,
            color,
            bbox,
            t_cam,
            jw,
            cov3d,
            rot,
            scale,
        });
    }

    splats.sort_by(|a, b| {
        a.depth
            .partial_cmp(&b.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.index.cmp(&b.index))
    });

    let ts = cfg.tile_size.max(1);
    let tiles_x = w.div_ceil(ts);
    let tiles_y = h.div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    for (k, s) in splats.iter().enumerate() {
        for ty in s.bbox[2] / ts..=s.bbox[3] / ts {
            for tx in s.bbox[0] / ts..=s.bbox[1] / ts {
                tiles[ty * tiles_x + tx].push(k as u32);
            }
        }
    }
    Ok(Prepared {
        splats,
        tiles,
        tiles_x,
    })
}

/// One composited layer at a pixel.
#[derive(Clone, Copy)]
struct Layer<T> {
    splat: usize,
    gauss: T,
    alpha: T,
    clamped: bool,
    transmittance: T,
}

/// Composites the splats covering pixel (x, y). Returns the unclamped color
/// and final transmittance; `layers` receives each contributing splat when given.
fn composite_pixel<T: Real>(
    prep: &Prepared<T>,
    cfg: &RasterConfig,
    x: usize,
    y: usize,
    mut layers: Option<&mut Vec<Layer<T>>>,
) -> ([T; 3], T) {
    let ts = cfg.tile_size.max(1);
    let list = &prep.tiles[(y / ts) * prep.tiles_x + x / ts];
    let (px, py) = (T::of(x as f64), T::of(y as f64));
    let half = T::of(0.5);
    let alpha_max = T::of(cfg.alpha_max);
    let min_contrib = T::of(cfg.min_contribution);
    let min_t = T::of(cfg.min_transmittance);

    let mut color = [T::zero(); 3];
    let mut trans = T::one();
    for &k in list {
        let s = &prep.splats[k as usize];
        if x < s.bbox[0] || x > s.bbox[1] || y < s.bbox[2] || y > s.bbox[3] {
            continue;
        }
        let dx = px - s.mean2d[0];
        let dy = py - s.mean2d[1];
        let power = -half * (s.conic[0] * dx * dx + s.conic[2] * dy * dy)
            - s.conic[1] * dx * dy;
        let gauss = power.exp();
        let raw = s.alpha * gauss;
        if raw < min_contrib {
            continue;
        }
        let clamped = raw > alpha_max;
        let a = if clamped { alpha_max } else { raw };
        for c in 0..3 {
            color[c] += s.color[c] * a * trans;
        }
        if let Some(layers) = layers.as_deref_mut() {
            layers.push(Layer {
                splat: k as usize,
                gauss,
                alpha: a,
                clamped,
                transmittance: trans,
            });
        }
        trans *= T::one() - a;
        if trans < min_t {
            break;
        }
    }
    (color, trans)
}

/// Forward render plus per-pixel final transmittance.
pub struct RenderOutput<T> {
    pub image: Image<T>,
    /// Unclamped composited color.
    pub raw: Image<T>,
    pub transmittance: Vec<T>,
}

pub fn rasterize_detailed<T: Real>(
    scene: &GaussianScene<T>,
    camera: &Camera,
    cfg: &RasterConfig,
) -> Result<RenderOutput<T>, RenderError> {
    let prep = prepare(scene, camera, cfg)?;
    let (w, h) = (camera.width, camera.height);
    let mut raw = Image::new(w, h);
    let mut transmittance = vec![T::one(); w * h];
    for y in 0..h {
        for x in 0..w {
            let (c, t) = composite_pixel(&prep, cfg, x, y, None);
            let i = y * w + x;
            raw.data[i * 3..i * 3 + 3].copy_from_slice(&c);
            transmittance[i] = t;
        }
    }
    let mut image = raw.clone();
    for v in image.data.iter_mut() {
        *v = v.max(T::zero()).min(T::one());
    }
    Ok(RenderOutput {
        image,
        raw,
        transmittance,
    })
}

/// Renders `scene` from `camera` with the default configuration.
pub fn rasterize<T: Real>(
    scene: &GaussianScene<T>,
    camera: &Camera,
) -> Result<Image<T>, RenderError> {
    rasterize_with(scene, camera, &RasterConfig::default())
}

pub fn rasterize_with<T: Real>(
    scene: &GaussianScene<T>,
    camera: &Camera,
    cfg: &RasterConfig,
) -> Result<Image<T>, RenderError> {
    Ok(rasterize_detailed(scene, camera, cfg)?.image)
}

#[derive(Clone, Copy)]
struct SplatGrad<T> {
    mean2d: [T; 2],
    conic: [T; 3],
    alpha: T,
    color: [T; 3],
}

/// Loss of the rendering against `truth` and its gradient with respect to
/// every raw scene parameter.
pub fn backward<T: Real>(
    scene: &GaussianScene<T>,
    camera: &Camera,
    truth: &Image<T>,
) -> Result<(T, SceneGradients<T>), RenderError> {
    backward_with(scene, camera, truth, &RasterConfig::default(), &LossConfig::default())
}

pub fn backward_with<T: Real>(
    scene: &GaussianScene<T>,
    camera: &Camera,
    truth: &Image<T>,
    cfg: &RasterConfig,
    loss_cfg: &LossConfig,
) -> Result<(T, SceneGradients<T>), RenderError> {
    let prep = prepare(scene, camera, cfg)?;
    let (w, h) = (camera.width, camera.height);
    if truth.width != w || truth.height != h {
        return Err(RenderError::DimensionMismatch(format!(
            "camera is {w}×{h}, target image is {}×{}",
            truth.width, truth.height
        )));
    }

    let mut raw = Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let (c, _) = composite_pixel(&prep, cfg, x, y, None);
            let i = (y * w + x) * 3;
            raw.data[i..i + 3].copy_from_slice(&c);
        }
    }
    let mut image = raw.clone();
    for v in image.data.iter_mut() {
        *v = v.max(T::zero()).min(T::one());
    }
    let (loss, mut d_image) = loss_with_grad(&image, truth, loss_cfg)?;
    for (g, &r) in d_image.data.iter_mut().zip(&raw.data) {
        if r < T::zero() || r > T::one() {
            *g = T::zero();
        }
    }

    let zero = SplatGrad {
        mean2d: [T::zero(); 2],
        conic: [T::zero(); 3],
        alpha: T::zero(),
        color: [T::zero(); 3],
    };
    let mut acc = vec![zero; prep.splats.len()];
    let mut layers = Vec::new();
    let half = T::of(0.5);
    for y in 0..h {
        for x in 0..w {
            let pi = (y * w + x) * 3;
            let dc = [d_image.data[pi], d_image.data[pi + 1], d_image.data[pi + 2]];
            if dc.iter().all(|v| *v == T::zero()) {
                continue;
            }
            layers.clear();
            composite_pixel(&prep, cfg, x, y, Some(&mut layers));
            let (px, py) = (T::of(x as f64), T::of(y as f64));
            // Color accumulated behind the current layer: Σ_{j>i} c_j a_j T_j.
            let mut behind = [T::zero(); 3];
            for layer in layers.iter().rev() {
                let s = &prep.splats[layer.splat];
                let g = &mut acc[layer.splat];
                let weight = layer.alpha * layer.transmittance;
                let one_minus = T::one() - layer.alpha;
                let mut d_alpha = T::zero();
                for c in 0..3 {
                    g.color[c] += dc[c] * weight;
                    d_alpha += dc[c] * (s.color[c] * layer.transmittance - behind[c] / one_minus);
                    behind[c] += s.color[c] * weight;
                }
                if layer.clamped {
                    continue;
                }
                g.alpha += d_alpha * layer.gauss;
                let d_power = d_alpha * s.alpha * layer.gauss;
                let dx = px - s.mean2d[0];
                let dy = py - s.mean2d[1];
                // power = -½(A dx² + 2B dx dy + C dy²), dx = px - μx
                g.mean2d[0] += d_power * (s.conic[0] * dx + s.conic[1] * dy);
                g.mean2d[1] += d_power * (s.conic[1] * dx + s.conic[2] * dy);
                g.conic[0] += -half * d_power * dx * dx;
                g.conic[1] += -d_power * dx * dy;
                g.conic[2] += -half * d_power * dy * dy;
            }
        }
    }

    let mut grads = SceneGradients::zeros(scene.len());
    let view = ViewTransform::new(camera);
    let c0 = T::of(SH_C0);
    for (s, g) in prep.splats.iter().zip(&acc) {
        let i = s.index;
        grads.sh_dc[i] = g.color.map(|v| v * c0);
        grads.opacity_logits[i] = g.alpha * s.alpha * (T::one() - s.alpha);

        // Conic M = Σ2⁻¹; dL/dΣ2 = -M·dL/dM·M with dL/dM symmetric.
        let m = [[s.conic[0], s.conic[1]], [s.conic[1], s.conic[2]]];
        let gm = [
            [g.conic[0], half * g.conic[1]],
            [half * g.conic[1], g.conic[2]],
        ];
        let mut tmp = [[T::zero(); 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                tmp[a][b] = m[a][0] * gm[0][b] + m[a][1] * gm[1][b];
            }
        }
        let mut g_cov2 = [[T::zero(); 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                g_cov2[a][b] = -(tmp[a][0] * m[0][b] + tmp[a][1] * m[1][b]);
            }
        }

        // cov2 = JW·Σ3·(JW)ᵀ + dilation
        let jw = &s.jw;
        let mut g_cov3 = [[T::zero(); 3]; 3];
        for a in 0..3 {
            for b in 0..3 {
                let mut v = T::zero();
                for p in 0..2 {
                    for q in 0..2 {
                        v += jw[p][a] * g_cov2[p][q] * jw[q][b];
                    }
                }
                g_cov3[a][b] = v;
            }
        }
        // dL/d(JW) = 2·G2·JW·Σ3
        let mut jw_cov = [[T::zero(); 3]; 2];
        for p in 0..2 {
            for b in 0..3 {
                jw_cov[p][b] = (0..3).map(|k| jw[p][k] * s.cov3d[k][b]).sum();
            }
        }
        let two = T::one() + T::one();
        let mut g_jw = [[T::zero(); 3]; 2];
        for p in 0..2 {
            for b in 0..3 {
                g_jw[p][b] = two * (g_cov2[p][0] * jw_cov[0][b] + g_cov2[p][1] * jw_cov[1][b]);
            }
        }
        // dL/dJ = dL/d(JW)·Wᵀ
        let mut g_j = [[T::zero(); 3]; 2];
        for p in 0..2 {
            for k in 0..3 {
                g_j[p][k] = (0..3).map(|b| g_jw[p][b] * view.rotation[k][b]).sum();
            }
        }

        let [tx, ty, tz] = s.t_cam;
        let iz = T::one() / tz;
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        let (fx, fy) = (view.fx, view.fy);
        let [gmx, gmy] = g.mean2d;
        let g_t = [
            gmx * fx * iz - g_j[0][2] * fx * iz2,
            gmy * fy * iz - g_j[1][2] * fy * iz2,
            -gmx * fx * tx * iz2 - gmy * fy * ty * iz2 - g_j[0][0] * fx * iz2
                + g_j[0][2] * two * fx * tx * iz3
                - g_j[1][1] * fy * iz2
                + g_j[1][2] * two * fy * ty * iz3,
        ];
        grads.positions[i] = linalg::mat_t_vec(&view.rotation, g_t);

        // Σ3 = Mm·Mmᵀ with Mm = R·diag(s); dL/dMm = 2·G3·Mm.
        let mm = linalg::mul_diag(&s.rot, s.scale);
        let mut g_mm = linalg::mul(&g_cov3, &mm);
        for row in g_mm.iter_mut() {
            for v in row.iter_mut() {
                *v *= two;
            }
        }
        let mut g_log_scale = [T::zero(); 3];
        for (k, out) in g_log_scale.iter_mut().enumerate() {
            let d_s: T = (0..3).map(|r| g_mm[r][k] * s.rot[r][k]).sum();
            *out = d_s * s.scale[k];
        }
        grads.log_scales[i] = g_log_scale;

        let g_rot = linalg::mul_diag(&g_mm, s.scale);
        let q = scene.rotations[i];
        let norm = q.iter().fold(T::zero(), |acc, &c| acc + c * c).sqrt();
        let qn = q.map(|c| c / norm);
        let dr = linalg::quat_to_mat_grad(qn[0], qn[1], qn[2], qn[3]);
        let g_qn: [T; 4] = std::array::from_fn(|k| linalg::frobenius_dot(&g_rot, &dr[k]));
        let radial: T = (0..4).map(|k| g_qn[k] * qn[k]).sum();
        grads.rotations[i] = std::array::from_fn(|k| (g_qn[k] - qn[k] * radial) / norm);
    }
    Ok((loss, grads))
}
