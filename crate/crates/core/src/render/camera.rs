use serde::{Deserialize, Serialize};

use super::RenderError;
use crate::linalg::{Mat3, Vec3};

/// Pinhole camera with a rigid world-to-camera transform `x_cam = R·x + t`.
///
/// Camera-space +z points forward. Pixel (u, v) has image-plane coordinate
/// (u, v): the principal point is expressed in the same convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Mat3<f64>,
    pub translation: Vec3<f64>,
}

const ORTHONORMAL_TOL: f64 = 1e-8;

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3<f64>,
        translation: Vec3<f64>,
    ) -> Result<Self, RenderError> {
        let cam = Self {
            width,
            height,
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.width == 0 || self.height == 0 {
            return Err(RenderError::InvalidCamera("image size must be at least 1×1".into()));
        }
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.rotation.iter().flatten())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite || self.fx == 0.0 || self.fy == 0.0 {
            return Err(RenderError::InvalidCamera(
                "intrinsics and pose must be finite with nonzero focal length".into(),
            ));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > ORTHONORMAL_TOL {
                    return Err(RenderError::InvalidCamera(format!(
                        "rotation is not orthonormal (R·Rᵀ[{i}][{j}] = {dot})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with image y pointing along `-up`.
    pub fn look_at(
        width: usize,
        height: usize,
        focal: f64,
        eye: Vec3<f64>,
        target: Vec3<f64>,
        up: Vec3<f64>,
    ) -> Result<Self, RenderError> {
        let sub = |a: Vec3<f64>, b: Vec3<f64>| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: Vec3<f64>, b: Vec3<f64>| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let norm = |a: Vec3<f64>| {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / n, a[1] / n, a[2] / n]
        };
        let forward = norm(sub(target, eye));
        let right = norm(cross(forward, up));
        let down = cross(forward, right);
        let rotation = [right, down, forward];
        let translation = [
            -(rotation[0][0] * eye[0] + rotation[0][1] * eye[1] + rotation[0][2] * eye[2]),
            -(rotation[1][0] * eye[0] + rotation[1][1] * eye[1] + rotation[1][2] * eye[2]),
            -(rotation[2][0] * eye[0] + rotation[2][1] * eye[1] + rotation[2][2] * eye[2]),
        ];
        Self::new(
            width,
            height,
            focal,
            focal,
            width as f64 / 2.0,
            height as f64 / 2.0,
            rotation,
            translation,
        )
    }
}

/// JSON form of a camera: 3×3 rotation flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRecord {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl TryFrom<CameraRecord> for Camera {
    type Error = RenderError;

    fn try_from(r: CameraRecord) -> Result<Self, Self::Error> {
        let m = r.rotation;
        Camera::new(
            r.width,
            r.height,
            r.fx,
            r.fy,
            r.cx,
            r.cy,
            [[m[0], m[1], m[2]], [m[3], m[4], m[5]], [m[6], m[7], m[8]]],
            r.translation,
        )
    }
}

impl From<Camera> for CameraRecord {
    fn from(c: Camera) -> Self {
        let r = c.rotation;
        Self {
            width: c.width,
            height: c.height,
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            rotation: [
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ],
            translation: c.translation,
        }
    }
}
