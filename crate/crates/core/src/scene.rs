//! Gaussian scene data model, parameter activations and 3D covariance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Mat3, Vec3};
use crate::scalar::{cast, Real};

/// Number of degree 1..3 spherical-harmonic coefficients (15 per color channel).
pub const SH_REST_LEN: usize = 45;

/// Raw parameters stored per Gaussian: position, quaternion, log-scale,
/// opacity logit, DC color, higher-order SH.
pub const PARAMS_PER_GAUSSIAN: usize = 3 + 4 + 3 + 1 + 3 + SH_REST_LEN;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("attribute `{attribute}` has {actual} entries, expected {expected}")]
    LengthMismatch {
        attribute: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("gaussian {index} has a zero-norm rotation quaternion")]
    ZeroQuaternion { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Attribute groups of a scene; each is quantized and coded as one stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Position,
    Rotation,
    LogScale,
    OpacityLogit,
    ShDc,
    ShRest,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::Position,
        Attribute::Rotation,
        Attribute::LogScale,
        Attribute::OpacityLogit,
        Attribute::ShDc,
        Attribute::ShRest,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(id as usize).copied()
    }

    /// Scalars per Gaussian.
    pub fn arity(self) -> usize {
        match self {
            Attribute::Position | Attribute::LogScale | Attribute::ShDc => 3,
            Attribute::Rotation => 4,
            Attribute::OpacityLogit => 1,
            Attribute::ShRest => SH_REST_LEN,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Position => "position",
            Attribute::Rotation => "rotation",
            Attribute::LogScale => "log_scale",
            Attribute::OpacityLogit => "opacity_logit",
            Attribute::ShDc => "sh_dc",
            Attribute::ShRest => "sh_rest",
        }
    }
}

impl std::fmt::Display for Attribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One Gaussian's raw parameters, used to build and inspect scenes row by row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian<T> {
    pub position: [T; 3],
    /// Quaternion in (w, x, y, z) order, not necessarily normalized.
    pub rotation: [T; 4],
    pub log_scale: [T; 3],
    pub opacity_logit: T,
    pub sh_dc: [T; 3],
    pub sh_rest: [T; SH_REST_LEN],
}

impl<T: Real> Default for Gaussian<T> {
    fn default() -> Self {
        Self {
            position: [T::zero(); 3],
            rotation: [T::one(), T::zero(), T::zero(), T::zero()],
            log_scale: [T::zero(); 3],
            opacity_logit: T::zero(),
            sh_dc: [T::zero(); 3],
            sh_rest: [T::zero(); SH_REST_LEN],
        }
    }
}

/// Column-oriented Gaussian scene holding raw (pre-activation) parameters
/// exactly as a 3DGS checkpoint stores them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianScene<T> {
    pub positions: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    pub sh_dc: Vec<[T; 3]>,
    pub sh_rest: Vec<[T; SH_REST_LEN]>,
}

impl<T: Real> GaussianScene<T> {
    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_dc: Vec::new(),
            sh_rest: Vec::new(),
        }
    }

    /// `n` Gaussians with every parameter zero (including quaternions), the
    /// natural starting point for gradient accumulation.
    pub fn zeros(n: usize) -> Self {
        Self {
            positions: vec![[T::zero(); 3]; n],
            rotations: vec![[T::zero(); 4]; n],
            log_scales: vec![[T::zero(); 3]; n],
            opacity_logits: vec![T::zero(); n],
            sh_dc: vec![[T::zero(); 3]; n],
            sh_rest: vec![[T::zero(); SH_REST_LEN]; n],
        }
    }

    /// Flat view of one attribute column, `arity` scalars per Gaussian.
    pub fn group(&self, attr: Attribute) -> &[T] {
        match attr {
            Attribute::Position => self.positions.as_flattened(),
            Attribute::Rotation => self.rotations.as_flattened(),
            Attribute::LogScale => self.log_scales.as_flattened(),
            Attribute::OpacityLogit => &self.opacity_logits,
            Attribute::ShDc => self.sh_dc.as_flattened(),
            Attribute::ShRest => self.sh_rest.as_flattened(),
        }
    }

    pub fn group_mut(&mut self, attr: Attribute) -> &mut [T] {
        match attr {
            Attribute::Position => self.positions.as_flattened_mut(),
            Attribute::Rotation => self.rotations.as_flattened_mut(),
            Attribute::LogScale => self.log_scales.as_flattened_mut(),
            Attribute::OpacityLogit => &mut self.opacity_logits,
            Attribute::ShDc => self.sh_dc.as_flattened_mut(),
            Attribute::ShRest => self.sh_rest.as_flattened_mut(),
        }
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            positions: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            log_scales: Vec::with_capacity(n),
            opacity_logits: Vec::with_capacity(n),
            sh_dc: Vec::with_capacity(n),
            sh_rest: Vec::with_capacity(n),
        }
    }

    pub fn from_gaussians<I: IntoIterator<Item = Gaussian<T>>>(iter: I) -> Self {
        let iter = iter.into_iter();
        let mut scene = Self::with_capacity(iter.size_hint().0);
        for g in iter {
            scene.push(g);
        }
        scene
    }

    pub fn push(&mut self, g: Gaussian<T>) {
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_dc.push(g.sh_dc);
        self.sh_rest.push(g.sh_rest);
    }

    /// Number of Gaussians. Meaningful only for a scene that passes [`validate`](Self::validate).
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Gaussian<T> {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh_dc: self.sh_dc[i],
            sh_rest: self.sh_rest[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Gaussian<T>> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }

    /// Checks that all columns share one length and that every quaternion is nonzero.
    pub fn validate(&self) -> Result<(), SceneError> {
        let n = self.positions.len();
        let lens = [
            ("rotations", self.rotations.len()),
            ("log_scales", self.log_scales.len()),
            ("opacity_logits", self.opacity_logits.len()),
            ("sh_dc", self.sh_dc.len()),
            ("sh_rest", self.sh_rest.len()),
        ];
        for (attribute, actual) in lens {
            if actual != n {
                return Err(SceneError::LengthMismatch {
                    attribute,
                    expected: n,
                    actual,
                });
            }
        }
        for (index, q) in self.rotations.iter().enumerate() {
            let norm2 = q.iter().fold(T::zero(), |acc, &c| acc + c * c);
            if !(norm2 > T::zero()) {
                return Err(SceneError::ZeroQuaternion { index });
            }
        }
        Ok(())
    }

    /// Keeps the Gaussians whose mask entry is true, preserving relative order.
    pub fn select(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.len(), "mask length must match scene");
        let mut out = Self::with_capacity(keep.iter().filter(|&&k| k).count());
        for (i, _) in keep.iter().enumerate().filter(|(_, &k)| k) {
            out.push(self.get(i));
        }
        out
    }

    /// Returns a scene whose i-th Gaussian is `self[order[i]]`.
    pub fn permute(&self, order: &[usize]) -> Self {
        Self::from_gaussians(order.iter().map(|&i| self.get(i)))
    }

    pub fn cast<U: Real>(&self) -> GaussianScene<U> {
        fn arr<A: Real, B: Real, const K: usize>(v: &[[A; K]]) -> Vec<[B; K]> {
            v.iter().map(|a| a.map(cast)).collect()
        }
        GaussianScene {
            positions: arr(&self.positions),
            rotations: arr(&self.rotations),
            log_scales: arr(&self.log_scales),
            opacity_logits: self.opacity_logits.iter().map(|&v| cast(v)).collect(),
            sh_dc: arr(&self.sh_dc),
            sh_rest: arr(&self.sh_rest),
        }
    }

    pub fn opacities(&self) -> Vec<T> {
        self.opacity_logits.iter().map(|&l| activate_opacity(l)).collect()
    }
}

/// Per-Gaussian accumulated gradient magnitude used by the pruning criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientScore<T> {
    pub scores: Vec<T>,
}

impl<T: Real> GradientScore<T> {
    pub fn new(scores: Vec<T>) -> Result<Self, SceneError> {
        if let Some(bad) = scores.iter().position(|s| !s.is_finite() || *s < T::zero()) {
            return Err(SceneError::InvalidParameter(format!(
                "gradient score {bad} is negative or non-finite"
            )));
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Logistic sigmoid mapping an opacity logit to α ∈ [0, 1].
#[inline]
pub fn activate_opacity<T: Real>(logit: T) -> T {
    // Branch on sign so exp never overflows.
    if logit >= T::zero() {
        T::one() / (T::one() + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`activate_opacity`] on (0, 1).
#[inline]
pub fn opacity_logit<T: Real>(alpha: T) -> T {
    (alpha / (T::one() - alpha)).ln()
}

/// Rotation matrix of the normalized quaternion (w, x, y, z).
pub fn rotation_matrix<T: Real>(q: [T; 4]) -> Result<Mat3<T>, SceneError> {
    let norm = q.iter().fold(T::zero(), |acc, &c| acc + c * c).sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(SceneError::InvalidParameter(
            "quaternion must have finite nonzero norm".into(),
        ));
    }
    let [w, x, y, z] = q.map(|c| c / norm);
    Ok(linalg::quat_to_mat(w, x, y, z))
}

/// Σ = R·S·Sᵀ·Rᵀ for rotation quaternion `q` and per-axis scale `s`.
pub fn covariance3d<T: Real>(q: [T; 4], s: Vec3<T>) -> Result<Mat3<T>, SceneError> {
    if s.iter().any(|&v| !(v > T::zero()) || !v.is_finite()) {
        return Err(SceneError::InvalidParameter(
            "scale components must be positive".into(),
        ));
    }
    let r = rotation_matrix(q)?;
    let m = linalg::mul_diag(&r, s);
    Ok(linalg::mul_abt(&m, &m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sigmoid_examples() {
        assert_eq!(activate_opacity(0.0f64), 0.5);
        assert!((activate_opacity(50.0f64) - 1.0).abs() <= 1e-15);
        // 1 / (1 + e^-1), e^-1 = 0.36787944117144233
        let expected = 0.731_058_578_630_004_9;
        assert!((activate_opacity(1.0f64) - expected).abs() < 1e-15);
        assert!(activate_opacity(-800.0f64) >= 0.0);
    }

    #[test]
    fn parameter_count_is_59() {
        assert_eq!(PARAMS_PER_GAUSSIAN, 59);
    }

    #[test]
    fn identity_covariances() {
        let id = covariance3d([1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).unwrap();
        assert_eq!(id, [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let d = covariance3d([1.0, 0.0, 0.0, 0.0], [2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d, [[4.0, 0.0, 0.0], [0.0, 9.0, 0.0], [0.0, 0.0, 16.0]]);
    }

    #[test]
    fn zero_quaternion_rejected() {
        assert!(covariance3d([0.0f64; 4], [1.0, 1.0, 1.0]).is_err());
        let mut scene = GaussianScene::<f32>::empty();
        scene.push(Gaussian {
            rotation: [0.0; 4],
            ..Default::default()
        });
        assert_eq!(scene.validate(), Err(SceneError::ZeroQuaternion { index: 0 }));
    }

    #[test]
    fn mismatched_columns_rejected() {
        let mut scene = GaussianScene::<f32>::from_gaussians([Gaussian::default(); 2]);
        scene.sh_dc.pop();
        assert!(matches!(
            scene.validate(),
            Err(SceneError::LengthMismatch { attribute: "sh_dc", .. })
        ));
    }

    #[test]
    fn select_and_permute_keep_rows_intact() {
        let scene = GaussianScene::<f32>::from_gaussians((0..4).map(|i| Gaussian {
            opacity_logit: i as f32,
            ..Default::default()
        }));
        let kept = scene.select(&[true, false, true, false]);
        assert_eq!(kept.opacity_logits, vec![0.0, 2.0]);
        let perm = scene.permute(&[3, 1, 0, 2]);
        assert_eq!(perm.opacity_logits, vec![3.0, 1.0, 0.0, 2.0]);
    }

    fn quat() -> impl Strategy<Value = [f64; 4]> {
        prop::array::uniform4(-1.0f64..1.0).prop_filter("nonzero", |q| {
            q.iter().map(|c| c * c).sum::<f64>() > 1e-4
        })
    }

    fn scales() -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(0.05f64..3.0)
    }

    proptest! {
        #[test]
        fn covariance_is_symmetric_psd(q in quat(), s in scales()) {
            let c = covariance3d(q, s).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((c[i][j] - c[j][i]).abs() <= 1e-12);
                }
            }
            let m = nalgebra::Matrix3::from_fn(|i, j| c[i][j]);
            let eig = nalgebra::SymmetricEigen::new(m).eigenvalues;
            prop_assert!(eig.iter().all(|&e| e >= -1e-10));
        }

        #[test]
        fn covariance_eigenvalues_are_squared_scales(q in quat(), s in scales()) {
            let c = covariance3d(q, s).unwrap();
            let m = nalgebra::Matrix3::from_fn(|i, j| c[i][j]);
            let mut eig: Vec<f64> = nalgebra::SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut want: Vec<f64> = s.iter().map(|v| v * v).collect();
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                prop_assert!((a - b).abs() <= 1e-10, "{eig:?} vs {want:?}");
            }
        }

        #[test]
        fn covariance_ignores_quaternion_scale(q in quat(), s in scales(), k in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
            let a = covariance3d(q, s).unwrap();
            let b = covariance3d(q.map(|c| c * k), s).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((a[i][j] - b[i][j]).abs() <= 1e-10);
                }
            }
        }

        #[test]
        fn logit_inverts_sigmoid(a in 1e-7f64..(1.0 - 1e-7)) {
            let back = activate_opacity(opacity_logit(a));
            prop_assert!((back - a).abs() <= 1e-12);
        }
    }
}
