use super::RenderError;
use crate::scalar::{cast, Real};

/// Row-major RGB image with channel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, `(y * width + x) * 3 + channel`.
    pub data: Vec<T>,
}

impl<T: Real> Image<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, T::zero())
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<T>) -> Result<Self, RenderError> {
        if data.len() != width * height * 3 {
            return Err(RenderError::DimensionMismatch(format!(
                "{} values for a {width}×{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [T; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_shape(&self, other: &Image<T>) -> Result<(), RenderError> {
        if self.width != other.width || self.height != other.height {
            return Err(RenderError::DimensionMismatch(format!(
                "{}×{} vs {}×{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| cast(v)).collect(),
        }
    }

    /// Quantizes to 8-bit RGB (round to nearest, clamped).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self, RenderError> {
        Self::from_data(
            width,
            height,
            bytes.iter().map(|&b| T::of(f64::from(b) / 255.0)).collect(),
        )
    }
}
