//! View directories on disk: 8-bit PNGs plus a `cameras.json` index.
//!
//! ```json
//! [{"image": "view_000.png", "width": 32, "height": 32, "fx": 40.0, "fy": 40.0,
//!   "cx": 16.0, "cy": 16.0, "rotation": [1,0,0, 0,1,0, 0,0,1], "translation": [0,0,4]}]
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{Camera, Image, RenderError, View};
use crate::scalar::Real;

pub const CAMERAS_FILE: &str = "cameras.json";

#[derive(Debug, Error)]
pub enum ViewError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Render { path: PathBuf, source: RenderError },
}

impl ViewError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }

    fn png(path: &Path, message: impl ToString) -> Self {
        Self::Png {
            path: path.to_owned(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewEntry {
    pub image: String,
    #[serde(flatten)]
    pub camera: Camera,
}

/// Rounds an image through 8-bit storage, as saving and reloading would.
pub fn quantize_rgb8<T: Real>(image: &Image<T>) -> Image<T> {
    Image::from_rgb8(image.width, image.height, &image.to_rgb8()).expect("same shape")
}

pub fn read_png<T: Real>(path: &Path) -> Result<Image<T>, ViewError> {
    let file = File::open(path).map_err(|e| ViewError::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| ViewError::png(path, e))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| ViewError::png(path, e))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let px = &buf[..info.buffer_size()];
    let rgb: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => px.to_vec(),
        png::ColorType::Rgba => px.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => px.iter().flat_map(|&g| [g; 3]).collect(),
        png::ColorType::GrayscaleAlpha => px.chunks_exact(2).flat_map(|p| [p[0]; 3]).collect(),
        other => return Err(ViewError::png(path, format!("unsupported color type {other:?}"))),
    };
    Image::from_rgb8(w, h, &rgb).map_err(|source| ViewError::Render {
        path: path.to_owned(),
        source,
    })
}

pub fn write_png<T: Real>(path: &Path, image: &Image<T>) -> Result<(), ViewError> {
    let file = File::create(path).map_err(|e| ViewError::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), image.width as u32, image.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| ViewError::png(path, e))?;
    writer
        .write_image_data(&image.to_rgb8())
        .map_err(|e| ViewError::png(path, e))?;
    writer.finish().map_err(|e| ViewError::png(path, e))
}

pub fn read_camera(path: &Path) -> Result<Camera, ViewError> {
    let text = std::fs::read_to_string(path).map_err(|e| ViewError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| ViewError::Json {
        path: path.to_owned(),
        source,
    })
}

/// Loads every view listed in `dir/cameras.json`.
pub fn load_views<T: Real>(dir: &Path) -> Result<Vec<View<T>>, ViewError> {
    let index = dir.join(CAMERAS_FILE);
    let text = std::fs::read_to_string(&index).map_err(|e| ViewError::io(&index, e))?;
    let entries: Vec<ViewEntry> = serde_json::from_str(&text).map_err(|source| ViewError::Json {
        path: index.clone(),
        source,
    })?;
    entries
        .into_iter()
        .map(|entry| {
            let path = dir.join(&entry.image);
            let image = read_png(&path)?;
            if image.width != entry.camera.width || image.height != entry.camera.height {
                return Err(ViewError::png(
                    &path,
                    format!(
                        "image is {}×{} but its camera is {}×{}",
                        image.width, image.height, entry.camera.width, entry.camera.height
                    ),
                ));
            }
            Ok(View {
                camera: entry.camera,
                image,
            })
        })
        .collect()
}

/// Writes `view_NNN.png` files and the camera index into `dir`, creating it.
pub fn save_views<T: Real>(dir: &Path, views: &[View<T>]) -> Result<(), ViewError> {
    std::fs::create_dir_all(dir).map_err(|e| ViewError::io(dir, e))?;
    let mut entries = Vec::with_capacity(views.len());
    for (i, view) in views.iter().enumerate() {
        let name = format!("view_{i:03}.png");
        write_png(&dir.join(&name), &view.image)?;
        entries.push(ViewEntry {
            image: name,
            camera: view.camera.clone(),
        });
    }
    let index = dir.join(CAMERAS_FILE);
    let json = serde_json::to_string_pretty(&entries).expect("cameras serialize");
    std::fs::write(&index, json).map_err(|e| ViewError::io(&index, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn views_roundtrip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let camera = Camera::look_at(5, 3, 4.0, [0.0, 0.0, -3.0], [0.0; 3], [0.0, 1.0, 0.0]).unwrap();
        let image = Image::<f64>::from_data(5, 3, (0..45).map(|i| i as f64 / 44.0).collect()).unwrap();
        let views = vec![View { camera, image }];
        save_views(dir.path(), &views).unwrap();
        let back: Vec<View<f64>> = load_views(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].camera, views[0].camera);
        assert_eq!(back[0].image, quantize_rgb8(&views[0].image));
    }

    #[test]
    fn missing_directory_names_the_path() {
        let err = load_views::<f32>(Path::new("/nonexistent/views")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/views"));
    }
}
