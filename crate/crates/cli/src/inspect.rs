//! File summaries for `splatpress inspect`.

use std::fmt::Write;

use serde::Serialize;
use splatpress_core::codec::{self, Ordering};
use splatpress_core::metrics::opacity_histogram;
use splatpress_core::pipeline::ply_size;
use splatpress_core::{ply, Attribute, Scene64};

use crate::error::CliError;

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Serialize)]
pub struct AttributeSummary {
    pub attribute: Attribute,
    pub min: Option<f64>,
    pub max: Option<f64>,
    /// First-order entropy in bits per symbol: of the integer codes for a
    /// container, of the exact float32 values for a PLY.
    pub entropy_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw_bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compressed_bytes: Option<u64>,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub kind: &'static str,
    pub count: usize,
    pub file_bytes: u64,
    /// Size of the same scene as a checkpoint PLY.
    pub ply_bytes: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub morton: Option<bool>,
    pub attributes: Vec<AttributeSummary>,
    /// Activated opacities in equal-width bins over [0, 1].
    pub opacity_histogram: Vec<u64>,
}

impl Summary {
    pub fn text(&self) -> String {
        let mut out = format!(
            "{} with {} gaussians, {} bytes ({} as PLY)",
            self.kind, self.count, self.file_bytes, self.ply_bytes
        );
        for a in &self.attributes {
            let _ = write!(out, "\n  {:<14}", a.attribute.name());
            match (a.min, a.max, a.entropy_bits) {
                (Some(lo), Some(hi), Some(h)) => {
                    let _ = write!(out, " [{lo:.6}, {hi:.6}]  {h:.3} bits");
                }
                _ => out.push_str(" empty"),
            }
            if let (Some(b), Some(c)) = (a.bits, a.compressed_bytes) {
                let _ = write!(out, "  {b}-bit, {c} bytes");
            }
        }
        out
    }
}

fn range(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (Some(lo), Some(hi))
}

fn entropy(symbols: &[i64]) -> Result<Option<f64>, CliError> {
    if symbols.is_empty() {
        Ok(None)
    } else {
        Ok(Some(codec::entropy_bits(symbols)?))
    }
}

fn base(kind: &'static str, bytes: &[u8], scene: &Scene64, morton: Option<bool>) -> Summary {
    Summary {
        kind,
        count: scene.len(),
        file_bytes: bytes.len() as u64,
        ply_bytes: ply_size(scene.len()),
        morton,
        attributes: Vec::with_capacity(6),
        opacity_histogram: opacity_histogram(&scene.opacities(), HISTOGRAM_BINS),
    }
}

pub fn inspect(bytes: &[u8]) -> Result<Summary, CliError> {
    if bytes.starts_with(&codec::MAGIC) {
        let container = codec::decode(bytes)?;
        let q = &container.scene;
        let scene: Scene64 = q.dequantize()?;
        // Encoding is canonical, so re-encoding recovers the stored stream sizes.
        let order = if container.morton { Ordering::Morton } else { Ordering::Original };
        let (_, streams) = codec::encode_with_sizes(q, order)?;
        let mut summary = base("container", bytes, &scene, Some(container.morton));
        for (attr, stream) in Attribute::ALL.into_iter().zip(streams) {
            let qs = q.quantizer(attr);
            let (min, max) = range(scene.group(attr));
            summary.attributes.push(AttributeSummary {
                attribute: attr,
                min,
                max,
                entropy_bits: entropy(q.codes(attr))?,
                bits: Some(qs.bits),
                signed: Some(qs.signed),
                step: Some(qs.step),
                raw_bytes: Some(stream.raw_bytes),
                compressed_bytes: Some(stream.compressed_bytes),
            });
        }
        Ok(summary)
    } else {
        let scene: Scene64 = ply::read_scene(bytes)?.cast();
        let mut summary = base("ply", bytes, &scene, None);
        for attr in Attribute::ALL {
            let values = scene.group(attr);
            let symbols: Vec<i64> = values.iter().map(|&v| i64::from((v as f32).to_bits())).collect();
            let (min, max) = range(values);
            summary.attributes.push(AttributeSummary {
                attribute: attr,
                min,
                max,
                entropy_bits: entropy(&symbols)?,
                bits: None,
                signed: None,
                step: None,
                raw_bytes: None,
                compressed_bytes: None,
            });
        }
        Ok(summary)
    }
}
