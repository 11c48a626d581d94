//! End-to-end compression: prune with fine-tuning, quantization-aware
//! fine-tuning, then entropy-coded container.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, CodecError, Ordering, StreamSize};
use crate::metrics::{self, histogram_entropy, opacity_histogram, serialize_db, MetricError};
use crate::ply;
use crate::pruning::{self, PruneConfig, PruneError, RoundSummary, SplatBackend};
use crate::quantization::{
    init_quantizers, qat_finetune, quantize_scene, AttributeBits, QatConfig, QatOutcome, QuantError, QuantizerSet,
};
use crate::render::{rasterize_with, FinetuneConfig, LearningRates, RenderError, View};
use crate::scalar::Real;
use crate::scene::{Attribute, GaussianScene};

/// Bins of the opacity histograms in the report.
pub const OPACITY_BINS: usize = 256;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

fn default_rounds() -> usize {
    4
}
fn default_interval() -> usize {
    50
}
fn default_steps() -> usize {
    200
}
fn default_true() -> bool {
    true
}
fn default_step_lr() -> f64 {
    QatConfig::default().step_lr
}

/// Pipeline settings. Defaults are desk-scale; the full-size schedule is
/// 10 rounds, 500-step intervals and 5000 fine-tuning and QAT steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_iter: Option<f64>,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_interval")]
    pub prune_interval: usize,
    #[serde(default = "default_steps")]
    pub final_finetune_steps: usize,
    #[serde(default = "default_steps")]
    pub qat_steps: usize,
    #[serde(default)]
    pub bits: AttributeBits,
    #[serde(default = "default_true")]
    pub morton: bool,
    /// No default: every run names its seed.
    pub seed: u64,
    #[serde(default)]
    pub learning_rates: LearningRates,
    /// QAT learning rate for each step size, relative to its initial value.
    #[serde(default = "default_step_lr")]
    pub step_lr: f64,
}

impl PipelineConfig {
    /// Desk-scale configuration with a per-round fraction.
    pub fn desk(seed: u64, gamma_iter: f64) -> Self {
        Self {
            gamma_target: None,
            gamma_iter: Some(gamma_iter),
            rounds: default_rounds(),
            prune_interval: default_interval(),
            final_finetune_steps: default_steps(),
            qat_steps: default_steps(),
            bits: AttributeBits::default(),
            morton: true,
            seed,
            learning_rates: LearningRates::default(),
            step_lr: default_step_lr(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.resolved_gamma_iter().map(|_| ())?;
        for attr in Attribute::ALL {
            let b = self.bits.get(attr);
            if !(2..=32).contains(&b) {
                return Err(PipelineError::Config(format!("{attr} bit depth {b} outside [2, 32]")));
            }
        }
        if !(self.step_lr >= 0.0) {
            return Err(PipelineError::Config("step_lr must be non-negative".into()));
        }
        Ok(())
    }

    /// The per-round fraction, derived from `gamma_target` when that is given.
    pub fn resolved_gamma_iter(&self) -> Result<f64, PipelineError> {
        match (self.gamma_target, self.gamma_iter) {
            (Some(_), Some(_)) => Err(PipelineError::Config(
                "gamma_target and gamma_iter are mutually exclusive".into(),
            )),
            (None, None) => Err(PipelineError::Config("one of gamma_target or gamma_iter is required".into())),
            (None, Some(g)) => {
                if (0.0..1.0).contains(&g) {
                    Ok(g)
                } else {
                    Err(PipelineError::Config(format!("gamma_iter {g} outside [0, 1)")))
                }
            }
            (Some(target), None) => {
                if !(0.0..1.0).contains(&target) {
                    return Err(PipelineError::Config(format!("gamma_target {target} outside [0, 1)")));
                }
                if self.rounds == 0 {
                    return Ok(0.0);
                }
                let rounds = u32::try_from(self.rounds).map_err(|_| PipelineError::Config("too many rounds".into()))?;
                Ok(pruning::gamma_schedule(target, rounds)?)
            }
        }
    }

    pub fn finetune_config(&self) -> FinetuneConfig {
        FinetuneConfig {
            learning_rates: self.learning_rates,
            ..FinetuneConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttributeEntropy {
    pub attribute: Attribute,
    /// Bits/symbol of the input quantized at its initial steps.
    pub before: Option<f64>,
    /// Bits/symbol of the container's codes.
    pub after: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ViewQuality {
    pub view: usize,
    /// Decoded rendering against the view's ground-truth image.
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
    /// Decoded rendering against the input scene's rendering.
    #[serde(serialize_with = "serialize_db")]
    pub psnr_vs_input: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OpacityReport {
    pub bins: usize,
    pub before: Vec<u64>,
    pub after: Vec<u64>,
    pub entropy_before: f64,
    pub entropy_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub gamma_iter: f64,
    pub input_count: usize,
    pub final_count: usize,
    pub rounds: Vec<RoundSummary>,
    pub quantizers: QuantizerSet,
    pub qat_loss_first: Option<f64>,
    pub qat_loss_last: Option<f64>,
    pub entropy: Vec<AttributeEntropy>,
    pub streams: [StreamSize; 6],
    pub raw_bytes: u64,
    pub container_bytes: u64,
    pub compression_ratio: f64,
    pub views: Vec<ViewQuality>,
    /// Mean over views, in dB; `inf` when every view is exact.
    #[serde(serialize_with = "serialize_db")]
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    #[serde(serialize_with = "serialize_db")]
    pub min_psnr_vs_input: f64,
    pub opacity: OpacityReport,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput<T> {
    pub container: Vec<u8>,
    /// The container's scene, dequantized, in stored order.
    pub decoded: GaussianScene<T>,
    pub report: PipelineReport,
}

/// Size of the input as a 3DGS checkpoint PLY.
pub fn ply_size(count: usize) -> u64 {
    (ply::header_text(count).len() + count * ply::PROPERTY_COUNT * 4) as u64
}

fn code_entropies(q: &crate::quantization::QuantizedScene) -> Result<Vec<Option<f64>>, CodecError> {
    Attribute::ALL
        .iter()
        .map(|&a| {
            let codes = q.codes(a);
            if codes.is_empty() {
                Ok(None)
            } else {
                codec::entropy_bits(codes).map(Some)
            }
        })
        .collect()
}

/// The pruning half of the pipeline: `rounds` × {score → prune → fine-tune}
/// and the final fine-tune.
pub fn prune_stage<T: Real>(
    scene: &GaussianScene<T>,
    views: &[View<T>],
    cfg: &PipelineConfig,
) -> Result<(GaussianScene<T>, Vec<RoundSummary>), PipelineError> {
    // Without pruning rounds there is nothing for the final fine-tune to recover from.
    if cfg.rounds == 0 {
        return Ok((scene.clone(), Vec::new()));
    }
    let prune_cfg = PruneConfig {
        gamma_iter: cfg.resolved_gamma_iter()?,
        prune_interval: cfg.prune_interval,
        rounds: cfg.rounds,
        final_finetune_steps: cfg.final_finetune_steps,
    };
    let mut backend = SplatBackend::new(cfg.finetune_config(), cfg.seed);
    Ok(pruning::prune_finetune_loop(scene, views, &prune_cfg, &mut backend)?)
}

/// Seed of the quantization-aware stage, kept apart from the pruning stream.
pub fn qat_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Quantization-aware fine-tuning from freshly initialized step sizes.
pub fn qat_stage<T: Real>(
    scene: &GaussianScene<T>,
    views: &[View<T>],
    cfg: &PipelineConfig,
) -> Result<QatOutcome<T>, PipelineError> {
    let quantizers = init_quantizers(scene, &cfg.bits)?;
    let qat_cfg = QatConfig {
        finetune: cfg.finetune_config(),
        step_lr: cfg.step_lr,
        ..QatConfig::default()
    };
    Ok(qat_finetune(scene, views, &quantizers, cfg.qat_steps, &qat_cfg, qat_seed(cfg.seed))?)
}

pub fn run_pipeline<T: Real>(
    scene: &GaussianScene<T>,
    views: &[View<T>],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput<T>, PipelineError> {
    cfg.validate()?;
    if views.is_empty() {
        return Err(PipelineError::Config("at least one view is required".into()));
    }
    scene.validate().map_err(RenderError::from)?;
    let gamma_iter = cfg.resolved_gamma_iter()?;
    let finetune = cfg.finetune_config();

    let input_renders = views
        .iter()
        .map(|v| rasterize_with(scene, &v.camera, &finetune.raster))
        .collect::<Result<Vec<_>, _>>()?;
    let initial_q = init_quantizers(scene, &cfg.bits)?;
    let entropy_before = code_entropies(&quantize_scene(scene, &initial_q)?)?;

    let (pruned, rounds) = prune_stage(scene, views, cfg)?;
    let qat = qat_stage(&pruned, views, cfg)?;
    let quantized = quantize_scene(&qat.scene, &qat.quantizers)?;
    let ordering = if cfg.morton { Ordering::Morton } else { Ordering::Original };
    let (container, streams) = codec::encode_with_sizes(&quantized, ordering)?;

    let stored = codec::decode(&container)?;
    let decoded: GaussianScene<T> = stored.scene.dequantize()?;
    let entropy_after = code_entropies(&stored.scene)?;

    let mut view_quality = Vec::with_capacity(views.len());
    for (i, (view, input)) in views.iter().zip(&input_renders).enumerate() {
        let img = rasterize_with(&decoded, &view.camera, &finetune.raster)?;
        view_quality.push(ViewQuality {
            view: i,
            psnr: metrics::psnr(&img, &view.image)?,
            ssim: metrics::ssim(&img, &view.image)?,
            psnr_vs_input: metrics::psnr(&img, input)?,
        });
    }
    let n_views = view_quality.len() as f64;
    let mean_psnr = view_quality.iter().map(|q| q.psnr).sum::<f64>() / n_views;
    let mean_ssim = view_quality.iter().map(|q| q.ssim).sum::<f64>() / n_views;
    let min_psnr_vs_input = view_quality
        .iter()
        .map(|q| q.psnr_vs_input)
        .fold(f64::INFINITY, f64::min);

    let hist_before = opacity_histogram(&scene.opacities(), OPACITY_BINS);
    let hist_after = opacity_histogram(&decoded.opacities(), OPACITY_BINS);
    let raw_bytes = ply_size(scene.len());
    let container_bytes = container.len() as u64;

    let report = PipelineReport {
        seed: cfg.seed,
        gamma_iter,
        input_count: scene.len(),
        final_count: decoded.len(),
        rounds,
        quantizers: qat.quantizers,
        qat_loss_first: qat.losses.first().copied(),
        qat_loss_last: qat.losses.last().copied(),
        entropy: Attribute::ALL
            .iter()
            .zip(entropy_before.iter().zip(&entropy_after))
            .map(|(&attribute, (&before, &after))| AttributeEntropy {
                attribute,
                before,
                after,
            })
            .collect(),
        streams,
        raw_bytes,
        container_bytes,
        compression_ratio: raw_bytes as f64 / container_bytes as f64,
        views: view_quality,
        mean_psnr,
        mean_ssim,
        min_psnr_vs_input,
        opacity: OpacityReport {
            bins: OPACITY_BINS,
            entropy_before: histogram_entropy(&hist_before),
            entropy_after: histogram_entropy(&hist_after),
            before: hist_before,
            after: hist_after,
        },
    };
    Ok(PipelineOutput {
        container,
        decoded,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_requires_seed_and_one_gamma() {
        assert!(PipelineConfig::from_json(r#"{"gamma_iter": 0.3}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"seed": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"seed": 1, "gamma_iter": 0.3, "gamma_target": 0.5}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"seed": 1, "gamma_iter": 0.3, "bogus": 0}"#).is_err());
        let cfg = PipelineConfig::from_json(r#"{"seed": 7, "gamma_iter": 0.3}"#).unwrap();
        assert_eq!(cfg, PipelineConfig::desk(7, 0.3));
        assert_eq!(cfg.bits.sh_dc, 8);
        assert_eq!(cfg.bits.position, 32);
    }

    #[test]
    fn gamma_target_resolves_through_schedule() {
        let cfg = PipelineConfig::from_json(r#"{"seed": 1, "gamma_target": 0.9375, "rounds": 4}"#).unwrap();
        assert!((cfg.resolved_gamma_iter().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn config_roundtrips_through_json() {
        let cfg = PipelineConfig::desk(3, 0.25);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn ply_size_matches_writer() {
        let scene = GaussianScene::<f32>::zeros(3);
        assert_eq!(ply_size(3), ply::write_scene(&scene).len() as u64);
    }
}
