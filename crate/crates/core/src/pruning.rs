//! Gradient-and-opacity-aware pruning.
//!
//! A Gaussian survives a round when its activated opacity or its
//! accumulated gradient score reaches the γ-quantile of the current
//! population; it is removed only when both are strictly below.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{self, FinetuneConfig, RenderError, View};
use crate::scalar::Real;
use crate::scene::{GaussianScene, GradientScore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PruneError {
    #[error("quantile of an empty population")]
    Empty,
    #[error("fraction {0} outside its valid range")]
    InvalidFraction(f64),
    #[error("{0} scores for {1} gaussians")]
    LengthMismatch(usize, usize),
    #[error("non-finite value in population")]
    NonFinite,
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Lower order statistic: element `floor(gamma·N)` of the sorted values,
/// clamped to the last index.
pub fn quantile<T: Real>(values: &[T], gamma: f64) -> Result<T, PruneError> {
    if values.is_empty() {
        return Err(PruneError::Empty);
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(PruneError::InvalidFraction(gamma));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PruneError::NonFinite);
    }
    let n = values.len();
    let idx = ((gamma * n as f64).floor() as usize).min(n - 1);
    let mut sorted = values.to_vec();
    let (_, nth, _) = sorted.select_nth_unstable_by(idx, |a, b| a.partial_cmp(b).expect("finite"));
    Ok(*nth)
}

/// Per-round γ that reaches `gamma_target` after `t` geometric rounds.
pub fn gamma_schedule(gamma_target: f64, t: u32) -> Result<f64, PruneError> {
    if !(0.0..1.0).contains(&gamma_target) {
        return Err(PruneError::InvalidFraction(gamma_target));
    }
    if t == 0 {
        return Err(PruneError::InvalidFraction(0.0));
    }
    Ok(1.0 - (1.0 - gamma_target).powf(1.0 / t as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub kept_mask: Vec<bool>,
    pub opacity_threshold: f64,
    pub gradient_threshold: f64,
    pub kept_count: usize,
    pub removed_count: usize,
}

/// Applies one pruning round with fraction `gamma`.
pub fn gap_prune<T: Real>(
    scene: &GaussianScene<T>,
    scores: &GradientScore<T>,
    gamma: f64,
) -> Result<(GaussianScene<T>, PruneReport), PruneError> {
    if scores.len() != scene.len() {
        return Err(PruneError::LengthMismatch(scores.len(), scene.len()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(PruneError::InvalidFraction(gamma));
    }
    if scene.is_empty() {
        return Ok((
            scene.clone(),
            PruneReport {
                kept_mask: Vec::new(),
                opacity_threshold: 0.0,
                gradient_threshold: 0.0,
                kept_count: 0,
                removed_count: 0,
            },
        ));
    }
    let opacity = scene.opacities();
    let opacity_threshold = quantile(&opacity, gamma)?;
    let gradient_threshold = quantile(&scores.scores, gamma)?;
    let kept_mask: Vec<bool> = opacity
        .iter()
        .zip(&scores.scores)
        .map(|(&a, &g)| a >= opacity_threshold || g >= gradient_threshold)
        .collect();
    let kept_count = kept_mask.iter().filter(|&&k| k).count();
    let report = PruneReport {
        opacity_threshold: opacity_threshold.as_f64(),
        gradient_threshold: gradient_threshold.as_f64(),
        kept_count,
        removed_count: scene.len() - kept_count,
        kept_mask,
    };
    Ok((scene.select(&report.kept_mask), report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneConfig {
    pub gamma_iter: f64,
    /// Fine-tuning steps after each prune.
    pub prune_interval: usize,
    pub rounds: usize,
    pub final_finetune_steps: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self {
            gamma_iter: 0.5,
            prune_interval: 500,
            rounds: 10,
            final_finetune_steps: 5000,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<(), PruneError> {
        if !(0.0..1.0).contains(&self.gamma_iter) {
            return Err(PruneError::InvalidFraction(self.gamma_iter));
        }
        Ok(())
    }
}

/// Scoring and fine-tuning services the pruning loop drives.
pub trait PruneBackend<T: Real> {
    fn scores(&mut self, scene: &GaussianScene<T>, views: &[View<T>]) -> Result<GradientScore<T>, RenderError>;

    fn finetune(
        &mut self,
        scene: &GaussianScene<T>,
        views: &[View<T>],
        steps: usize,
    ) -> Result<GaussianScene<T>, RenderError>;
}

/// The CPU splatting renderer as a pruning backend. Each fine-tuning call
/// starts fresh optimizer moments and advances the seed.
#[derive(Debug, Clone)]
pub struct SplatBackend {
    pub finetune: FinetuneConfig,
    seed: u64,
}

impl SplatBackend {
    pub fn new(finetune: FinetuneConfig, seed: u64) -> Self {
        Self { finetune, seed }
    }
}

impl<T: Real> PruneBackend<T> for SplatBackend {
    fn scores(&mut self, scene: &GaussianScene<T>, views: &[View<T>]) -> Result<GradientScore<T>, RenderError> {
        render::accumulate_scores(scene, views, &self.finetune.raster, &self.finetune.loss)
    }

    fn finetune(
        &mut self,
        scene: &GaussianScene<T>,
        views: &[View<T>],
        steps: usize,
    ) -> Result<GaussianScene<T>, RenderError> {
        let seed = self.seed;
        self.seed = self.seed.wrapping_add(1);
        render::finetune(scene, views, steps, &self.finetune, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub count_before: usize,
    pub kept_count: usize,
    pub removed_count: usize,
    pub opacity_threshold: f64,
    pub gradient_threshold: f64,
}

impl RoundSummary {
    fn new(round: usize, report: &PruneReport) -> Self {
        Self {
            round,
            count_before: report.kept_mask.len(),
            kept_count: report.kept_count,
            removed_count: report.removed_count,
            opacity_threshold: report.opacity_threshold,
            gradient_threshold: report.gradient_threshold,
        }
    }
}

/// `rounds` × {score → prune → fine-tune}, then a final fine-tune.
pub fn prune_finetune_loop<T: Real, B: PruneBackend<T>>(
    scene: &GaussianScene<T>,
    views: &[View<T>],
    cfg: &PruneConfig,
    backend: &mut B,
) -> Result<(GaussianScene<T>, Vec<RoundSummary>), PruneError> {
    cfg.validate()?;
    let mut current = scene.clone();
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let scores = backend.scores(&current, views)?;
        let (pruned, report) = gap_prune(&current, &scores, cfg.gamma_iter)?;
        history.push(RoundSummary::new(round, &report));
        current = backend.finetune(&pruned, views, cfg.prune_interval)?;
    }
    current = backend.finetune(&current, views, cfg.final_finetune_steps)?;
    Ok((current, history))
}
