//! Gradient scores for pruning and adaptive-moment fine-tuning.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::LossConfig;
use super::raster::{backward_with, RasterConfig};
use super::{Camera, Image, RenderError, SceneGradients};
use crate::scalar::Real;
use crate::scene::{Attribute, GaussianScene, GradientScore, PARAMS_PER_GAUSSIAN};

/// A training or evaluation view: camera plus ground-truth image.
#[derive(Debug, Clone, PartialEq)]
pub struct View<T> {
    pub camera: Camera,
    pub image: Image<T>,
}

impl<T: Real> View<T> {
    pub fn cast<U: Real>(&self) -> View<U> {
        View {
            camera: self.camera.clone(),
            image: self.image.cast(),
        }
    }
}

/// Per-attribute learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub rotation: f64,
    pub log_scale: f64,
    pub opacity_logit: f64,
    pub sh_dc: f64,
    pub sh_rest: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            rotation: 1e-3,
            log_scale: 5e-3,
            opacity_logit: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest: 2.5e-3 / 20.0,
        }
    }
}

impl LearningRates {
    pub fn zero() -> Self {
        Self {
            position: 0.0,
            rotation: 0.0,
            log_scale: 0.0,
            opacity_logit: 0.0,
            sh_dc: 0.0,
            sh_rest: 0.0,
        }
    }

    pub fn get(&self, attr: Attribute) -> f64 {
        match attr {
            Attribute::Position => self.position,
            Attribute::Rotation => self.rotation,
            Attribute::LogScale => self.log_scale,
            Attribute::OpacityLogit => self.opacity_logit,
            Attribute::ShDc => self.sh_dc,
            Attribute::ShRest => self.sh_rest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub learning_rates: LearningRates,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub raster: RasterConfig,
    pub loss: LossConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            learning_rates: LearningRates::default(),
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-15,
            raster: RasterConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

/// Adam moments for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    steps: i32,
    beta1: T,
    beta2: T,
    epsilon: T,
}

impl<T: Real> Adam<T> {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            steps: 0,
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            epsilon: T::of(epsilon),
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.steps += 1;
        let one = T::one();
        let c1 = one - self.beta1.powi(self.steps);
        let c2 = one - self.beta2.powi(self.steps);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (one - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (one - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Stateful optimizer over every attribute group of one scene.
pub struct Finetuner<T> {
    cfg: FinetuneConfig,
    adams: Vec<Adam<T>>,
    rng: ChaCha8Rng,
}

impl<T: Real> Finetuner<T> {
    pub fn new(scene: &GaussianScene<T>, cfg: FinetuneConfig, seed: u64) -> Self {
        let adams = Attribute::ALL
            .iter()
            .map(|&a| Adam::new(scene.group(a).len(), cfg.beta1, cfg.beta2, cfg.epsilon))
            .collect();
        Self {
            cfg,
            adams,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn config(&self) -> &FinetuneConfig {
        &self.cfg
    }

    /// Draws the next training view index.
    pub fn pick_view(&mut self, n_views: usize) -> usize {
        self.rng.gen_range(0..n_views)
    }

    pub fn apply(&mut self, scene: &mut GaussianScene<T>, grads: &SceneGradients<T>) {
        for (k, &attr) in Attribute::ALL.iter().enumerate() {
            let lr = self.cfg.learning_rates.get(attr);
            if lr == 0.0 {
                continue;
            }
            self.adams[k].step(scene.group_mut(attr), grads.group(attr), T::of(lr));
        }
    }

    /// One optimization step on a randomly drawn view; returns that view's loss.
    pub fn step(&mut self, scene: &mut GaussianScene<T>, views: &[View<T>]) -> Result<T, RenderError> {
        if views.is_empty() {
            return Err(RenderError::InvalidInput("fine-tuning needs at least one view".into()));
        }
        let view = &views[self.pick_view(views.len())];
        let (loss, grads) = backward_with(scene, &view.camera, &view.image, &self.cfg.raster, &self.cfg.loss)?;
        self.apply(scene, &grads);
        Ok(loss)
    }
}

/// Runs `steps` Adam iterations, one seeded random view per step.
pub fn finetune<T: Real>(
    scene: &GaussianScene<T>,
    views: &[View<T>],
    steps: usize,
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<GaussianScene<T>, RenderError> {
    let mut out = scene.clone();
    if steps == 0 {
        return Ok(out);
    }
    let mut opt = Finetuner::new(&out, *cfg, seed);
    for _ in 0..steps {
        opt.step(&mut out, views)?;
    }
    Ok(out)
}

/// Mean over views of the mean absolute raw-parameter gradient of each Gaussian.
pub fn accumulate_scores<T: Real>(
    scene: &GaussianScene<T>,
    views: &[View<T>],
    raster: &RasterConfig,
    loss: &LossConfig,
) -> Result<GradientScore<T>, RenderError> {
    if views.is_empty() {
        return Err(RenderError::InvalidInput("scoring needs at least one view".into()));
    }
    let n = scene.len();
    let mut scores = vec![T::zero(); n];
    for view in views {
        let (_, grads) = backward_with(scene, &view.camera, &view.image, raster, loss)?;
        for &attr in &Attribute::ALL {
            let k = attr.arity();
            for (s, chunk) in scores.iter_mut().zip(grads.group(attr).chunks_exact(k)) {
                *s += chunk.iter().map(|g| g.abs()).sum();
            }
        }
    }
    let denom = T::of((views.len() * PARAMS_PER_GAUSSIAN) as f64);
    for s in scores.iter_mut() {
        *s /= denom;
    }
    Ok(GradientScore::new(scores)?)
}
