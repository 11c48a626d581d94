//! Learned step size quantization of scene attributes.
//!
//! Each attribute group carries one step Δ. A value v maps to the integer
//! code `round(clip(v/Δ, -Q_N, Q_P))` and back to `code·Δ`. The backward pass
//! treats rounding as identity (straight-through) and learns Δ from the
//! piecewise gradient of the dequantized value.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render::{backward_with, Finetuner, FinetuneConfig, RenderError, View, Adam};
use crate::scalar::Real;
use crate::scene::{Attribute, GaussianScene};

/// Smallest step an initializer or update may produce.
pub const MIN_STEP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuantError {
    #[error("bit depth {0} outside [2, 32]")]
    InvalidBits(u8),
    #[error("step size must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("cannot quantize non-finite value {0}")]
    NonFinite(f64),
    #[error("code {code} outside [{min}, {max}]")]
    CodeOutOfRange { code: i64, min: i64, max: i64 },
    #[error("cannot initialize a step from an empty array")]
    Empty,
    #[error("{attribute}: {message}")]
    Shape {
        attribute: Attribute,
        message: String,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizerState {
    pub attribute: Attribute,
    pub bits: u8,
    pub signed: bool,
    /// Δ
    pub step: f64,
}

impl QuantizerState {
    pub fn new(attribute: Attribute, bits: u8, signed: bool, step: f64) -> Result<Self, QuantError> {
        let qs = Self {
            attribute,
            bits,
            signed,
            step,
        };
        qs.validate()?;
        Ok(qs)
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        if !(2..=32).contains(&self.bits) {
            return Err(QuantError::InvalidBits(self.bits));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(QuantError::InvalidStep(self.step));
        }
        Ok(())
    }

    /// Number of negative levels; codes are bounded below by `-q_n`.
    pub fn q_n(&self) -> i64 {
        if self.signed {
            1i64 << (self.bits - 1)
        } else {
            0
        }
    }

    pub fn q_p(&self) -> i64 {
        if self.signed {
            (1i64 << (self.bits - 1)) - 1
        } else {
            (1i64 << self.bits) - 1
        }
    }

    pub fn contains(&self, code: i64) -> bool {
        (-self.q_n()..=self.q_p()).contains(&code)
    }

    /// Bytes per serialized code.
    pub fn code_width(&self) -> usize {
        (self.bits as usize).div_ceil(8)
    }
}

/// `round_half_even(clip(v/Δ, -Q_N, Q_P))`, evaluated in `f64`.
pub fn quantize<T: Real>(value: T, qs: &QuantizerState) -> Result<i64, QuantError> {
    let v = value.as_f64();
    if !v.is_finite() {
        return Err(QuantError::NonFinite(v));
    }
    let z = (v / qs.step).clamp(-(qs.q_n() as f64), qs.q_p() as f64);
    Ok(z.round_ties_even() as i64)
}

pub fn dequantize<T: Real>(code: i64, qs: &QuantizerState) -> Result<T, QuantError> {
    if !qs.contains(code) {
        return Err(QuantError::CodeOutOfRange {
            code,
            min: -qs.q_n(),
            max: qs.q_p(),
        });
    }
    Ok(T::of(code as f64 * qs.step))
}

/// ∂v̂/∂Δ for the quantize–dequantize composition.
pub fn step_gradient<T: Real>(value: T, qs: &QuantizerState) -> f64 {
    let z = value.as_f64() / qs.step;
    let (lo, hi) = (-(qs.q_n() as f64), qs.q_p() as f64);
    if z <= lo {
        lo
    } else if z >= hi {
        hi
    } else {
        -z + z.round_ties_even()
    }
}

/// Straight-through ∂v̂/∂v: one inside the clipping range, zero outside.
pub fn value_gradient<T: Real>(value: T, qs: &QuantizerState) -> f64 {
    let z = value.as_f64() / qs.step;
    if -(qs.q_n() as f64) < z && z < qs.q_p() as f64 {
        1.0
    } else {
        0.0
    }
}

/// Δ₀ = 2·mean|v| / √Q_P, floored at [`MIN_STEP`].
pub fn init_step<T: Real>(values: &[T], bits: u8, signed: bool) -> Result<f64, QuantError> {
    if values.is_empty() {
        return Err(QuantError::Empty);
    }
    let probe = QuantizerState {
        attribute: Attribute::Position,
        bits,
        signed,
        step: 1.0,
    };
    probe.validate()?;
    let mean = values.iter().map(|v| v.as_f64().abs()).sum::<f64>() / values.len() as f64;
    Ok((2.0 * mean / (probe.q_p() as f64).sqrt()).max(MIN_STEP))
}

/// Bit depth per attribute group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttributeBits {
    pub position: u8,
    pub rotation: u8,
    pub log_scale: u8,
    pub opacity_logit: u8,
    pub sh_dc: u8,
    pub sh_rest: u8,
}

impl Default for AttributeBits {
    fn default() -> Self {
        Self {
            position: 32,
            rotation: 32,
            log_scale: 32,
            opacity_logit: 32,
            sh_dc: 8,
            sh_rest: 8,
        }
    }
}

impl AttributeBits {
    pub fn uniform(bits: u8) -> Self {
        Self {
            position: bits,
            rotation: bits,
            log_scale: bits,
            opacity_logit: bits,
            sh_dc: bits,
            sh_rest: bits,
        }
    }

    pub fn get(&self, attr: Attribute) -> u8 {
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

/// One quantizer per attribute group, in [`Attribute::ALL`] order.
pub type QuantizerSet = [QuantizerState; 6];

/// Signed quantizers with steps initialized from the scene's values.
pub fn init_quantizers<T: Real>(
    scene: &GaussianScene<T>,
    bits: &AttributeBits,
) -> Result<QuantizerSet, QuantError> {
    let mut out = Vec::with_capacity(6);
    for attr in Attribute::ALL {
        let b = bits.get(attr);
        let values = scene.group(attr);
        let step = if values.is_empty() {
            QuantizerState::new(attr, b, true, 1.0)?;
            1.0
        } else {
            init_step(values, b, true)?
        };
        out.push(QuantizerState::new(attr, b, true, step)?);
    }
    Ok(out.try_into().expect("six attributes"))
}

/// Integer codes of every attribute group plus their quantizers.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedScene {
    pub count: usize,
    /// Codes per attribute in [`Attribute::ALL`] order, `count × arity` each.
    pub codes: [Vec<i64>; 6],
    pub quantizers: QuantizerSet,
}

impl QuantizedScene {
    pub fn codes(&self, attr: Attribute) -> &[i64] {
        &self.codes[attr.id() as usize]
    }

    pub fn quantizer(&self, attr: Attribute) -> &QuantizerState {
        &self.quantizers[attr.id() as usize]
    }

    pub fn validate(&self) -> Result<(), QuantError> {
        for attr in Attribute::ALL {
            let qs = self.quantizer(attr);
            qs.validate()?;
            if qs.attribute != attr {
                return Err(QuantError::Shape {
                    attribute: attr,
                    message: format!("quantizer slot holds {}", qs.attribute),
                });
            }
            let codes = self.codes(attr);
            if codes.len() != self.count * attr.arity() {
                return Err(QuantError::Shape {
                    attribute: attr,
                    message: format!("{} codes for {} gaussians", codes.len(), self.count),
                });
            }
            if let Some(&code) = codes.iter().find(|&&c| !qs.contains(c)) {
                return Err(QuantError::CodeOutOfRange {
                    code,
                    min: -qs.q_n(),
                    max: qs.q_p(),
                });
            }
        }
        Ok(())
    }

    /// Returns a scene whose i-th Gaussian is `self[order[i]]`.
    pub fn permute(&self, order: &[usize]) -> Self {
        let codes = std::array::from_fn(|k| {
            let arity = Attribute::ALL[k].arity();
            let src = &self.codes[k];
            order
                .iter()
                .flat_map(|&i| src[i * arity..(i + 1) * arity].iter().copied())
                .collect()
        });
        Self {
            count: order.len(),
            codes,
            quantizers: self.quantizers,
        }
    }

    pub fn dequantize<T: Real>(&self) -> Result<GaussianScene<T>, QuantError> {
        let mut scene = GaussianScene::zeros(self.count);
        for attr in Attribute::ALL {
            let qs = self.quantizer(attr);
            for (dst, &code) in scene.group_mut(attr).iter_mut().zip(self.codes(attr)) {
                *dst = dequantize(code, qs)?;
            }
        }
        Ok(scene)
    }

    /// Positions reconstructed in `f64`, as used for Morton ordering.
    pub fn positions_f64(&self) -> Vec<[f64; 3]> {
        let qs = self.quantizer(Attribute::Position);
        self.codes(Attribute::Position)
            .chunks_exact(3)
            .map(|c| [c[0] as f64 * qs.step, c[1] as f64 * qs.step, c[2] as f64 * qs.step])
            .collect()
    }
}

pub fn quantize_scene<T: Real>(
    scene: &GaussianScene<T>,
    quantizers: &QuantizerSet,
) -> Result<QuantizedScene, QuantError> {
    scene.validate().map_err(RenderError::from)?;
    let codes = Attribute::ALL.map(|attr| {
        let qs = &quantizers[attr.id() as usize];
        scene.group(attr).iter().map(|&v| quantize(v, qs)).collect::<Result<Vec<_>, _>>()
    });
    let [a, b, c, d, e, f] = codes;
    let q = QuantizedScene {
        count: scene.len(),
        codes: [a?, b?, c?, d?, e?, f?],
        quantizers: *quantizers,
    };
    q.validate()?;
    Ok(q)
}

/// dequantize∘quantize applied to every raw parameter.
pub fn fake_quantize<T: Real>(
    scene: &GaussianScene<T>,
    quantizers: &QuantizerSet,
) -> Result<GaussianScene<T>, QuantError> {
    quantize_scene(scene, quantizers)?.dequantize()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QatConfig {
    pub finetune: FinetuneConfig,
    /// Adam learning rate for Δ, relative to the initial step of each group.
    pub step_lr: f64,
    /// Attribute groups whose Δ stays fixed.
    pub freeze_steps: bool,
    /// Scale step gradients by 1/√(N·Q_P).
    pub gradient_scale: bool,
}

impl Default for QatConfig {
    fn default() -> Self {
        Self {
            finetune: FinetuneConfig::default(),
            step_lr: 1e-2,
            freeze_steps: false,
            gradient_scale: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QatOutcome<T> {
    pub scene: GaussianScene<T>,
    pub quantizers: QuantizerSet,
    /// Loss of the fake-quantized rendering at each step, before its update.
    pub losses: Vec<f64>,
}

/// Quantization-aware fine-tuning: renders from fake-quantized parameters,
/// passes parameter gradients straight through and learns every Δ.
pub fn qat_finetune<T: Real>(
    scene: &GaussianScene<T>,
    views: &[View<T>],
    quantizers: &QuantizerSet,
    steps: usize,
    cfg: &QatConfig,
    seed: u64,
) -> Result<QatOutcome<T>, QuantError> {
    let mut params = scene.clone();
    let mut qs = *quantizers;
    let mut losses = Vec::with_capacity(steps);
    if steps == 0 {
        return Ok(QatOutcome {
            scene: params,
            quantizers: qs,
            losses,
        });
    }
    let base_steps = qs.map(|q| q.step);
    let mut opt = Finetuner::new(&params, cfg.finetune, seed);
    let mut step_adam: Vec<Adam<f64>> = (0..6)
        .map(|_| Adam::new(1, cfg.finetune.beta1, cfg.finetune.beta2, cfg.finetune.epsilon))
        .collect();

    for _ in 0..steps {
        if views.is_empty() {
            return Err(RenderError::InvalidInput("QAT needs at least one view".into()).into());
        }
        let view = &views[opt.pick_view(views.len())];
        let fq = fake_quantize(&params, &qs)?;
        let fc = opt.config();
        let (loss, mut grads) = backward_with(&fq, &view.camera, &view.image, &fc.raster, &fc.loss)?;
        losses.push(loss.as_f64());

        for attr in Attribute::ALL {
            let k = attr.id() as usize;
            let q = qs[k];
            let values = params.group(attr);
            let g = grads.group_mut(attr);
            let mut d_step = 0.0;
            for (gi, &v) in g.iter_mut().zip(values) {
                d_step += gi.as_f64() * step_gradient(v, &q);
                *gi *= T::of(value_gradient(v, &q));
            }
            if cfg.freeze_steps || values.is_empty() {
                continue;
            }
            if cfg.gradient_scale {
                d_step /= (values.len() as f64 * q.q_p() as f64).sqrt();
            }
            let mut s = [q.step];
            step_adam[k].step(&mut s, &[d_step], cfg.step_lr * base_steps[k]);
            qs[k].step = s[0].max(MIN_STEP);
        }
        opt.apply(&mut params, &grads);
    }
    Ok(QatOutcome {
        scene: params,
        quantizers: qs,
        losses,
    })
}
