//! Image-quality and compression-rate metrics.

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::render::Image;
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("image dimensions differ: {0}")]
    DimensionMismatch(String),
    #[error("images must be at least {window}×{window} for SSIM, got {width}×{height}")]
    TooSmall {
        window: usize,
        width: usize,
        height: usize,
    },
    #[error("{0}")]
    InvalidSize(String),
}

/// Structural-similarity constants (dynamic range 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            c1: 0.01 * 0.01,
            c2: 0.03 * 0.03,
        }
    }
}

impl SsimConfig {
    /// Normalized 1D Gaussian taps; the 2D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let c = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - c;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }
}

fn same_dims<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(), MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::DimensionMismatch(format!(
            "{}×{} vs {}×{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB for images in [0, 1]; `+∞` when identical.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    same_dims(a, b)?;
    if a.data.is_empty() {
        return Err(MetricError::InvalidSize("empty images".into()));
    }
    let sse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = x.as_f64() - y.as_f64();
            d * d
        })
        .sum();
    let mse = sse / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean SSIM over all valid window positions and the three channels.
pub fn ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64, MetricError> {
    ssim_with(a, b, &SsimConfig::default())
}

pub fn ssim_with<T: Real>(a: &Image<T>, b: &Image<T>, cfg: &SsimConfig) -> Result<f64, MetricError> {
    Ok(ssim_value_and_grad(&a.cast::<f64>(), &b.cast::<f64>(), cfg, false)?.0)
}

/// SSIM and, when requested, its gradient with respect to `a`.
pub(crate) fn ssim_value_and_grad<T: Real>(
    a: &Image<T>,
    b: &Image<T>,
    cfg: &SsimConfig,
    want_grad: bool,
) -> Result<(T, Vec<T>), MetricError> {
    same_dims(a, b)?;
    let (w, h, k) = (a.width, a.height, cfg.window);
    if w < k || h < k {
        return Err(MetricError::TooSmall {
            window: k,
            width: w,
            height: h,
        });
    }
    let taps: Vec<T> = cfg.taps().into_iter().map(T::of).collect();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let c1 = T::of(cfg.c1);
    let c2 = T::of(cfg.c2);
    let two = T::one() + T::one();
    let norm = T::one() / T::of((ow * oh * 3) as f64);

    let mut total = T::zero();
    let mut grad = if want_grad {
        vec![T::zero(); a.data.len()]
    } else {
        Vec::new()
    };
    let mut x = vec![T::zero(); w * h];
    let mut y = vec![T::zero(); w * h];
    let mut prod = vec![T::zero(); w * h];
    for ch in 0..3 {
        for i in 0..w * h {
            x[i] = a.data[i * 3 + ch];
            y[i] = b.data[i * 3 + ch];
        }
        let mu_x = filter_valid(&x, w, h, &taps);
        let mu_y = filter_valid(&y, w, h, &taps);
        for i in 0..w * h {
            prod[i] = x[i] * x[i];
        }
        let e_xx = filter_valid(&prod, w, h, &taps);
        for i in 0..w * h {
            prod[i] = y[i] * y[i];
        }
        let e_yy = filter_valid(&prod, w, h, &taps);
        for i in 0..w * h {
            prod[i] = x[i] * y[i];
        }
        let e_xy = filter_valid(&prod, w, h, &taps);

        let n = ow * oh;
        let mut d_mu = vec![T::zero(); if want_grad { n } else { 0 }];
        let mut d_exx = d_mu.clone();
        let mut d_exy = d_mu.clone();
        for o in 0..n {
            let (mx, my) = (mu_x[o], mu_y[o]);
            let var_x = e_xx[o] - mx * mx;
            let var_y = e_yy[o] - my * my;
            let cov = e_xy[o] - mx * my;
            let a1 = two * mx * my + c1;
            let a2 = two * cov + c2;
            let b1 = mx * mx + my * my + c1;
            let b2 = var_x + var_y + c2;
            let s = (a1 * a2) / (b1 * b2);
            total += s;
            if want_grad {
                let ds_a1 = a2 / (b1 * b2);
                let ds_a2 = a1 / (b1 * b2);
                let ds_b1 = -s / b1;
                let ds_b2 = -s / b2;
                d_mu[o] = (ds_a1 * two * my + ds_b1 * two * mx - ds_a2 * two * my
                    - ds_b2 * two * mx)
                    * norm;
                d_exx[o] = ds_b2 * norm;
                d_exy[o] = ds_a2 * two * norm;
            }
        }
        if want_grad {
            let g_mu = filter_transpose(&d_mu, w, h, &taps);
            let g_exx = filter_transpose(&d_exx, w, h, &taps);
            let g_exy = filter_transpose(&d_exy, w, h, &taps);
            for i in 0..w * h {
                grad[i * 3 + ch] = g_mu[i] + two * x[i] * g_exx[i] + y[i] * g_exy[i];
            }
        }
    }
    Ok((total / T::of((ow * oh * 3) as f64), grad))
}

/// Separable "valid" correlation of a `w×h` plane with the outer-product window.
fn filter_valid<T: Real>(src: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut rows = vec![T::zero(); ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..k).map(|t| taps[t] * src[y * w + x + t]).sum();
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|t| taps[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters window-position values back onto the plane.
fn filter_transpose<T: Real>(src: &[T], w: usize, h: usize, taps: &[T]) -> Vec<T> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut cols = vec![T::zero(); ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = src[y * ow + x];
            for t in 0..k {
                cols[(y + t) * ow + x] += taps[t] * v;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = cols[y * ow + x];
            for t in 0..k {
                out[y * w + x + t] += taps[t] * v;
            }
        }
    }
    out
}

/// Serializes decibels, writing `"inf"` for identical images.
pub fn serialize_db<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

/// Quality and size summary emitted by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    /// dB; serialized as the string `"inf"` for identical images.
    #[serde(serialize_with = "serialize_db")]
    pub psnr: f64,
    pub ssim: f64,
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
    pub compression_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SizeReport {
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
    pub compression_ratio: f64,
}

pub fn size_report(compressed_bytes: u64, raw_bytes: u64) -> Result<SizeReport, MetricError> {
    if compressed_bytes == 0 {
        return Err(MetricError::InvalidSize("compressed size is zero".into()));
    }
    if raw_bytes == 0 {
        return Err(MetricError::InvalidSize("original size is zero".into()));
    }
    Ok(SizeReport {
        raw_bytes,
        compressed_bytes,
        compression_ratio: raw_bytes as f64 / compressed_bytes as f64,
    })
}

pub fn quality_report<T: Real>(
    rendered: &Image<T>,
    reference: &Image<T>,
    compressed_bytes: u64,
    raw_bytes: u64,
) -> Result<QualityReport, MetricError> {
    let size = size_report(compressed_bytes, raw_bytes)?;
    Ok(QualityReport {
        psnr: psnr(rendered, reference)?,
        ssim: ssim(rendered, reference)?,
        raw_bytes: size.raw_bytes,
        compressed_bytes: size.compressed_bytes,
        compression_ratio: size.compression_ratio,
    })
}

/// Counts of activated opacities in `bins` equal-width bins over [0, 1].
pub fn opacity_histogram<T: Real>(opacities: &[T], bins: usize) -> Vec<u64> {
    let mut hist = vec![0u64; bins];
    if bins == 0 {
        return hist;
    }
    for &a in opacities {
        let bin = (a.as_f64().clamp(0.0, 1.0) * bins as f64).floor() as usize;
        hist[bin.min(bins - 1)] += 1;
    }
    hist
}

/// First-order entropy in bits of a histogram; zero for an empty one.
pub fn histogram_entropy(hist: &[u64]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn opacity_histogram_bins() {
        let h = opacity_histogram(&[0.0f64, 0.004, 0.5, 0.999, 1.0], 256);
        assert_eq!(h.iter().sum::<u64>(), 5);
        assert_eq!((h[0], h[1], h[128], h[255]), (1, 1, 1, 2));
        assert_eq!(histogram_entropy(&[3, 0, 0]), 0.0);
        assert_eq!(histogram_entropy(&[2, 2]), 1.0);
        assert_eq!(histogram_entropy(&[]), 0.0);
    }

    fn random_image(w: usize, h: usize, seed: u64) -> Image<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Image::from_data(w, h, (0..w * h * 3).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    /// Direct per-window evaluation with the full 2D kernel.
    fn ssim_reference(a: &Image<f64>, b: &Image<f64>) -> f64 {
        let cfg = SsimConfig::default();
        let k = cfg.window;
        let c = (k as f64 - 1.0) / 2.0;
        let mut kernel = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let (di, dj) = (i as f64 - c, j as f64 - c);
                kernel[i * k + j] = (-(di * di + dj * dj) / (2.0 * cfg.sigma * cfg.sigma)).exp();
            }
        }
        let s: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|v| *v /= s);

        let (ow, oh) = (a.width - k + 1, a.height - k + 1);
        let mut total = 0.0;
        for ch in 0..3 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..k {
                        for j in 0..k {
                            let wgt = kernel[i * k + j];
                            let x = a.pixel(ox + j, oy + i)[ch];
                            let y = b.pixel(ox + j, oy + i)[ch];
                            mx += wgt * x;
                            my += wgt * y;
                            sxx += wgt * x * x;
                            syy += wgt * y * y;
                            sxy += wgt * x * y;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cxy = sxy - mx * my;
                    total += ((2.0 * mx * my + cfg.c1) * (2.0 * cxy + cfg.c2))
                        / ((mx * mx + my * my + cfg.c1) * (vx + vy + cfg.c2));
                }
            }
        }
        total / (ow * oh * 3) as f64
    }

    #[test]
    fn psnr_examples() {
        let a = Image::<f64>::filled(4, 4, 0.3);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let zero = Image::<f64>::new(4, 4);
        let one = Image::<f64>::filled(4, 4, 1.0);
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
        let b = Image::<f64>::filled(4, 4, 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &Image::new(4, 5)).is_err());
    }

    #[test]
    fn ssim_identity_and_negation() {
        let a = random_image(16, 16, 1);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let binary = Image::from_data(
            16,
            16,
            a.data.iter().map(|&v| if v > 0.5 { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let negated = Image::from_data(16, 16, binary.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&binary, &negated).unwrap() < 0.0);
    }

    #[test]
    fn ssim_matches_direct_reference() {
        let a = random_image(16, 16, 7);
        let b = random_image(16, 16, 8);
        let fast = ssim(&a, &b).unwrap();
        let slow = ssim_reference(&a, &b);
        assert!((fast - slow).abs() < 1e-6, "{fast} vs {slow}");
        let c = random_image(23, 17, 9);
        let d = Image::from_data(23, 17, c.data.iter().map(|v| v * 0.8 + 0.05).collect()).unwrap();
        assert!((ssim(&c, &d).unwrap() - ssim_reference(&c, &d)).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        let a = Image::<f64>::new(10, 20);
        assert!(matches!(ssim(&a, &a), Err(MetricError::TooSmall { .. })));
        assert!(ssim(&Image::<f64>::new(12, 12), &Image::new(12, 13)).is_err());
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = random_image(13, 12, 3);
        let b = random_image(13, 12, 4);
        let cfg = SsimConfig::default();
        let (_, grad) = ssim_value_and_grad(&a, &b, &cfg, true).unwrap();
        let h = 1e-6;
        for idx in [0usize, 17, 100, 250, 13 * 12 * 3 - 1] {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[idx] += h;
            m.data[idx] -= h;
            let fd = (ssim_value_and_grad(&p, &b, &cfg, false).unwrap().0
                - ssim_value_and_grad(&m, &b, &cfg, false).unwrap().0)
                / (2.0 * h);
            assert!((fd - grad[idx]).abs() < 1e-8, "{idx}: {fd} vs {}", grad[idx]);
        }
    }

    #[test]
    fn size_report_examples() {
        assert_eq!(size_report(100, 100).unwrap().compression_ratio, 1.0);
        assert_eq!(size_report(250, 1000).unwrap().compression_ratio, 4.0);
        let r = size_report(64 * 1024 * 1024, 1400 * 1024 * 1024).unwrap();
        assert!((r.compression_ratio - 21.875).abs() < 1e-12);
        assert!(size_report(0, 10).is_err());
    }

    #[test]
    fn infinite_psnr_serializes_as_sentinel() {
        let a = Image::<f64>::filled(11, 11, 0.5);
        let r = quality_report(&a, &a, 10, 20).unwrap();
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"psnr\":\"inf\""), "{json}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn psnr_symmetric_and_ssim_bounded(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let a = random_image(12, 12, seed_a);
            let b = random_image(12, 12, seed_b + 1000);
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            let s = ssim(&a, &b).unwrap();
            prop_assert!((-1.0..=1.0).contains(&s));
        }
    }
}
