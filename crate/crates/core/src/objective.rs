//! Training losses and image quality metrics.
//!
//! The mixed-partial-derivative loss sums, over a set of derivative
//! multi-indices `alpha`, the decibel value of the scaled Euclidean norm of
//! the filtered error:
//!
//! ```text
//! L(e) = sum_alpha 20 * log10(max(lambda * ||D^alpha * e||_2, eps)),  lambda = 1 / (2N)
//! ```
//!
//! with `N` the pixel count `H * W`. Minimizing it shrinks the error and its
//! first and second derivatives. [`LossSign::AsPublished`] negates the sum.

use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::preprocess::{derivative_stencil, stencil_same, stencil_same_adjoint};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor inside every logarithm.
pub const LOG_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LossSign {
    /// Lower is better; gradient descent reduces the derivative norms.
    #[default]
    Minimize,
    /// `-20 log10(...)` per term, which grows as the norms shrink.
    AsPublished,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedDerivativeLossConfig {
    /// Maximum total derivative order `|alpha|` (at most 2).
    pub order: u8,
    /// Multi-indices `(order in x, order in y)` left out of the sum.
    pub excluded: Vec<(u8, u8)>,
    pub epsilon: f64,
    pub sign: LossSign,
}

impl Default for MixedDerivativeLossConfig {
    fn default() -> Self {
        Self { order: 2, excluded: vec![(1, 1)], epsilon: LOG_EPSILON, sign: LossSign::Minimize }
    }
}

impl MixedDerivativeLossConfig {
    /// Included multi-indices, ordered by total degree then by x order
    /// (descending).
    pub fn multi_indices(&self) -> Result<Vec<(u8, u8)>> {
        if self.order > 2 {
            return Err(Error::Config(format!(
                "derivative order {} not supported (at most 2)",
                self.order
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("log floor must be positive, got {}", self.epsilon)));
        }
        let mut set = Vec::new();
        for total in 0..=self.order {
            for ax in (0..=total).rev() {
                let alpha = (ax, total - ax);
                if !self.excluded.contains(&alpha) {
                    set.push(alpha);
                }
            }
        }
        Ok(set)
    }
}

fn image_dims<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        [h, w] => Ok((1, h, w)),
        ref other => Err(Error::Dimension(format!("{what}: expected (C, H, W) or (H, W), got {other:?}"))),
    }
}

/// Mixed-partial-derivative loss of a prediction error `output - target`.
/// Returns the loss and its gradient with respect to the error.
pub fn mixed_derivative_loss<T: Scalar>(
    prediction_error: &Tensor<T>,
    config: &MixedDerivativeLossConfig,
) -> Result<(f64, Tensor<T>)> {
    let (c, h, w) = image_dims(prediction_error, "mixed_derivative_loss")?;
    let alphas = config.multi_indices()?;
    let lambda = 1.0 / (2.0 * (h * w) as f64);
    let plane = h * w;
    let mut loss = 0.0;
    let mut grad = prediction_error.zeros_like();
    let mut filtered = vec![T::zero(); c * plane];
    for alpha in alphas {
        let stencil = derivative_stencil(alpha).expect("order checked");
        filtered.fill(T::zero());
        for ch in 0..c {
            let src = &prediction_error.data()[ch * plane..(ch + 1) * plane];
            stencil_same(src, h, w, &stencil, T::one(), &mut filtered[ch * plane..(ch + 1) * plane]);
        }
        let norm_sq: f64 = filtered.iter().map(|v| v.to_f64_lossy().powi(2)).sum();
        let norm = norm_sq.sqrt();
        let scaled = lambda * norm;
        if scaled > config.epsilon {
            loss += 20.0 * scaled.log10();
            // d/de 20 log10(lambda ||f||) = 20 / ln10 * D^T f / ||f||^2
            let coeff = T::of(20.0 / (LN_10 * norm_sq));
            for ch in 0..c {
                let g = &mut grad.data_mut()[ch * plane..(ch + 1) * plane];
                stencil_same_adjoint(&filtered[ch * plane..(ch + 1) * plane], h, w, &stencil, coeff, g);
            }
        } else {
            loss += 20.0 * config.epsilon.log10();
        }
    }
    if config.sign == LossSign::AsPublished {
        loss = -loss;
        grad = grad.scale(-T::one());
    }
    if !loss.is_finite() || !grad.all_finite() {
        return Err(Error::Numeric("mixed derivative loss is not finite".into()));
    }
    Ok((loss, grad))
}

/// `10 * log10(MSE + eps^2)`: minimizing it maximizes PSNR. Returns the loss
/// and its gradient with respect to `prediction`.
pub fn psnr_loss<T: Scalar>(prediction: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    prediction.expect_same_shape(target, "psnr_loss")?;
    let n = prediction.len() as f64;
    let mse = mse(prediction, target)?;
    let denom = mse + LOG_EPSILON * LOG_EPSILON;
    let loss = 10.0 * denom.log10();
    let coeff = T::of(20.0 / (LN_10 * n * denom));
    let grad = prediction.zip_map(target, |p, t| coeff * (p - t))?;
    if !loss.is_finite() {
        return Err(Error::Numeric("psnr loss is not finite".into()));
    }
    Ok((loss, grad))
}

/// Mean squared error, accumulated in `f64`.
pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b, "mse")?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB; `+inf` for identical inputs.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, max_value: f64) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (max_value * max_value / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Separable Gaussian filter over valid window positions.
fn filter_valid(x: &[f64], h: usize, w: usize, win: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = (0..SSIM_WINDOW).map(|k| win[k] * x[y * w + ox + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = (0..SSIM_WINDOW).map(|k| win[k] * rows[(oy + k) * ow + ox]).sum();
        }
    }
    out
}

fn grayscale<T: Scalar>(t: &Tensor<T>) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = image_dims(t, "ssim")?;
    let plane = h * w;
    let mut g = vec![0.0; plane];
    for ch in 0..c {
        for (v, &x) in g.iter_mut().zip(&t.data()[ch * plane..(ch + 1) * plane]) {
            *v += x.to_f64_lossy();
        }
    }
    g.iter_mut().for_each(|v| *v /= c as f64);
    Ok((g, h, w))
}

/// Mean structural similarity of the channel-averaged images, with an
/// 11x11 Gaussian window (sigma 1.5), `C1 = 0.01^2`, `C2 = 0.03^2`, over
/// valid window positions.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.expect_same_shape(b, "ssim")?;
    let (ga, h, w) = grayscale(a)?;
    let (gb, _, _) = grayscale(b)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim: image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let win = gaussian_window();
    let mu_a = filter_valid(&ga, h, w, &win);
    let mu_b = filter_valid(&gb, h, w, &win);
    let sq = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let e_aa = filter_valid(&sq(&ga, &ga), h, w, &win);
    let e_bb = filter_valid(&sq(&gb, &gb), h, w, &win);
    let e_ab = filter_valid(&sq(&ga, &gb), h, w, &win);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        total += num / den;
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image metrics and their arithmetic means.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean_psnr = per_image.iter().map(|m| m.psnr).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|m| m.ssim).sum::<f64>() / n;
        Self { per_image, mean_psnr, mean_ssim }
    }

    /// Scores `(estimate, reference)` pairs in index order.
    pub fn evaluate<T: Scalar>(pairs: &[(Tensor<T>, Tensor<T>)]) -> Result<Self> {
        let per_image = pairs
            .iter()
            .map(|(est, reference)| {
                Ok(ImageMetrics { psnr: psnr(est, reference, 1.0)?, ssim: ssim(est, reference)? })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_images(per_image))
    }
}
