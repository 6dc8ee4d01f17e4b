//! Per-frame quality metrics.
//!
//! MSE, MAE and BCE are sums over the pixels of one frame (the Moving-MNIST
//! reporting convention); `mse_pixel` is the per-pixel mean. SSIM uses an
//! 11×11 Gaussian window (σ = 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1,
//! averaged over valid window positions (no padding) and channels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;
/// PSNR reported for identical frames.
pub const PSNR_CAP: f64 = 100.0;
/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-7;

/// Geometry of one frame, `[C, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl FrameShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    /// Sum of squared errors over the frame.
    pub mse: f64,
    /// Sum of absolute errors over the frame.
    pub mae: f64,
    pub ssim: f64,
    pub psnr: f64,
    /// Summed binary cross-entropy of the target under the prediction.
    pub bce: f64,
    /// Mean squared error per pixel.
    pub mse_pixel: f64,
}

impl FrameMetrics {
    pub fn add(&self, o: &Self) -> Self {
        Self {
            mse: self.mse + o.mse,
            mae: self.mae + o.mae,
            ssim: self.ssim + o.ssim,
            psnr: self.psnr + o.psnr,
            bce: self.bce + o.bce,
            mse_pixel: self.mse_pixel + o.mse_pixel,
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            mse: self.mse * s,
            mae: self.mae * s,
            ssim: self.ssim * s,
            psnr: self.psnr * s,
            bce: self.bce * s,
            mse_pixel: self.mse_pixel * s,
        }
    }
}

fn check_pair<T: Scalar>(pred: &[T], target: &[T], shape: FrameShape) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::invalid("empty frame"));
    }
    if pred.len() != shape.len() || target.len() != shape.len() {
        return Err(Error::shape(format!(
            "frames of {} and {} values for shape {:?}",
            pred.len(),
            target.len(),
            shape
        )));
    }
    for (what, xs) in [("prediction", pred), ("target", target)] {
        if let Some(v) = xs.iter().map(|v| v.as_f64()).find(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid(format!("{} pixel {} outside [0, 1]", what, v)));
        }
    }
    Ok(())
}

pub fn frame_metrics<T: Scalar>(pred: &[T], target: &[T], shape: FrameShape) -> Result<FrameMetrics> {
    check_pair(pred, target, shape)?;
    let (mut se, mut ae, mut bce) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(target) {
        let (p, t) = (p.as_f64(), t.as_f64());
        let d = p - t;
        se += d * d;
        ae += d.abs();
        let q = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        bce -= t * q.ln() + (1.0 - t) * (1.0 - q).ln();
    }
    let mse_pixel = se / shape.len() as f64;
    Ok(FrameMetrics {
        mse: se,
        mae: ae,
        ssim: ssim(pred, target, shape)?,
        psnr: psnr_from_mse(mse_pixel),
        bce,
        mse_pixel,
    })
}

/// `10·log10(1 / mse)` for unit dynamic range, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse_pixel: f64) -> f64 {
    if mse_pixel <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse_pixel).log10()).min(PSNR_CAP)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|d| taps[d] * x[i * w + j + d]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|d| taps[d] * rows[(i + d) * ow + j]).sum();
        }
    }
    out
}

pub fn ssim<T: Scalar>(pred: &[T], target: &[T], shape: FrameShape) -> Result<f64> {
    if pred.len() != shape.len() || target.len() != shape.len() {
        return Err(Error::shape("SSIM inputs do not match the frame shape"));
    }
    let (h, w) = (shape.height, shape.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape(format!(
            "SSIM needs frames of at least {0}×{0}, got {1}×{2}",
            SSIM_WINDOW, h, w
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let plane = h * w;
    let mut total = 0.0;
    let mut count = 0usize;
    for c in 0..shape.channels {
        let x: Vec<f64> = pred[c * plane..(c + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let y: Vec<f64> = target[c * plane..(c + 1) * plane].iter().map(|v| v.as_f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let sxx = filter_valid(&xx, h, w, &taps);
        let syy = filter_valid(&yy, h, w, &taps);
        let sxy = filter_valid(&xy, h, w, &taps);
        for i in 0..mx.len() {
            let (a, b) = (mx[i], my[i]);
            let vx = sxx[i] - a * a;
            let vy = syy[i] - b * b;
            let cov = sxy[i] - a * b;
            total += ((2.0 * a * b + C1) * (2.0 * cov + C2)) / ((a * a + b * b + C1) * (vx + vy + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Running per-frame sums, merged by exact addition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    sums: Vec<FrameMetrics>,
    count: usize,
}

impl MetricAccumulator {
    pub fn new(frames: usize) -> Self {
        Self {
            sums: vec![FrameMetrics::default(); frames],
            count: 0,
        }
    }

    /// Add one sequence's per-frame metrics.
    pub fn push(&mut self, per_frame: &[FrameMetrics]) -> Result<()> {
        if per_frame.len() != self.sums.len() {
            return Err(Error::shape(format!(
                "{} frame metrics for a {}-frame accumulator",
                per_frame.len(),
                self.sums.len()
            )));
        }
        for (s, m) in self.sums.iter_mut().zip(per_frame) {
            *s = s.add(m);
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.sums.len() != self.sums.len() {
            return Err(Error::shape("accumulators track different horizons"));
        }
        for (s, m) in self.sums.iter_mut().zip(&other.sums) {
            *s = s.add(m);
        }
        self.count += other.count;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean over sequences, per frame.
    pub fn curve(&self) -> Vec<FrameMetrics> {
        let s = 1.0 / self.count.max(1) as f64;
        self.sums.iter().map(|m| m.scale(s)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
    }

    #[test]
    fn identical_frames() {
        let s = FrameShape::new(1, 16, 16);
        let x: Vec<f64> = (0..256).map(|i| (i % 7) as f64 / 7.0).collect();
        let m = frame_metrics(&x, &x, s).unwrap();
        assert_eq!(m.mse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert!((m.ssim - 1.0).abs() < 1e-12);
        assert_eq!(m.psnr, PSNR_CAP);
    }

    #[test]
    fn constant_offset_closed_form() {
        let s = FrameShape::new(1, 64, 64);
        let t = vec![0.4f64; 4096];
        let p = vec![0.5f64; 4096];
        let m = frame_metrics(&p, &t, s).unwrap();
        assert!((m.mse - 40.96).abs() < 1e-9);
        assert!((m.mae - 409.6).abs() < 1e-9);
        assert!((m.psnr - 20.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_and_shape_errors() {
        let s = FrameShape::new(1, 11, 11);
        let ok = vec![0.5f64; 121];
        let mut bad = ok.clone();
        bad[3] = 1.5;
        assert!(frame_metrics(&bad, &ok, s).is_err());
        assert!(frame_metrics(&ok[..120], &ok, s).is_err());
        assert!(ssim(&ok[..100], &ok[..100], FrameShape::new(1, 10, 10)).is_err());
    }

    #[test]
    fn accumulator_means() {
        let mut acc = MetricAccumulator::new(2);
        let a = FrameMetrics {
            mse: 2.0,
            ..Default::default()
        };
        let b = FrameMetrics {
            mse: 4.0,
            ..Default::default()
        };
        acc.push(&[a, b]).unwrap();
        acc.push(&[b, b]).unwrap();
        let c = acc.curve();
        assert_eq!(c[0].mse, 3.0);
        assert_eq!(c[1].mse, 4.0);
        assert!(acc.push(&[a]).is_err());
    }
}
