//! Analytic Gaussian bump translating at constant velocity.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bumps closer than this many σ to the border count as leaving the canvas.
pub const BUMP_MARGIN_SIGMAS: f64 = 6.0;

/// Frames `[T, 1, H, W]` of `exp(-|p - c_t|² / 2σ²)` with
/// `c_t = center + t·velocity`. Points are `(x, y)` = `(column, row)`.
pub fn generate_translating_bump(
    height: usize,
    width: usize,
    center: (f64, f64),
    velocity: (f64, f64),
    sigma: f64,
    length: usize,
) -> Result<Tensor<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("bump width must be positive"));
    }
    let m = BUMP_MARGIN_SIGMAS * sigma;
    let mut data = Vec::with_capacity(length * height * width);
    for t in 0..length {
        let cx = center.0 + t as f64 * velocity.0;
        let cy = center.1 + t as f64 * velocity.1;
        if cx < m || cy < m || cx > width as f64 - 1.0 - m || cy > height as f64 - 1.0 - m {
            return Err(Error::invalid(format!(
                "bump centre ({:.2}, {:.2}) at frame {} is within {:.1}px of the border",
                cx, cy, t, m
            )));
        }
        for r in 0..height {
            for c in 0..width {
                let d2 = (c as f64 - cx).powi(2) + (r as f64 - cy).powi(2);
                data.push((-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
    }
    Tensor::new([length, 1, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax_col(frame: &[f64], width: usize) -> usize {
        let (i, _) = frame
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        i % width
    }

    #[test]
    fn moves_one_column_per_frame_with_constant_mass() {
        let v = generate_translating_bump(32, 32, (12.0, 16.0), (1.0, 0.0), 1.5, 3).unwrap();
        let frames: Vec<&[f64]> = v.data().chunks(32 * 32).collect();
        for t in 0..3 {
            assert_eq!(argmax_col(frames[t], 32), 12 + t);
        }
        let m0: f64 = frames[0].iter().sum();
        for f in &frames {
            assert!((f.iter().sum::<f64>() - m0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_velocity_and_exit_error() {
        let v = generate_translating_bump(24, 24, (12.0, 12.0), (0.0, 0.0), 1.0, 3).unwrap();
        let frames: Vec<&[f64]> = v.data().chunks(24 * 24).collect();
        assert_eq!(frames[0], frames[2]);
        assert!(generate_translating_bump(24, 24, (12.0, 12.0), (3.0, 0.0), 1.0, 3).is_err());
    }
}
