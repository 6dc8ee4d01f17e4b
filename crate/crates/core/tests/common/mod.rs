use taylornet::eval::metrics::{gaussian_taps, SSIM_SIGMA, SSIM_WINDOW};

/// SSIM by the textbook formula: for every window position compute the
/// Gaussian-weighted means, variances and covariance directly.
pub fn ssim_direct(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let k = SSIM_WINDOW;
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..=h - k {
        for j in 0..=w - k {
            let weight = |a: usize, b: usize| taps[a] * taps[b];
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..k {
                for b in 0..k {
                    mx += weight(a, b) * x[(i + a) * w + j + b];
                    my += weight(a, b) * y[(i + a) * w + j + b];
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for a in 0..k {
                for b in 0..k {
                    let dx = x[(i + a) * w + j + b] - mx;
                    let dy = y[(i + a) * w + j + b] - my;
                    vx += weight(a, b) * dx * dx;
                    vy += weight(a, b) * dy * dy;
                    cov += weight(a, b) * dx * dy;
                }
            }
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}
