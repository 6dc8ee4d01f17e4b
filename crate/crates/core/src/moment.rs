//! Moment matrices of convolution filters.
//!
//! For a `k×k` filter `w` with centred coordinates `u, v ∈ [-(k-1)/2, (k-1)/2]`
//! (raster row `= u + (k-1)/2`), the moment matrix is
//!
//! ```text
//! M(w)[i, j] = 1 / (i! j!) · Σ_{u,v} u^i v^j w[u, v]      (0^0 = 1)
//! ```
//!
//! Constraining `M(w)` to the indicator `Δ_{i,j}` makes `w ⊛ h` approximate
//! `∂^{i+j} h / ∂x^i ∂y^j` in index units, where `x` runs along rows and `y`
//! along columns. The map `w ↦ M(w) = V w Vᵀ` is linear with
//! `V[i, a] = u_a^i / i!`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// Dense inverse by Gauss-Jordan elimination with partial pivoting.
fn invert(a: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut inv = vec![0.0; n * n];
    for i in 0..n {
        inv[i * n + i] = 1.0;
    }
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| {
            m[x * n + col].abs().total_cmp(&m[y * n + col].abs())
        })?;
        if m[pivot * n + col].abs() < 1e-300 {
            return None;
        }
        for j in 0..n {
            m.swap(col * n + j, pivot * n + j);
            inv.swap(col * n + j, pivot * n + j);
        }
        let d = m[col * n + col];
        for j in 0..n {
            m[col * n + j] /= d;
            inv[col * n + j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r * n + col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r * n + j] -= f * m[col * n + j];
                        inv[r * n + j] -= f * inv[col * n + j];
                    }
                }
            }
        }
    }
    Some(inv)
}

fn check_kernel_size(k: usize) -> Result<()> {
    if k < 3 || k % 2 == 0 {
        return Err(Error::invalid(format!(
            "filter size must be odd and >= 3, got {}",
            k
        )));
    }
    Ok(())
}

/// The linear map from filter weights to moments for one kernel size.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentBasis {
    k: usize,
    /// `V[i, a] = u_a^i / i!`, row-major.
    v: Vec<f64>,
    v_inv: Vec<f64>,
}

impl MomentBasis {
    pub fn new(k: usize) -> Result<Self> {
        check_kernel_size(k)?;
        let r = (k - 1) as f64 / 2.0;
        let mut v = vec![0.0; k * k];
        for i in 0..k {
            for a in 0..k {
                let u = a as f64 - r;
                v[i * k + a] = u.powi(i as i32) / factorial(i);
            }
        }
        let v_inv = invert(&v, k).ok_or_else(|| Error::invalid("singular moment basis"))?;
        Ok(Self { k, v, v_inv })
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    fn count<T: Scalar>(&self, t: &Tensor<T>) -> Result<usize> {
        let s = t.shape();
        if s.len() < 2 || s[s.len() - 1] != self.k || s[s.len() - 2] != self.k {
            return Err(Error::shape(format!(
                "expected trailing {}x{} filters, got {:?}",
                self.k, self.k, s
            )));
        }
        Ok(t.len() / (self.k * self.k))
    }

    /// `out = A · w · Aᵀ` for every `k×k` slab (`A` row-major `k×k`).
    fn sandwich<T: Scalar>(&self, a: &[f64], t: &Tensor<T>, transpose: bool) -> Result<Tensor<T>> {
        let n = self.count(t)?;
        let k = self.k;
        let at = |i: usize, j: usize| if transpose { a[j * k + i] } else { a[i * k + j] };
        let mut out = Vec::with_capacity(t.len());
        let mut tmp = vec![0.0; k * k];
        for f in 0..n {
            let w = &t.data()[f * k * k..(f + 1) * k * k];
            // tmp = A · w
            for i in 0..k {
                for b in 0..k {
                    tmp[i * k + b] = (0..k).map(|c| at(i, c) * w[c * k + b].as_f64()).sum();
                }
            }
            // out = tmp · Aᵀ
            for i in 0..k {
                for j in 0..k {
                    let s: f64 = (0..k).map(|b| tmp[i * k + b] * at(j, b)).sum();
                    out.push(T::from_f64(s));
                }
            }
        }
        Tensor::new(t.shape().to_vec(), out)
    }

    /// Moment matrices `V w Vᵀ` of a stack of filters `[..., k, k]`.
    pub fn apply<T: Scalar>(&self, filters: &Tensor<T>) -> Result<Tensor<T>> {
        self.sandwich(&self.v, filters, false)
    }

    /// Adjoint map `Vᵀ m V`, i.e. the weight gradient of `<M(w), m>`.
    pub fn apply_transpose<T: Scalar>(&self, m: &Tensor<T>) -> Result<Tensor<T>> {
        self.sandwich(&self.v, m, true)
    }

    /// Filters whose moment matrices equal `m` exactly: `V⁻¹ m V⁻ᵀ`.
    pub fn filters_from_moments<T: Scalar>(&self, m: &Tensor<T>) -> Result<Tensor<T>> {
        self.sandwich(&self.v_inv, m, false)
    }
}

/// A `k×k` filter tagged with the partial derivative it should realise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialFilter {
    k: usize,
    weights: Vec<f64>,
    target_order: (usize, usize),
}

impl SpatialFilter {
    /// `weights` is the raster `k×k` grid, row index `u + (k-1)/2`.
    pub fn new(k: usize, weights: Vec<f64>, target_order: (usize, usize)) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("empty filter"));
        }
        check_kernel_size(k)?;
        if weights.len() != k * k {
            return Err(Error::shape(format!(
                "{} weights for a {}x{} filter",
                weights.len(),
                k,
                k
            )));
        }
        let (i, j) = target_order;
        if i >= k || j >= k {
            return Err(Error::invalid(format!(
                "target order ({}, {}) exceeds k-1 = {}",
                i,
                j,
                k - 1
            )));
        }
        Ok(Self {
            k,
            weights,
            target_order,
        })
    }

    pub fn zeros(k: usize, target_order: (usize, usize)) -> Result<Self> {
        Self::new(k, vec![0.0; k * k], target_order)
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn target_order(&self) -> (usize, usize) {
        self.target_order
    }

    /// Weight at centred coordinates `(u, v)`.
    pub fn at(&self, u: isize, v: isize) -> f64 {
        let r = (self.k as isize - 1) / 2;
        self.weights[((u + r) as usize) * self.k + (v + r) as usize]
    }

    pub fn set(&mut self, u: isize, v: isize, value: f64) {
        let r = (self.k as isize - 1) / 2;
        self.weights[((u + r) as usize) * self.k + (v + r) as usize] = value;
    }

    fn as_tensor(&self) -> Tensor<f64> {
        Tensor::new([self.k, self.k], self.weights.clone()).expect("validated at construction")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentMatrix {
    pub k: usize,
    pub entries: Vec<f64>,
}

impl MomentMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaTarget {
    pub k: usize,
    pub one_position: (usize, usize),
    pub entries: Vec<f64>,
}

pub fn make_delta_target(i: usize, j: usize, k: usize) -> Result<DeltaTarget> {
    if i >= k || j >= k {
        return Err(Error::invalid(format!(
            "delta position ({}, {}) exceeds k-1 = {}",
            i,
            j,
            k.saturating_sub(1)
        )));
    }
    let mut entries = vec![0.0; k * k];
    entries[i * k + j] = 1.0;
    Ok(DeltaTarget {
        k,
        one_position: (i, j),
        entries,
    })
}

pub fn compute_moment_matrix(filter: &SpatialFilter) -> Result<MomentMatrix> {
    let basis = MomentBasis::new(filter.k)?;
    let m = basis.apply(&filter.as_tensor())?;
    Ok(MomentMatrix {
        k: filter.k,
        entries: m.into_data(),
    })
}

/// `Σ_filters ‖M(w) − Δ_target‖²` (squared Frobenius norm).
pub fn moment_loss(filters: &[SpatialFilter]) -> Result<f64> {
    let mut total = 0.0;
    for f in filters {
        let m = compute_moment_matrix(f)?;
        let (i, j) = f.target_order;
        let delta = make_delta_target(i, j, f.k)?;
        total += m
            .entries
            .iter()
            .zip(&delta.entries)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total)
}

/// Analytic gradient of [`moment_loss`] for each filter: `2 Vᵀ (M − Δ) V`.
pub fn moment_loss_gradient(filters: &[SpatialFilter]) -> Result<Vec<Vec<f64>>> {
    filters
        .iter()
        .map(|f| {
            let basis = MomentBasis::new(f.k)?;
            let m = basis.apply(&f.as_tensor())?;
            let (i, j) = f.target_order;
            let delta = make_delta_target(i, j, f.k)?;
            let residual = Tensor::new(
                [f.k, f.k],
                m.data()
                    .iter()
                    .zip(&delta.entries)
                    .map(|(a, b)| 2.0 * (a - b))
                    .collect(),
            )?;
            Ok(basis.apply_transpose(&residual)?.into_data())
        })
        .collect()
}

/// Row-major `(i, j)` order of the full derivative bank for size `k`.
pub fn bank_orders(k: usize) -> Vec<(usize, usize)> {
    (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect()
}

/// Stacked delta targets `[k², 1, k, k]` matching [`bank_orders`].
pub fn bank_targets<T: Scalar>(k: usize) -> Tensor<T> {
    let n = k * k;
    Tensor::from_fn([n, 1, k, k], |idx| {
        let f = idx / n;
        let e = idx % n;
        if e == f {
            T::one()
        } else {
            T::zero()
        }
    })
}

/// The exact derivative bank: filter `(i, j)` has `M(w) = Δ_{i,j}`.
pub fn exact_delta_bank<T: Scalar>(k: usize) -> Result<Tensor<T>> {
    MomentBasis::new(k)?.filters_from_moments(&bank_targets::<T>(k))
}

/// Moment loss of a stacked bank `[k², 1, k, k]` in the canonical order.
pub fn bank_moment_loss<T: Scalar>(bank: &Tensor<T>, basis: &MomentBasis) -> Result<f64> {
    let k = basis.kernel_size();
    let m = basis.apply(bank)?;
    let targets = bank_targets::<f64>(k);
    if m.len() != targets.len() {
        return Err(Error::shape(format!(
            "bank {:?} is not a full {}-filter bank",
            bank.shape(),
            k * k
        )));
    }
    Ok(m
        .data()
        .iter()
        .zip(targets.data())
        .map(|(a, b)| (a.as_f64() - b).powi(2))
        .sum())
}

/// Fits a stacked bank to its delta targets by preconditioned gradient steps.
///
/// Each step moves along `-(LᵀL)⁻¹ ∇`, where `L` is the moment map; the
/// map is badly conditioned (≈1e5 for k = 7), so unpreconditioned steps
/// barely move the high-order moments. Returns the loss after every step.
pub fn fit_bank_moments(
    bank: &mut Tensor<f64>,
    basis: &MomentBasis,
    steps: usize,
    step_size: f64,
) -> Result<Vec<f64>> {
    let k = basis.kernel_size();
    let targets = bank_targets::<f64>(k);
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let residual = basis.apply(bank)?.sub(&targets)?;
        // (LᵀL)⁻¹ Lᵀ r = L⁻¹ r = V⁻¹ r V⁻ᵀ; the gradient is 2 Lᵀ r.
        let direction = basis.filters_from_moments(&residual)?;
        for (w, d) in bank.data_mut().iter_mut().zip(direction.data()) {
            *w -= step_size * d;
        }
        history.push(bank_moment_loss(bank, basis)?);
    }
    Ok(history)
}

/// A smooth scalar field with exact partial derivatives.
pub trait AnalyticField {
    fn value(&self, x: f64, y: f64) -> f64;
    /// `∂^{i+j} f / ∂x^i ∂y^j` at `(x, y)`.
    fn derivative(&self, i: usize, j: usize, x: f64, y: f64) -> f64;
}

/// `f(x, y) = a·x + b·y + c`.
#[derive(Clone, Copy, Debug)]
pub struct LinearField {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl AnalyticField for LinearField {
    fn value(&self, x: f64, y: f64) -> f64 {
        self.a * x + self.b * y + self.c
    }

    fn derivative(&self, i: usize, j: usize, x: f64, y: f64) -> f64 {
        match (i, j) {
            (0, 0) => self.value(x, y),
            (1, 0) => self.a,
            (0, 1) => self.b,
            _ => 0.0,
        }
    }
}

/// `f(x, y) = sin(kx·x + ky·y + phase)`.
#[derive(Clone, Copy, Debug)]
pub struct PlaneWave {
    pub kx: f64,
    pub ky: f64,
    pub phase: f64,
}

impl AnalyticField for PlaneWave {
    fn value(&self, x: f64, y: f64) -> f64 {
        (self.kx * x + self.ky * y + self.phase).sin()
    }

    fn derivative(&self, i: usize, j: usize, x: f64, y: f64) -> f64 {
        let theta = self.kx * x + self.ky * y + self.phase + (i + j) as f64 * std::f64::consts::FRAC_PI_2;
        self.kx.powi(i as i32) * self.ky.powi(j as i32) * theta.sin()
    }
}

/// Max interior error of `(w ⊛ f) / spacing^(i+j)` against the exact partial
/// derivative, on an `n×n` grid sampled at `(row·spacing, col·spacing)`.
pub fn derivative_error(
    filter: &SpatialFilter,
    field: &dyn AnalyticField,
    grid_spacing: f64,
    n: usize,
) -> Result<f64> {
    if !(grid_spacing > 0.0) {
        return Err(Error::invalid("grid spacing must be positive"));
    }
    let k = filter.k;
    if n < k {
        return Err(Error::shape(format!(
            "{}x{} grid is smaller than the {}x{} filter",
            n, n, k, k
        )));
    }
    let r = (k - 1) / 2;
    let samples: Vec<f64> = (0..n * n)
        .map(|idx| field.value((idx / n) as f64 * grid_spacing, (idx % n) as f64 * grid_spacing))
        .collect();
    let (di, dj) = filter.target_order;
    let scale = grid_spacing.powi((di + dj) as i32);
    let mut worst: f64 = 0.0;
    for p in r..n - r {
        for q in r..n - r {
            let mut acc = 0.0;
            for a in 0..k {
                for b in 0..k {
                    acc += filter.weights[a * k + b] * samples[(p + a - r) * n + (q + b - r)];
                }
            }
            let exact = field.derivative(di, dj, p as f64 * grid_spacing, q as f64 * grid_spacing);
            worst = worst.max((acc / scale - exact).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct evaluation of the moment double sum, independent of `MomentBasis`.
    fn moment_by_summation(f: &SpatialFilter, i: usize, j: usize) -> f64 {
        let r = (f.k as isize - 1) / 2;
        let mut acc = 0.0;
        for u in -r..=r {
            for v in -r..=r {
                acc += (u as f64).powi(i as i32) * (v as f64).powi(j as i32) * f.at(u, v);
            }
        }
        acc / (factorial(i) * factorial(j))
    }

    fn central_difference_x() -> SpatialFilter {
        let mut f = SpatialFilter::zeros(3, (1, 0)).unwrap();
        f.set(1, 0, 0.5);
        f.set(-1, 0, -0.5);
        f
    }

    #[test]
    fn central_difference_moments() {
        let f = central_difference_x();
        let m = compute_moment_matrix(&f).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = moment_by_summation(&f, i, j);
                assert!((m.get(i, j) - expected).abs() < 1e-15);
            }
        }
        assert_eq!(m.get(1, 0), 1.0);
        for &(i, j) in &[(0, 0), (2, 0), (0, 1), (0, 2), (1, 1)] {
            assert_eq!(m.get(i, j), 0.0, "M({i},{j})");
        }
        assert_eq!(moment_loss(&[f]).unwrap(), 0.0);
    }

    #[test]
    fn zero_filter_and_centred_impulse() {
        let z = SpatialFilter::zeros(3, (0, 0)).unwrap();
        assert!(compute_moment_matrix(&z).unwrap().entries.iter().all(|&v| v == 0.0));
        assert_eq!(moment_loss(&[z]).unwrap(), 1.0);

        let mut imp = SpatialFilter::zeros(5, (0, 0)).unwrap();
        imp.set(0, 0, 1.0);
        let m = compute_moment_matrix(&imp).unwrap();
        assert_eq!(m.get(0, 0), 1.0);
        assert_eq!(m.entries.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(moment_loss(&[imp]).unwrap(), 0.0);
    }

    #[test]
    fn delta_targets() {
        let d = make_delta_target(1, 0, 3).unwrap();
        assert_eq!(d.entries, vec![0., 0., 0., 1., 0., 0., 0., 0., 0.]);
        let d = make_delta_target(0, 0, 7).unwrap();
        assert_eq!(d.entries[0], 1.0);
        assert_eq!(d.entries.iter().sum::<f64>(), 1.0);
        assert!(make_delta_target(7, 0, 7).is_err());
    }

    #[test]
    fn rejects_bad_filters() {
        assert!(SpatialFilter::new(4, vec![0.0; 16], (0, 0)).is_err());
        assert!(SpatialFilter::new(3, vec![], (0, 0)).is_err());
        assert!(SpatialFilter::new(1, vec![1.0], (0, 0)).is_err());
        assert!(SpatialFilter::new(3, vec![0.0; 9], (3, 0)).is_err());
    }

    #[test]
    fn exact_bank_hits_every_target() {
        for k in [3, 5, 7] {
            let basis = MomentBasis::new(k).unwrap();
            let bank = exact_delta_bank::<f64>(k).unwrap();
            assert!(bank_moment_loss(&bank, &basis).unwrap() < 1e-20, "k={k}");
        }
    }

    #[test]
    fn central_difference_derivative_error() {
        let f = central_difference_x();
        let lin = LinearField { a: 2.5, b: -1.0, c: 0.3 };
        for h in [1.0, 0.1, 0.01] {
            assert!(derivative_error(&f, &lin, h, 16).unwrap() < 1e-10);
        }
        let wave = PlaneWave { kx: 1.0, ky: 0.0, phase: 0.0 };
        let e1 = derivative_error(&f, &wave, 0.1, 64).unwrap();
        let e2 = derivative_error(&f, &wave, 0.05, 64).unwrap();
        // second-order: e ≈ h²/6 · max|f'''|
        assert!(e1 <= 0.1f64.powi(2) / 6.0 * 1.01);
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");

        let zero = SpatialFilter::zeros(3, (1, 0)).unwrap();
        let e = derivative_error(&zero, &wave, 0.1, 64).unwrap();
        let max_exact = (1..63)
            .flat_map(|p| (1..63).map(move |q| (p, q)))
            .map(|(p, q)| wave.derivative(1, 0, p as f64 * 0.1, q as f64 * 0.1).abs())
            .fold(0.0, f64::max);
        assert_eq!(e, max_exact);

        assert!(derivative_error(&f, &wave, 0.1, 2).is_err());
    }
}
