//! Learned PDE model for the temporal derivative of a latent field:
//!
//! ```text
//! ∂h/∂t ≈ Σ_{i,j} c_{i,j} · ∂^{i+j}h / ∂x^i ∂y^j
//! ```
//!
//! Each latent channel is convolved with every filter of a `k×k`
//! moment-constrained derivative bank (same padding, zero fill), then a bias-free
//! 1×1 convolution mixes the `k²·C` derivative channels back to `C`. The
//! module is exactly linear in its input. Pixels within `(k-1)/2` of the
//! border see the zero padding and are not derivative-accurate.

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::moment::{bank_targets, MomentBasis};
use crate::params::{fan_in_uniform, Bound, ParamStore};
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct PdeModel {
    prefix: String,
    channels: usize,
    basis: MomentBasis,
}

impl PdeModel {
    pub fn new(prefix: impl Into<String>, channels: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            prefix: prefix.into(),
            channels,
            basis: MomentBasis::new(kernel)?,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.basis.kernel_size()
    }

    pub fn filter_count(&self) -> usize {
        self.kernel_size() * self.kernel_size()
    }

    pub fn basis(&self) -> &MomentBasis {
        &self.basis
    }

    /// `[k², 1, k, k]`, ordered as [`crate::moment::bank_orders`].
    pub fn bank_name(&self) -> String {
        format!("{}.bank", self.prefix)
    }

    /// `[C, k²·C, 1, 1]`; input channel `c·k² + d` is derivative `d` of channel `c`.
    pub fn mix_name(&self) -> String {
        format!("{}.mix", self.prefix)
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut R,
        mix_gain: f64,
    ) {
        let k = self.kernel_size();
        let n = self.filter_count();
        store.insert(self.bank_name(), fan_in_uniform(rng, &[n, 1, k, k], k * k, 1.0));
        store.insert(
            self.mix_name(),
            fan_in_uniform(rng, &[self.channels, n * self.channels, 1, 1], n * self.channels, mix_gain),
        );
    }

    /// All `k²` derivative maps of every channel: `[B, C·k², H, W]`.
    pub fn derivative_maps<T: Scalar>(&self, g: &mut Graph<T>, vars: &Bound, h: Var) -> Result<Var> {
        let (b, c, hh, ww) = g.value(h).dims4()?;
        let k = self.kernel_size();
        if c != self.channels {
            return Err(Error::shape(format!(
                "PDE model built for {} channels, got {}",
                self.channels, c
            )));
        }
        if hh < k || ww < k {
            return Err(Error::shape(format!(
                "latent {}x{} is smaller than the {}x{} derivative filters",
                hh, ww, k, k
            )));
        }
        let bank = vars.get(&self.bank_name())?;
        let flat = g.reshape(h, &[b * c, 1, hh, ww])?;
        let d = g.conv2d(flat, bank, None, 1, (k - 1) / 2)?;
        g.reshape(d, &[b, c * self.filter_count(), hh, ww])
    }

    /// One application of the learned PDE: output has the input's shape.
    pub fn temporal_derivative<T: Scalar>(&self, g: &mut Graph<T>, vars: &Bound, h: Var) -> Result<Var> {
        let d = self.derivative_maps(g, vars, h)?;
        let mix = vars.get(&self.mix_name())?;
        g.conv2d(d, mix, None, 1, 0)
    }

    /// `[h0, h0', …, h0^(order-1)]`, each the PDE applied to the previous one.
    pub fn taylor_derivatives<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        h0: Var,
        order: usize,
    ) -> Result<Vec<Var>> {
        if order < 1 {
            return Err(Error::invalid("Taylor order must be at least 1"));
        }
        let mut out = Vec::with_capacity(order);
        out.push(h0);
        for n in 1..order {
            let next = self.temporal_derivative(g, vars, out[n - 1])?;
            out.push(next);
        }
        Ok(out)
    }

    /// `Σ ‖M(w) − Δ‖²` over the derivative bank, as a graph scalar.
    pub fn moment_loss<T: Scalar>(&self, g: &mut Graph<T>, vars: &Bound) -> Result<Var> {
        let bank = vars.get(&self.bank_name())?;
        let m = g.moments(bank, &self.basis)?;
        let targets = g.constant(bank_targets::<T>(self.kernel_size()));
        let r = g.sub(m, targets)?;
        let sq = g.square(r);
        Ok(g.sum(sq))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moment::exact_delta_bank;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model_with_exact_bank(channels: usize) -> (PdeModel, ParamStore<f64>) {
        let pde = PdeModel::new("pde", channels, 7).unwrap();
        let mut store = ParamStore::new();
        pde.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0), 1.0);
        store.set(&pde.bank_name(), exact_delta_bank(7).unwrap()).unwrap();
        (pde, store)
    }

    /// Mixing weights that pick derivative `order` of each channel with weight `c`.
    fn select(pde: &PdeModel, store: &mut ParamStore<f64>, order: (usize, usize), c: f64) {
        let ch = pde.channels;
        let n = pde.filter_count();
        let d = order.0 * 7 + order.1;
        let mix = Tensor::from_fn([ch, n * ch, 1, 1], |idx| {
            let (o, i) = (idx / (n * ch), idx % (n * ch));
            if i == o * n + d {
                c
            } else {
                0.0
            }
        });
        store.set(&pde.mix_name(), mix).unwrap();
    }

    fn run(pde: &PdeModel, store: &ParamStore<f64>, h: Tensor<f64>) -> Tensor<f64> {
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let x = g.constant(h);
        let y = pde.temporal_derivative(&mut g, &vars, x).unwrap();
        g.value(y).clone()
    }

    #[test]
    fn constant_field_keeps_only_zeroth_order() {
        let (pde, mut store) = model_with_exact_bank(1);
        let h = Tensor::full([1, 1, 16, 16], 2.5);
        // All channels weighted 1: interior output is c00 * h = h, since every
        // (i, j) != (0, 0) filter annihilates constants.
        let ones = Tensor::full([1, 49, 1, 1], 1.0);
        store.set(&pde.mix_name(), ones).unwrap();
        let y = run(&pde, &store, h);
        for p in 3..13 {
            for q in 3..13 {
                assert!((y.data()[p * 16 + q] - 2.5).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ramp_gives_its_slope() {
        let (pde, mut store) = model_with_exact_bank(1);
        select(&pde, &mut store, (1, 0), 1.0);
        let h = Tensor::from_fn([1, 1, 16, 16], |idx| 0.75 * (idx / 16) as f64 - 2.0);
        let y = run(&pde, &store, h);
        for p in 3..13 {
            for q in 3..13 {
                assert!((y.data()[p * 16 + q] - 0.75).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_in_zero_out_and_shape() {
        let pde = PdeModel::new("pde", 2, 7).unwrap();
        let mut store = ParamStore::new();
        pde.init(&mut store, &mut ChaCha8Rng::seed_from_u64(1), 1.0);
        let y = run(&pde, &store, Tensor::zeros([3, 2, 8, 9]));
        assert_eq!(y.shape(), &[3, 2, 8, 9]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn taylor_derivative_list() {
        let pde = PdeModel::new("pde", 1, 7).unwrap();
        let mut store = ParamStore::new();
        pde.init(&mut store, &mut ChaCha8Rng::seed_from_u64(2), 1.0);
        let mut g = Graph::<f64>::new();
        let vars = store.bind(&mut g);
        let h0 = g.constant(Tensor::from_fn([1, 1, 8, 8], |i| (i as f64 * 0.37).sin()));
        let one = pde.taylor_derivatives(&mut g, &vars, h0, 1).unwrap();
        assert_eq!(one, vec![h0]);
        let three = pde.taylor_derivatives(&mut g, &vars, h0, 3).unwrap();
        assert_eq!(three.len(), 3);
        let d1 = pde.temporal_derivative(&mut g, &vars, h0).unwrap();
        let d2 = pde.temporal_derivative(&mut g, &vars, d1).unwrap();
        assert_eq!(g.value(three[2]), g.value(d2));
        assert!(pde.taylor_derivatives(&mut g, &vars, h0, 0).is_err());
    }

    #[test]
    fn rejects_small_or_mismatched_latents() {
        let pde = PdeModel::new("pde", 2, 7).unwrap();
        let mut store = ParamStore::new();
        pde.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3), 1.0);
        let mut g = Graph::<f64>::new();
        let vars = store.bind(&mut g);
        let small = g.constant(Tensor::zeros([1, 2, 6, 6]));
        assert!(pde.temporal_derivative(&mut g, &vars, small).is_err());
        let wrong = g.constant(Tensor::zeros([1, 3, 8, 8]));
        assert!(pde.temporal_derivative(&mut g, &vars, wrong).is_err());
    }
}
