//! Recurrent Taylor cell: a prediction unit that extrapolates from the
//! derivatives of the first frame's feature, and a gated memory unit whose
//! state corrects that extrapolation.
//!
//! ```text
//! h̃_t = Σ_{n<ξ} tⁿ/n! · h₀⁽ⁿ⁾
//! z, r = σ(W_zr ⊛ (e_{t-1}, h_{t-1}))
//! g    = tanh(W_g ⊛ (r ⊙ e_{t-1}, h_{t-1}))
//! e_t  = z ⊙ g + (1 − z) ⊙ h_{t-1}
//! K_t  = σ(W_K · (h̃_t, e_t))            (1×1)
//! ĥ_t  = h̃_t + K_t ⊙ (e_t − h̃_t) = (1 − K_t) ⊙ h̃_t + K_t ⊙ e_t
//! ```

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::ConvLayer;
use crate::moment::factorial;
use crate::params::{Bound, ParamStore};
use crate::pde::PdeModel;
use crate::tensor::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct TaylorCell {
    channels: usize,
    order: usize,
    mcu_enabled: bool,
    pde: PdeModel,
    gates: ConvLayer,
    candidate: ConvLayer,
    gain: ConvLayer,
}

/// Sequence-local state. Variables refer to the graph the sequence runs in.
#[derive(Clone, Debug, Default)]
pub struct TaylorCellState {
    derivatives: Vec<Var>,
    mcu_hidden: Option<Var>,
    step: usize,
    shape: Option<Vec<usize>>,
    closed: bool,
}

impl TaylorCellState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Cached `[h₀, h₀′, …]`; empty before the first step.
    pub fn derivatives(&self) -> &[Var] {
        &self.derivatives
    }

    pub fn mcu_hidden(&self) -> Option<Var> {
        self.mcu_hidden
    }

    /// Index of the frame predicted by the most recent step.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Mark the sequence as over; further steps fail until [`Self::reset`].
    pub fn finish(&mut self) {
        self.closed = true;
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }
}

#[derive(Clone, Copy, Debug)]
pub struct McuOutput {
    pub e: Var,
    pub z: Var,
    pub r: Var,
    pub g: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CellOutput {
    pub h_hat: Var,
    pub h_tilde: Var,
    /// Memory fed to the correction (the raw input when the MCU is disabled).
    pub e: Var,
    pub gain: Var,
    pub mcu: Option<McuOutput>,
}

/// `Σ_{n} tⁿ/n! · derivatives[n]`.
pub fn tpu_predict<T: Scalar>(g: &mut Graph<T>, derivatives: &[Var], t: usize) -> Result<Var> {
    let first = *derivatives
        .first()
        .ok_or_else(|| Error::invalid("Taylor prediction needs cached derivatives"))?;
    let mut acc = first;
    for (n, &d) in derivatives.iter().enumerate().skip(1) {
        let coef = (t as f64).powi(n as i32) / factorial(n);
        let term = g.scale(d, coef);
        acc = g.add(acc, term)?;
    }
    Ok(acc)
}

impl TaylorCell {
    pub fn new(
        prefix: &str,
        channels: usize,
        order: usize,
        kernel: usize,
        mcu_enabled: bool,
    ) -> Result<Self> {
        if order < 1 {
            return Err(Error::invalid("Taylor order must be at least 1"));
        }
        if channels == 0 {
            return Err(Error::invalid("Taylor cell needs at least one channel"));
        }
        let c = channels;
        Ok(Self {
            channels,
            order,
            mcu_enabled,
            pde: PdeModel::new(format!("{prefix}.pde"), c, kernel)?,
            gates: ConvLayer::same(format!("{prefix}.gates"), 2 * c, 2 * c, 3, true),
            candidate: ConvLayer::same(format!("{prefix}.candidate"), 2 * c, c, 3, true),
            gain: ConvLayer::same(format!("{prefix}.gain"), 2 * c, c, 1, true),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn mcu_enabled(&self) -> bool {
        self.mcu_enabled
    }

    pub fn pde(&self) -> &PdeModel {
        &self.pde
    }

    pub fn gates_layer(&self) -> &ConvLayer {
        &self.gates
    }

    pub fn candidate_layer(&self) -> &ConvLayer {
        &self.candidate
    }

    pub fn gain_layer(&self) -> &ConvLayer {
        &self.gain
    }

    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R, pde_mix_gain: f64) {
        self.pde.init(store, rng, pde_mix_gain);
        self.gates.init_zero_bias(store, rng, 1.0);
        self.candidate.init_zero_bias(store, rng, 1.0);
        self.gain.init_zero_bias(store, rng, 1.0);
    }

    pub fn mcu_update<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        e_prev: Var,
        h_prev: Var,
    ) -> Result<McuOutput> {
        same_shape(g, e_prev, h_prev, "MCU memory and input")?;
        let eh = g.concat1(&[e_prev, h_prev])?;
        let pre = self.gates.forward(g, vars, eh)?;
        let zr = g.sigmoid(pre);
        let parts = g.chunk1(zr, 2)?;
        let (z, r) = (parts[0], parts[1]);
        let re = g.mul(r, e_prev)?;
        let reh = g.concat1(&[re, h_prev])?;
        let cand = self.candidate.forward(g, vars, reh)?;
        let cand = g.tanh(cand);
        let zg = g.mul(z, cand)?;
        let keep = g.one_minus(z);
        let kh = g.mul(keep, h_prev)?;
        let e = g.add(zg, kh)?;
        Ok(McuOutput { e, z, r, g: cand })
    }

    /// `(ĥ, K)`.
    pub fn correct<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        h_tilde: Var,
        e: Var,
    ) -> Result<(Var, Var)> {
        same_shape(g, h_tilde, e, "Taylor prediction and memory")?;
        let he = g.concat1(&[h_tilde, e])?;
        let pre = self.gain.forward(g, vars, he)?;
        let k = g.sigmoid(pre);
        // h̃ + K(e − h̃), written as a convex mix so K ∈ {0, 1} is exact.
        let keep = g.one_minus(k);
        let prior = g.mul(keep, h_tilde)?;
        let meas = g.mul(k, e)?;
        Ok((g.add(prior, meas)?, k))
    }

    /// One recurrent step on the current frame's Taylor feature.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        state: &mut TaylorCellState,
        h_input: Var,
    ) -> Result<CellOutput> {
        if state.closed {
            return Err(Error::SequenceNotReset(
                "step called on a finished sequence".into(),
            ));
        }
        match &state.shape {
            Some(s) if s.as_slice() != g.shape(h_input) => {
                return Err(Error::SequenceNotReset(format!(
                    "state holds a {:?} sequence, got {:?}",
                    s,
                    g.shape(h_input)
                )))
            }
            Some(_) => {}
            None => {
                state.derivatives = self.pde.taylor_derivatives(g, vars, h_input, self.order)?;
                state.mcu_hidden = Some(h_input);
                state.shape = Some(g.shape(h_input).to_vec());
            }
        }
        let (e, mcu) = if self.mcu_enabled {
            let prev = state.mcu_hidden.unwrap_or(h_input);
            let out = self.mcu_update(g, vars, prev, h_input)?;
            state.mcu_hidden = Some(out.e);
            (out.e, Some(out))
        } else {
            (h_input, None)
        };
        state.step += 1;
        let h_tilde = tpu_predict(g, &state.derivatives, state.step)?;
        let (h_hat, gain) = self.correct(g, vars, h_tilde, e)?;
        Ok(CellOutput {
            h_hat,
            h_tilde,
            e,
            gain,
            mcu,
        })
    }
}

fn same_shape<T: Scalar>(g: &Graph<T>, a: Var, b: Var, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(format!(
            "{what}: {:?} vs {:?}",
            g.shape(a),
            g.shape(b)
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cell(order: usize, mcu: bool) -> (TaylorCell, ParamStore<f64>) {
        let cell = TaylorCell::new("tc", 2, order, 7, mcu).unwrap();
        let mut store = ParamStore::new();
        cell.init(&mut store, &mut ChaCha8Rng::seed_from_u64(5), 0.5);
        (cell, store)
    }

    fn field(seed: u64, shape: [usize; 4]) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn tpu_closed_form() {
        let mut g = Graph::<f64>::new();
        let d: Vec<Var> = [2.0, 3.0, 4.0]
            .iter()
            .map(|&v| g.constant(Tensor::full([1, 1, 2, 2], v)))
            .collect();
        let y = tpu_predict(&mut g, &d, 2).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 16.0));
        let y0 = tpu_predict(&mut g, &d, 0).unwrap();
        assert_eq!(g.value(y0), g.value(d[0]));
        let y1 = tpu_predict(&mut g, &d[..1], 9).unwrap();
        assert_eq!(g.value(y1), g.value(d[0]));
        assert!(tpu_predict(&mut g, &[], 1).is_err());
    }

    #[test]
    fn first_step_caches_derivatives() {
        let (cell, store) = cell(3, true);
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut st = TaylorCellState::new();
        assert!(st.derivatives().is_empty());
        let h = g.constant(field(1, [1, 2, 8, 8]));
        cell.step(&mut g, &vars, &mut st, h).unwrap();
        assert_eq!(st.derivatives().len(), 3);
        assert_eq!(st.step(), 1);
        let cached = st.derivatives().to_vec();
        let h2 = g.constant(field(2, [1, 2, 8, 8]));
        cell.step(&mut g, &vars, &mut st, h2).unwrap();
        assert_eq!(st.derivatives(), &cached[..]);
        assert_eq!(st.step(), 2);
    }

    #[test]
    fn finished_or_mismatched_state_is_rejected() {
        let (cell, store) = cell(2, true);
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut st = TaylorCellState::new();
        let h = g.constant(field(1, [1, 2, 8, 8]));
        cell.step(&mut g, &vars, &mut st, h).unwrap();
        let other = g.constant(field(1, [2, 2, 8, 8]));
        assert!(matches!(
            cell.step(&mut g, &vars, &mut st, other),
            Err(Error::SequenceNotReset(_))
        ));
        st.finish();
        assert!(matches!(
            cell.step(&mut g, &vars, &mut st, h),
            Err(Error::SequenceNotReset(_))
        ));
        st.reset();
        assert!(cell.step(&mut g, &vars, &mut st, other).is_ok());
    }

    #[test]
    fn gate_ranges_and_convexity() {
        let (cell, store) = cell(3, true);
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut st = TaylorCellState::new();
        for s in 0..4 {
            let h = g.constant(field(10 + s, [2, 2, 8, 8]));
            let out = cell.step(&mut g, &vars, &mut st, h).unwrap();
            let m = out.mcu.unwrap();
            for &v in [m.z, m.r, out.gain].iter() {
                assert!(g.value(v).data().iter().all(|&x| x > 0.0 && x < 1.0));
            }
            assert!(g.value(m.g).data().iter().all(|&x| x > -1.0 && x < 1.0));
            let between = |x: f64, a: f64, b: f64| x >= a.min(b) - 1e-12 && x <= a.max(b) + 1e-12;
            for i in 0..g.value(h).len() {
                let e = g.value(out.e).data()[i];
                assert!(between(e, g.value(m.g).data()[i], g.value(h).data()[i]));
                let hh = g.value(out.h_hat).data()[i];
                assert!(between(hh, g.value(out.h_tilde).data()[i], e));
            }
        }
    }

    #[test]
    fn without_mcu_memory_is_the_input() {
        let (cell, store) = cell(2, false);
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut st = TaylorCellState::new();
        let h = g.constant(field(3, [1, 2, 8, 8]));
        let out = cell.step(&mut g, &vars, &mut st, h).unwrap();
        assert!(out.mcu.is_none());
        assert_eq!(out.e, h);
    }
}
