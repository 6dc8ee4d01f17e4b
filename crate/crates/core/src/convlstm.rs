//! Stacked convolutional LSTM used as the residual branch.
//!
//! Each layer sees `(x, h_prev)` through one 3×3 convolution producing the
//! input, forget and output gates and the cell candidate, in that order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::layers::ConvLayer;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstm {
    channels: usize,
    layers: Vec<ConvLayer>,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerState {
    pub h: Var,
    pub c: Var,
}

/// Per-layer hidden and cell maps, bound to one graph.
#[derive(Clone, Debug, Default)]
pub struct ConvLstmState {
    layers: Vec<LayerState>,
}

impl ConvLstmState {
    pub fn layers(&self) -> &[LayerState] {
        &self.layers
    }

    pub fn is_initialized(&self) -> bool {
        !self.layers.is_empty()
    }

    /// Value-level copy that can outlive the graph.
    pub fn snapshot<T: Scalar>(&self, g: &Graph<T>) -> ConvLstmSnapshot {
        ConvLstmSnapshot {
            shape: self
                .layers
                .first()
                .map(|l| g.shape(l.h).to_vec())
                .unwrap_or_default(),
            layers: self
                .layers
                .iter()
                .map(|l| (g.value(l.h).to_f64_vec(), g.value(l.c).to_f64_vec()))
                .collect(),
        }
    }
}

/// Serializable form of a [`ConvLstmState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLstmSnapshot {
    pub shape: Vec<usize>,
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ConvLstmSnapshot {
    /// Rebuild the state as constants of `g`.
    pub fn restore<T: Scalar>(&self, g: &mut Graph<T>) -> Result<ConvLstmState> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (h, c) in &self.layers {
            let h = g.constant(Tensor::from_f64_slice(self.shape.clone(), h)?);
            let c = g.constant(Tensor::from_f64_slice(self.shape.clone(), c)?);
            layers.push(LayerState { h, c });
        }
        Ok(ConvLstmState { layers })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmGates {
    pub input: Var,
    pub forget: Var,
    pub output: Var,
    pub candidate: Var,
}

#[derive(Clone, Debug)]
pub struct LstmOutput {
    pub h: Var,
    pub gates: Vec<LstmGates>,
}

impl ConvLstm {
    pub fn new(prefix: &str, channels: usize, depth: usize) -> Result<Self> {
        if channels == 0 || depth == 0 {
            return Err(Error::invalid("ConvLSTM needs at least one channel and one layer"));
        }
        let layers = (0..depth)
            .map(|i| ConvLayer::same(format!("{prefix}.layer{i}"), 2 * channels, 4 * channels, 3, true))
            .collect();
        Ok(Self { channels, layers })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// Weights fan-in uniform; biases zero except the forget gate at 1.
    pub fn init<T: Scalar, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let c = self.channels;
        for layer in &self.layers {
            layer.init_zero_bias(store, rng, 1.0);
            let bias = Tensor::from_fn([4 * c], |i| {
                if (c..2 * c).contains(&i) {
                    T::one()
                } else {
                    T::zero()
                }
            });
            store.insert(layer.bias_name(), bias);
        }
    }

    /// All-zero state for inputs of `shape` (`[B, C, H, W]`).
    pub fn zero_state<T: Scalar>(&self, g: &mut Graph<T>, shape: &[usize]) -> Result<ConvLstmState> {
        if shape.len() != 4 || shape[1] != self.channels {
            return Err(Error::shape(format!(
                "ConvLSTM with {} channels cannot hold state of shape {:?}",
                self.channels, shape
            )));
        }
        let layers = (0..self.depth())
            .map(|_| LayerState {
                h: g.constant(Tensor::zeros(shape.to_vec())),
                c: g.constant(Tensor::zeros(shape.to_vec())),
            })
            .collect();
        Ok(ConvLstmState { layers })
    }

    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        vars: &Bound,
        state: &mut ConvLstmState,
        x: Var,
    ) -> Result<LstmOutput> {
        if !state.is_initialized() {
            return Err(Error::invalid("ConvLSTM state is not initialized"));
        }
        if state.layers.len() != self.depth() {
            return Err(Error::shape(format!(
                "state has {} layers, model has {}",
                state.layers.len(),
                self.depth()
            )));
        }
        let mut input = x;
        let mut gates = Vec::with_capacity(self.depth());
        for (layer, st) in self.layers.iter().zip(state.layers.iter_mut()) {
            if g.shape(input) != g.shape(st.h) {
                return Err(Error::shape(format!(
                    "ConvLSTM input {:?} vs state {:?}",
                    g.shape(input),
                    g.shape(st.h)
                )));
            }
            let xh = g.concat1(&[input, st.h])?;
            let pre = layer.forward(g, vars, xh)?;
            let parts = g.chunk1(pre, 4)?;
            let i = g.sigmoid(parts[0]);
            let f = g.sigmoid(parts[1]);
            let o = g.sigmoid(parts[2]);
            let cand = g.tanh(parts[3]);
            let fc = g.mul(f, st.c)?;
            let ig = g.mul(i, cand)?;
            let c = g.add(fc, ig)?;
            let tc = g.tanh(c);
            let h = g.mul(o, tc)?;
            *st = LayerState { h, c };
            gates.push(LstmGates {
                input: i,
                forget: f,
                output: o,
                candidate: cand,
            });
            input = h;
        }
        Ok(LstmOutput { h: input, gates })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ConvLstm, ParamStore<f64>) {
        let lstm = ConvLstm::new("res", 2, 3).unwrap();
        let mut store = ParamStore::new();
        lstm.init(&mut store, &mut ChaCha8Rng::seed_from_u64(9));
        (lstm, store)
    }

    fn input(seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn([2, 2, 5, 5], |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn zero_input_zero_state_zero_bias_gives_zero() {
        let (lstm, mut store) = setup();
        for l in lstm.layers() {
            store.set(&l.bias_name(), Tensor::zeros([8])).unwrap();
        }
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut st = lstm.zero_state(&mut g, &[1, 2, 4, 4]).unwrap();
        let x = g.constant(Tensor::zeros([1, 2, 4, 4]));
        let out = lstm.step(&mut g, &vars, &mut st, x).unwrap();
        assert!(g.value(out.h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let (lstm, store) = setup();
        let b = store.get(&lstm.layers()[0].bias_name()).unwrap().data().to_vec();
        assert_eq!(b, vec![0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn gate_ranges() {
        let (lstm, store) = setup();
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut st = lstm.zero_state(&mut g, &[2, 2, 5, 5]).unwrap();
        for s in 0..3 {
            let x = g.constant(input(s));
            let out = lstm.step(&mut g, &vars, &mut st, x).unwrap();
            assert_eq!(g.shape(out.h), &[2, 2, 5, 5]);
            for gate in &out.gates {
                for v in [gate.input, gate.forget, gate.output] {
                    assert!(g.value(v).data().iter().all(|&x| x > 0.0 && x < 1.0));
                }
                assert!(g.value(gate.candidate).data().iter().all(|&x| x > -1.0 && x < 1.0));
            }
        }
    }

    #[test]
    fn uninitialized_or_mismatched_state_is_rejected() {
        let (lstm, store) = setup();
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let x = g.constant(input(0));
        let mut empty = ConvLstmState::default();
        assert!(lstm.step(&mut g, &vars, &mut empty, x).is_err());
        let mut st = lstm.zero_state(&mut g, &[2, 2, 4, 4]).unwrap();
        assert!(lstm.step(&mut g, &vars, &mut st, x).is_err());
        assert!(lstm.zero_state(&mut g, &[2, 3, 5, 5]).is_err());
    }

    #[test]
    fn snapshot_round_trip_continues_identically() {
        let (lstm, store) = setup();
        let mut g = Graph::new();
        let vars = store.bind(&mut g);
        let mut st = lstm.zero_state(&mut g, &[2, 2, 5, 5]).unwrap();
        for s in 0..2 {
            let x = g.constant(input(s));
            lstm.step(&mut g, &vars, &mut st, x).unwrap();
        }
        let json = serde_json::to_string(&st.snapshot(&g)).unwrap();

        let mut continued = Vec::new();
        for s in 2..4 {
            let x = g.constant(input(s));
            let out = lstm.step(&mut g, &vars, &mut st, x).unwrap();
            continued.push(g.value(out.h).clone());
        }

        let mut g2 = Graph::new();
        let vars2 = store.bind(&mut g2);
        let snap: ConvLstmSnapshot = serde_json::from_str(&json).unwrap();
        let mut st2 = snap.restore(&mut g2).unwrap();
        for (k, s) in (2..4).enumerate() {
            let x = g2.constant(input(s));
            let out = lstm.step(&mut g2, &vars2, &mut st2, x).unwrap();
            assert_eq!(g2.value(out.h), &continued[k]);
        }
    }
}
