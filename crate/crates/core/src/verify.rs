//! Self-checks behind `taylornet verify-kernels`: moment fitting and
//! derivative accuracy, forced-gate identities, gradient checks and the
//! Taylor-prediction anchoring probe.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::gradcheck::{check_component, Component, GradReport, GradcheckOptions};
use crate::model::{ModelConfig, TaylorNet};
use crate::moment::{
    bank_orders, bank_targets, derivative_error, fit_bank_moments, MomentBasis, PlaneWave, SpatialFilter,
};
use crate::params::ParamStore;
use crate::taylor_cell::TaylorCell;
use crate::tensor::Tensor;

/// Pre-activation that saturates the logistic function to exactly 0 or 1.
const SATURATE: f64 = 1.0e3;

#[derive(Clone, Debug, Serialize)]
pub struct MomentFitReport {
    pub steps: usize,
    /// Largest per-filter moment loss after fitting.
    pub max_filter_loss: f64,
    /// ∂/∂x error of the fitted (1,0) filter on sin(0.3x + 0.2y), 64×64.
    pub derivative_error_unit: f64,
    pub derivative_error_half: f64,
    pub seconds: f64,
}

impl MomentFitReport {
    pub fn improvement(&self) -> f64 {
        self.derivative_error_unit / self.derivative_error_half
    }

    pub fn passes(&self) -> bool {
        self.max_filter_loss < 1e-6 && self.derivative_error_unit < 2e-2 && self.improvement() >= 1.8
    }
}

/// Fit a random 7×7 bank to its delta targets using only the moment loss,
/// then test the (1,0) filter as a derivative stencil.
pub fn moment_fit_check(steps: usize, seed: u64) -> Result<MomentFitReport> {
    let started = Instant::now();
    let k = 7;
    let basis = MomentBasis::new(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bank = Tensor::from_fn([k * k, 1, k, k], |_| rng.random_range(-0.1..0.1));
    fit_bank_moments(&mut bank, &basis, steps, 0.01)?;

    let m = basis.apply(&bank)?;
    let t = bank_targets::<f64>(k);
    let per = k * k;
    let max_filter_loss = (0..k * k)
        .map(|f| {
            (f * per..(f + 1) * per)
                .map(|i| (m.data()[i] - t.data()[i]).powi(2))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);

    let idx = bank_orders(k)
        .iter()
        .position(|&o| o == (1, 0))
        .expect("bank includes (1,0)");
    let filter = SpatialFilter::new(k, bank.data()[idx * per..(idx + 1) * per].to_vec(), (1, 0))?;
    let wave = PlaneWave {
        kx: 0.3,
        ky: 0.2,
        phase: 0.0,
    };
    Ok(MomentFitReport {
        steps,
        max_filter_loss,
        derivative_error_unit: derivative_error(&filter, &wave, 1.0, 64)?,
        derivative_error_half: derivative_error(&filter, &wave, 0.5, 64)?,
        seconds: started.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct GateReport {
    pub trials: usize,
    /// Largest absolute deviation seen for each identity.
    pub z0_e_equals_input: f64,
    pub z1_e_equals_candidate: f64,
    pub k0_hat_equals_tilde: f64,
    pub k1_hat_equals_memory: f64,
}

impl GateReport {
    pub fn max_deviation(&self) -> f64 {
        [
            self.z0_e_equals_input,
            self.z1_e_equals_candidate,
            self.k0_hat_equals_tilde,
            self.k1_hat_equals_memory,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn force_bias(store: &mut ParamStore<f64>, weight: &str, bias: &str, value: impl Fn(usize) -> f64) -> Result<()> {
    let w = store.get_mut(weight)?;
    w.data_mut().iter_mut().for_each(|v| *v = 0.0);
    let b = store.get_mut(bias)?;
    b.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = value(i));
    Ok(())
}

fn max_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    a.max_abs_diff(b)
}

/// Force each gate to 0 and 1 through its own bias (weights zeroed) on
/// random cells and inputs, and measure how far the identities are off.
pub fn gate_identity_check(trials: usize, seed: u64) -> Result<GateReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = GateReport {
        trials,
        ..Default::default()
    };
    for _ in 0..trials {
        let c = rng.random_range(1..=3);
        let cell = TaylorCell::new("tc", c, 2, 3, true)?;
        let mut base = ParamStore::new();
        cell.init(&mut base, &mut rng, 1.0);
        let shape = [rng.random_range(1..=2), c, 5, 5];
        let e_prev = Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0));
        let h_in = Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0));
        let h_tilde = Tensor::from_fn(shape, |_| rng.random_range(-2.0..2.0));

        for z in [0.0, 1.0] {
            let mut store = base.clone();
            let gates = cell.gates_layer();
            // First c channels are z; r keeps a random bias.
            let r_bias: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let zb = if z == 0.0 { -SATURATE } else { SATURATE };
            force_bias(&mut store, &gates.weight_name(), &gates.bias_name(), |i| {
                if i < c {
                    zb
                } else {
                    r_bias[i - c]
                }
            })?;
            let mut g = Graph::new();
            let vars = store.bind_frozen(&mut g);
            let ev = g.constant(e_prev.clone());
            let hv = g.constant(h_in.clone());
            let out = cell.mcu_update(&mut g, &vars, ev, hv)?;
            if z == 0.0 {
                rep.z0_e_equals_input = rep.z0_e_equals_input.max(max_diff(g.value(out.e), &h_in)?);
            } else {
                let d = max_diff(g.value(out.e), g.value(out.g))?;
                rep.z1_e_equals_candidate = rep.z1_e_equals_candidate.max(d);
            }
        }
        for kv in [0.0, 1.0] {
            let mut store = base.clone();
            let gain = cell.gain_layer();
            let kb = if kv == 0.0 { -SATURATE } else { SATURATE };
            force_bias(&mut store, &gain.weight_name(), &gain.bias_name(), |_| kb)?;
            let mut g = Graph::new();
            let vars = store.bind_frozen(&mut g);
            let ht = g.constant(h_tilde.clone());
            let ev = g.constant(e_prev.clone());
            let (hat, _) = cell.correct(&mut g, &vars, ht, ev)?;
            if kv == 0.0 {
                rep.k0_hat_equals_tilde = rep.k0_hat_equals_tilde.max(max_diff(g.value(hat), &h_tilde)?);
            } else {
                rep.k1_hat_equals_memory = rep.k1_hat_equals_memory.max(max_diff(g.value(hat), &e_prev)?);
            }
        }
    }
    Ok(rep)
}

/// Run every gradient-check component in double precision.
pub fn gradient_suite(opts: &GradcheckOptions) -> Result<Vec<GradReport>> {
    Component::ALL.iter().map(|&c| check_component(c, opts)).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct AnchorProbe {
    pub t: usize,
    /// Largest |∂ sum(h̃_t) / ∂ frame_i| over frames i ≥ 1.
    pub later_frames_max_grad: f64,
    /// Same for frame 0, which must be nonzero for the probe to mean anything.
    pub first_frame_max_grad: f64,
}

impl AnchorProbe {
    pub fn passes(&self) -> bool {
        self.later_frames_max_grad == 0.0 && self.first_frame_max_grad > 0.0
    }
}

/// Backpropagate `sum(h̃_t)` to the input frames of a random small model.
pub fn tpu_anchoring_probe(ts: &[usize], seed: u64) -> Result<Vec<AnchorProbe>> {
    let max_t = *ts.iter().max().ok_or_else(|| Error::invalid("no probe steps"))?;
    if ts.contains(&0) {
        return Err(Error::invalid("probe steps start at 1"));
    }
    let cfg = ModelConfig {
        hidden_channels: 4,
        latent_channels: 2,
        lstm_layers: 1,
        input_len: max_t + 1,
        ..ModelConfig::tiny()
    };
    let net = TaylorNet::new(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params: ParamStore<f64> = net.init(&mut rng);
    let mut out = Vec::with_capacity(ts.len());
    for &t in ts {
        let mut g = Graph::new();
        let vars = params.bind_frozen(&mut g);
        let shape = [1, cfg.frame_channels, cfg.frame_height, cfg.frame_width];
        let frames: Vec<_> = (0..cfg.input_len)
            .map(|_| g.param(Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))))
            .collect();
        let seq = net.forward_sequence(&mut g, &vars, &frames, 0, None)?;
        let probe = seq
            .probes
            .iter()
            .find(|p| p.t == t)
            .ok_or_else(|| Error::invalid(format!("no probe at t = {}", t)))?;
        let h = probe
            .h_tilde
            .ok_or_else(|| Error::invalid("Taylor branch is disabled"))?;
        let loss = g.sum(h);
        let grads = g.backward(loss)?;
        let grad_max = |i: usize| grads.get(frames[i]).map(|t| t.max_abs()).unwrap_or(0.0);
        out.push(AnchorProbe {
            t,
            later_frames_max_grad: (1..frames.len()).map(grad_max).fold(0.0, f64::max),
            first_frame_max_grad: grad_max(0),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gates_are_exact() {
        let r = gate_identity_check(5, 1).unwrap();
        assert_eq!(r.max_deviation(), 0.0);
    }

    #[test]
    fn anchoring_holds_on_a_short_probe() {
        for p in tpu_anchoring_probe(&[1, 3], 2).unwrap() {
            assert!(p.passes(), "{:?}", p);
        }
    }

    #[test]
    fn short_moment_fit_improves_with_resolution() {
        let r = moment_fit_check(2000, 0).unwrap();
        assert!(r.passes(), "{:?}", r);
    }
}
