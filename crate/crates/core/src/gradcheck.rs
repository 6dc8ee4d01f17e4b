//! Central finite-difference verification of analytic gradients (f64).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::convlstm::ConvLstm;
use crate::data::generate_translating_bump;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TaylorNet};
use crate::moment::{exact_delta_bank, MomentBasis};
use crate::params::{fan_in_uniform, Bound, ParamStore};
use crate::pde::PdeModel;
use crate::taylor_cell::{TaylorCell, TaylorCellState};
use crate::tensor::Tensor;
use crate::train::compute_loss;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    /// Perturbation is `step · max(1, |x|)`; differences at `step` and
    /// `step / 2` are combined by Richardson extrapolation.
    pub step: f64,
    /// Check at most this many entries per parameter (sampled); 0 checks all.
    pub max_entries: usize,
    /// Entries whose gradients are both below this fraction of the group's
    /// largest gradient are compared in absolute terms against that scale.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_entries: 64,
            floor: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub max_grad: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradReport {
    pub component: String,
    pub groups: Vec<GroupReport>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error() < tol
    }
}

/// Compare `∂f/∂p` from [`Graph::backward`] with central differences for
/// every tensor of `params`. `f` must build a scalar.
pub fn gradcheck(
    component: &str,
    params: &ParamStore<f64>,
    f: impl Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
    opts: &GradcheckOptions,
) -> Result<GradReport> {
    let eval = |p: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars = p.bind_frozen(&mut g);
        let y = f(&mut g, &vars)?;
        Ok(g.value(y).data()[0])
    };
    let mut g = Graph::new();
    let vars = params.bind(&mut g);
    let y = f(&mut g, &vars)?;
    let grads = vars.collect_grads(&g, &g.backward(y)?);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut groups = Vec::new();
    for (name, analytic) in &grads {
        if !analytic.all_finite() {
            return Err(Error::NonFinite(format!("analytic gradient of `{}`", name)));
        }
        let n = analytic.len();
        let idx: Vec<usize> = if opts.max_entries == 0 || n <= opts.max_entries {
            (0..n).collect()
        } else {
            (0..opts.max_entries).map(|_| rng.random_range(0..n)).collect()
        };
        let mut numeric = Vec::with_capacity(idx.len());
        for &i in &idx {
            let x = params.get(name)?.data()[i];
            let h = opts.step * x.abs().max(1.0);
            let mut central = |h: f64| -> Result<f64> {
                work.get_mut(name)?.data_mut()[i] = x + h;
                let up = eval(&work)?;
                work.get_mut(name)?.data_mut()[i] = x - h;
                let down = eval(&work)?;
                work.get_mut(name)?.data_mut()[i] = x;
                Ok((up - down) / (2.0 * h))
            };
            // Richardson: cancels the h² term of the central difference.
            let (coarse, fine) = (central(h)?, central(h / 2.0)?);
            numeric.push((4.0 * fine - coarse) / 3.0);
        }
        let max_grad = idx
            .iter()
            .zip(&numeric)
            .map(|(&i, nv)| analytic.data()[i].abs().max(nv.abs()))
            .fold(0.0, f64::max);
        let scale_floor = opts.floor * max_grad;
        let (mut rel, mut abs) = (0.0f64, 0.0f64);
        for (&i, &nv) in idx.iter().zip(&numeric) {
            let a = analytic.data()[i];
            let d = (a - nv).abs();
            abs = abs.max(d);
            let denom = a.abs().max(nv.abs()).max(scale_floor);
            if denom > 0.0 {
                rel = rel.max(d / denom);
            }
        }
        groups.push(GroupReport {
            name: name.clone(),
            checked: idx.len(),
            max_rel_error: rel,
            max_abs_error: abs,
            max_grad,
        });
    }
    Ok(GradReport {
        component: component.to_string(),
        groups,
    })
}

/// Differentiable operations with a built-in tiny-shape check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    /// `Σ (2x + 3)`, exact gradient 2.
    Linear,
    MomentLoss3,
    MomentLoss7,
    TemporalDerivative,
    TaylorCellStep,
    ConvLstmStep,
    ComputeLoss,
}

impl Component {
    pub const ALL: [Component; 7] = [
        Component::Linear,
        Component::MomentLoss3,
        Component::MomentLoss7,
        Component::TemporalDerivative,
        Component::TaylorCellStep,
        Component::ConvLstmStep,
        Component::ComputeLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::Linear => "linear",
            Component::MomentLoss3 => "moment_loss_3x3",
            Component::MomentLoss7 => "moment_loss_7x7",
            Component::TemporalDerivative => "temporal_derivative",
            Component::TaylorCellStep => "taylor_cell_step",
            Component::ConvLstmStep => "convlstm_step",
            Component::ComputeLoss => "compute_loss",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown gradcheck component `{}`", s)))
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Gradcheck `component` on random tiny inputs and parameters.
pub fn check_component(component: Component, opts: &GradcheckOptions) -> Result<GradReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6772_6164);
    let name = component.name();
    match component {
        Component::Linear => {
            let mut p = ParamStore::new();
            p.insert("x", uniform(&mut rng, &[3, 4], -2.0, 2.0));
            gradcheck(name, &p, |g, v| {
                let x = v.get("x")?;
                let y = g.scale(x, 2.0);
                let y = g.offset(y, 3.0);
                Ok(g.sum(y))
            }, opts)
        }
        Component::MomentLoss3 | Component::MomentLoss7 => {
            let k = if component == Component::MomentLoss3 { 3 } else { 7 };
            let pde = PdeModel::new("pde", 1, k)?;
            let mut p = ParamStore::new();
            p.insert(pde.bank_name(), fan_in_uniform(&mut rng, &[k * k, 1, k, k], k * k, 1.0));
            gradcheck(name, &p, |g, v| pde.moment_loss(g, v), opts)
        }
        Component::TemporalDerivative => {
            let pde = PdeModel::new("pde", 2, 7)?;
            let mut p = ParamStore::new();
            pde.init(&mut p, &mut rng, 1.0);
            p.insert("input.h", uniform(&mut rng, &[1, 2, 8, 8], -1.0, 1.0));
            let probe = uniform(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
            gradcheck(name, &p, |g, v| {
                let y = pde.temporal_derivative(g, v, v.get("input.h")?)?;
                weighted_sum(g, y, &probe)
            }, opts)
        }
        Component::TaylorCellStep => {
            let cell = TaylorCell::new("cell", 2, 3, 7, true)?;
            let mut p = ParamStore::new();
            cell.init(&mut p, &mut rng, 0.3);
            p.insert("input.h0", uniform(&mut rng, &[1, 2, 8, 8], -1.0, 1.0));
            p.insert("input.h1", uniform(&mut rng, &[1, 2, 8, 8], -1.0, 1.0));
            let probe = uniform(&mut rng, &[1, 2, 8, 8], -1.0, 1.0);
            gradcheck(name, &p, |g, v| {
                let mut st = TaylorCellState::new();
                cell.step(g, v, &mut st, v.get("input.h0")?)?;
                let out = cell.step(g, v, &mut st, v.get("input.h1")?)?;
                weighted_sum(g, out.h_hat, &probe)
            }, opts)
        }
        Component::ConvLstmStep => {
            let lstm = ConvLstm::new("lstm", 2, 3)?;
            let mut p = ParamStore::new();
            lstm.init(&mut p, &mut rng);
            p.insert("input.x", uniform(&mut rng, &[1, 2, 4, 4], -1.0, 1.0));
            p.insert("input.h", uniform(&mut rng, &[1, 2, 4, 4], -1.0, 1.0));
            let probe = uniform(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
            gradcheck(name, &p, |g, v| {
                let mut st = lstm.zero_state(g, &[1, 2, 4, 4])?;
                lstm.step(g, v, &mut st, v.get("input.h")?)?;
                let out = lstm.step(g, v, &mut st, v.get("input.x")?)?;
                weighted_sum(g, out.h, &probe)
            }, opts)
        }
        Component::ComputeLoss => {
            let cfg = ModelConfig {
                hidden_channels: 2,
                latent_channels: 2,
                lstm_layers: 1,
                input_len: 2,
                output_len: 2,
                ..ModelConfig::tiny()
            };
            let net = TaylorNet::new(cfg)?;
            let mut p: ParamStore<f64> = net.init(&mut rng);
            // Near-exact bank: keeps the moment term comparable to the image
            // term so finite differences are not swamped by cancellation.
            let bank = net.cell().pde().bank_name();
            let noise = uniform(&mut rng, p.get(&bank)?.shape(), -1e-3, 1e-3);
            p.set(&bank, exact_delta_bank::<f64>(cfg_kernel(&net))?.add(&noise)?)?;
            // A moving blob: white-noise frames make the high-order derivative
            // maps so large that rounding swamps the small gradients.
            let clip = generate_translating_bump(32, 32, (14.0, 15.0), (1.0, 0.5), 2.0, 4)?;
            let frames = (0..4).map(|t| clip.narrow0(t, 1)).collect::<Result<Vec<_>>>()?;
            gradcheck(name, &p, |g, v| {
                let fv: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
                let out = net.forward_sequence(g, v, &fv[..2], 2, None)?;
                Ok(compute_loss(g, &net, v, &out.predictions, &fv[2..], 1.0)?.total)
            }, opts)
        }
    }
}

fn cfg_kernel(net: &TaylorNet) -> usize {
    net.config().kernel
}

fn weighted_sum(g: &mut Graph<f64>, y: Var, probe: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(probe.clone());
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Checks a standalone moment basis end-to-end (used by tests of the basis).
pub fn basis_is_invertible(k: usize) -> Result<f64> {
    let basis = MomentBasis::new(k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
    let w = uniform(&mut rng, &[2, k, k], -1.0, 1.0);
    let back = basis.filters_from_moments(&basis.apply(&w)?)?;
    Ok(back.max_abs_diff(&w)?)
}
