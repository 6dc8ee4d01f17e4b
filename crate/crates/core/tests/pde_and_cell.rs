use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use taylornet::autodiff::Graph;
use taylornet::gradcheck::{check_component, Component, GradcheckOptions};
use taylornet::moment::{bank_orders, exact_delta_bank};
use taylornet::params::ParamStore;
use taylornet::pde::PdeModel;
use taylornet::taylor_cell::{tpu_predict, TaylorCell, TaylorCellState};
use taylornet::verify::tpu_anchoring_probe;
use taylornet::Tensor;

fn random_pde(seed: u64, channels: usize, k: usize) -> (PdeModel, ParamStore<f64>) {
    let pde = PdeModel::new("pde", channels, k).unwrap();
    let mut store = ParamStore::new();
    pde.init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), 1.0);
    (pde, store)
}

fn apply(pde: &PdeModel, store: &ParamStore<f64>, h: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let vars = store.bind_frozen(&mut g);
    let x = g.constant(h.clone());
    let y = pde.temporal_derivative(&mut g, &vars, x).unwrap();
    g.value(y).clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn temporal_derivative_is_shape_preserving_and_linear(
        seed in any::<u64>(),
        b in 1usize..3,
        c in 1usize..3,
        hw in 7usize..12,
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let (pde, store) = random_pde(seed, c, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let shape = [b, c, hw, hw + 1];
        let h1 = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let h2 = Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0));
        let mix = h1.scale(alpha).add(&h2.scale(beta)).unwrap();
        let (y1, y2, ym) = (apply(&pde, &store, &h1), apply(&pde, &store, &h2), apply(&pde, &store, &mix));
        prop_assert_eq!(ym.shape(), &shape[..]);
        let expect = y1.scale(alpha).add(&y2.scale(beta)).unwrap();
        let scale = 1.0 + expect.max_abs();
        prop_assert!(ym.max_abs_diff(&expect).unwrap() < 1e-12 * scale);
    }
}

#[test]
fn exact_filters_annihilate_constants_on_the_interior() {
    let k = 5;
    let pde = PdeModel::new("pde", 2, k).unwrap();
    let mut store = ParamStore::new();
    pde.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0), 1.0);
    store.set(&pde.bank_name(), exact_delta_bank::<f64>(k).unwrap()).unwrap();
    let (hh, ww) = (12, 13);
    let h = Tensor::from_fn([1, 2, hh, ww], |i| if i < hh * ww { 0.7 } else { -1.3 });

    let mut g = Graph::new();
    let vars = store.bind_frozen(&mut g);
    let x = g.constant(h);
    let d = pde.derivative_maps(&mut g, &vars, x).unwrap();
    let maps = g.value(d);
    let r = (k - 1) / 2;
    for c in 0..2 {
        let constant = if c == 0 { 0.7 } else { -1.3 };
        for (f, &(i, j)) in bank_orders(k).iter().enumerate() {
            for p in r..hh - r {
                for q in r..ww - r {
                    let v = maps.data()[((c * k * k + f) * hh + p) * ww + q];
                    let expect = if i + j == 0 { constant } else { 0.0 };
                    assert!((v - expect).abs() < 1e-12, "channel {} filter ({},{}) at ({},{}): {}", c, i, j, p, q, v);
                }
            }
        }
    }
}

#[test]
fn temporal_derivative_gradient_check() {
    let report = check_component(Component::TemporalDerivative, &GradcheckOptions::default()).unwrap();
    assert!(report.passes(1e-4), "{:?}", report);
}

#[test]
fn taylor_cell_step_gradient_check() {
    let report = check_component(Component::TaylorCellStep, &GradcheckOptions::default()).unwrap();
    assert!(report.passes(1e-4), "{:?}", report);
}

/// Max interior error of the order-3 Taylor extrapolation of a Gaussian
/// bump translating down the rows at `velocity` px/step, one step ahead.
fn advection_error(velocity: f64) -> f64 {
    let (k, n) = (5, 40);
    let pde = PdeModel::new("pde", 1, k).unwrap();
    let mut store = ParamStore::new();
    store.insert(pde.bank_name(), exact_delta_bank::<f64>(k).unwrap());
    // ∂h/∂t = −v ∂h/∂x for h(x − v t, y); (1,0) sits at bank index k.
    let mut mix = Tensor::zeros([1, k * k, 1, 1]);
    mix.data_mut()[k] = -velocity;
    store.insert(pde.mix_name(), mix);

    let bump = |x: f64, y: f64| (-((x - 18.0).powi(2) + (y - 20.0).powi(2)) / (2.0 * 5.0f64.powi(2))).exp();
    let h0 = Tensor::from_fn([1, 1, n, n], |i| bump((i / n) as f64, (i % n) as f64));
    let h1 = Tensor::from_fn([1, 1, n, n], |i| bump((i / n) as f64 - velocity, (i % n) as f64));

    let mut g = Graph::new();
    let vars = store.bind_frozen(&mut g);
    let x = g.constant(h0);
    let derivs = pde.taylor_derivatives(&mut g, &vars, x, 3).unwrap();
    let pred = tpu_predict(&mut g, &derivs, 1).unwrap();
    let pred = g.value(pred);
    // Two nested PDE applications see the padding up to 2·(k−1)/2 pixels in.
    let margin = k - 1;
    let mut worst: f64 = 0.0;
    for p in margin..n - margin {
        for q in margin..n - margin {
            worst = worst.max((pred.data()[p * n + q] - h1.data()[p * n + q]).abs());
        }
    }
    worst
}

#[test]
fn taylor_extrapolation_of_advection_is_second_order() {
    let errors: Vec<f64> = [1.0, 0.5, 0.25].iter().map(|&v| advection_error(v)).collect();
    assert!(errors[0] < 1e-2, "{:?}", errors);
    for pair in errors.windows(2) {
        // Local truncation error is O(v³); second-order accuracy demands at least 4×.
        assert!(pair[0] / pair[1] >= 4.0, "errors {:?}", errors);
    }
}

#[test]
fn extrapolation_is_anchored_to_the_first_frame() {
    for p in tpu_anchoring_probe(&[1, 5, 9], 17).unwrap() {
        assert!(p.passes(), "{:?}", p);
    }
}

fn run_cell(cell: &TaylorCell, store: &ParamStore<f64>, state: &mut TaylorCellState, seq: &[Tensor<f64>]) -> Vec<Tensor<f64>> {
    let mut g = Graph::new();
    let vars = store.bind_frozen(&mut g);
    let out = seq
        .iter()
        .map(|x| {
            let v = g.constant(x.clone());
            let o = cell.step(&mut g, &vars, state, v).unwrap();
            g.value(o.h_hat).clone()
        })
        .collect();
    state.finish();
    out
}

#[test]
fn reset_state_behaves_like_a_fresh_one() {
    let cell = TaylorCell::new("tc", 2, 3, 5, true).unwrap();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    cell.init(&mut store, &mut rng, 1.0);
    let mut seq = |n: usize| -> Vec<Tensor<f64>> {
        (0..n)
            .map(|_| Tensor::from_fn([1, 2, 8, 8], |_| rng.random_range(-1.0..1.0)))
            .collect()
    };
    let (a, b) = (seq(4), seq(4));

    let mut used = TaylorCellState::new();
    run_cell(&cell, &store, &mut used, &a);
    let mut g = Graph::new();
    let vars = store.bind_frozen(&mut g);
    let x = g.constant(b[0].clone());
    assert!(cell.step(&mut g, &vars, &mut used, x).is_err(), "finished state must refuse to step");

    used.reset();
    let after_reset = run_cell(&cell, &store, &mut used, &b);
    let fresh = run_cell(&cell, &store, &mut TaylorCellState::new(), &b);
    assert_eq!(after_reset, fresh);
}
