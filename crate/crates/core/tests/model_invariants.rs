mod common;

use common::{jittered, random_x, toy_model};
use ial_core::cer::{counterfactual_from, CerInputs};
use ial_core::data::{Dataset, TimeSeriesInstance};
use ial_core::model::{seg, ContributionTarget, Task};
use ial_core::nap::{posterior, AnnotationStore};
use ial_core::tensor::{Matrix, Scalar};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_stays_in_range(seed in 0u64..100_000, scale in 0.0f64..3.0, with_z in any::<bool>()) {
        let model = toy_model(5, 4, 6, Task::Binary, 1);
        let params = jittered(&model, seed, scale);
        let x = random_x(5, 4, seed).map(|v| v * (1.0 + scale));
        let z = random_x(5, 4, seed + 1);
        let v = model.embed_inputs(&params, &x).unwrap();
        let a = model.forward_attention(&params, &v, with_z.then_some(&z)).unwrap();
        let s: f64 = a.beta.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-6);
        prop_assert!(a.beta.iter().all(|&b| b >= 0.0));
        prop_assert!(a.gamma.as_slice().iter().all(|g| g.abs() < 1.0));
    }

    #[test]
    fn contribution_sums_to_logit(seed in 0u64..100_000) {
        let model = toy_model(4, 3, 5, Task::Regression, 1);
        let params = jittered(&model, seed, 0.5);
        let x = random_x(4, 3, seed);
        let v = model.embed_inputs(&params, &x).unwrap();
        let a = model.forward_attention(&params, &v, None).unwrap();
        let grid = &model.contribution(&params, &a, &x, ContributionTarget::Output(0)).unwrap()[0];
        let logit = model.logits_with_override(&params, &a, &[]).unwrap()[0];
        let bias = params.get(seg::OUT_B).unwrap().get(0, 0);
        prop_assert!((grid.sum() + bias - logit).abs() < 1e-9);
    }
}

/// Independent recomputation: one forward pass through the tape for the
/// attention, then the prediction with and without the cell evaluated by hand.
fn by_hand(params: &ial_core::tensor::ParamVector, beta: &[f64], gamma: &Matrix<f64>, v: &Matrix<f64>, off: (usize, usize)) -> f64 {
    let w = params.get(seg::OUT_W).unwrap();
    let b = params.get(seg::OUT_B).unwrap().get(0, 0);
    let pred = |zero: bool| {
        let mut s = b;
        for t in 0..v.rows() {
            for d in 0..v.cols() {
                let g = if zero && (t, d) == off { 0.0 } else { gamma.get(t, d) };
                s += beta[t] * g * v.get(t, d) * w.get(d, 0);
            }
        }
        s.sigmoid()
    };
    (pred(false) - pred(true)).abs()
}

#[test]
fn counterfactual_matches_two_pass_recomputation() {
    let model = toy_model(6, 12, 8, Task::Binary, 1);
    let params = jittered(&model, 7, 0.4);
    let instances: Vec<TimeSeriesInstance> = (0..20)
        .map(|i| TimeSeriesInstance::new(format!("u{i}"), random_x(6, 12, 100 + i), vec![(i % 2) as f64]))
        .collect();
    let ds = Dataset::new(instances).unwrap();
    let store = AnnotationStore::new();
    let inp = CerInputs { model: &model, params: &params, train: &ds, valid: &ds, store: &store };
    let mut r = ial_core::rng::rng(3);
    use rand::Rng as _;
    for _ in 0..200 {
        let u = &ds.instances()[r.random_range(0..20)];
        let (t, d) = (r.random_range(0..6), r.random_range(0..12));
        let (score, delta) = inp.counterfactual(u, t, d).unwrap();
        let out = &model.infer(&params, &[&u.x], Some(&Matrix::zeros(6, 4))).unwrap()[0];
        let oracle = by_hand(&params, &out.attention.beta, &out.attention.gamma, &out.attention.v, (t, d));
        assert!((score - oracle).abs() < 1e-6, "({t}, {d}): {score} vs {oracle}");
        assert!((delta[0].abs() - score).abs() < 1e-15);
    }
}

#[test]
fn zero_attention_cells_score_exactly_zero() {
    let model = toy_model(4, 3, 5, Task::Binary, 1);
    let mut params = jittered(&model, 2, 0.4);
    // Feature 1 gets γ = tanh(0) = 0 everywhere.
    for name in [seg::GAMMA_W, seg::GAMMA_WZ] {
        let m = params.get_mut(name).unwrap();
        for r in 0..m.rows() {
            m.set(r, 1, 0.0);
        }
    }
    params.get_mut(seg::GAMMA_B).unwrap().set(0, 1, 0.0);
    // A very negative latent score at t = 2 drives β_2 to an exact 0.
    let wz = params.get_mut(seg::BETA_WZ).unwrap();
    for r in 0..wz.rows() {
        wz.set(r, 0, 1.0);
    }
    let mut z = Matrix::zeros(4, 4);
    for j in 0..4 {
        z.set(2, j, -1e4);
    }
    let x = random_x(4, 3, 9);
    let v = model.embed_inputs(&params, &x).unwrap();
    let a = model.forward_attention(&params, &v, Some(&z)).unwrap();
    assert_eq!(a.beta[2], 0.0);
    for t in 0..4 {
        assert_eq!(a.gamma.get(t, 1), 0.0);
        assert_eq!(counterfactual_from(&model, &params, &a, &[(t, 1)]).unwrap().0, 0.0);
    }
    for d in 0..3 {
        assert_eq!(counterfactual_from(&model, &params, &a, &[(2, d)]).unwrap().0, 0.0);
    }
}

#[test]
fn empty_store_posterior_is_prior() {
    let model = toy_model(3, 2, 4, Task::Binary, 1);
    let params = model.init_params(1);
    let ds = Dataset::new(vec![TimeSeriesInstance::new("a", random_x(3, 2, 1), vec![1.0])]).unwrap();
    let (mu, sigma) = posterior(&model, &params, &ds, &AnnotationStore::new()).unwrap();
    assert!(mu.as_slice().iter().all(|&m| m == 0.0));
    assert!(sigma.as_slice().iter().all(|&s| s == 1.0));
}
