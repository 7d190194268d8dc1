//! Influence of training points on a validation loss through one damped
//! conjugate-gradient solve, checked against an exact leave-one-out refit.

use ial_core::cer::{influences, s_test, LogisticModel};
use ial_core::data::{generate_synthetic, SyntheticSpec, TimeSeriesInstance};
use ial_core::tensor::{cg_solve, gradient, hvp, loss_value, CgOptions, ParamVector, WeightDecay};

const WD: f64 = 0.01;

fn fit(lm: &LogisticModel, train: &[&TimeSeriesInstance]) -> ParamVector {
    let obj = WeightDecay { inner: lm, coefficient: WD, prefixes: &[] };
    let mut theta = lm.zero_params();
    let opts = CgOptions { damping: 0.0, max_iter: 500, tol: 1e-14 };
    for _ in 0..50 {
        let g = gradient(&obj, &theta, train).unwrap().grad;
        if g.norm() < 1e-12 {
            break;
        }
        let step = cg_solve(|v| hvp(&obj, &theta, train, v), &g, &opts).unwrap().x;
        theta.axpy(-1.0, &step).unwrap();
    }
    theta
}

/// Returns (predicted, actual) change for the most influential point.
pub fn run_example() -> (f64, f64) {
    let spec = |n, seed| SyntheticSpec { noise_std: 1.5, ..SyntheticSpec::binary(n, 2, 3, 3, seed) };
    let train = generate_synthetic(&spec(40, 1)).unwrap().dataset;
    let valid = generate_synthetic(&spec(20, 2)).unwrap().dataset;
    let lm = LogisticModel::new(6);
    let refs = train.refs();
    let theta = fit(&lm, &refs);

    let hess = WeightDecay { inner: &lm, coefficient: WD, prefixes: &[] };
    let opts = CgOptions { damping: 0.01, ..CgOptions::default() };
    let sol = s_test(&lm, &hess, &theta, &refs, &valid.refs(), &opts).unwrap();
    println!("cg: {} iterations, residual {:.2e}", sol.iterations, sol.residual);
    let scores = influences(&lm, &theta, &sol.x, &refs).unwrap();

    let best = ial_core::cer::rank_desc(&scores)[0];
    let rest: Vec<&TimeSeriesInstance> = refs.iter().enumerate().filter(|(i, _)| *i != best).map(|(_, u)| *u).collect();
    let theta_loo = fit(&lm, &rest);
    let sum_loss = |p: &ParamVector| loss_value(&lm, p, &valid.refs()).unwrap() * valid.len() as f64;
    let actual = sum_loss(&theta_loo) - sum_loss(&theta);
    let predicted = -scores[best] / train.len() as f64;
    println!("most influential: {} (score {:.4})", train.instances()[best].id, scores[best]);
    println!("validation loss change on removal: predicted {predicted:.5}, refit {actual:.5}");
    (predicted, actual)
}

#[allow(dead_code)]
fn main() {
    run_example();
}
