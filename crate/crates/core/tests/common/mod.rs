#![allow(dead_code)]

use ial_core::data::{generate_synthetic, Dataset, SyntheticSpec};
use ial_core::ial::{oracle_mask, OracleConfig, OracleScope};
use ial_core::model::{AttentionModel, ModelConfig, Task};
use ial_core::nap::{Annotation, AnnotationStore, AttentionMask};
use ial_core::tensor::{Matrix, ParamVector};

/// Small model with every width set explicitly.
pub fn toy_model(t: usize, d: usize, hidden: usize, task: Task, l: usize) -> AttentionModel {
    let mut c = ModelConfig::new(t, d, l, task);
    c.hidden_beta = hidden;
    c.hidden_gamma = hidden;
    c.d_z = 4;
    c.r_dim = hidden;
    AttentionModel::new(c).unwrap()
}

/// Parameters with every segment (including biases and the identity
/// embedding) randomised, so no code path is trivially zero.
pub fn jittered(model: &AttentionModel, seed: u64, scale: f64) -> ParamVector {
    let base = model.init_params(seed);
    let noise = model.init_params(seed.wrapping_add(1_000_003));
    let flat: Vec<f64> = base
        .flatten()
        .iter()
        .zip(noise.flatten())
        .enumerate()
        .map(|(i, (a, b))| a + scale * (b + 0.1 * ((i % 7) as f64 - 3.0)))
        .collect();
    base.with_flat(&flat).unwrap()
}

pub fn binary_data(n: usize, t: usize, d: usize, sparsity: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec::binary(n, t, d, sparsity, seed)).unwrap().dataset
}

pub fn random_x(t: usize, d: usize, seed: u64) -> Matrix<f64> {
    ial_core::nap::standard_normal(t, d, seed)
}

/// Full-grid oracle masks for the given instances, appended at `round`.
pub fn oracle_store(pool: &Dataset, ids: &[&str], round: usize) -> AnnotationStore {
    let cfg = OracleConfig {
        scope: OracleScope::FullGrid,
        ..OracleConfig::default()
    };
    let mut store = AnnotationStore::new();
    for (i, id) in ids.iter().enumerate() {
        let mask = oracle_mask(pool.require(id).unwrap(), &[], &cfg, i as u64).unwrap();
        store
            .append(Annotation {
                round,
                annotator: "oracle".into(),
                ts: 0,
                mask,
            })
            .unwrap();
    }
    store
}

pub fn annotation(mask: AttentionMask, round: usize) -> Annotation {
    Annotation {
        round,
        annotator: "test".into(),
        ts: 0,
        mask,
    }
}

pub fn l1(a: &Matrix<f64>, b: &Matrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).sum()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&ranks(a), &ranks(b))
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            r[idx[k]] = avg;
        }
        i = j + 1;
    }
    r
}

use ial_core::cer::{influences, s_test, LogisticModel};
use ial_core::data::TimeSeriesInstance;
use ial_core::tensor::{cg_solve, gradient, hvp, loss_value, CgOptions, WeightDecay};

/// Newton's method on mean cross-entropy plus `½·wd·‖θ‖²` until the
/// gradient norm is below 1e-12.
pub fn fit_logistic(lm: &LogisticModel, train: &[&TimeSeriesInstance], wd: f64) -> ParamVector {
    let obj = WeightDecay { inner: lm, coefficient: wd, prefixes: &[] };
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

/// Influence scores and exact leave-one-out deltas `N·(L_val(θ) − L_val(θ₋ᵢ))`
/// on a convex logistic model.
pub fn influence_vs_loo(train: &Dataset, valid: &Dataset, wd: f64, damping: f64) -> (Vec<f64>, Vec<f64>) {
    let lm = LogisticModel::new(train.instances()[0].x.len());
    let refs = train.refs();
    let vrefs = valid.refs();
    let theta = fit_logistic(&lm, &refs, wd);
    let hess = WeightDecay { inner: &lm, coefficient: wd, prefixes: &[] };
    let opts = CgOptions { damping, max_iter: 500, tol: 1e-12 };
    let s = s_test(&lm, &hess, &theta, &refs, &vrefs, &opts).unwrap().x;
    let scores = influences(&lm, &theta, &s, &refs).unwrap();
    let val_loss = |p: &ParamVector| loss_value(&lm, p, &vrefs).unwrap() * vrefs.len() as f64;
    let base = val_loss(&theta);
    let n = refs.len() as f64;
    let loo = (0..refs.len())
        .map(|i| {
            let rest: Vec<&TimeSeriesInstance> = refs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, u)| *u).collect();
            n * (base - val_loss(&fit_logistic(&lm, &rest, wd)))
        })
        .collect();
    (scores, loo)
}
