//! Self-check suites behind `ial check`: reverse-mode gradients against
//! central differences, and influence scores against exact leave-one-out
//! retraining on a convex model.

use serde::Serialize;

use crate::cer::{influences, s_test, LogisticModel};
use crate::data::{generate_synthetic, Dataset, SyntheticSpec, TimeSeriesInstance};
use crate::error::Result;
use crate::model::{AttentionModel, ModelConfig, Task, TaskObjective};
use crate::nap::standard_normal;
use crate::tensor::{cg_solve, finite_diff_check, gradient, hvp, loss_value, CgOptions, ParamVector, WeightDecay};

#[derive(Clone, Debug, Serialize)]
pub struct GradientCheck {
    pub seed: u64,
    pub max_rel_error: f64,
    /// Segment with the largest error.
    pub worst_segment: String,
}

/// Finite-difference check on `models` seeded toy models (T=4, D=6,
/// hidden 8) with a random latent.
pub fn gradient_suite(models: u64) -> Result<Vec<GradientCheck>> {
    let mut cfg = ModelConfig::new(4, 6, 1, Task::Binary);
    (cfg.hidden_beta, cfg.hidden_gamma, cfg.d_z, cfg.r_dim) = (8, 8, 4, 8);
    let model = AttentionModel::new(cfg)?;
    (0..models)
        .map(|seed| {
            let params = model.init_params(seed);
            let data = generate_synthetic(&SyntheticSpec::binary(4, 4, 6, 5, seed))?.dataset;
            let z = standard_normal(4, 4, seed.wrapping_add(100));
            let obj = TaskObjective { model: &model, latent: Some(&z) };
            let report = finite_diff_check(&obj, &params, &data.refs(), 1e-5)?;
            let worst = report
                .segments
                .iter()
                .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
                .map(|s| s.name.clone())
                .unwrap_or_default();
            Ok(GradientCheck { seed, max_rel_error: report.max_rel_error(), worst_segment: worst })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct InfluenceCheck {
    pub n: usize,
    pub spearman: f64,
    pub pearson: f64,
    /// Influence score per training point.
    pub scores: Vec<f64>,
    /// `N·(L_val(θ) − L_val(θ₋ᵢ))` from exact refits.
    pub loo: Vec<f64>,
}

/// Newton iterations on mean cross-entropy plus `½·wd·‖θ‖²`.
pub fn fit_logistic(lm: &LogisticModel, train: &[&TimeSeriesInstance], wd: f64) -> Result<ParamVector> {
    let obj = WeightDecay { inner: lm, coefficient: wd, prefixes: &[] };
    let mut theta = lm.zero_params();
    let opts = CgOptions { damping: 0.0, max_iter: 500, tol: 1e-14 };
    for _ in 0..50 {
        let g = gradient(&obj, &theta, train)?.grad;
        if g.norm() < 1e-12 {
            break;
        }
        let step = cg_solve(|v| hvp(&obj, &theta, train, v), &g, &opts)?.x;
        theta.axpy(-1.0, &step)?;
    }
    Ok(theta)
}

/// Influence versus leave-one-out on a logistic model over `train`.
pub fn influence_vs_loo(train: &Dataset, valid: &Dataset, wd: f64, damping: f64) -> Result<InfluenceCheck> {
    let lm = LogisticModel::new(train.instances().first().map_or(0, |u| u.x.as_slice().len()));
    let refs = train.refs();
    let vrefs = valid.refs();
    let theta = fit_logistic(&lm, &refs, wd)?;
    let hess = WeightDecay { inner: &lm, coefficient: wd, prefixes: &[] };
    let opts = CgOptions { damping, max_iter: 500, tol: 1e-12 };
    let s = s_test(&lm, &hess, &theta, &refs, &vrefs, &opts)?.x;
    let scores = influences(&lm, &theta, &s, &refs)?;
    let val_loss = |p: &ParamVector| loss_value(&lm, p, &vrefs).map(|l| l * vrefs.len() as f64);
    let base = val_loss(&theta)?;
    let n = refs.len() as f64;
    let loo = (0..refs.len())
        .map(|i| {
            let rest: Vec<&TimeSeriesInstance> =
                refs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, u)| *u).collect();
            Ok(n * (base - val_loss(&fit_logistic(&lm, &rest, wd)?)?))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(InfluenceCheck {
        n: refs.len(),
        spearman: spearman(&scores, &loo),
        pearson: pearson(&scores, &loo),
        scores,
        loo,
    })
}

/// The N = 24 noisy logistic setting with damping 0.01.
pub fn influence_suite() -> Result<InfluenceCheck> {
    let spec = |n, seed| SyntheticSpec { noise_std: 1.5, ..SyntheticSpec::binary(n, 2, 3, 3, seed) };
    let train = generate_synthetic(&spec(24, 21))?.dataset;
    let valid = generate_synthetic(&spec(12, 22))?.dataset;
    influence_vs_loo(&train, &valid, 0.01, 0.01)
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

/// Rank correlation; ties share their average rank.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
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
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 35.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn suites_pass_their_thresholds() {
        assert!(gradient_suite(2).unwrap().iter().all(|g| g.max_rel_error < 1e-4));
        assert!(influence_suite().unwrap().spearman >= 0.7);
    }
}
