mod common;

use std::collections::BTreeSet;

use common::{binary_data, influence_vs_loo, jittered, oracle_store, pearson, spearman, toy_model};
use ial_core::cer::{rank_desc, rerank, CerConfig, CerInputs, FeatScorer, InstScorer, RerankReport, ScoreFlag};
use ial_core::data::{generate_synthetic, Dataset, SyntheticSpec, TimeSeriesInstance};
use ial_core::model::Task;
use ial_core::nap::AnnotationStore;
use ial_core::tensor::{CgOptions, Matrix};
use proptest::prelude::*;

fn noisy(n: usize, seed: u64) -> Dataset {
    let spec = SyntheticSpec { noise_std: 1.5, ..SyntheticSpec::binary(n, 2, 3, 3, seed) };
    generate_synthetic(&spec).unwrap().dataset
}

#[test]
fn influence_tracks_leave_one_out() {
    let train = noisy(24, 1);
    let valid = noisy(12, 2);
    let (scores, loo) = influence_vs_loo(&train, &valid, 0.01, 0.0);
    let rho = spearman(&scores, &loo);
    let r = pearson(&scores, &loo);
    assert!(rho >= 0.7, "spearman {rho}");
    assert!(r >= 0.9, "pearson {r}");
}

#[test]
fn influence_with_damping_still_ranks() {
    let train = noisy(24, 3);
    let valid = noisy(12, 4);
    let (scores, loo) = influence_vs_loo(&train, &valid, 0.01, 0.01);
    assert!(spearman(&scores, &loo) >= 0.7);
}

struct Fixture {
    model: ial_core::model::AttentionModel,
    params: ial_core::tensor::ParamVector,
    train: Dataset,
    valid: Dataset,
    store: AnnotationStore,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let model = toy_model(3, 4, 5, Task::Binary, 1);
        let params = jittered(&model, seed, 0.3);
        let all = binary_data(40, 3, 4, 3, seed);
        let train = Dataset::new(all.instances()[..30].to_vec()).unwrap();
        let valid = Dataset::new(all.instances()[30..].to_vec()).unwrap();
        let ids: Vec<String> = train.iter().take(3).map(|u| u.id.clone()).collect();
        let store = oracle_store(&train, &[&ids[0], &ids[1], &ids[2]], 1);
        Self { model, params, train, valid, store }
    }

    fn inputs(&self) -> CerInputs<'_> {
        CerInputs { model: &self.model, params: &self.params, train: &self.train, valid: &self.valid, store: &self.store }
    }
}

fn cfg(inst: InstScorer, feat: FeatScorer) -> CerConfig {
    CerConfig { p: 5, k: 6, f: 3, inst_scorer: inst, feat_scorer: feat, samples: 8, seed: 9, ..CerConfig::default() }
}

fn check_shape(rep: &RerankReport, k: usize, f: usize) {
    assert_eq!(rep.entries.len(), k);
    let mut prev: Option<(f64, usize)> = None;
    for e in &rep.entries {
        assert_eq!(e.features.len(), f);
        if let Some((s, i)) = prev {
            assert!(s > e.score || (s == e.score && i < e.index), "instance order");
        }
        prev = Some((e.score, e.index));
        for w in e.features.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(a.score > b.score || (a.score == b.score && (a.t, a.d) < (b.t, b.d)), "feature order");
        }
    }
}

#[test]
fn rerank_shape_order_and_reproducibility() {
    let fx = Fixture::new(1);
    let none = BTreeSet::new();
    for (inst, feat) in [
        (InstScorer::Uncertainty, FeatScorer::Counterfactual),
        (InstScorer::Influence, FeatScorer::Influence),
        (InstScorer::Uncertainty, FeatScorer::Uncertainty),
        (InstScorer::Random, FeatScorer::Random),
    ] {
        let c = cfg(inst, feat);
        let a = rerank(&fx.inputs(), &c, 2, &none).unwrap();
        let b = rerank(&fx.inputs(), &c, 2, &none).unwrap();
        check_shape(&a, 6, 3);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.validation_ids.len(), 5);
        assert_eq!(a.cg.is_some(), inst == InstScorer::Influence || feat == FeatScorer::Influence);
    }
}

#[test]
fn random_rerank_depends_on_seed_and_round() {
    let fx = Fixture::new(2);
    let none = BTreeSet::new();
    let c = cfg(InstScorer::Random, FeatScorer::Random);
    let a = rerank(&fx.inputs(), &c, 1, &none).unwrap();
    let b = rerank(&fx.inputs(), &c, 2, &none).unwrap();
    let d = rerank(&fx.inputs(), &CerConfig { seed: 10, ..c }, 1, &none).unwrap();
    assert_ne!(a.entries, b.entries);
    assert_ne!(a.entries, d.entries);
}

#[test]
fn excluded_instances_never_selected() {
    let fx = Fixture::new(3);
    let exclude: BTreeSet<String> = fx.train.iter().step_by(2).map(|u| u.id.clone()).collect();
    let rep = rerank(&fx.inputs(), &cfg(InstScorer::Uncertainty, FeatScorer::Counterfactual), 1, &exclude).unwrap();
    assert!(rep.entries.iter().all(|e| !exclude.contains(&e.instance_id)));
    for e in &rep.entries {
        assert_eq!(fx.train.instances()[e.index].id, e.instance_id);
    }
}

#[test]
fn rerank_rejects_bad_budgets() {
    let fx = Fixture::new(4);
    let none = BTreeSet::new();
    let base = cfg(InstScorer::Random, FeatScorer::Random);
    assert!(rerank(&fx.inputs(), &CerConfig { k: 0, ..base.clone() }, 1, &none).is_err());
    assert!(rerank(&fx.inputs(), &CerConfig { k: 31, ..base.clone() }, 1, &none).is_err());
    assert!(rerank(&fx.inputs(), &CerConfig { f: 13, ..base.clone() }, 1, &none).is_err());
    assert!(rerank(&fx.inputs(), &CerConfig { p: 11, ..base }, 1, &none).is_err());
}

#[test]
fn uncertainty_vanishes_without_latent_spread() {
    let fx = Fixture::new(5);
    let inp = fx.inputs();
    let draws = inp.latent_draws(6, 1, Some(0.0)).unwrap();
    let pts = fx.train.refs();
    assert!(inp.instance_uncertainty(&pts, &draws).unwrap().iter().all(|&v| v < 1e-24));
    let grid = inp.feature_uncertainty(pts[0], &draws).unwrap();
    assert!(grid.as_slice().iter().all(|&v| v < 1e-24));
    let spread = inp.latent_draws(6, 1, None).unwrap();
    assert!(inp.instance_uncertainty(&pts, &spread).unwrap().iter().any(|&v| v > 0.0));
}

#[test]
fn validation_subset_takes_highest_losses() {
    let fx = Fixture::new(6);
    let inp = fx.inputs();
    let losses = inp.losses(&fx.valid).unwrap();
    let ids = inp.select_validation_subset(4).unwrap();
    let worst_kept = ids.iter().map(|id| losses[fx.valid.position(id).unwrap()]).fold(f64::INFINITY, f64::min);
    let dropped = fx.valid.iter().filter(|u| !ids.contains(&u.id)).map(|u| losses[fx.valid.position(&u.id).unwrap()]);
    for l in dropped {
        assert!(l <= worst_kept);
    }
}

#[test]
fn constant_feature_flagged_in_feature_influence() {
    let fx = Fixture::new(7);
    let train = Dataset::new(
        fx.train
            .iter()
            .map(|u| {
                let mut x = u.x.clone();
                for t in 0..3 {
                    x.set(t, 2, 0.5);
                }
                TimeSeriesInstance { x, ..u.clone() }
            })
            .collect(),
    )
    .unwrap();
    let inp = CerInputs { train: &train, ..fx.inputs() };
    let ids = inp.select_validation_subset(3).unwrap();
    let (s, _) = inp.s_test(&ids, &CgOptions::default(), 1e-4).unwrap();
    let scores = inp.feature_influence(&train.instances()[0], &s, &train.feature_stats()).unwrap();
    assert_eq!(scores.len(), 12);
    for f in &scores {
        assert_eq!(f.flags.contains(&ScoreFlag::ConstantFeature), f.d == 2);
        assert!(f.score >= 0.0);
    }
}

#[test]
fn counterfactual_grid_agrees_with_single_cells() {
    let fx = Fixture::new(8);
    let inp = fx.inputs();
    let u = &fx.train.instances()[4];
    let z = inp.mean_latent().unwrap();
    let grid = inp.counterfactual_grid(u, &z).unwrap();
    for t in 0..3 {
        for d in 0..4 {
            assert_eq!(grid.get(t, d), inp.counterfactual(u, t, d).unwrap().0);
        }
    }
    assert_eq!(grid.shape(), (3, 4));
    let _: &Matrix<f64> = &grid;
}

proptest! {
    #[test]
    fn rank_desc_orders_with_index_tiebreak(scores in prop::collection::vec(prop::sample::select(vec![0.0, 0.5, 1.0, 2.0, -1.0]), 0..40)) {
        let order = rank_desc(&scores);
        let mut sorted = order.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..scores.len()).collect::<Vec<_>>());
        for w in order.windows(2) {
            let (a, b) = (w[0], w[1]);
            prop_assert!(scores[a] > scores[b] || (scores[a] == scores[b] && a < b));
        }
    }
}
