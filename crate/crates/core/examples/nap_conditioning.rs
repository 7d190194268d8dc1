//! Attention conditioned on a store of human masks: the posterior over the
//! latent, one adaptation pass, and the effect of a new mask without any
//! further training.

use ial_core::data::{generate_synthetic, SyntheticSpec};
use ial_core::ial::{oracle_mask, OracleConfig, OracleScope};
use ial_core::model::{AttentionModel, ModelConfig, Task};
use ial_core::nap::{adapt_train, conditioned_attention, posterior, Annotation, AnnotationStore, LatentMode, NapConfig};

/// Returns the L1 change in γ caused by appending one mask.
pub fn run_example() -> f64 {
    let data = generate_synthetic(&SyntheticSpec::binary(80, 4, 6, 4, 3)).unwrap();
    let pool = &data.dataset;
    println!("relevant cells: {:?}", data.cells);
    let mut cfg = ModelConfig::new(4, 6, 1, Task::Binary);
    (cfg.hidden_beta, cfg.hidden_gamma, cfg.d_z, cfg.r_dim) = (8, 8, 4, 8);
    let model = AttentionModel::new(cfg).unwrap();
    let params = model.init_params(3);

    let oracle = OracleConfig { scope: OracleScope::FullGrid, ..OracleConfig::default() };
    let annotate = |i: usize| Annotation {
        round: 1,
        annotator: "oracle".into(),
        ts: 0,
        mask: oracle_mask(&pool.instances()[i], &[], &oracle, i as u64).unwrap(),
    };
    let mut store = AnnotationStore::new();
    for i in 0..6 {
        store.append(annotate(i)).unwrap();
    }

    let mean_sigma = |s: &AnnotationStore, p| {
        let (_, sigma) = posterior(&model, p, pool, s).unwrap();
        sigma.sum() / sigma.as_slice().len() as f64
    };
    println!("mean sigma: prior {:.3}, 6 masks {:.3}", mean_sigma(&AnnotationStore::new(), &params), mean_sigma(&store, &params));

    let nap = NapConfig { steps: 60, lr: 1e-2, ..NapConfig::default() };
    let adapted = adapt_train(&model, &params, pool, &store, &nap).unwrap();
    println!("adaptation objective: first {:.3}, last {:.3}", adapted.log[0], adapted.log[nap.steps - 1]);
    let theta = adapted.params;

    let probe = &pool.instances()[70];
    let before = conditioned_attention(&model, &theta, probe, pool, &store, LatentMode::Mean, 0).unwrap();
    store.append(annotate(6)).unwrap();
    let after = conditioned_attention(&model, &theta, probe, pool, &store, LatentMode::Mean, 0).unwrap();
    let moved: f64 = before.gamma.as_slice().iter().zip(after.gamma.as_slice()).map(|(a, b)| (a - b).abs()).sum();
    println!("gamma L1 change from one new mask, parameters fixed: {moved:.4}");
    moved
}

#[allow(dead_code)]
fn main() {
    run_example();
}
