//! The reranking step: pick K instances and F cells per instance for a
//! human to review, under each scorer combination.

use std::collections::BTreeSet;

use ial_core::cer::{rerank, CerConfig, FeatScorer, InstScorer};
use ial_core::data::{generate_synthetic, SyntheticSpec};
use ial_core::ial::{Engine, SessionConfig};
use ial_core::model::Task;
use ial_core::train::TrainConfig;

pub fn run_example() -> usize {
    let data = generate_synthetic(&SyntheticSpec::binary(150, 4, 6, 4, 5)).unwrap();
    println!("relevant cells: {:?}", data.cells);
    let cfg = SessionConfig {
        hidden_beta: 8,
        hidden_gamma: 8,
        d_z: 4,
        r_dim: 8,
        train: TrainConfig { max_epochs: 20, ..TrainConfig::default() },
        ..SessionConfig::default()
    };
    let (engine, _) = Engine::pretrained(&data.dataset, Task::Binary, cfg).unwrap();
    let mut shown = 0;
    for (inst, feat) in [
        (InstScorer::Uncertainty, FeatScorer::Counterfactual),
        (InstScorer::Influence, FeatScorer::Influence),
        (InstScorer::Random, FeatScorer::Random),
    ] {
        let cer = CerConfig { k: 4, f: 3, p: 10, samples: 10, inst_scorer: inst, feat_scorer: feat, ..CerConfig::default() };
        let report = rerank(&engine.cer_inputs(), &cer, 1, &BTreeSet::new()).unwrap();
        println!("{inst:?} / {feat:?}");
        if let Some(cg) = &report.cg {
            println!("  cg: {} iterations, residual {:.2e}", cg.iterations, cg.residual);
        }
        for e in &report.entries {
            let cells: Vec<String> = e.features.iter().map(|f| format!("({},{}) {:.3}", f.t, f.d, f.score)).collect();
            println!("  {} score {:.4}: {}", e.instance_id, e.score, cells.join(", "));
        }
        shown += report.entries.len();
    }
    shown
}

#[allow(dead_code)]
fn main() {
    run_example();
}
