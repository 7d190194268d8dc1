//! A full interactive session with a simulated annotator: pretrain, then
//! rounds of rerank, annotate and recondition, with test metrics per round.

use ial_core::cer::CerConfig;
use ial_core::data::{generate_synthetic, SyntheticSpec};
use ial_core::ial::{Engine, OracleAnnotator, OracleConfig, SessionConfig};
use ial_core::model::Task;
use ial_core::nap::NapConfig;
use ial_core::train::TrainConfig;

/// Returns the number of recorded round states (pretrained model included).
pub fn run_example() -> usize {
    let data = generate_synthetic(&SyntheticSpec::binary(200, 4, 6, 4, 2)).unwrap();
    let cfg = SessionConfig {
        hidden_beta: 8,
        hidden_gamma: 8,
        d_z: 4,
        r_dim: 8,
        train: TrainConfig { max_epochs: 20, ..TrainConfig::default() },
        nap: NapConfig { steps: 40, ..NapConfig::default() },
        cer: CerConfig { k: 6, f: 3, p: 10, samples: 10, ..CerConfig::default() },
        ..SessionConfig::default()
    };
    let (mut engine, pre) = Engine::pretrained(&data.dataset, Task::Binary, cfg).unwrap();
    println!("pretrained: best epoch {}", pre.best_epoch);
    let cer = engine.config().cer.clone();
    let mut annotator = OracleAnnotator { config: OracleConfig::default(), seed: 2 };
    for _ in 0..3 {
        engine.run_round(&cer, &mut annotator).unwrap();
    }
    for st in engine.history() {
        let test = st.metrics.test.as_ref().map_or(f64::NAN, |m| m.value);
        println!("round {}: test metric {test:.3}, {} masks, params {}", st.s, st.metrics.store_size, &st.params_hash[..12]);
    }
    engine.history().len()
}

#[allow(dead_code)]
fn main() {
    run_example();
}
