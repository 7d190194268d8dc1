//! Reverse-mode gradients of the attention model against central
//! differences, segment by segment.

use ial_core::data::{generate_synthetic, SyntheticSpec};
use ial_core::model::{AttentionModel, ModelConfig, Task, TaskObjective};
use ial_core::tensor::finite_diff_check;

pub fn run_example() -> f64 {
    let data = generate_synthetic(&SyntheticSpec::binary(8, 4, 6, 5, 1)).unwrap().dataset;
    let mut cfg = ModelConfig::new(4, 6, 1, Task::Binary);
    cfg.hidden_beta = 8;
    cfg.hidden_gamma = 8;
    let model = AttentionModel::new(cfg).unwrap();
    let params = model.init_params(1);
    let obj = TaskObjective { model: &model, latent: None };
    let report = finite_diff_check(&obj, &params, &data.refs(), 1e-5).unwrap();
    for s in &report.segments {
        println!("{:<16} max relative error {:.2e}", s.name, s.max_rel_error);
    }
    let worst = report.max_rel_error();
    println!("worst segment: {worst:.2e}");
    worst
}

#[allow(dead_code)]
fn main() {
    run_example();
}
