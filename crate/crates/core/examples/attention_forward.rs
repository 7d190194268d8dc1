//! Forward pass of the attention model: time attention β, feature
//! attention γ, the prediction and its per-cell contributions.

use ial_core::data::{generate_synthetic, SyntheticSpec};
use ial_core::model::{AttentionModel, ContributionTarget, ModelConfig, Task};

pub fn run_example() -> f64 {
    let data = generate_synthetic(&SyntheticSpec::binary(1, 5, 4, 3, 7)).unwrap().dataset;
    let u = &data.instances()[0];
    let model = AttentionModel::new(ModelConfig::new(5, 4, 1, Task::Binary)).unwrap();
    let params = model.init_params(7);
    let inf = &model.infer(&params, &[&u.x], None).unwrap()[0];
    let a = &inf.attention;

    println!("beta: {:?}", a.beta.iter().map(|b| format!("{b:.3}")).collect::<Vec<_>>());
    for t in 0..5 {
        let row: Vec<String> = (0..4).map(|d| format!("{:+.3}", a.gamma.get(t, d))).collect();
        println!("gamma[{t}]: {}", row.join(" "));
    }
    let contrib = &model.contribution(&params, a, &u.x, ContributionTarget::Output(0)).unwrap()[0];
    println!("p(y = 1) = {:.4}, sum of contributions {:.4}", inf.y_hat[0], contrib.sum());
    a.beta.iter().sum()
}

#[allow(dead_code)]
fn main() {
    run_example();
}
