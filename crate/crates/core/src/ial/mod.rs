//! The interactive loop: pretraining, rounds of rerank → annotate →
//! recondition → evaluate, the simulated annotator, and evaluation metrics.

mod metrics;
mod oracle;
mod session;

use crate::data::Dataset;
use crate::error::Result;
use crate::model::AttentionModel;
use crate::nap::{conditioned_infer, AnnotationStore, LatentMode};
use crate::tensor::{Matrix, ParamVector};

pub use metrics::{accuracy, auroc, mape, task_metric, Metric, MetricKind, MAPE_EPS};
pub use oracle::{oracle_annotate, oracle_mask, Annotator, OracleAnnotator, OracleConfig, OracleScope};
pub use session::{pretrain, Engine, Pretrained, RoundMetrics, RoundState, SessionConfig, SubmitOutcome};

/// Headline metric of `dataset` under the mean latent of `store` (resolved
/// against `pool`).
pub fn evaluate_model(
    model: &AttentionModel,
    params: &ParamVector,
    pool: &Dataset,
    store: &AnnotationStore,
    dataset: &Dataset,
) -> Result<Metric> {
    let xs: Vec<&Matrix<f64>> = dataset.iter().map(|u| &u.x).collect();
    let out = conditioned_infer(model, params, &xs, pool, store, LatentMode::Mean, 0)?;
    let pred: Vec<Vec<f64>> = out.into_iter().map(|o| o.y_hat).collect();
    let truth: Vec<Vec<f64>> = dataset.iter().map(|u| u.y.clone()).collect();
    task_metric(model.config().task, &pred, &truth)
}
