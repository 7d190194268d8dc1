use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Task;

/// Denominator guard of the percentage error.
pub const MAPE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Auroc,
    Accuracy,
    Mape,
}

impl MetricKind {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Binary => MetricKind::Auroc,
            Task::Multiclass => MetricKind::Accuracy,
            Task::Regression => MetricKind::Mape,
        }
    }

    /// Whether larger values are better.
    pub fn higher_is_better(self) -> bool {
        !matches!(self, MetricKind::Mape)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub kind: MetricKind,
    pub value: f64,
}

/// Area under the ROC curve by the rank statistic (ties count one half),
/// equal to the trapezoidal area over all thresholds.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| labels[k]).count() as f64 * avg;
        i = j + 1;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

pub fn accuracy(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::UndefinedMetric("accuracy needs matching nonempty sets".into()));
    }
    let argmax = |v: &[f64]| {
        v.iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    };
    let hits = pred.iter().zip(truth).filter(|(p, t)| argmax(p) == argmax(t)).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Mean absolute percentage error, `100·mean(|y − ŷ| / (|y| + ε))`.
pub fn mape(pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<f64> {
    let errs: Vec<f64> = pred
        .iter()
        .zip(truth)
        .flat_map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).abs() / (b.abs() + MAPE_EPS)))
        .collect();
    if errs.is_empty() || pred.len() != truth.len() {
        return Err(Error::UndefinedMetric("percentage error needs matching nonempty sets".into()));
    }
    Ok(100.0 * errs.iter().sum::<f64>() / errs.len() as f64)
}

/// The task's headline metric of predictions against labels.
pub fn task_metric(task: Task, pred: &[Vec<f64>], truth: &[Vec<f64>]) -> Result<Metric> {
    let kind = MetricKind::for_task(task);
    let value = match kind {
        MetricKind::Auroc => auroc(
            &pred.iter().map(|p| p[0]).collect::<Vec<_>>(),
            &truth.iter().map(|t| t[0] >= 0.5).collect::<Vec<_>>(),
        )?,
        MetricKind::Accuracy => accuracy(pred, truth)?,
        MetricKind::Mape => mape(pred, truth)?,
    };
    Ok(Metric { kind, value })
}
