//! JSON wire schema. Every response object carries `version`.

use ial_core::cer::{FeatScorer, InstScorer, ScoreFlag};
use ial_core::data::AnnotationRecord;
use ial_core::ial::Metric;
use ial_core::nap::{FeatureCell, TimeCell};
use serde::{Deserialize, Serialize};

pub const WIRE_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(body: T) -> Self {
        Self { version: WIRE_VERSION, body }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Idle,
    Running,
    Done,
    Failed,
}

/// State of the most recent advance job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    /// 0 before the first job.
    pub job_id: u64,
    pub round: Option<usize>,
    pub error: Option<String>,
}

impl JobStatus {
    pub fn idle() -> Self {
        Self { state: JobState::Idle, job_id: 0, round: None, error: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundView {
    /// Last completed round (0 = pretrained).
    pub round: usize,
    pub open_round: Option<usize>,
    pub pending: Vec<String>,
    pub done: Vec<String>,
    pub store_size: usize,
    pub store_digest: String,
    pub params_hash: String,
    pub job: JobStatus,
}

/// Body of `POST /api/round/advance`. Unset fields take the session's
/// configured values.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvanceRequest {
    #[serde(alias = "P")]
    pub p: Option<usize>,
    #[serde(alias = "K")]
    pub k: Option<usize>,
    #[serde(alias = "F")]
    pub f: Option<usize>,
    pub inst_scorer: Option<InstScorer>,
    pub feat_scorer: Option<FeatScorer>,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdvanceAccepted {
    pub job_id: u64,
    pub round: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentionView {
    pub beta: Vec<f64>,
    /// T rows of D values.
    pub gamma: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankedFeature {
    pub t: usize,
    pub d: usize,
    pub score: f64,
    pub scorer: FeatScorer,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<ScoreFlag>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Pending,
    Done,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueueEntry {
    pub instance_id: String,
    pub score: f64,
    pub scorer: InstScorer,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<ScoreFlag>,
    pub status: EntryStatus,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub prediction: Vec<f64>,
    /// One T×D grid per output.
    pub contribution: Vec<Vec<Vec<f64>>>,
    pub attention: AttentionView,
    pub features: Vec<RankedFeature>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QueueView {
    pub round: usize,
    pub entries: Vec<QueueEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InstanceView {
    pub id: String,
    pub split: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub prediction: Vec<f64>,
    pub contribution: Vec<Vec<Vec<f64>>>,
    pub attention: AttentionView,
    pub annotations: Vec<AnnotationRecord>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSubmit {
    pub instance_id: String,
    #[serde(default)]
    pub feature_mask: Vec<FeatureCell>,
    #[serde(default)]
    pub time_mask: Vec<TimeCell>,
    pub annotator: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SubmitAck {
    pub instance_id: String,
    pub round: usize,
    pub remaining: usize,
    pub store_size: usize,
    pub round_closed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfRequest {
    pub instance_id: String,
    #[serde(default)]
    pub off: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub instance_id: String,
    pub y_base: Vec<f64>,
    pub y_cf: Vec<f64>,
    /// `‖y_base − y_cf‖₂`.
    pub delta: f64,
    /// `y_base − y_cf` per output.
    pub delta_outputs: Vec<f64>,
    /// Base minus counterfactual contribution, one T×D grid per output.
    pub contribution_delta: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundMetricsView {
    pub s: usize,
    pub valid: Option<Metric>,
    pub test: Option<Metric>,
    pub store_size: usize,
    pub params_hash: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsView {
    pub rounds: Vec<RoundMetricsView>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellRef {
    pub t: usize,
    /// Absent for a time-axis cell.
    pub d: Option<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell: Option<CellRef>,
}
