use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::evaluate_model;
use super::metrics::Metric;
use super::oracle::Annotator;
use crate::cer::{rerank, CerConfig, CerInputs, RerankReport};
use crate::data::{Checkpoint, Dataset, Splits};
use crate::error::{Error, Result};
use crate::model::{seg, AttentionModel, ModelConfig, TaskObjective};
use crate::nap::{adapt_train, Annotation, AnnotationStore, AttentionMask, NapConfig};
use crate::tensor::ParamVector;
use crate::train::{fit, EpochLog, TrainConfig};

/// Everything needed to reproduce a session besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub hidden_beta: usize,
    pub hidden_gamma: usize,
    pub d_z: usize,
    pub r_dim: usize,
    /// Seed of the 70/10/20 split.
    pub split_seed: u64,
    pub init_seed: u64,
    pub train: TrainConfig,
    pub nap: NapConfig,
    pub cer: CerConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            hidden_beta: 32,
            hidden_gamma: 32,
            d_z: 16,
            r_dim: 32,
            split_seed: 0,
            init_seed: 0,
            train: TrainConfig::default(),
            nap: NapConfig::default(),
            cer: CerConfig::default(),
        }
    }
}

impl SessionConfig {
    /// Model configuration for data of the given shape.
    pub fn model_config(&self, ds: &Dataset, task: crate::model::Task) -> Result<ModelConfig> {
        let (t, d, l) = ds
            .dims()
            .ok_or_else(|| Error::Precondition("dataset is empty".into()))?;
        let mut c = ModelConfig::new(t, d, l, task);
        c.hidden_beta = self.hidden_beta;
        c.hidden_gamma = self.hidden_gamma;
        c.d_z = self.d_z;
        c.r_dim = self.r_dim;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub valid: Option<Metric>,
    pub test: Option<Metric>,
    pub store_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    /// 0 for the pretrained model.
    pub s: usize,
    pub report: Option<RerankReport>,
    /// Instances still awaiting a mask when the state was recorded.
    pub pending: Vec<String>,
    pub metrics: RoundMetrics,
    pub params_hash: String,
}

#[derive(Clone, Debug)]
struct OpenRound {
    s: usize,
    report: RerankReport,
    done: BTreeSet<String>,
}

/// Result of a mask submission.
#[derive(Clone, Debug)]
pub struct SubmitOutcome {
    pub remaining: usize,
    /// Set when this submission completed the round.
    pub closed: Option<RoundState>,
}

/// Pretrained parameters plus the training curve.
#[derive(Clone, Debug)]
pub struct Pretrained {
    pub params: ParamVector,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
}

/// Minimise the task loss plus weight decay over the attention-model
/// segments, with early stopping on the validation split.
pub fn pretrain(model: &AttentionModel, splits: &Splits, cfg: &TrainConfig, init_seed: u64) -> Result<Pretrained> {
    let objective = TaskObjective { model, latent: None };
    let f = fit(
        &objective,
        model.init_params(init_seed),
        &splits.train.refs(),
        &splits.valid.refs(),
        cfg,
        &[seg::ATTN_PREFIX],
    )?;
    Ok(Pretrained {
        params: f.params,
        log: f.log,
        best_epoch: f.best_epoch,
    })
}

/// Single-writer state machine over rounds.
#[derive(Clone, Debug)]
pub struct Engine {
    cfg: SessionConfig,
    model: AttentionModel,
    params: ParamVector,
    splits: Splits,
    store: AnnotationStore,
    history: Vec<RoundState>,
    open: Option<OpenRound>,
}

impl Engine {
    /// Engine at round `round` (0 = freshly pretrained) with an existing store.
    pub fn new(
        cfg: SessionConfig,
        model: AttentionModel,
        params: ParamVector,
        splits: Splits,
        store: AnnotationStore,
        round: usize,
    ) -> Result<Self> {
        model.check_params(&params)?;
        let mut e = Self {
            cfg,
            model,
            params,
            splits,
            store,
            history: Vec::new(),
            open: None,
        };
        let state = e.snapshot(round, None)?;
        e.history.push(state);
        Ok(e)
    }

    /// Split, pretrain and wrap in an engine at round 0.
    pub fn pretrained(ds: &Dataset, task: crate::model::Task, cfg: SessionConfig) -> Result<(Self, Pretrained)> {
        let splits = Splits::standard(ds, cfg.split_seed)?;
        let model = AttentionModel::new(cfg.model_config(ds, task)?)?;
        let pre = pretrain(&model, &splits, &cfg.train, cfg.init_seed)?;
        let engine = Self::new(cfg, model, pre.params.clone(), splits, AnnotationStore::new(), 0)?;
        Ok((engine, pre))
    }

    fn snapshot(&self, s: usize, report: Option<RerankReport>) -> Result<RoundState> {
        Ok(RoundState {
            s,
            report,
            pending: Vec::new(),
            metrics: self.metrics()?,
            params_hash: self.params.digest(),
        })
    }

    pub fn metrics(&self) -> Result<RoundMetrics> {
        let eval = |ds: &Dataset| -> Result<Option<Metric>> {
            if ds.is_empty() {
                return Ok(None);
            }
            match evaluate_model(&self.model, &self.params, &self.splits.train, &self.store, ds) {
                Ok(m) => Ok(Some(m)),
                Err(Error::UndefinedMetric(_)) => Ok(None),
                Err(e) => Err(e),
            }
        };
        Ok(RoundMetrics {
            valid: eval(&self.splits.valid)?,
            test: eval(&self.splits.test)?,
            store_size: self.store.len(),
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn model(&self) -> &AttentionModel {
        &self.model
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn splits(&self) -> &Splits {
        &self.splits
    }

    pub fn store(&self) -> &AnnotationStore {
        &self.store
    }

    pub fn history(&self) -> &[RoundState] {
        &self.history
    }

    /// Last completed round.
    pub fn round(&self) -> usize {
        self.history.last().map_or(0, |h| h.s)
    }

    pub fn open_report(&self) -> Option<&RerankReport> {
        self.open.as_ref().map(|o| &o.report)
    }

    pub fn open_round_number(&self) -> Option<usize> {
        self.open.as_ref().map(|o| o.s)
    }

    /// Instances of the open round still awaiting a mask, in report order.
    pub fn pending(&self) -> Vec<String> {
        self.open.as_ref().map_or_else(Vec::new, |o| {
            o.report
                .entries
                .iter()
                .filter(|e| !o.done.contains(&e.instance_id))
                .map(|e| e.instance_id.clone())
                .collect()
        })
    }

    pub fn is_done(&self, instance_id: &str) -> bool {
        self.open.as_ref().is_some_and(|o| o.done.contains(instance_id))
    }

    pub fn cer_inputs(&self) -> CerInputs<'_> {
        CerInputs {
            model: &self.model,
            params: &self.params,
            train: &self.splits.train,
            valid: &self.splits.valid,
            store: &self.store,
        }
    }

    /// Rerank for the next round. Already-annotated instances are never
    /// offered again.
    pub fn open_round(&mut self, cer: &CerConfig) -> Result<&RerankReport> {
        if self.open.is_some() {
            return Err(Error::Precondition("a round is already open".into()));
        }
        let s = self.round() + 1;
        let exclude = self.store.instance_ids();
        let report = rerank(&self.cer_inputs(), cer, s, &exclude)?;
        if report.entries.is_empty() {
            return Err(Error::Precondition("no unannotated training instances left".into()));
        }
        self.open = Some(OpenRound {
            s,
            report,
            done: BTreeSet::new(),
        });
        Ok(&self.open.as_ref().expect("just set").report)
    }

    /// Add a mask for a pending instance of the open round. The submission
    /// that completes the round closes it.
    pub fn submit(&mut self, mask: AttentionMask, annotator: &str, ts: u64) -> Result<SubmitOutcome> {
        let open = self
            .open
            .as_ref()
            .ok_or_else(|| Error::Precondition("no round is open".into()))?;
        let id = mask.instance_id.clone();
        if !open.report.entries.iter().any(|e| e.instance_id == id) {
            return Err(Error::MissingInstance(id));
        }
        if open.done.contains(&id) {
            return Err(Error::Duplicate {
                instance_id: id,
                round: open.s,
            });
        }
        let c = self.model.config();
        if (mask.t(), mask.d()) != (c.t, c.d) {
            return Err(Error::Shape(format!("mask must be {}×{}", c.t, c.d)));
        }
        let s = open.s;
        self.store.append(Annotation {
            round: s,
            annotator: annotator.to_string(),
            ts,
            mask,
        })?;
        let open = self.open.as_mut().expect("checked above");
        open.done.insert(id);
        let remaining = open.report.entries.len() - open.done.len();
        let closed = if remaining == 0 { Some(self.close_round()?) } else { None };
        Ok(SubmitOutcome { remaining, closed })
    }

    /// Finish the open round: adapt once at s = 1, otherwise only the store
    /// changed. Then evaluate.
    fn close_round(&mut self) -> Result<RoundState> {
        let open = self
            .open
            .take()
            .ok_or_else(|| Error::Precondition("no round is open".into()))?;
        if open.s == 1 {
            let nap = NapConfig {
                seed: crate::rng::derive_seed(self.cfg.nap.seed, 1),
                ..self.cfg.nap.clone()
            };
            let adapted = adapt_train(&self.model, &self.params, &self.splits.train, &self.store, &nap);
            match adapted {
                Ok(a) => self.params = a.params,
                Err(e) => {
                    self.open = Some(open);
                    return Err(e);
                }
            }
        }
        let state = self.snapshot(open.s, Some(open.report))?;
        self.history.push(state.clone());
        Ok(state)
    }

    /// One full round with a non-interactive annotator.
    pub fn run_round(&mut self, cer: &CerConfig, annotator: &mut dyn Annotator) -> Result<RoundState> {
        let report = self.open_round(cer)?.clone();
        let masks = annotator.annotate(&report, &self.splits.train)?;
        let name = annotator.name().to_string();
        let mut last = None;
        for m in masks {
            last = self.submit(m, &name, 0)?.closed;
        }
        last.ok_or_else(|| Error::Precondition("annotator left instances without masks".into()))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            model: self.model.config().clone(),
            nap: self.cfg.nap.clone(),
            round: self.round(),
            session: serde_json::to_value(&self.cfg).unwrap_or(serde_json::Value::Null),
        }
    }
}
