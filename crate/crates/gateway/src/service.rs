//! One engine behind a single-writer command queue. Mutations run on a
//! dedicated worker thread; readers take the latest immutable snapshot.

use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::thread;
use std::time::Duration;

use ial_core::cer::{counterfactual_from, CerConfig};
use ial_core::data::{annotation_append, checkpoint_save, AnnotationRecord, TimeSeriesInstance};
use ial_core::ial::Engine;
use ial_core::model::{AttentionMap, ContributionTarget};
use ial_core::nap::AttentionMask;
use ial_core::tensor::Matrix;
use tokio::sync::{mpsc, oneshot};

use crate::error::ApiError;
use crate::wire::*;

/// Files the worker writes through to.
#[derive(Clone, Debug, Default)]
pub struct Persist {
    /// Every accepted annotation is appended here.
    pub store_path: Option<PathBuf>,
    /// Rewritten whenever a round closes.
    pub ckpt_path: Option<PathBuf>,
}

/// Immutable view served to readers.
pub struct Snapshot {
    pub engine: Engine,
    /// Mean latent of the current store.
    pub z: Matrix<f64>,
    pub job: JobStatus,
}

fn rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| (0..m.cols()).map(|c| m.get(r, c)).collect()).collect()
}

impl Snapshot {
    fn new(engine: Engine, job: JobStatus) -> ial_core::Result<Self> {
        let z = engine.cer_inputs().mean_latent()?;
        Ok(Self { engine, z, job })
    }

    fn find(&self, id: &str) -> Option<(&'static str, &TimeSeriesInstance)> {
        let s = self.engine.splits();
        [("train", &s.train), ("valid", &s.valid), ("test", &s.test)]
            .into_iter()
            .find_map(|(name, ds)| ds.get(id).map(|u| (name, u)))
    }

    fn attention(&self, u: &TimeSeriesInstance) -> Result<AttentionMap, ApiError> {
        let (model, params) = (self.engine.model(), self.engine.params());
        let v = model.embed_inputs(params, &u.x)?;
        Ok(model.forward_attention(params, &v, Some(&self.z))?)
    }

    fn contribution(&self, attn: &AttentionMap, x: &Matrix<f64>) -> Result<Vec<Matrix<f64>>, ApiError> {
        Ok(self.engine.model().contribution(self.engine.params(), attn, x, ContributionTarget::AllOutputs)?)
    }

    pub fn round_view(&self) -> RoundView {
        let e = &self.engine;
        let pending = e.pending();
        let done = e
            .open_report()
            .map(|r| r.entries.iter().filter(|en| e.is_done(&en.instance_id)).map(|en| en.instance_id.clone()).collect())
            .unwrap_or_default();
        RoundView {
            round: e.round(),
            open_round: e.open_round_number(),
            pending,
            done,
            store_size: e.store().len(),
            store_digest: e.store().digest(),
            params_hash: e.params().digest(),
            job: self.job.clone(),
        }
    }

    pub fn queue_view(&self) -> Result<QueueView, ApiError> {
        let e = &self.engine;
        let (Some(report), Some(round)) = (e.open_report(), e.open_round_number()) else {
            return Err(ApiError::conflict("no round is open"));
        };
        let entries = report
            .entries
            .iter()
            .map(|en| {
                let u = e.splits().train.require(&en.instance_id)?;
                let attn = self.attention(u)?;
                Ok(QueueEntry {
                    instance_id: en.instance_id.clone(),
                    score: en.score,
                    scorer: report.inst_scorer,
                    flags: en.flags.clone(),
                    status: if e.is_done(&en.instance_id) { EntryStatus::Done } else { EntryStatus::Pending },
                    x: rows(&u.x),
                    y: u.y.clone(),
                    prediction: e.model().predict(e.params(), &attn)?,
                    contribution: self.contribution(&attn, &u.x)?.iter().map(rows).collect(),
                    attention: AttentionView { beta: attn.beta.clone(), gamma: rows(&attn.gamma) },
                    features: en
                        .features
                        .iter()
                        .map(|f| RankedFeature {
                            t: f.t,
                            d: f.d,
                            score: f.score,
                            scorer: report.feat_scorer,
                            flags: f.flags.clone(),
                        })
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>, ApiError>>()?;
        Ok(QueueView { round, entries })
    }

    pub fn instance_view(&self, id: &str) -> Result<InstanceView, ApiError> {
        let (split, u) = self.find(id).ok_or_else(|| ApiError::not_found(format!("unknown instance {id:?}")))?;
        let attn = self.attention(u)?;
        Ok(InstanceView {
            id: u.id.clone(),
            split: split.into(),
            x: rows(&u.x),
            y: u.y.clone(),
            prediction: self.engine.model().predict(self.engine.params(), &attn)?,
            contribution: self.contribution(&attn, &u.x)?.iter().map(rows).collect(),
            attention: AttentionView { beta: attn.beta.clone(), gamma: rows(&attn.gamma) },
            annotations: self
                .engine
                .store()
                .query_instance(id)
                .into_iter()
                .map(AnnotationRecord::from_annotation)
                .collect(),
        })
    }

    /// Prediction with the feature attention of `off` forced to zero, under
    /// the mean latent. Reads only.
    pub fn whatif(&self, req: &WhatIfRequest) -> Result<WhatIfResponse, ApiError> {
        let (_, u) = self
            .find(&req.instance_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown instance {:?}", req.instance_id)))?;
        let c = self.engine.model().config();
        if let Some(&(t, d)) = req.off.iter().find(|&&(t, d)| t >= c.t || d >= c.d) {
            return Err(ApiError::invalid_cell(t, Some(d), format!("cell (t={t}, d={d}) outside {}×{}", c.t, c.d)));
        }
        let (model, params) = (self.engine.model(), self.engine.params());
        let attn = self.attention(u)?;
        let (delta, delta_outputs) = counterfactual_from(model, params, &attn, &req.off)?;
        let mut cf = attn.clone();
        for &(t, d) in &req.off {
            cf.gamma.set(t, d, 0.0);
        }
        let base_c = self.contribution(&attn, &u.x)?;
        let cf_c = self.contribution(&cf, &u.x)?;
        Ok(WhatIfResponse {
            instance_id: u.id.clone(),
            y_base: model.predict(params, &attn)?,
            y_cf: model.predict_with_override(params, &attn, &req.off)?,
            delta,
            delta_outputs,
            contribution_delta: base_c
                .iter()
                .zip(&cf_c)
                .map(|(b, f)| rows(&Matrix::from_fn(c.t, c.d, |t, d| b.get(t, d) - f.get(t, d))))
                .collect(),
        })
    }

    pub fn metrics_view(&self) -> MetricsView {
        MetricsView {
            rounds: self
                .engine
                .history()
                .iter()
                .map(|st| RoundMetricsView {
                    s: st.s,
                    valid: st.metrics.valid,
                    test: st.metrics.test,
                    store_size: st.metrics.store_size,
                    params_hash: st.params_hash.clone(),
                })
                .collect(),
        }
    }
}

enum Command {
    Advance(AdvanceRequest, oneshot::Sender<Result<AdvanceAccepted, ApiError>>),
    AdvanceDone(u64, Result<Box<Engine>, String>),
    Submit(AnnotationSubmit, oneshot::Sender<Result<SubmitAck, ApiError>>),
}

type Shared = Arc<RwLock<Arc<Snapshot>>>;

struct Worker {
    engine: Engine,
    job: JobStatus,
    persist: Persist,
    shared: Shared,
    tx: mpsc::WeakUnboundedSender<Command>,
}

impl Worker {
    fn publish(&self) {
        match Snapshot::new(self.engine.clone(), self.job.clone()) {
            Ok(s) => *self.shared.write().unwrap_or_else(|p| p.into_inner()) = Arc::new(s),
            Err(e) => log::error!("snapshot refresh failed: {e}"),
        }
    }

    fn run(mut self, mut rx: mpsc::UnboundedReceiver<Command>) {
        while let Some(cmd) = rx.blocking_recv() {
            match cmd {
                Command::Advance(req, reply) => {
                    let _ = reply.send(self.advance(req));
                }
                Command::AdvanceDone(id, result) => self.finish_job(id, result),
                Command::Submit(req, reply) => {
                    let _ = reply.send(self.submit(req));
                }
            }
        }
    }

    fn advance(&mut self, req: AdvanceRequest) -> Result<AdvanceAccepted, ApiError> {
        if self.job.state == JobState::Running {
            return Err(ApiError::conflict("a rerank job is already running"));
        }
        if self.engine.open_round_number().is_some() {
            return Err(ApiError::conflict("a round is already open"));
        }
        let base = &self.engine.config().cer;
        let cfg = CerConfig {
            p: req.p.unwrap_or(base.p),
            k: req.k.unwrap_or(base.k),
            f: req.f.unwrap_or(base.f),
            inst_scorer: req.inst_scorer.unwrap_or(base.inst_scorer),
            feat_scorer: req.feat_scorer.unwrap_or(base.feat_scorer),
            samples: req.samples.unwrap_or(base.samples),
            seed: req.seed.unwrap_or(base.seed),
            ..base.clone()
        };
        let c = self.engine.model().config();
        let splits = self.engine.splits();
        let available = splits.train.len() - self.engine.store().instance_ids().len();
        if cfg.k == 0 || cfg.k > available {
            return Err(ApiError::invalid(format!("K must lie in [1, {available}], got {}", cfg.k)));
        }
        if cfg.f == 0 || cfg.f > c.t * c.d {
            return Err(ApiError::invalid(format!("F must lie in [1, {}], got {}", c.t * c.d, cfg.f)));
        }
        if cfg.p == 0 || cfg.p > splits.valid.len() {
            return Err(ApiError::invalid(format!("P must lie in [1, {}], got {}", splits.valid.len(), cfg.p)));
        }
        let round = self.engine.round() + 1;
        let job_id = self.job.job_id + 1;
        self.job = JobStatus { state: JobState::Running, job_id, round: Some(round), error: None };
        self.publish();
        let tx = self.tx.upgrade().ok_or_else(|| ApiError::internal("service is shutting down"))?;
        let mut engine = self.engine.clone();
        thread::spawn(move || {
            let result = engine.open_round(&cfg).map(|_| ()).map_err(|e| e.to_string());
            let _ = tx.send(Command::AdvanceDone(job_id, result.map(|_| Box::new(engine))));
        });
        Ok(AdvanceAccepted { job_id, round })
    }

    fn finish_job(&mut self, id: u64, result: Result<Box<Engine>, String>) {
        if id != self.job.job_id || self.job.state != JobState::Running {
            return;
        }
        match result {
            Ok(engine) => {
                self.engine = *engine;
                self.job.state = JobState::Done;
            }
            Err(msg) => {
                log::warn!("rerank job {id} failed: {msg}");
                self.job.state = JobState::Failed;
                self.job.error = Some(msg);
            }
        }
        self.publish();
    }

    fn submit(&mut self, req: AnnotationSubmit) -> Result<SubmitAck, ApiError> {
        let round = self.engine.open_round_number().ok_or_else(|| ApiError::conflict("no round is open"))?;
        let c = self.engine.model().config();
        if let Some(&(t, d, _)) = req.feature_mask.iter().find(|&&(t, d, _)| t >= c.t || d >= c.d) {
            return Err(ApiError::invalid_cell(t, Some(d), format!("cell (t={t}, d={d}) outside {}×{}", c.t, c.d)));
        }
        if let Some(&(t, _)) = req.time_mask.iter().find(|&&(t, _)| t >= c.t) {
            return Err(ApiError::invalid_cell(t, None, format!("time step {t} outside T = {}", c.t)));
        }
        let mask = AttentionMask::from_sparse(&req.instance_id, c.t, c.d, &req.feature_mask, &req.time_mask)?;
        let annotator = req.annotator.as_deref().unwrap_or("gateway");
        let ts = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        let outcome = self.engine.submit(mask, annotator, ts)?;
        if let (Some(path), Some(a)) = (&self.persist.store_path, self.engine.store().entries().last()) {
            if let Err(e) = annotation_append(path, a) {
                log::error!("appending to {}: {e}", path.display());
            }
        }
        if outcome.closed.is_some() {
            if let Some(path) = &self.persist.ckpt_path {
                if let Err(e) = checkpoint_save(path, &self.engine.checkpoint()) {
                    log::error!("saving {}: {e}", path.display());
                }
            }
        }
        self.publish();
        Ok(SubmitAck {
            instance_id: req.instance_id,
            round,
            remaining: outcome.remaining,
            store_size: self.engine.store().len(),
            round_closed: outcome.closed.is_some(),
        })
    }
}

/// Handle to the running service.
pub struct Gateway {
    shared: Shared,
    tx: mpsc::UnboundedSender<Command>,
}

impl Gateway {
    pub fn start(engine: Engine, persist: Persist) -> ial_core::Result<Arc<Self>> {
        let shared: Shared = Arc::new(RwLock::new(Arc::new(Snapshot::new(engine.clone(), JobStatus::idle())?)));
        let (tx, rx) = mpsc::unbounded_channel();
        let worker = Worker {
            engine,
            job: JobStatus::idle(),
            persist,
            shared: shared.clone(),
            tx: tx.downgrade(),
        };
        thread::Builder::new()
            .name("ial-worker".into())
            .spawn(move || worker.run(rx))
            .map_err(ial_core::Error::Io)?;
        Ok(Arc::new(Self { shared, tx }))
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.shared.read().unwrap_or_else(|p| p.into_inner()).clone()
    }

    async fn call<T>(&self, make: impl FnOnce(oneshot::Sender<Result<T, ApiError>>) -> Command) -> Result<T, ApiError> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| ApiError::internal("worker stopped"))?;
        rx.await.map_err(|_| ApiError::internal("worker stopped"))?
    }

    /// Start reranking the next round in the background.
    pub async fn advance(&self, req: AdvanceRequest) -> Result<AdvanceAccepted, ApiError> {
        self.call(|r| Command::Advance(req, r)).await
    }

    pub async fn submit(&self, req: AnnotationSubmit) -> Result<SubmitAck, ApiError> {
        self.call(|r| Command::Submit(req, r)).await
    }

    /// Poll until no job is running.
    pub async fn wait_job(&self) -> JobStatus {
        loop {
            let job = self.snapshot().job.clone();
            if job.state != JobState::Running {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }
}
