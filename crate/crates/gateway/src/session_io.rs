//! Rebuilding an engine from the files the CLI passes around.

use std::path::Path;

use ial_core::data::{annotation_load, checkpoint_load, dataset_load, Dataset, Splits};
use ial_core::ial::{Engine, SessionConfig};
use ial_core::model::{AttentionModel, Task};
use ial_core::nap::AnnotationStore;
use ial_core::Result;

/// Multiclass for one-hot labels, binary for a single 0/1 label,
/// regression otherwise.
pub fn infer_task(ds: &Dataset) -> Task {
    match ds.dims() {
        Some((_, _, l)) if l > 1 => Task::Multiclass,
        _ if ds.iter().all(|u| u.y[0] == 0.0 || u.y[0] == 1.0) => Task::Binary,
        _ => Task::Regression,
    }
}

/// Engine at the checkpoint's round over `data`, with the store at
/// `store` (empty if the file does not exist yet).
pub fn load_engine(ckpt: &Path, data: &Path, store: &Path) -> Result<Engine> {
    let ck = checkpoint_load(ckpt)?;
    let ds = dataset_load(data)?;
    let cfg: SessionConfig = serde_json::from_value(ck.session.clone()).unwrap_or_default();
    let splits = Splits::standard(&ds, cfg.split_seed)?;
    let model = AttentionModel::new(ck.model.clone())?;
    let store = if store.exists() {
        annotation_load(store, ck.model.t, ck.model.d)?
    } else {
        AnnotationStore::new()
    };
    Engine::new(SessionConfig { nap: ck.nap, ..cfg }, model, ck.params, splits, store, ck.round)
}
