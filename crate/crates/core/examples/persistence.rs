//! Datasets, annotation logs and checkpoints on disk.

use ial_core::data::{
    annotation_append, annotation_load, checkpoint_load, checkpoint_save, dataset_load, dataset_save, generate_synthetic,
    Checkpoint, SyntheticSpec,
};
use ial_core::ial::{oracle_mask, OracleConfig};
use ial_core::model::{AttentionModel, ModelConfig, Task};
use ial_core::nap::{Annotation, NapConfig};

pub fn run_example() -> bool {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticSpec::binary(20, 4, 6, 4, 8)).unwrap().dataset;
    let ds_path = dir.path().join("data.jsonl");
    dataset_save(&ds_path, &ds).unwrap();
    let ds_ok = dataset_load(&ds_path).unwrap() == ds;

    let ann_path = dir.path().join("annotations.jsonl");
    for (i, u) in ds.iter().take(3).enumerate() {
        let mask = oracle_mask(u, &[(0, 0), (1, 2)], &OracleConfig::default(), i as u64).unwrap();
        annotation_append(&ann_path, &Annotation { round: 1, annotator: "oracle".into(), ts: 0, mask }).unwrap();
    }
    let store = annotation_load(&ann_path, 4, 6).unwrap();

    let model = AttentionModel::new(ModelConfig::new(4, 6, 1, Task::Binary)).unwrap();
    let ck = Checkpoint {
        params: model.init_params(8),
        model: model.config().clone(),
        nap: NapConfig::default(),
        round: 1,
        session: serde_json::Value::Null,
    };
    let ck_path = dir.path().join("model.ckpt");
    checkpoint_save(&ck_path, &ck).unwrap();
    let back = checkpoint_load(&ck_path).unwrap();

    let mut bytes = std::fs::read(&ck_path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&ck_path, &bytes).unwrap();
    let rejected = checkpoint_load(&ck_path);

    println!("dataset round trip: {ds_ok}");
    println!("annotation log: {} entries, digest {}", store.len(), &store.digest()[..12]);
    println!("checkpoint: round {}, {} parameters, digest {}", back.round, back.params.n_params(), &back.params.digest()[..12]);
    println!("corrupted checkpoint: {}", rejected.as_ref().err().map_or("accepted".into(), |e| e.to_string()));
    ds_ok && store.len() == 3 && rejected.is_err()
}

#[allow(dead_code)]
fn main() {
    run_example();
}
