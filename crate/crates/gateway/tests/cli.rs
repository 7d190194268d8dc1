use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use ial_core::data::{annotation_load, checkpoint_load, dataset_load};
use serde_json::{json, Value};

fn ial(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ial")).args(args).env("RUST_LOG", "warn").output().unwrap();
    assert!(
        out.status.success(),
        "ial {args:?} failed:\n{}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Last stdout line as a record; checks the envelope.
fn record(out: &Output, kind: &str) -> Value {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    let v: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!((v["version"].as_u64(), v["kind"].as_str()), (Some(1), Some(kind)));
    v["body"].clone()
}

struct Session {
    _dir: tempfile::TempDir,
    data: String,
    ckpt: String,
    store: String,
}

fn p(path: &Path) -> String {
    path.to_str().unwrap().to_string()
}

fn session() -> Session {
    let dir = tempfile::tempdir().unwrap();
    let data = p(&dir.path().join("data.jsonl"));
    let ckpt = p(&dir.path().join("model.ckpt"));
    let store = p(&dir.path().join("store.jsonl"));
    let config = dir.path().join("config.json");
    let cfg = json!({
        "hidden_beta": 6, "hidden_gamma": 6, "d_z": 4, "r_dim": 6,
        "train": {"max_epochs": 6},
        "nap": {"steps": 8},
        "cer": {"samples": 5}
    });
    std::fs::write(&config, cfg.to_string()).unwrap();
    let out = ial(&["gen-data", "--out", &data, "--n", "100", "--t", "4", "--d", "5", "--sparsity", "3", "--seed", "2"]);
    assert_eq!(record(&out, "dataset")["cells"].as_array().unwrap().len(), 3);
    assert_eq!(dataset_load(&data).unwrap().len(), 100);
    let out = ial(&["pretrain", "--data", &data, "--config", &p(&config), "--out", &ckpt]);
    let body = record(&out, "pretrain");
    assert_eq!(body["task"], "binary");
    assert_eq!(body["state"]["s"], 0);
    Session { _dir: dir, data, ckpt, store }
}

fn files(s: &Session) -> Vec<&str> {
    vec!["--ckpt", &s.ckpt, "--data", &s.data, "--store", &s.store]
}

#[test]
fn oracle_rounds_update_files_without_retraining_after_the_first() {
    let s = session();
    let round = |seed: &str| {
        let mut args = vec!["round"];
        args.extend(files(&s));
        args.extend(["--p", "4", "--k", "3", "--f", "2", "--seed", seed]);
        record(&ial(&args), "round")
    };
    let r1 = round("1");
    assert_eq!((r1["s"].as_u64(), r1["metrics"]["store_size"].as_u64()), (Some(1), Some(3)));
    let digest1 = checkpoint_load(&s.ckpt).unwrap().params.digest();
    let r2 = round("1");
    assert_eq!((r2["s"].as_u64(), r2["metrics"]["store_size"].as_u64()), (Some(2), Some(6)));
    let ck = checkpoint_load(&s.ckpt).unwrap();
    assert_eq!((ck.round, ck.params.digest()), (2, digest1));

    let store = annotation_load(&s.store, 4, 5).unwrap();
    assert_eq!((store.len(), store.query_round(2).len()), (6, 3));
    assert_eq!(store.instance_ids().len(), 6);

    let mut args = vec!["eval"];
    args.extend(files(&s));
    args.extend(["--split", "test"]);
    let ev = record(&ial(&args), "metric");
    assert_eq!((ev["round"].as_u64(), ev["store_size"].as_u64()), (Some(2), Some(6)));
    assert_eq!(ev["metric"]["value"].as_f64().unwrap().to_bits(), r2["metrics"]["test"]["value"].as_f64().unwrap().to_bits());
}

#[test]
fn check_suites_pass() {
    let out = ial(&["check", "--gradients"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("PASS gradients"), "{text}");
    let out = ial(&["check", "--influence"]);
    assert!(String::from_utf8(out.stdout).unwrap().starts_with("PASS influence"));
}

#[test]
fn bad_arguments_fail() {
    let out = Command::new(env!("CARGO_BIN_EXE_ial")).args(["round", "--ckpt", "/nonexistent"]).output().unwrap();
    assert!(!out.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_ial"))
        .args(["gen-data", "--out", "/tmp/x.jsonl", "--sparsity", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// Minimal HTTP/1.1 exchange; returns (status, JSON body).
fn http(port: u16, method: &str, path: &str, body: Option<&Value>) -> Option<(u16, Value)> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    let payload = body.map(Value::to_string).unwrap_or_default();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
        payload.len()
    )
    .ok()?;
    let mut resp = String::new();
    s.read_to_string(&mut resp).ok()?;
    let status = resp.split_whitespace().nth(1)?.parse().ok()?;
    let body = resp.split_once("\r\n\r\n")?.1;
    Some((status, serde_json::from_str(body).unwrap_or(Value::Null)))
}

fn wait_for(port: u16, path: &str, want: u16, child: &mut Child) -> Value {
    let start = Instant::now();
    loop {
        if let Some((status, v)) = http(port, "GET", path, None) {
            if status == want {
                return v;
            }
        }
        assert!(child.try_wait().unwrap().is_none(), "server exited early");
        assert!(start.elapsed() < Duration::from_secs(60), "timed out waiting for {path}");
        std::thread::sleep(Duration::from_millis(50));
    }
}

#[test]
fn serve_annotator_round_over_http() {
    let s = session();
    let port = free_port();
    let port_s = port.to_string();
    let mut args = vec!["round"];
    args.extend(files(&s));
    args.extend(["--p", "4", "--k", "2", "--f", "2", "--annotator", "serve", "--port", &port_s]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_ial"))
        .args(&args)
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let q = wait_for(port, "/api/queue", 200, &mut child);
    let entries = q["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 2);
    let mut sent = Vec::new();
    for e in entries {
        let f = &e["features"][0];
        let body = json!({
            "instance_id": e["instance_id"],
            "feature_mask": [[f["t"], f["d"], 1]],
            "time_mask": [[f["t"], 1]],
            "annotator": "tester"
        });
        let (status, ack) = http(port, "POST", "/api/annotations", Some(&body)).unwrap();
        assert_eq!(status, 200, "{ack}");
        sent.push(body);
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rec: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(rec["body"]["s"], 1);

    let store = annotation_load(&s.store, 4, 5).unwrap();
    assert_eq!(store.len(), 2);
    for (a, body) in store.entries().iter().zip(&sent) {
        assert_eq!(a.annotator, "tester");
        assert_eq!(json!(a.mask.sparse_feature()), body["feature_mask"]);
        assert_eq!(json!(a.mask.sparse_time()), body["time_mask"]);
    }
    assert_eq!(checkpoint_load(&s.ckpt).unwrap().round, 1);
}

#[test]
fn serve_exposes_api() {
    let s = session();
    let port = free_port();
    let port_s = port.to_string();
    let mut args = vec!["serve"];
    args.extend(files(&s));
    args.extend(["--port", &port_s]);
    let mut child = Command::new(env!("CARGO_BIN_EXE_ial")).args(&args).stderr(Stdio::null()).spawn().unwrap();
    let v = wait_for(port, "/api/round", 200, &mut child);
    assert_eq!((v["version"].as_u64(), v["round"].as_u64()), (Some(1), Some(0)));
    let (status, _) = http(port, "GET", "/api/queue", None).unwrap();
    assert_eq!(status, 409);
    child.kill().unwrap();
    child.wait().unwrap();
}
