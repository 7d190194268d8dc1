//! `ial`: data generation, pretraining, rounds, evaluation, the annotation
//! service and the self-check suites.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ial_core::cer::{CerConfig, FeatScorer, InstScorer};
use ial_core::check::{gradient_suite, influence_suite};
use ial_core::data::records::record_line;
use ial_core::data::{annotation_append, checkpoint_save, dataset_load, dataset_save, generate_synthetic, SyntheticSpec};
use ial_core::ial::{evaluate_model, Engine, OracleAnnotator, OracleConfig, OracleScope, SessionConfig};
use ial_core::model::Task;
use ial_gateway::session_io::{infer_task, load_engine};
use ial_gateway::wire::AdvanceRequest;
use ial_gateway::{router, Gateway, Persist};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "ial", version, about = "Interactive attention learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset with a planted relevance grid.
    GenData(GenData),
    /// Train the attention model and write a round-0 checkpoint.
    Pretrain(PretrainArgs),
    /// Run one annotation round and update the checkpoint and store.
    Round(RoundArgs),
    /// Print the task metric of a split.
    Eval(EvalArgs),
    /// Serve the annotation API.
    Serve(ServeArgs),
    /// Run the gradient and influence self-checks.
    Check(CheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Binary,
    Multiclass,
    Regression,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Binary => Task::Binary,
            TaskArg::Multiclass => Task::Multiclass,
            TaskArg::Regression => Task::Regression,
        }
    }
}

#[derive(Args)]
struct GenData {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 600)]
    n: usize,
    #[arg(long, default_value_t = 6)]
    t: usize,
    #[arg(long, default_value_t = 12)]
    d: usize,
    #[arg(long, value_enum, default_value = "binary")]
    task: TaskArg,
    #[arg(long, default_value_t = 8)]
    sparsity: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Classes for the multiclass task.
    #[arg(long, default_value_t = 3)]
    classes: usize,
}

#[derive(Args)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Session settings as JSON; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the task inferred from the labels.
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
}

#[derive(Args)]
struct SessionFiles {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Annotation log; created on first write.
    #[arg(long)]
    store: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AnnotatorArg {
    Oracle,
    Serve,
}

#[derive(Args)]
struct RoundArgs {
    #[command(flatten)]
    files: SessionFiles,
    #[arg(long, default_value = "uncertainty")]
    inst_scorer: InstScorer,
    #[arg(long, default_value = "counterfactual")]
    feat_scorer: FeatScorer,
    #[arg(long, default_value_t = 20)]
    p: usize,
    #[arg(long, default_value_t = 16)]
    k: usize,
    #[arg(long, default_value_t = 4)]
    f: usize,
    #[arg(long, value_enum, default_value = "oracle")]
    annotator: AnnotatorArg,
    /// Probability that the oracle flips an answer.
    #[arg(long, default_value_t = 0.0)]
    oracle_noise: f64,
    /// Probability that the oracle answers "don't know".
    #[arg(long, default_value_t = 0.0)]
    oracle_idk: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Port for `--annotator serve`.
    #[arg(long, default_value_t = 8080)]
    port: u16,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    files: SessionFiles,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    files: SessionFiles,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    gradients: bool,
    #[arg(long)]
    influence: bool,
}

fn emit<T: Serialize>(kind: &str, body: &T) -> Result<()> {
    println!("{}", record_line(kind, body)?);
    Ok(())
}

fn gen_data(a: GenData) -> Result<()> {
    let spec = SyntheticSpec {
        n: a.n,
        t: a.t,
        d: a.d,
        task: a.task.into(),
        sparsity: a.sparsity,
        noise_std: a.noise,
        seed: a.seed,
        classes: a.classes,
    };
    let data = generate_synthetic(&spec)?;
    dataset_save(&a.out, &data.dataset)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        path: &'a Path,
        spec: &'a SyntheticSpec,
        cells: &'a [(usize, usize)],
    }
    emit("dataset", &Summary { path: &a.out, spec: &spec, cells: &data.cells })
}

fn pretrain(a: PretrainArgs) -> Result<()> {
    let ds = dataset_load(&a.data)?;
    let cfg: SessionConfig = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SessionConfig::default(),
    };
    let task = a.task.map_or_else(|| infer_task(&ds), Task::from);
    let (engine, pre) = Engine::pretrained(&ds, task, cfg)?;
    checkpoint_save(&a.out, &engine.checkpoint())?;
    #[derive(Serialize)]
    struct Summary<'a> {
        task: Task,
        best_epoch: usize,
        epochs: usize,
        state: &'a ial_core::ial::RoundState,
    }
    emit(
        "pretrain",
        &Summary { task, best_epoch: pre.best_epoch, epochs: pre.log.len(), state: &engine.history()[0] },
    )
}

async fn serve_until(gw: std::sync::Arc<Gateway>, addr: SocketAddr, stop: impl std::future::Future<Output = ()> + Send + 'static) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(gw)).with_graceful_shutdown(stop).await?;
    Ok(())
}

async fn round(a: RoundArgs) -> Result<()> {
    let f = &a.files;
    let mut engine = load_engine(&f.ckpt, &f.data, &f.store)?;
    let cer = CerConfig {
        p: a.p,
        k: a.k,
        f: a.f,
        inst_scorer: a.inst_scorer,
        feat_scorer: a.feat_scorer,
        seed: a.seed,
        ..engine.config().cer.clone()
    };
    let s = engine.round() + 1;
    match a.annotator {
        AnnotatorArg::Oracle => {
            let config = OracleConfig { noise: a.oracle_noise, idk: a.oracle_idk, scope: OracleScope::RequestedOnly };
            let mut oracle = OracleAnnotator { config, seed: a.seed };
            let state = engine.run_round(&cer, &mut oracle)?;
            for ann in engine.store().query_round(s) {
                annotation_append(&f.store, ann)?;
            }
            checkpoint_save(&f.ckpt, &engine.checkpoint())?;
            emit("round", &state)
        }
        AnnotatorArg::Serve => {
            let persist = Persist { store_path: Some(f.store.clone()), ckpt_path: Some(f.ckpt.clone()) };
            let gw = Gateway::start(engine, persist)?;
            let req = AdvanceRequest {
                p: Some(cer.p),
                k: Some(cer.k),
                f: Some(cer.f),
                inst_scorer: Some(cer.inst_scorer),
                feat_scorer: Some(cer.feat_scorer),
                samples: None,
                seed: Some(cer.seed),
            };
            gw.advance(req).await.map_err(|e| anyhow::anyhow!(e.body.error))?;
            let job = gw.wait_job().await;
            if let Some(err) = job.error {
                bail!("rerank failed: {err}");
            }
            let watch = gw.clone();
            let stop = async move {
                while watch.snapshot().engine.round() < s {
                    tokio::time::sleep(Duration::from_millis(100)).await;
                }
            };
            serve_until(gw.clone(), SocketAddr::from(([127, 0, 0, 1], a.port)), stop).await?;
            let snap = gw.snapshot();
            emit("round", snap.engine.history().last().context("no round state")?)
        }
    }
}

fn eval(a: EvalArgs) -> Result<()> {
    let f = &a.files;
    let engine = load_engine(&f.ckpt, &f.data, &f.store)?;
    let split = engine.splits().by_name(&a.split)?;
    let metric = evaluate_model(engine.model(), engine.params(), &engine.splits().train, engine.store(), split)?;
    #[derive(Serialize)]
    struct Eval<'a> {
        split: &'a str,
        round: usize,
        store_size: usize,
        metric: ial_core::ial::Metric,
    }
    emit("metric", &Eval { split: &a.split, round: engine.round(), store_size: engine.store().len(), metric })
}

async fn serve(a: ServeArgs) -> Result<()> {
    let f = &a.files;
    let engine = load_engine(&f.ckpt, &f.data, &f.store)?;
    let persist = Persist { store_path: Some(f.store.clone()), ckpt_path: Some(f.ckpt.clone()) };
    let gw = Gateway::start(engine, persist)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("host and port")?;
    serve_until(gw, addr, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
}

fn check(a: CheckArgs) -> Result<()> {
    let (grad, infl) = if !a.gradients && !a.influence { (true, true) } else { (a.gradients, a.influence) };
    let mut failed = false;
    if grad {
        let checks = gradient_suite(5)?;
        let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
        failed |= worst >= 1e-4;
        println!("{} gradients: max relative error {worst:.2e} over {} models (< 1e-4)", verdict(worst < 1e-4), checks.len());
    }
    if infl {
        let c = influence_suite()?;
        failed |= c.spearman < 0.7;
        println!(
            "{} influence: Spearman {:.3}, Pearson {:.3} against leave-one-out, N = {} (>= 0.7)",
            verdict(c.spearman >= 0.7),
            c.spearman,
            c.pearson,
            c.n
        );
    }
    if failed {
        bail!("self-check failed");
    }
    Ok(())
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

#[tokio::main]
async fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::Pretrain(a) => pretrain(a),
        Command::Round(a) => round(a).await,
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a).await,
        Command::Check(a) => check(a),
    }
}
