//! `cecnn` command-line interface.
//!
//! Exit codes: 0 success, 1 runtime failure (including aborted folds),
//! 2 usage or configuration error.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context};
use cecnn::copula::Task;
use cecnn::gls::variance_experiment;
use cecnn::nn::{ActivationKind, Backbone};
use cecnn::pipeline::{
    ccnn_train, data_kind, estimate_copula, evaluate, fold_losses_csv, loss_csv, results_csv,
    run_cv, single_split, summarize, summary_csv, summary_table, RunConfig, Split, TrainData,
};
use cecnn::synth::{gen_dataset, DataKind, Dataset};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "cecnn",
    version,
    about = "Copula-enhanced multi-task CNN experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Configuration file (TOML sections [data], [train], [cv], [gls]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// rc, rr-gaussian (alias rr) or rr-nonparam.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset (binary container plus CSV manifest).
    GenData(Common),
    /// Warm-up, copula estimation and C-CNN on a 6:2:2 split.
    Train {
        #[command(flatten)]
        common: Common,
        /// Existing dataset file; generated from [data] when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a saved backbone on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Backbone file stem (the .json/.bin pair written by `train`).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Repeated k-fold baseline vs CeCNN comparison on synthetic data.
    ReproduceSim(Common),
    /// OLS/GLS/FGLS variance comparison on a seemingly unrelated regression.
    GlsDemo(Common),
    /// Print the effective configuration.
    PrintConfig(Common),
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn core_failure(e: cecnn::Error) -> Failure {
    match e {
        cecnn::Error::Config(_) => usage(e),
        other => runtime(other),
    }
}

type Outcome = Result<(), Failure>;

fn load_config(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(t) = &common.task {
        cfg.train.task = t.parse::<Task>().map_err(usage)?;
    }
    if let Some(n) = common.n {
        cfg.data.n = n;
        cfg.gls.n = n;
    }
    if let Some(s) = common.seed {
        cfg.data.seed = s;
        cfg.train.seed = s;
        cfg.gls.seed = s;
    }
    if let Some(f) = common.folds {
        cfg.cv.folds = f;
    }
    if let Some(r) = common.rounds {
        cfg.cv.rounds = r;
    }
    if let Some(w) = common.workers {
        cfg.cv.workers = w;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn out_dir(common: &Common, default: &str) -> Result<PathBuf, Failure> {
    let dir = common.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir)
        .with_context(|| format!("cannot create {}", dir.display()))
        .map_err(runtime)?;
    Ok(dir)
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: RunConfig,
    seeds: BTreeMap<String, u64>,
    dataset_digest: Option<String>,
    artifacts: Vec<String>,
    started_unix: u64,
    wall_clock_secs: f64,
    details: serde_json::Value,
}

struct Run {
    command: &'static str,
    started: Instant,
    started_unix: u64,
    artifacts: Vec<String>,
}

impl Run {
    fn new(command: &'static str) -> Self {
        Self {
            command,
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            artifacts: Vec::new(),
        }
    }

    fn write(&mut self, path: &Path, contents: &[u8]) -> Outcome {
        write_atomic(path, contents).map_err(runtime)?;
        self.artifacts.push(path.display().to_string());
        Ok(())
    }

    fn finish(
        self,
        path: &Path,
        config: &RunConfig,
        digest: Option<String>,
        details: serde_json::Value,
    ) -> Outcome {
        let seeds = BTreeMap::from([
            ("data".to_string(), config.data.seed),
            ("train".to_string(), config.train.seed),
            ("gls".to_string(), config.gls.seed),
        ]);
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: config.clone(),
            seeds,
            dataset_digest: digest,
            artifacts: self.artifacts,
            started_unix: self.started_unix,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            details,
        };
        let json = serde_json::to_vec_pretty(&manifest).map_err(runtime)?;
        write_atomic(path, &json).map_err(runtime)
    }
}

/// Writes to a sibling temporary file, then renames it over `path`.
fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).with_context(|| format!("cannot write {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move into {}", path.display()))?;
    Ok(())
}

fn data_kind_arg(task: &str) -> Result<DataKind, Failure> {
    match task.parse::<DataKind>() {
        Ok(k) => Ok(k),
        Err(_) => task.parse::<Task>().map(data_kind).map_err(usage),
    }
}

fn cmd_gen_data(common: &Common) -> Outcome {
    let mut common = common.clone();
    let kind = match common.task.take() {
        Some(t) => data_kind_arg(&t)?,
        None => DataKind::Rr,
    };
    let cfg = load_config(&common)?;
    let path = common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}_{}.bin", kind.as_str(), cfg.data.n)));
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(runtime)?;
    }
    let mut run = Run::new("gen-data");
    let ds = gen_dataset(kind, cfg.data.n, cfg.data.seed).map_err(core_failure)?;
    run.write(&path, &ds.to_bytes())?;
    let mut csv = path.as_os_str().to_owned();
    csv.push(".csv");
    run.write(Path::new(&csv), ds.manifest_csv().as_bytes())?;
    let digest = ds.digest();
    println!(
        "wrote {} samples ({}) to {} sha256 {digest}",
        ds.len(),
        kind.as_str(),
        path.display()
    );
    let mut manifest = path.as_os_str().to_owned();
    manifest.push(".manifest.json");
    run.finish(
        Path::new(&manifest),
        &cfg,
        Some(digest),
        serde_json::json!({ "kind": kind.as_str(), "n": ds.len() }),
    )
}

fn cmd_train(common: &Common, data: Option<&Path>) -> Outcome {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "train_out")?;
    let mut run = Run::new("train");
    let ds = match data {
        Some(p) => Dataset::load(p)
            .with_context(|| format!("cannot load dataset {}", p.display()))
            .map_err(runtime)?,
        None => gen_dataset(data_kind(cfg.train.task), cfg.data.n, cfg.data.seed)
            .map_err(core_failure)?,
    };
    if ds.kind != data_kind(cfg.train.task) {
        return Err(usage(anyhow!(
            "task {} needs a {} dataset, got {}",
            cfg.train.task.as_str(),
            data_kind(cfg.train.task).as_str(),
            ds.kind.as_str()
        )));
    }
    let (tr, va, te) = single_split(ds.len(), cfg.train.seed);
    let data = TrainData {
        train: Split::<f64>::from_dataset(&ds, &tr),
        valid: Split::from_dataset(&ds, &va),
    };
    let test = Split::from_dataset(&ds, &te);
    let task = cfg.train.task;
    let warm = cecnn::pipeline::warmup_train(&data, &cfg.train).map_err(core_failure)?;
    let copula = estimate_copula(&warm, &data, task).map_err(core_failure)?;
    let ccnn = ccnn_train(&warm, &copula, &data, &cfg.train).map_err(core_failure)?;

    let mut metrics = String::from("method,metric,value\n");
    for (method, model) in [("baseline", &warm.backbone), ("cecnn", &ccnn.backbone)] {
        for (k, v) in evaluate(model, &test, task).map_err(core_failure)? {
            metrics.push_str(&format!("{method},{k},{v}\n"));
        }
    }
    print!("{metrics}");
    for (name, model) in [("warmup", &warm.backbone), ("cecnn", &ccnn.backbone)] {
        let stem = dir.join(name);
        model.save(&stem).map_err(runtime)?;
        let (json, bin) = Backbone::<f64>::file_paths(&stem);
        run.artifacts.push(json.display().to_string());
        run.artifacts.push(bin.display().to_string());
    }
    run.write(&dir.join("copula.txt"), copula.to_text().as_bytes())?;
    run.write(&dir.join("metrics.csv"), metrics.as_bytes())?;
    let mut history = warm.history.clone();
    history.extend(ccnn.history.iter().cloned());
    run.write(&dir.join("loss.csv"), loss_csv(&history).as_bytes())?;
    let details = serde_json::json!({
        "split_digest": data.digest(),
        "warmup": warm.provenance,
        "ccnn": ccnn.provenance,
    });
    run.finish(&dir.join("manifest.json"), &cfg, Some(ds.digest()), details)
}

fn cmd_eval(common: &Common, model: &Path, data: &Path) -> Outcome {
    let backbone = Backbone::<f64>::load(model)
        .with_context(|| format!("cannot load model {}", model.display()))
        .map_err(runtime)?;
    let ds = Dataset::load(data)
        .with_context(|| format!("cannot load dataset {}", data.display()))
        .map_err(runtime)?;
    let task = match &common.task {
        Some(t) => t.parse::<Task>().map_err(usage)?,
        None if backbone
            .heads()
            .iter()
            .any(|h| h.activation == ActivationKind::Sigmoid) =>
        {
            Task::Rc
        }
        None => Task::RrGaussian,
    };
    if ds.kind != data_kind(task) {
        return Err(usage(anyhow!(
            "model for task {} cannot be evaluated on a {} dataset",
            task.as_str(),
            ds.kind.as_str()
        )));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let split = Split::from_dataset(&ds, &idx);
    let mut out = String::from("metric,value\n");
    for (k, v) in evaluate(&backbone, &split, task).map_err(core_failure)? {
        out.push_str(&format!("{k},{v}\n"));
    }
    print!("{out}");
    if let Some(path) = &common.out {
        write_atomic(path, out.as_bytes()).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_reproduce_sim(common: &Common) -> Outcome {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "sim_out")?;
    let mut run = Run::new("reproduce-sim");
    let ds =
        gen_dataset(data_kind(cfg.train.task), cfg.data.n, cfg.data.seed).map_err(core_failure)?;
    let outcome = run_cv(&ds, &cfg.train, &cfg.cv).map_err(core_failure)?;
    let summary = summarize(&outcome.results);
    run.write(
        &dir.join("results.csv"),
        results_csv(&outcome.results).as_bytes(),
    )?;
    run.write(&dir.join("summary.csv"), summary_csv(&summary).as_bytes())?;
    run.write(
        &dir.join("losses.csv"),
        fold_losses_csv(&outcome.runs).as_bytes(),
    )?;
    print!("{}", summary_table(&summary));
    let details = serde_json::json!({
        "folds": outcome.runs,
        "failures": outcome.failures,
        "summary": summary,
    });
    run.finish(&dir.join("manifest.json"), &cfg, Some(ds.digest()), details)?;
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(anyhow!(
            "{} of {} folds aborted; partial results kept in {}",
            outcome.failures.len(),
            cfg.cv.folds * cfg.cv.rounds,
            dir.display()
        )))
    }
}

fn cmd_gls_demo(common: &Common) -> Outcome {
    let cfg = load_config(common)?;
    let dir = out_dir(common, "gls_out")?;
    let mut run = Run::new("gls-demo");
    let comparison =
        variance_experiment(&cfg.gls.experiment(cfg.cv.workers)).map_err(core_failure)?;
    run.write(&dir.join("gls.csv"), comparison.to_csv().as_bytes())?;
    run.write(
        &dir.join("gls_summary.txt"),
        comparison.summary().as_bytes(),
    )?;
    println!("dominance fraction {}", comparison.dominance_fraction);
    println!(
        "min coordinate dominance {}",
        comparison.min_coordinate_dominance
    );
    println!(
        "mean variance ratio (GLS/OLS) {}",
        comparison.mean_variance_ratio
    );
    println!(
        "FGLS-GLS mean squared difference {}",
        comparison.fgls_gls_msd
    );
    let details = serde_json::json!({
        "dominance_fraction": comparison.dominance_fraction,
        "mean_variance_ratio": comparison.mean_variance_ratio,
        "coordinates": comparison.coordinates,
    });
    run.finish(&dir.join("manifest.json"), &cfg, None, details)
}

fn dispatch(cli: Cli) -> Outcome {
    match cli.command {
        Command::GenData(c) => cmd_gen_data(&c),
        Command::Train { common, data } => cmd_train(&common, data.as_deref()),
        Command::Eval {
            common,
            model,
            data,
        } => cmd_eval(&common, &model, &data),
        Command::ReproduceSim(c) => cmd_reproduce_sim(&c),
        Command::GlsDemo(c) => cmd_gls_demo(&c),
        Command::PrintConfig(c) => {
            print!("{}", load_config(&c)?.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
