//! Subcommands of the `activemix` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use activemix::checkpoint::{load_model, model_id, read_json, save_model, write_json};
use activemix::data::{dump_grid, dump_pnm};
use activemix::distill::pool_dataset;
use activemix::nn::{evaluate, train};
use activemix::run::{DataConfig, RunDir};
use activemix::teacher::teacher_accuracy;
use activemix::{
    run_in_dir, run_sweep, synthesize, Architecture, DatasetSource, Error, LocalTeacher,
    QueryLedger, Result, RunConfig, Selector, SoftLabel, SweepSpec, Teacher, TrainConfig,
};
use activemix_http::{RemoteConfig, RemoteTeacher, Service, ServiceConfig};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Environment variable naming the directory runs go to when `--out` is omitted.
pub const RUN_ROOT_ENV: &str = "ACTIVEMIX_RUN_ROOT";

#[derive(Debug, Parser)]
#[command(
    name = "activemix",
    version,
    about = "Distil a blackbox image classifier with actively selected mixup queries"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a teacher on a labeled dataset and write a model file.
    TrainTeacher(TrainTeacherArgs),
    /// Serve a model file over HTTP.
    ServeTeacher(ServeArgs),
    /// Run a distillation into a run directory.
    Distill(DistillArgs),
    /// Report test accuracy of a model file or a remote teacher.
    Evaluate(EvaluateArgs),
    /// Run a grid of distillations over real-image count and synthetic budget.
    Sweep(SweepArgs),
    /// Write the selected mixup images of one round as PGM/PPM files.
    DumpMixup(DumpArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct TeacherArgs {
    /// Model file to use in-process.
    #[arg(long, value_name = "MODEL")]
    pub local: Option<PathBuf>,
    /// Base URL of a running `serve-teacher`.
    #[arg(long, value_name = "URL")]
    pub remote: Option<String>,
}

#[derive(Debug, Args)]
pub struct RemoteArgs {
    /// Images per HTTP request.
    #[arg(long, default_value_t = 256)]
    pub batch_limit: usize,
    /// Concurrent HTTP requests.
    #[arg(long, default_value_t = 1)]
    pub max_in_flight: usize,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    pub timeout_secs: u64,
}

#[derive(Debug, Args)]
pub struct TrainTeacherArgs {
    /// JSON config; omitted fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the standard MNIST IDX files in this directory for train and test data.
    #[arg(long)]
    pub idx_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value_t = 1024)]
    pub max_batch: usize,
    /// Append one line per /predict request here.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub teacher: TeacherArgs,
    #[command(flatten)]
    pub remote: RemoteArgs,
    /// Run directory; defaults to `$ACTIVEMIX_RUN_ROOT/<selector>-seed<seed>` (or `runs/...`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the run directory's checkpoint.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub idx_dir: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub k_per_round: Option<usize>,
    #[arg(long)]
    pub selector: Option<Selector>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model file to evaluate.
    #[arg(long, conflicts_with = "remote")]
    pub model: Option<PathBuf>,
    /// Evaluate a served teacher instead.
    #[arg(long)]
    pub remote: Option<String>,
    /// Run config whose test set is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub idx_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Base run config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Sweep grid (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    #[command(flatten)]
    pub teacher: TeacherArgs,
    #[command(flatten)]
    pub remote: RemoteArgs,
    /// Directory for table.csv, cells.csv and report.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Allowed accuracy drop between neighbouring cells (fraction).
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub round: usize,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Config of `train-teacher`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub train: DatasetSource,
    pub test: DatasetSource,
    pub arch: Architecture,
    pub training: TrainConfig,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        let data = DataConfig::default();
        TeacherConfig {
            train: data.unlabeled,
            test: data.test,
            arch: Architecture::default(),
            training: TrainConfig::default(),
        }
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_) | Error::Io { .. } => 2,
        Error::Transport(_) | Error::Protocol(_) => 3,
        Error::Format { .. } => 4,
        Error::Logic(_) => 1,
    }
}

/// Reads a config file. Problems with its contents are config (input) errors.
fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).map_err(|e| match e {
        Error::Format { field, detail } => Error::input(format!("config {field}: {detail}")),
        other => other,
    })
}

/// A config file, or the defaults when no file is given.
fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_config)
}

fn print_config<T: Serialize>(cfg: &T) {
    println!(
        "config: {}",
        serde_json::to_string(cfg).expect("config serializes")
    );
}

/// MNIST training and test splits under their usual file names.
pub fn idx_sources(dir: &Path) -> (DatasetSource, DatasetSource) {
    let src = |images: &str, labels: &str| DatasetSource::Idx {
        images: dir.join(images),
        labels: Some(dir.join(labels)),
        num_classes: 10,
        limit: None,
    };
    (
        src("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        src("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    )
}

fn local_teacher(path: &Path) -> Result<LocalTeacher> {
    let (model, _) = load_model(path)?;
    let id = model_id(&model);
    Ok(LocalTeacher::new(model, id))
}

fn open_teacher(t: &TeacherArgs, r: &RemoteArgs) -> Result<Box<dyn Teacher>> {
    match (&t.local, &t.remote) {
        (Some(p), _) => Ok(Box::new(local_teacher(p)?)),
        (None, Some(url)) => Ok(Box::new(RemoteTeacher::connect(RemoteConfig {
            batch_limit: r.batch_limit,
            max_in_flight: r.max_in_flight,
            timeout: Duration::from_secs(r.timeout_secs),
            ..RemoteConfig::new(url.clone())
        })?)),
        (None, None) => Err(Error::input("one of --local or --remote is required")),
    }
}

pub fn train_teacher(args: &TrainTeacherArgs) -> Result<()> {
    let mut cfg: TeacherConfig = load_config(args.config.as_deref())?;
    if let Some(dir) = &args.idx_dir {
        (cfg.train, cfg.test) = idx_sources(dir);
        if args.config.is_none() {
            cfg.arch = Architecture::SmallCnn;
        }
    }
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.training.seed = s;
    }
    cfg.training.validate()?;
    print_config(&cfg);
    let train_ds = cfg.train.load()?;
    let test_ds = cfg.test.load()?;
    let labels = train_ds.require_labels()?;
    let k = train_ds.num_classes();
    let targets = labels
        .iter()
        .map(|&l| SoftLabel::one_hot(k, l))
        .collect::<Result<Vec<_>>>()?;
    let spec = cfg.arch.resolve(train_ds.shape(), k)?;
    let out = train(&spec, train_ds.images(), &targets, &cfg.training)?;
    let acc = evaluate(&out.model, test_ds.images(), test_ds.require_labels()?)?;
    println!(
        "train images: {}  test images: {}",
        train_ds.len(),
        test_ds.len()
    );
    println!(
        "final epoch loss: {:.6}",
        out.loss_history.last().copied().unwrap_or(f64::NAN)
    );
    println!("test accuracy: {acc:.4}");
    let mut meta = BTreeMap::new();
    meta.insert("test_accuracy".into(), serde_json::json!(acc));
    meta.insert(
        "config".into(),
        serde_json::to_value(&cfg).expect("config serializes"),
    );
    save_model(&out.model, meta, &args.out)?;
    println!(
        "wrote {} (model id {})",
        args.out.display(),
        model_id(&out.model)
    );
    Ok(())
}

pub fn serve_teacher(args: &ServeArgs) -> Result<()> {
    let cfg = ServiceConfig {
        bind: args.bind.clone(),
        checkpoint: args.checkpoint.clone(),
        max_batch: args.max_batch,
        log: args.log.clone(),
    };
    let svc = Service::from_config(&cfg)?;
    let info = svc.info().clone();
    activemix_http::serve(svc, &cfg.bind, |addr| {
        println!(
            "serving model {} (K={}, input {:?}) on http://{addr}",
            info.model_id, info.num_classes, info.input_shape
        );
    })
}

fn default_out(cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(format!("{}-seed{}", cfg.distill.selector, cfg.distill.seed))
}

/// Resolves the run config: file (or the run directory's saved config when resuming), then flags.
pub fn distill_config(args: &DistillArgs) -> Result<RunConfig> {
    let saved = match (&args.config, &args.out) {
        (None, Some(out)) if args.resume => Some(RunDir::new(out).config()),
        _ => args.config.clone(),
    };
    let mut cfg: RunConfig = load_config(saved.as_deref())?;
    if let Some(dir) = &args.idx_dir {
        let (train, test) = idx_sources(dir);
        cfg.data = DataConfig {
            unlabeled: train,
            test,
        };
    }
    let d = &mut cfg.distill;
    if let Some(v) = args.n {
        d.n = v;
    }
    if let Some(v) = args.rounds {
        d.rounds = v;
    }
    if let Some(v) = args.k_per_round {
        d.k_per_round = v;
    }
    if let Some(v) = args.selector {
        d.selector = v;
    }
    if let Some(v) = args.seed {
        d.seed = v;
    }
    d.validate()?;
    Ok(cfg)
}

pub fn distill(args: &DistillArgs) -> Result<()> {
    let cfg = distill_config(args)?;
    print_config(&cfg);
    let teacher = open_teacher(&args.teacher, &args.remote)?;
    let out = args.out.clone().unwrap_or_else(|| default_out(&cfg));
    let dir = RunDir::new(&out);
    let result = run_in_dir(teacher.as_ref(), &cfg, &dir, args.resume)?;
    println!("teacher accuracy: {:.4}", result.teacher_accuracy);
    println!("round  queries  labeled  accuracy  success_rate");
    for m in &result.metrics {
        println!(
            "{:>5}  {:>7}  {:>7}  {:>8.4}  {:>12.4}",
            m.round, m.queries, m.labeled, m.accuracy, m.success_rate
        );
    }
    println!("stop: {:?}", result.stop);
    println!("run directory: {}", out.display());
    Ok(())
}

pub fn evaluate_cmd(args: &EvaluateArgs) -> Result<()> {
    let mut cfg: RunConfig = load_config(args.config.as_deref())?;
    if let Some(dir) = &args.idx_dir {
        cfg.data.test = idx_sources(dir).1;
    }
    let test = cfg.data.test.load()?;
    let acc = match (&args.model, &args.remote) {
        (Some(p), _) => {
            let (model, _) = load_model(p)?;
            evaluate(&model, test.images(), test.require_labels()?)?
        }
        (None, Some(url)) => {
            let t = RemoteTeacher::connect(RemoteConfig::new(url.clone()))?;
            let mut ledger = QueryLedger::new();
            let acc = teacher_accuracy(&t, &test, &mut ledger)?;
            println!("queries: {}", ledger.total());
            acc
        }
        (None, None) => return Err(Error::input("one of --model or --remote is required")),
    };
    println!("test images: {}", test.len());
    println!("accuracy: {acc:.4}");
    Ok(())
}

pub fn sweep(args: &SweepArgs) -> Result<()> {
    let base: RunConfig = load_config(args.config.as_deref())?;
    let spec: SweepSpec = read_config(&args.spec)?;
    spec.validate()?;
    print_config(&serde_json::json!({"base": base, "spec": spec}));
    let teacher = open_teacher(&args.teacher, &args.remote)?;
    let report = run_sweep(teacher.as_ref(), &base, &spec)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let table = args.out.join("table.csv");
    fs::write(&table, report.table_csv()).map_err(|e| Error::io(&table, e))?;
    let cells = args.out.join("cells.csv");
    fs::write(&cells, report.cells_csv()).map_err(|e| Error::io(&cells, e))?;
    let violations = report.monotonicity(args.tolerance);
    write_json(
        &args.out.join("report.json"),
        &serde_json::json!({"tolerance": args.tolerance, "violations": violations}),
    )?;
    print!("{}", String::from_utf8_lossy(&report.table_csv()));
    if violations.is_empty() {
        println!("monotone along both axes (tolerance {})", args.tolerance);
    }
    for v in &violations {
        println!(
            "accuracy drops by {:.4} along {} from {} to {} (other axis fixed at {})",
            v.drop, v.axis, v.from, v.to, v.fixed
        );
    }
    Ok(())
}

fn top3_line(probs: &SoftLabel) -> String {
    probs
        .top(3)
        .iter()
        .map(|(c, p)| format!("{c}:{p:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn dump_mixup(args: &DumpArgs) -> Result<()> {
    if args.count == 0 {
        return Ok(());
    }
    let dir = RunDir::new(&args.run);
    let cfg = dir.read_config()?;
    let log = dir.read_selection(args.round)?;
    let (x, _) = cfg.load_data()?;
    let source = pool_dataset(&x, &cfg.distill)?;

    let mut order: Vec<usize> = (0..log.entries.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| log.entries[i].confidence.unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(a.cmp(&b))
    });
    order.truncate(args.count);
    if order.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let ext = if source.shape()[2] == 3 { "ppm" } else { "pgm" };
    let mut images = Vec::new();
    let mut notes = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        let e = &log.entries[i];
        let im = synthesize(source.image(e.pair.i()), source.image(e.pair.j()), e.lambda)?;
        let note = format!(
            "pair=({},{}) lambda={:.2} confidence={} teacher_top3={}",
            e.pair.i(),
            e.pair.j(),
            e.lambda,
            e.confidence
                .map_or_else(|| "-".into(), |c| format!("{c:.4}")),
            top3_line(&e.teacher_probs)
        );
        let path = args
            .out
            .join(format!("round{}_{rank:03}.{ext}", args.round));
        dump_pnm(&im, &path)?;
        fs::write(path.with_extension("txt"), format!("{note}\n"))
            .map_err(|e| Error::io(&path, e))?;
        images.push(im);
        notes.push(note);
    }
    dump_grid(
        &images,
        &notes,
        8,
        &args.out.join(format!("round{}_grid.{ext}", args.round)),
    )?;

    // λ-series for the least confident pair.
    let first = &log.entries[order[0]];
    let (a, b) = (source.image(first.pair.i()), source.image(first.pair.j()));
    let lambdas: Vec<f64> = (0..=10).map(|s| s as f64 / 10.0).collect();
    let series = lambdas
        .iter()
        .map(|&l| synthesize(a, b, l))
        .collect::<Result<Vec<_>>>()?;
    let series_notes: Vec<String> = lambdas.iter().map(|l| format!("lambda={l:.1}")).collect();
    let name = format!("series_{}_{}.{ext}", first.pair.i(), first.pair.j());
    dump_grid(&series, &series_notes, series.len(), &args.out.join(name))?;
    println!(
        "wrote {} selections and a lambda series to {}",
        images.len(),
        args.out.display()
    );
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::TrainTeacher(a) => train_teacher(a),
        Command::ServeTeacher(a) => serve_teacher(a),
        Command::Distill(a) => distill(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::DumpMixup(a) => dump_mixup(a),
    }
}
