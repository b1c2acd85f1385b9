//! Command-line front end: `phantom`, `train`, `evaluate`, `predict` and
//! `gradcheck`.
//!
//! Exit codes: 0 success, 1 check failure, 2 I/O or file format, 3 split
//! infeasible, 4 numeric divergence, 5 config or weights mismatch, 64 usage.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{parse_manifest, split_dataset, Grouping, Label, Manifest, SliceRecord};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, confusion, sensitivity, specificity, ConfusionMatrix};
use crate::network::{load_weights, parse_branches, predictions_from_probs, save_weights, Network};
use crate::optim::{evaluate_samples, stack_samples, train_loop_with, EpochLog, OptimizerKind};
use crate::phantom::{generate_phantom, Texture};
use crate::pipeline::{evaluate, load_samples, prepare_split};
use crate::preprocess::ChannelSelection;
use crate::tensor::gradcheck::{check_op, GradcheckReport, Op};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_SPLIT: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;
pub const EXIT_USAGE: i32 = 64;

pub const EPOCH_LOG_HEADER: &str = "epoch,lr,train_loss,train_acc,val_loss,val_acc";

#[derive(Debug, Parser)]
#[command(
    name = "codelnet",
    version,
    about = "Multi-scale CNN for two-channel tumor slice classification"
)]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Shared {
    /// `key = value` config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (falls back to CODELNET_SEED, then 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Phantom(PhantomArgs),
    /// Split, preprocess and train; writes weights, epoch log and config echo.
    Train(TrainArgs),
    /// Metrics of trained weights on every record of a manifest.
    Evaluate(ModelArgs),
    /// Per-slice `id,label,probability` lines.
    Predict(ModelArgs),
    /// Finite-difference checks of every backward pass.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct PhantomArgs {
    /// Patients per class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    patients: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    slices: Option<u64>,
    /// Side of the generated slices in pixels.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    signal: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long, value_parser = parse_texture)]
    texture: Option<Texture>,
}

#[derive(Debug, Args)]
struct NetArgs {
    #[arg(long, value_parser = parse_channels)]
    channels: Option<ChannelSelection>,
    #[arg(long)]
    canvas: Option<usize>,
    /// Branch layout, e.g. `32x16p2,16x16p2,8x16p2`.
    #[arg(long)]
    branches: Option<String>,
    /// Hidden dense widths, comma separated (empty for none).
    #[arg(long)]
    fc: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    augment_fold: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Base learning rate.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    /// Slices per class in each epoch's balanced subset.
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    validation_fraction: Option<f64>,
    #[arg(long, value_parser = parse_grouping)]
    grouping: Option<Grouping>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Weights file (default: OUT/weights.cdw).
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    net: NetArgs,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Check one op only.
    #[arg(long, value_parser = parse_op)]
    op: Option<Op>,
    /// Override every op's tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Seeded cases per op.
    #[arg(long, default_value_t = 100)]
    cases: u64,
}

fn parse_texture(s: &str) -> std::result::Result<Texture, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_channels(s: &str) -> std::result::Result<ChannelSelection, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_grouping(s: &str) -> std::result::Result<Grouping, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_op(s: &str) -> std::result::Result<Op, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::Manifest { .. } => EXIT_IO,
        Error::Split(_) => EXIT_SPLIT,
        Error::Divergence { .. } | Error::Numeric { .. } => EXIT_DIVERGENCE,
        Error::ParameterMismatch { .. }
        | Error::Config(_)
        | Error::Build { .. }
        | Error::Dimension { .. } => EXIT_MISMATCH,
        _ => EXIT_CHECK,
    }
}

fn resolve(shared: &Shared) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_env()?;
    if let Some(path) = &shared.config {
        cfg.apply_file(path)?;
    }
    if let Some(s) = shared.seed {
        cfg.seed = s;
    }
    if let Some(o) = &shared.out {
        cfg.out = o.clone();
    }
    if let Some(w) = shared.workers {
        cfg.workers = w;
    }
    Ok(cfg)
}

fn apply_net(cfg: &mut RunConfig, a: &NetArgs) -> Result<()> {
    if let Some(c) = a.channels {
        cfg.channels = c;
    }
    if let Some(c) = a.canvas {
        cfg.canvas = c;
    }
    if let Some(b) = &a.branches {
        cfg.branches = parse_branches(b)?;
    }
    if let Some(fc) = &a.fc {
        cfg.set("fc", fc)?;
    }
    Ok(())
}

fn set_workers(n: usize) {
    if n > 0 {
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

/// Parse `args` (program name first), run the command and return its exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = resolve(&cli.shared)?;
    set_workers(cfg.workers);
    match cli.command {
        Command::Phantom(a) => cmd_phantom(&mut cfg, &a, out),
        Command::Train(a) => cmd_train(&mut cfg, &a, out),
        Command::Evaluate(a) => cmd_evaluate(&mut cfg, &a, out),
        Command::Predict(a) => cmd_predict(&mut cfg, &a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&cfg, &a, out),
    }
}

fn w(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn cmd_phantom(cfg: &mut RunConfig, a: &PhantomArgs, out: &mut dyn Write) -> Result<i32> {
    let p = &mut cfg.phantom;
    if let Some(n) = a.patients {
        p.patients_per_class = n as usize;
    }
    if let Some(n) = a.slices {
        p.slices_per_patient = n as usize;
    }
    if let Some(s) = a.size {
        p.size = s;
    }
    if let Some(s) = a.signal {
        p.signal = s;
    }
    if let Some(n) = a.noise {
        p.noise = n;
    }
    if let Some(t) = a.texture {
        p.texture = t;
    }
    create_dir(&cfg.out)?;
    let manifest = generate_phantom(&cfg.phantom_config(), &cfg.out)?;
    writeln!(
        out,
        "{} ({} records)",
        cfg.out.join("manifest.csv").display(),
        manifest.len()
    )
    .map_err(w)?;
    Ok(EXIT_OK)
}

/// Copy of `records` with absolute paths, valid from any directory.
fn portable(manifest: &Manifest, records: &[SliceRecord], root: &Path) -> Manifest {
    let base = fs::canonicalize(&manifest.root).unwrap_or_else(|_| manifest.root.clone());
    let recs = records
        .iter()
        .map(|r| SliceRecord {
            t1c: base.join(&r.t1c),
            t2: base.join(&r.t2),
            mask: base.join(&r.mask),
            ..r.clone()
        })
        .collect();
    Manifest::new(root, recs)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn epoch_log_line(l: &EpochLog) -> String {
    format!(
        "{},{},{},{},{},{}",
        l.epoch,
        l.lr,
        l.train_loss,
        l.train_acc,
        fmt_opt(l.val_loss),
        fmt_opt(l.val_acc)
    )
}

fn cmd_train(cfg: &mut RunConfig, a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    apply_net(cfg, &a.net)?;
    if let Some(o) = a.optimizer {
        cfg.optimizer = o;
    }
    if let Some(k) = a.augment_fold {
        cfg.augment_fold = k;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(t) = a.test_per_class {
        cfg.test_per_class = t;
    }
    if a.train_per_class.is_some() {
        cfg.train_per_class = a.train_per_class;
    }
    if let Some(v) = a.validation_fraction {
        cfg.validation_fraction = v;
    }
    if let Some(g) = a.grouping {
        cfg.grouping = g;
    }
    let manifest_path = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("train needs --manifest".into()))?;
    cfg.validate()?;
    let mut net = Network::build(cfg.network_config())?;
    let manifest = parse_manifest(&manifest_path)?;
    let split = split_dataset(&manifest, &cfg.split_spec())?;
    let (data, _test) = prepare_split(&manifest, &split, cfg.channels, cfg.canvas)?;

    create_dir(&cfg.out)?;
    let weights = cfg.out.join("weights.cdw");
    cfg.weights = Some(weights.clone());
    write_file(&cfg.out.join("config.txt"), &cfg.to_text())?;
    for (name, recs) in [
        ("test_manifest.csv", &split.test),
        ("validation_manifest.csv", &split.validation),
        ("train_manifest.csv", &split.train),
    ] {
        portable(&manifest, recs, &cfg.out).write(cfg.out.join(name))?;
    }

    let mut log = format!("{EPOCH_LOG_HEADER}\n");
    let mut io_err = None;
    let logs = train_loop_with(&mut net, &data, &cfg.train_config(), |l, _| {
        let line = epoch_log_line(l);
        if let Err(e) = writeln!(out, "{line}") {
            io_err.get_or_insert(e);
        }
        log.push_str(&line);
        log.push('\n');
    });
    write_file(&cfg.out.join("epochs.csv"), &log)?;
    let logs = logs?;
    if let Some(e) = io_err {
        return Err(w(e));
    }
    save_weights(&net, &weights)?;
    if data.validation.is_empty() {
        writeln!(out, "trained {} epochs; no validation set", logs.len()).map_err(w)?;
    } else {
        let report = evaluate(&net, &data.validation)?;
        writeln!(out, "validation after {} epochs:", logs.len()).map_err(w)?;
        write!(out, "{}", metrics_table(&report.confusion)).map_err(w)?;
    }
    writeln!(out, "weights: {}", weights.display()).map_err(w)?;
    Ok(EXIT_OK)
}

/// `metric,value` rows; undefined ratios print as `undefined`.
pub fn metrics_table(cm: &ConfusionMatrix) -> String {
    let show = |r: Result<f64>| {
        r.map(|v| format!("{v:.4}"))
            .unwrap_or_else(|_| "undefined".into())
    };
    format!(
        "metric,value\nsensitivity,{}\nspecificity,{}\naccuracy,{}\ntp,{}\nfp,{}\ntn,{}\nfn,{}\n",
        show(sensitivity(cm)),
        show(specificity(cm)),
        show(accuracy(cm)),
        cm.tp,
        cm.fp,
        cm.tn,
        cm.fn_
    )
}

fn load_model(cfg: &mut RunConfig, a: &ModelArgs) -> Result<(Network, Manifest)> {
    apply_net(cfg, &a.net)?;
    if let Some(m) = &a.manifest {
        cfg.manifest = Some(m.clone());
    }
    let weights = a
        .weights
        .clone()
        .or_else(|| cfg.weights.clone())
        .unwrap_or_else(|| cfg.out.join("weights.cdw"));
    let manifest_path = cfg
        .manifest
        .clone()
        .ok_or_else(|| Error::Config("--manifest is required".into()))?;
    let net = load_weights(&weights, cfg.network_config())?;
    let manifest = parse_manifest(&manifest_path)?;
    Ok((net, manifest))
}

fn cmd_evaluate(cfg: &mut RunConfig, a: &ModelArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, manifest) = load_model(cfg, a)?;
    let samples = load_samples(&manifest, &manifest.records, cfg.channels, cfg.canvas)?;
    let e = evaluate_samples(&net, &samples, 32)?;
    let preds: Vec<usize> = e.predictions.iter().map(|p| p.label).collect();
    let truths: Vec<usize> = samples.iter().map(|s| s.label.index()).collect();
    let cm = confusion(&preds, &truths)?;
    let table = metrics_table(&cm);
    write!(out, "{table}").map_err(w)?;
    create_dir(&cfg.out)?;
    write_file(&cfg.out.join("metrics.csv"), &table)?;
    Ok(EXIT_OK)
}

fn cmd_predict(cfg: &mut RunConfig, a: &ModelArgs, out: &mut dyn Write) -> Result<i32> {
    let (net, manifest) = load_model(cfg, a)?;
    for chunk in manifest.records.chunks(32) {
        let samples = load_samples(&manifest, chunk, cfg.channels, cfg.canvas)?;
        let (x, _) = stack_samples(&samples)?;
        let preds = predictions_from_probs(&net.forward(&x, false)?);
        for (r, p) in chunk.iter().zip(preds) {
            let label = Label::from_index(p.label).expect("binary output");
            writeln!(out, "{},{},{:.6}", r.id(), label, p.probability).map_err(w)?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(cfg: &RunConfig, a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let ops: Vec<Op> = match a.op {
        Some(op) => vec![op],
        None => Op::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for op in ops {
        let tol = a.tolerance.unwrap_or(op.default_tolerance());
        let mut report = GradcheckReport::new(op.name(), tol);
        for case in 0..a.cases {
            report.merge(&check_op(op, cfg.seed.wrapping_add(case), tol));
        }
        writeln!(out, "{report}").map_err(w)?;
        if !report.passed {
            failed.push(op.name());
        }
    }
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        writeln!(out, "gradient check failed: {}", failed.join(", ")).map_err(w)?;
        Ok(EXIT_CHECK)
    }
}
