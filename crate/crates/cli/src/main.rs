use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpood_core::bound::BoundChecker;
use gpood_core::detector::{fit_detector, DetectorConfig, DetectorModel};
use gpood_core::hyperfit::OptimizerConfig;
use gpood_core::interchange::{load_dataset, save_dataset, synthesize, Dataset, SynthConfig};
use gpood_core::metrics::{evaluate, roc_curve};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "gpood",
    version,
    about = "GP-based out-of-distribution detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic InD/OOD pair (ind.csv, ood.csv and manifests).
    Synth(SynthArgs),
    /// Fit a detector on an InD dataset and write the model file.
    Fit(FitArgs),
    /// Score a dataset and write one verdict row per sample.
    Detect(DetectArgs),
    /// Evaluate TPR/TNR/AUROC and write a report, ROC table and margins.
    Eval(EvalArgs),
    /// Check the distance bound on every sample of a dataset.
    BoundCheck(BoundArgs),
    /// Print a summary of a model file.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    p: u64,
    /// Samples per InD class.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// OOD samples; defaults to `n`.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n_ood: Option<u64>,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 20.0)]
    ood_offset: f64,
    #[arg(long, default_value_t = 10.0)]
    score_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    ind: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0.8)]
    gp_fraction: f64,
    /// Seeds the split, subsampling and optimizer restarts.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on GP points per class; 0 disables subsampling.
    #[arg(long, default_value_t = 1000)]
    max_gp_points: usize,
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    grad_tol: f64,
    /// Drop each validation point's own term when calibrating.
    #[arg(long)]
    leave_one_out: bool,
    /// Model file to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, alias = "ind")]
    input: PathBuf,
    /// Verdict CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    ind: PathBuf,
    #[arg(long)]
    ood: PathBuf,
    /// Output directory for report.json, roc.csv and margins.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, alias = "ind")]
    input: PathBuf,
    /// Report CSV to write.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    model: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<gpood_core::Error> for Failure {
    fn from(e: gpood_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{}: no such file", path.display())))
    }
}

fn require_parent(path: &Path) -> CmdResult {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Failure::Usage(format!(
            "{}: directory does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn require_unit_interval(name: &str, v: f64) -> CmdResult {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Failure::Usage(format!(
            "--{name} must lie in (0, 1), got {v}"
        )))
    }
}

fn run_synth(a: SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        num_classes: a.k as usize,
        dim: a.p as usize,
        n_per_class: a.n as usize,
        n_ood: a.n_ood.unwrap_or(a.n) as usize,
        cluster_separation: a.separation,
        ood_offset: a.ood_offset,
        score_scale: a.score_scale,
        seed: a.seed,
    };
    let (ind, ood) = synthesize(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let (ind_path, ood_path) = (a.out.join("ind.csv"), a.out.join("ood.csv"));
    save_dataset(&ind, &ind_path)?;
    save_dataset(&ood, &ood_path)?;
    println!(
        "wrote {} ({} rows) and {} ({} rows)",
        ind_path.display(),
        ind.len(),
        ood_path.display(),
        ood.len()
    );
    Ok(())
}

fn run_fit(a: FitArgs) -> CmdResult {
    require_unit_interval("alpha", a.alpha)?;
    require_unit_interval("gp-fraction", a.gp_fraction)?;
    require_file(&a.ind)?;
    require_parent(&a.out)?;
    let cfg = DetectorConfig {
        alpha: a.alpha,
        gp_fraction: a.gp_fraction,
        split_seed: a.seed,
        optimizer: OptimizerConfig {
            max_iters: a.max_iters,
            grad_tol: a.grad_tol,
            n_restarts: a.restarts,
            seed: a.seed,
            ..OptimizerConfig::default()
        },
        max_gp_points: (a.max_gp_points > 0).then_some(a.max_gp_points),
        leave_one_out: a.leave_one_out,
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let ind = load_dataset(&a.ind)?;
    let model = fit_detector(&ind, &cfg)?;
    for (k, c) in model.classes().iter().enumerate() {
        eprintln!(
            "class {k}: m_gp={} m_valid={} theta={:?} tau2={:e} gamma={:e} converged={}",
            c.gp.m(),
            c.valid.len(),
            c.gp.lengthscales().as_slice(),
            c.gp.tau2(),
            c.gamma,
            c.fit.converged
        );
    }
    model.save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<DetectorModel, Failure> {
    require_file(path)?;
    Ok(DetectorModel::load(path)?)
}

fn load_input(path: &Path) -> Result<Dataset, Failure> {
    require_file(path)?;
    Ok(load_dataset(path)?)
}

fn run_detect(a: DetectArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let ds = load_input(&a.input)?;
    require_parent(&a.out)?;
    let results = model.detect_all(&ds)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record([
        "row",
        "label",
        "predicted_class",
        "score",
        "threshold",
        "margin",
        "is_ood",
        "mu",
        "var",
    ])?;
    for (i, (s, r)) in ds.rows().iter().zip(&results).enumerate() {
        w.write_record([
            i.to_string(),
            s.label.to_string(),
            r.predicted_class.to_string(),
            format!("{:?}", r.score),
            format!("{:?}", r.threshold),
            format!("{:?}", r.margin),
            r.is_ood.to_string(),
            format!("{:?}", r.pred.mu),
            format!("{:?}", r.pred.var),
        ])?;
    }
    w.flush().map_err(io_err(&a.out))?;
    let flagged = results.iter().filter(|r| r.is_ood).count();
    println!("{} rows, {flagged} flagged OOD", results.len());
    Ok(())
}

#[derive(Serialize)]
struct ReportSummary {
    tpr: f64,
    tnr: f64,
    auroc: f64,
    n_ind: usize,
    n_ood: usize,
    alpha: f64,
}

fn run_eval(a: EvalArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let ind = load_input(&a.ind)?;
    let ood = load_input(&a.ood)?;
    let report = evaluate(&model, &ind, &ood)?;
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;

    let summary = ReportSummary {
        tpr: report.tpr,
        tnr: report.tnr,
        auroc: report.auroc,
        n_ind: report.n_ind,
        n_ood: report.n_ood,
        alpha: model.alpha(),
    };
    let path = a.out.join("report.json");
    let json =
        serde_json::to_string_pretty(&summary).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(io_err(&path))?;

    let mut w = csv::Writer::from_path(a.out.join("roc.csv"))?;
    w.write_record(["fpr", "tpr"])?;
    for pt in roc_curve(&report) {
        w.write_record([format!("{:?}", pt.fpr), format!("{:?}", pt.tpr)])?;
    }
    w.flush().map_err(io_err(&a.out))?;

    let mut w = csv::Writer::from_path(a.out.join("margins.csv"))?;
    w.write_record(["margin", "truth", "is_ood"])?;
    for s in &report.per_sample {
        w.write_record([
            format!("{:?}", s.margin),
            s.truth.as_str().to_string(),
            s.is_ood.to_string(),
        ])?;
    }
    w.flush().map_err(io_err(&a.out))?;

    println!(
        "TPR {:.4}  TNR {:.4}  AUROC {:.4}  (n_ind {}, n_ood {})",
        report.tpr, report.tnr, report.auroc, report.n_ind, report.n_ood
    );
    Ok(())
}

fn run_bound_check(a: BoundArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let ds = load_input(&a.input)?;
    require_parent(&a.out)?;
    let checker = BoundChecker::new(&model)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    w.write_record([
        "row",
        "class",
        "a_k",
        "lambda_min",
        "rhs",
        "d_min_sq",
        "implied_ood",
        "detector_ood",
        "score",
        "gamma",
    ])?;
    let (mut fired, mut violations) = (0usize, 0usize);
    for (i, s) in ds.rows().iter().enumerate() {
        let r = checker.check(s)?;
        fired += r.implied_ood as usize;
        violations += r.is_violation(1e-9) as usize;
        w.write_record([
            i.to_string(),
            r.class_k.to_string(),
            format!("{:?}", r.a_k),
            format!("{:?}", r.lambda_min),
            format!("{}", r.rhs),
            format!("{:?}", r.d_min_sq),
            r.implied_ood.to_string(),
            r.detector_ood.to_string(),
            format!("{:?}", r.score),
            format!("{:?}", r.gamma),
        ])?;
    }
    w.flush().map_err(io_err(&a.out))?;
    println!(
        "{} rows, bound fired on {fired}, violations {violations}",
        ds.len()
    );
    Ok(())
}

fn run_inspect(a: InspectArgs) -> CmdResult {
    let model = load_model(&a.model)?;
    let mut out = io::stdout().lock();
    let cfg = model.config();
    let w = |e: io::Error| Failure::Runtime(e.to_string());
    writeln!(
        out,
        "K={} p={} alpha={} gp_fraction={} seed={}",
        model.num_classes(),
        model.dim(),
        cfg.alpha,
        cfg.gp_fraction,
        cfg.split_seed
    )
    .map_err(w)?;
    for (k, c) in model.classes().iter().enumerate() {
        writeln!(
            out,
            "class {k}: m_gp={} m_valid={} gamma={:e} tau2={:e} jitter={:e} theta={:?}",
            c.gp.m(),
            c.valid.len(),
            c.gamma,
            c.gp.tau2(),
            c.gp.jitter_applied(),
            c.gp.lengthscales().as_slice()
        )
        .map_err(w)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Fit(a) => run_fit(a),
        Command::Detect(a) => run_detect(a),
        Command::Eval(a) => run_eval(a),
        Command::BoundCheck(a) => run_bound_check(a),
        Command::Inspect(a) => run_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
