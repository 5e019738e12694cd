//! Command-line interface.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::ConfigFile;
use crate::error::{Error, Result};
use crate::io::{column_csv, dataset_from_table, features_from_table, read_numeric_csv_path, write_atomic};
use crate::report::{config_digest, Report, RunManifest};
use crate::simulation::{run_ate_experiment, run_prediction_experiment};
use crate::super_learner::{fit_super_learner, predict_super_learner, SuperLearnerModel};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;

/// Environment variable capping the worker thread count.
pub const WORKERS_ENV: &str = "HUBERSL_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "hubersl", version, about = "Huber-loss super learner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a super learner to a CSV file and save the model as JSON.
    Fit(FitArgs),
    /// Predict with a saved model.
    Predict(PredictArgs),
    /// Run the prediction experiment and write a report.
    Simulate(ExperimentArgs),
    /// Run the ATE experiment and write a report.
    Ate(ExperimentArgs),
    /// Render a report CSV as Markdown.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Training CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Outcome column.
    #[arg(long)]
    outcome: String,
    /// Treatment column, placed first among the covariates.
    #[arg(long)]
    treatment: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Also write in-sample predictions.
    #[arg(long)]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// CSV containing the model's covariate columns; other columns are ignored.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Report CSV. The manifest goes next to it with extension `.manifest.json`.
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// Also write the rendered Markdown here.
    #[arg(long)]
    markdown: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    input: PathBuf,
    /// Markdown output; standard output when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match configure_workers().and_then(|()| dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::config(format!("{WORKERS_ENV} must be a positive integer, got '{raw}'")))?;
    // A pool that already exists (second call in one process) keeps its size.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit(a) => fit(a),
        Command::Predict(a) => predict(a),
        Command::Simulate(a) => experiment(a, false),
        Command::Ate(a) => experiment(a, true),
        Command::Report(a) => report(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map_or_else(|| Ok(ConfigFile::default()), ConfigFile::load)
}

fn write_or_print(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn fit(a: FitArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    let table = read_numeric_csv_path(&a.data)?;
    let data = dataset_from_table(&table, &a.outcome, a.treatment.as_deref())?;
    let sl = cfg.super_learner(&data.y)?;
    let model = fit_super_learner(&data, &sl)?;
    model.save(&a.model)?;
    for event in &model.fit_log.events {
        match event.fold {
            Some(v) => eprintln!("warning: learner '{}' on fold {v}: {}", event.learner, event.message),
            None => eprintln!("warning: learner '{}': {}", event.learner, event.message),
        }
    }
    if let Some(p) = &a.predictions {
        let pred = predict_super_learner(&model, &data.x)?;
        write_atomic(p, &column_csv("prediction", &pred)?)?;
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let model = SuperLearnerModel::load(&a.model)?;
    let table = read_numeric_csv_path(&a.data)?;
    let x = if model.feature_names.is_empty() {
        features_from_table(&table, &table.header)?
    } else {
        features_from_table(&table, &model.feature_names)?
    };
    let pred = predict_super_learner(&model, &x)?;
    write_or_print(a.output.as_deref(), &column_csv("prediction", &pred)?)
}

pub fn manifest_path(report: &Path) -> PathBuf {
    report.with_extension("manifest.json")
}

fn experiment(a: ExperimentArgs, ate: bool) -> Result<()> {
    let mut cfg = ConfigFile::load(&a.config)?;
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    if let Some(r) = a.replications {
        cfg.scenario.get_or_insert_with(Default::default).replications = Some(r);
    }
    let start = Instant::now();
    let (report, seed, digest, reps, failures) = if ate {
        let c = cfg.ate_experiment()?;
        let out = run_ate_experiment(&c)?;
        (out.report, c.seed, config_digest(&c)?, out.replications.len(), out.failures)
    } else {
        let c = cfg.prediction_experiment()?;
        let out = run_prediction_experiment(&c)?;
        (out.report, c.seed, config_digest(&c)?, out.replications.len(), out.failures)
    };
    for f in &failures {
        eprintln!("warning: replication {} failed: {}", f.index, f.message);
    }
    report.write_csv(&a.output)?;
    if let Some(md) = &a.markdown {
        write_atomic(md, report.to_markdown().as_bytes())?;
    }
    RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: if ate { "ate" } else { "simulate" }.to_string(),
        seed,
        config_digest: digest,
        replications: reps,
        failed_replications: failures.len(),
        workers: rayon::current_num_threads(),
        elapsed_seconds: start.elapsed().as_secs_f64(),
    }
    .write(&manifest_path(&a.output))
}

fn report(a: ReportArgs) -> Result<()> {
    let r = Report::read_csv(&a.input).map_err(|e| match e {
        Error::Io(io) => Error::data(format!("cannot read {}: {io}", a.input.display())),
        other => other,
    })?;
    write_or_print(a.output.as_deref(), r.to_markdown().as_bytes())
}
