//! Command-line frontend: `aggregate`, `train`, `eval` and `bench`.
//!
//! Exit codes: 0 success, 2 input or config error, 3 numeric failure,
//! 4 checkpoint format or version error.

mod aggregate;
mod bench;
mod checkpoint;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::DataError;
use crate::diffgraph::GraphError;
use crate::eval::{self, EvalError};
use crate::mmvae::{EpochMetrics, MmvaeError, MultimodalVae};

pub use aggregate::{aggregate_document, AggregateOptions};
pub use bench::{run_bench, BenchRow, BenchSizes};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{DataSection, IdxSection, ModelSection, RunConfig};

/// Default output directory when neither `--out` nor the config sets one.
pub const OUT_ENV: &str = "BARYVAE_OUT";
pub const DEFAULT_OUT_DIR: &str = "baryvae-out";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_FORMAT: i32 = 4;

/// A failure carrying its exit code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }

    pub fn format(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FORMAT,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<MmvaeError> for CliError {
    fn from(e: MmvaeError) -> Self {
        match &e {
            MmvaeError::NumericFailure { .. } | MmvaeError::Graph(GraphError::NonFinite(_)) => {
                Self::numeric(e.to_string())
            }
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Mmvae(inner) => inner.into(),
            EvalError::NumericFailure(_) => Self::numeric(e.to_string()),
            other => Self::input(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "baryvae", version, about = "Barycentric aggregation for multimodal VAEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate Gaussian posteriors read from a JSON document.
    Aggregate(AggregateArgs),
    /// Train a model from a TOML run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint: latent accuracy, coherence, log-likelihood.
    Eval(EvalArgs),
    /// Time the aggregators over a grid of sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// Input document `{"posteriors": [{"mean", "sigma"} | {"mean", "cov"}], "weights"?}`.
    pub input: PathBuf,
    /// poe, moe, mopoe, wb or mwb.
    #[arg(long)]
    pub method: String,
    /// Comma-separated weights; overrides the document's.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fixed-point tolerance for full-covariance inputs.
    #[arg(long, default_value_t = crate::barycenter::WB_FULL_DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = crate::barycenter::WB_FULL_DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the eval seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Dimensions for the full-covariance fixed point.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32])]
    pub full_dims: Vec<usize>,
    /// Family sizes for the full-covariance fixed point.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8])]
    pub full_modalities: Vec<usize>,
    /// Dimensions for poe, moe and wb_diag.
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 256, 4096])]
    pub diag_dims: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [8usize])]
    pub diag_modalities: Vec<usize>,
    /// Repetitions per cell.
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the table to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses arguments and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Aggregate(a) => cmd_aggregate(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a),
        Command::Bench(a) => cmd_bench(&a),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("reading {}: {e}", path.display())))
}

/// Writes `contents`, adding the trailing newline if missing.
fn write_text(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut text = contents.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| CliError::input(format!("writing {}: {e}", path.display())))
}

fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.map(Path::to_path_buf))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::input(format!("creating {}: {e}", dir.display())))
}

pub fn cmd_aggregate(args: &AggregateArgs) -> Result<(), CliError> {
    let text = read_text(&args.input)?;
    let opts = AggregateOptions {
        method: args.method.clone(),
        weights: args.weights.clone(),
        tol: args.tol,
        max_iter: args.max_iter,
    };
    let out = aggregate_document(&text, &opts)?;
    match &args.out {
        Some(path) => write_text(path, &out),
        None => {
            println!("{}", out.trim_end());
            Ok(())
        }
    }
}

/// CSV with one row per epoch: `epoch,loss,recon_0..recon_{M-1},kl`.
pub fn metrics_csv(history: &[EpochMetrics], modalities: usize) -> String {
    let mut out = String::from("epoch,loss");
    for m in 0..modalities {
        out.push_str(&format!(",recon_{m}"));
    }
    out.push_str(",kl\n");
    for row in history {
        out.push_str(&format!("{},{}", row.epoch, row.loss));
        for r in &row.recon {
            out.push_str(&format!(",{r}"));
        }
        out.push_str(&format!(",{}\n", row.kl));
    }
    out
}

/// Trains and writes `checkpoint.json` and `metrics.csv`; returns the output directory.
pub fn cmd_train(args: &TrainArgs) -> Result<PathBuf, CliError> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let (train, _) = cfg.datasets()?;
    let model_cfg = cfg.model_config(train.dims());
    let dir = resolve_out_dir(args.out.as_deref(), cfg.out_dir.as_deref());
    let (vae, history) = MultimodalVae::train(model_cfg, &train)?;
    ensure_dir(&dir)?;
    write_checkpoint(&dir.join("checkpoint.json"), &vae)?;
    write_text(&dir.join("metrics.csv"), &metrics_csv(&history, vae.num_modalities()))?;
    Ok(dir)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let vae = read_checkpoint(&args.checkpoint)?;
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.eval.seed = seed;
    }
    let (train, test) = cfg.datasets()?;
    if train.dims() != vae.config.input_dims {
        return Err(CliError::input(format!(
            "config dataset dims {:?} do not match checkpoint input dims {:?}",
            train.dims(),
            vae.config.input_dims
        )));
    }
    let report = eval::evaluate(&vae, &train, &test, &cfg.eval)?;
    let dir = resolve_out_dir(args.out.as_deref(), cfg.out_dir.as_deref());
    ensure_dir(&dir)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::numeric(e.to_string()))?;
    write_text(&dir.join("report.json"), &json)?;
    write_text(&dir.join("report.csv"), &report_csv(&report))?;
    Ok(())
}

/// Flat table: one row per (metric, subset, target).
pub fn report_csv(report: &eval::EvalReport) -> String {
    let mut out = String::from("metric,subset,size,target,value\n");
    for s in &report.latent_accuracy {
        out.push_str(&format!("latent_accuracy,\"{}\",{},,{}\n", s.subset, s.size, s.value));
    }
    for c in &report.coherence {
        out.push_str(&format!(
            "coherence,\"{}\",{},{},{}\n",
            c.source, c.size, c.target, c.value
        ));
    }
    for s in &report.log_likelihood {
        out.push_str(&format!("log_likelihood,\"{}\",{},,{}\n", s.subset, s.size, s.value));
    }
    out
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), CliError> {
    let sizes = BenchSizes {
        full_dims: args.full_dims.clone(),
        full_modalities: args.full_modalities.clone(),
        diag_dims: args.diag_dims.clone(),
        diag_modalities: args.diag_modalities.clone(),
        reps: args.reps,
        seed: args.seed,
    };
    let rows = run_bench(&sizes)?;
    let table = bench::table(&rows);
    print!("{table}");
    if let Some(path) = &args.out {
        write_text(path, &table)?;
    }
    Ok(())
}
