mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use wia_core::grpo::TrainError;
use wia_core::pipeline::PipelineError;
use wia_core::reward::SpecError;
use wia_core::sim::SimError;
use wia_gateway::GatewayError;

#[derive(Debug, Parser)]
#[command(name = "wia", version, about = "What-if forecasting toolkit: datasets, rewards, GRPO, evaluation")]
pub struct Cli {
    /// Seed for every random choice the subcommand makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to available parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a triplet dataset from recorded trajectories.
    Ingest(IngestArgs),
    /// Generate a stratified benchmark (and optionally raw trajectories) from the simulator.
    Simgen(SimgenArgs),
    /// Run GRPO on the toy policy.
    Train(TrainArgs),
    /// Score completions against a triplet dataset.
    Score(ScoreArgs),
    /// Score a dataset with a remote chat-completion endpoint.
    EvalRemote(EvalRemoteArgs),
    /// Render report, table and series files from scores and telemetry.
    Report(ReportArgs),
    /// Pick the best action for a state using the simulator as forecaster.
    Act(ActArgs),
    /// Run the invariant suite and the checksum pins.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// Directory of trajectory files (`*.jsonl`).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `logged` or `constant:<action name>`.
    #[arg(long, default_value = "logged")]
    pub annotator: String,
    #[arg(long, default_value_t = 200)]
    pub max_per_hero: usize,
    /// Runs of this many `None` actions are dropped.
    #[arg(long, default_value_t = wia_core::pipeline::DEFAULT_INACTIVE_RUN)]
    pub min_inactive_run: usize,
    #[arg(long, default_value_t = wia_core::pipeline::MAX_GAP_S)]
    pub max_gap: i64,
}

#[derive(Debug, Args, Serialize)]
pub struct SimgenArgs {
    /// Per-difficulty sample counts, e.g. `1:5,2:5,3:5,4:5`.
    #[arg(long, default_value = "1:5,2:5,3:5,4:5")]
    pub counts: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Alternative rule table (TOML).
    #[arg(long)]
    pub rule_table: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub horizon_min: i64,
    #[arg(long, default_value_t = wia_core::pipeline::MAX_GAP_S)]
    pub horizon_max: i64,
    /// Also write raw trajectory files here, ready for `ingest`.
    #[arg(long)]
    pub trajectories: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub matches: usize,
    #[arg(long, default_value_t = 600)]
    pub ticks: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Triplet dataset, or `sim` for a generated d in {1,2} curriculum.
    #[arg(long, default_value = "sim")]
    pub data: String,
    /// Samples per difficulty when `--data sim`.
    #[arg(long, default_value_t = 100)]
    pub per_difficulty: usize,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long, default_value_t = 8)]
    pub group: usize,
    #[arg(long, default_value_t = 0.2)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.01)]
    pub beta: f64,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Reward spec (TOML); defaults to equal weights.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    /// Completions, one `{provenance, completion}` record per line.
    #[arg(long)]
    pub pred: PathBuf,
    /// Triplet dataset holding the true deltas.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalRemoteArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Endpoint config (TOML).
    #[arg(long)]
    pub endpoint: PathBuf,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Results file; existing results are resumed.
    #[arg(long)]
    pub out: PathBuf,
    /// Template directory; checked against the shipped pins unless `--unpinned`.
    #[arg(long)]
    pub templates: Option<PathBuf>,
    #[arg(long)]
    pub unpinned: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Score records (`score` or `eval-remote` output).
    #[arg(long)]
    pub scores: PathBuf,
    /// Training telemetry for the reward and length series.
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ActArgs {
    /// Game state (JSON).
    #[arg(long)]
    pub state: PathBuf,
    /// Outcome rules (TOML); defaults to the shipped table.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 30)]
    pub horizon: i64,
    /// Write the selection (JSON) here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SelftestArgs {
    /// Check this rule table file against the shipped checksum.
    #[arg(long)]
    pub rule_table: Option<PathBuf>,
    /// Check this template directory against the shipped checksums.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Network(String),
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Network(_) => 3,
            CliError::Divergence(_) => 4,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SpecError> for CliError {
    fn from(e: SpecError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => CliError::Divergence(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GatewayError> for CliError {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config(_) | GatewayError::Io(_) => CliError::Data(e.to_string()),
            _ => CliError::Network(e.to_string()),
        }
    }
}

pub fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

#[derive(Serialize)]
struct Snapshot<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    jobs: usize,
    args: &'a T,
}

/// Writes the resolved configuration next to an output. Directories get
/// `config.toml`, files get `<file>.config.toml`.
pub fn write_snapshot<T: Serialize>(cli: &Cli, command: &str, args: &T, out: &Path) -> Result<PathBuf, CliError> {
    let path = if out.is_dir() {
        out.join("config.toml")
    } else {
        let mut p = out.as_os_str().to_owned();
        p.push(".config.toml");
        PathBuf::from(p)
    };
    let snap = Snapshot {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: cli.seed,
        jobs: rayon::current_num_threads(),
        args,
    };
    let text = toml::to_string(&snap).map_err(|e| CliError::Data(e.to_string()))?;
    std::fs::write(&path, text).map_err(io_error(&path))?;
    Ok(path)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .init();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
