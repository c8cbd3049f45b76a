//! `isodrift` command-line tool.
//!
//! Exit codes: 0 success (and, for `monitor`, no alarm), 2 usage or data
//! error, 3 drift alarm raised during `monitor`.

mod commands;
mod files;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "isodrift", version, about = "Isolation Forest drift supervision for deployed classifiers")]
pub struct Cli {
    /// Print the effective configuration to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,

    /// Embedding file format. Inputs default to the file extension
    /// (`.bin` is binary, anything else CSV); outputs default to csv.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleKind {
    Abrupt,
    Gradual,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit a detector on the non-defect records of a training file.
    Fit(FitArgs),
    /// Score an embedding file: writes `id,pred,score,flagged`.
    Score(ScoreArgs),
    /// Stream records through a detector and emit flag / alarm events.
    Monitor(MonitorArgs),
    /// Two-sample Kolmogorov-Smirnov test between two score files.
    Kstest(KstestArgs),
    /// Generate a synthetic baseline and drift stream.
    Simulate(SimulateArgs),
    /// Histogram of train / test / OOD scores with the drift threshold.
    Report(ReportArgs),
    /// Run the HTTP supervision service.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub trees: u64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(2..))]
    pub psi: u64,
    #[arg(long, default_value_t = 3.5)]
    pub mad_k: f64,
    /// Multiplier on the MAD (1.4826 for the normal-consistent convention).
    #[arg(long, default_value_t = 1.0)]
    pub mad_consistency: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Free-text provenance stored in the model file.
    #[arg(long, default_value = "unspecified")]
    pub created_at: String,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MonitorArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Line-stream file, or a `.csv` / `.bin` embedding file. Reads the
    /// line stream from stdin when absent.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub window: u64,
    /// `auto` (max(0.05, 3 × baseline flag rate)) or a rate in [0, 1].
    #[arg(long, default_value = "auto")]
    pub alarm_rate: String,
}

#[derive(Args, Debug)]
pub struct KstestArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub dim: usize,
    #[arg(long, value_enum)]
    pub schedule: ScheduleKind,
    #[arg(long)]
    pub t0: usize,
    /// End of the gradual ramp; defaults to t0.
    #[arg(long)]
    pub t1: Option<usize>,
    /// Distance of the OOD center from the non-defect center, in sigmas.
    #[arg(long)]
    pub severity: f64,
    #[arg(long = "type2-rate")]
    pub type2_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub length: usize,
    #[arg(long, default_value_t = 200)]
    pub n_train: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    #[arg(long, default_value_t = 1.0)]
    pub ood_fraction: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also fit and evaluate at each of these dimensionalities and write
    /// `sweep.csv`.
    #[arg(long, value_delimiter = ',')]
    pub sweep_dims: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train_scores: PathBuf,
    #[arg(long)]
    pub test_scores: PathBuf,
    #[arg(long)]
    pub ood_scores: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    pub bins: u64,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Events kept per detector for the status endpoint.
    #[arg(long, default_value_t = isodrift_service::DEFAULT_RECENT_EVENTS)]
    pub recent_events: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.verbose {
        eprintln!("{cli:#?}");
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
