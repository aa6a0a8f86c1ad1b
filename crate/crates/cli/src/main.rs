mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Collaborative UAV spectrum sensing and RL channel scheduling.
#[derive(Debug, Parser)]
#[command(name = "skyshare", version)]
pub struct Cli {
    /// TOML configuration for the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed; overrides the one in the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a labeled I/Q dataset.
    GenDataset(GenDatasetArgs),
    /// Train (or calibrate) a sensing model per UAV stream.
    TrainSensor(TrainSensorArgs),
    /// Per-UAV and fused sensing metrics across the SINR grid.
    EvalSensing(EvalSensingArgs),
    /// Train a scheduling agent and write its training curve.
    TrainAgent(TrainAgentArgs),
    /// Run the end-to-end slotted simulation.
    Simulate,
    /// Merge run summaries and training curves into comparison tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDatasetArgs {
    /// Observations per SINR grid entry and UAV.
    #[arg(long)]
    pub count_per_sinr: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DetectorKind {
    /// Dense multi-label classifier.
    Classifier,
    /// Per-channel energy thresholds.
    Energy,
}

#[derive(Debug, Args)]
pub struct TrainSensorArgs {
    /// Dataset file; default `<out>/dataset.skiq`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Train for this UAV stream only.
    #[arg(long)]
    pub uav: Option<usize>,
    #[arg(long, value_enum, default_value = "classifier")]
    pub detector: DetectorKind,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalSensingArgs {
    /// Dataset file; default `<out>/dataset.skiq`.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Models, one shared or one per UAV stream; default
    /// `<out>/sensor-uav<k>.sksm`.
    #[arg(long, value_delimiter = ',')]
    pub models: Vec<PathBuf>,
    /// Fusion threshold n; default majority.
    #[arg(long)]
    pub fusion_n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Variant {
    Qtable,
    Dqn,
    Ddqn,
    DdqnSoft,
}

#[derive(Debug, Args)]
pub struct TrainAgentArgs {
    #[arg(long, value_enum, default_value = "ddqn-soft")]
    pub variant: Variant,
    /// UAVs served per slot (top-k actions of one shared agent).
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub uavs: u8,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub slots: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run or training output directories.
    #[arg(required = true)]
    pub dirs: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
