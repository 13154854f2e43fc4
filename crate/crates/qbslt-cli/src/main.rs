use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qbslt_cli::commands;
use qbslt_cli::error::Result;

#[derive(Parser)]
#[command(
    name = "qbslt-cli",
    version,
    about = "Question-based sign language translation on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file; built-in defaults apply when omitted
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set seed=9; repeatable, later wins
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and vocabulary files
    GenData(Common),
    /// Stage 1: video-text alignment and masked reconstruction pretraining
    Pretrain(Common),
    /// Stage 2: translation training with the configured fusion arm
    Train(Common),
    /// Score generated translations on a split, or score hypothesis and
    /// reference files directly
    Evaluate(Common),
    /// Train every configured fusion arm and seed, then report test metrics
    Ablate(Common),
    /// Export one sample's fusion gate as CSV and PGM
    ExportHeatmap {
        #[command(flatten)]
        common: Common,
        /// Render the all-ones gate instead of the learned gate
        #[arg(long)]
        gate_ones: bool,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let (common, gate_ones) = match &cli.command {
        Command::GenData(c)
        | Command::Pretrain(c)
        | Command::Train(c)
        | Command::Evaluate(c)
        | Command::Ablate(c) => (c, false),
        Command::ExportHeatmap { common, gate_ones } => (common, *gate_ones),
    };
    let cfg = commands::load_run_config(common.config.as_deref(), &common.set)?;
    match cli.command {
        Command::GenData(_) => commands::gen_data(&cfg)?,
        Command::Pretrain(_) => commands::pretrain(&cfg)?,
        Command::Train(_) => commands::train(&cfg)?,
        Command::Evaluate(_) => commands::evaluate(&cfg)?,
        Command::Ablate(_) => commands::ablate(&cfg)?,
        Command::ExportHeatmap { .. } => commands::export_heatmap(&cfg, gate_ones)?,
    };
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
