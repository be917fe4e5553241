//! `hintloop`: runs the hint pipeline one stage at a time and serves the
//! review API. Artifacts land in `<runs-dir>/<config hash>/`.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 missing input from an
//! earlier stage, 4 runtime failure.

mod config;
mod stages;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::Overrides;
use stages::{Failure, Run, ServeOptions};

#[derive(Parser, Debug)]
#[command(name = "hintloop", version, about = "Hint pipeline and review service for video policy annotation")]
struct Cli {
    /// Pipeline configuration (.toml or .json). Defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Parent directory of run directories.
    #[arg(long, global = true, default_value = "runs")]
    runs_dir: PathBuf,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the historic, calibration, review and eval corpora.
    Synth,
    /// Collect initial and held-out labels and train the scorer.
    Train,
    /// Pick per-policy thresholds on the calibration corpus.
    Calibrate,
    /// Build line-graph and segment hints for the review corpus.
    Hints,
    /// Simulate expert and generalist reviews for every arm.
    Simulate,
    /// Score the arms against the expert reviews.
    Evaluate {
        /// Arms to report, first one is the reference (e.g. baseline,v1,v1_v2).
        #[arg(long, value_delimiter = ',')]
        arms: Vec<String>,
    },
    /// Replay an arm's reviews into the feedback store and export labels.
    ExportLabels {
        #[arg(long, default_value = "v1_v2")]
        arm: String,
    },
    /// Retrain with the exported labels and compare AUCPR on held-out labels.
    RetrainEval,
    /// Serve the review API over the run's review corpus and hints.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Experiment name for the metrics endpoint.
        #[arg(long, default_value = "default")]
        experiment: String,
        /// Hint mode shown to generalists.
        #[arg(long, default_value = "v1_v2")]
        arm: String,
        #[arg(long, default_value_t = 1800)]
        lease_seconds: u64,
    },
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let config = config::load(cli.config.as_deref(), &cli.overrides).map_err(|e| Failure::Config(vec![format!("{e:#}")]))?;
    let run = Run::open(config, &cli.runs_dir)?;
    match cli.command {
        Command::Synth => stages::synth(&run),
        Command::Train => stages::train(&run),
        Command::Calibrate => stages::calibrate_stage(&run),
        Command::Hints => stages::hints(&run),
        Command::Simulate => stages::simulate(&run),
        Command::Evaluate { arms } => stages::evaluate(&run, &arms),
        Command::ExportLabels { arm } => stages::export_labels(&run, &arm),
        Command::RetrainEval => stages::retrain(&run),
        Command::Serve {
            addr,
            experiment,
            arm,
            lease_seconds,
        } => stages::serve(
            &run,
            ServeOptions {
                addr,
                experiment,
                arm,
                lease_seconds,
            },
        ),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("hintloop: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
