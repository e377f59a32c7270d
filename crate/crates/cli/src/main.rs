//! Operator surface for the detection system: data generation, staged
//! training, cascade prediction, evaluation, parameter accounting and
//! occlusion saliency.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 missing
//! checkpoint.

use std::fmt;

use clap::{Parser, Subcommand};

mod config;
mod data;
mod infer;
mod params;
mod report;
mod train;

use config::UsageError;

#[derive(Parser)]
#[command(
    name = "aunets",
    version,
    about = "Multi-view facial action unit detection on synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-view dataset tree.
    GenData(data::GenDataArgs),
    /// Train the 16-way expression classifier used as a warm-start donor.
    Pretrain(train::PretrainArgs),
    /// Train one (view, AU, fusion) detector into the checkpoint bank.
    TrainAu(train::TrainAuArgs),
    /// Train the 9-way viewpoint classifier.
    TrainView(train::TrainViewArgs),
    /// Run the full cascade: view routing, per-AU inference, smoothing.
    Predict(infer::PredictArgs),
    /// Score a prediction CSV against dataset labels.
    Evaluate(report::EvaluateArgs),
    /// Print the parameter-count table for every architecture.
    Params(params::ParamsArgs),
    /// Occlusion-saliency grid for one frame under one detector.
    Saliency(infer::SaliencyArgs),
}

/// Command failures split by exit code: usage problems (1) versus
/// stage errors from the core (2, or 3 for a missing checkpoint),
/// optionally tagged with the (view, AU) the stage was working on.
#[derive(Debug)]
pub enum CliError {
    Usage(UsageError),
    Stage {
        context: Option<String>,
        source: aunets_core::Error,
    },
}

impl CliError {
    fn at(context: String, source: aunets_core::Error) -> CliError {
        CliError::Stage {
            context: Some(context),
            source,
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Stage { source, .. } => match source {
                aunets_core::Error::MissingCheckpoint { .. } => 3,
                _ => 2,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) => write!(f, "{}", e),
            CliError::Stage {
                context: Some(c),
                source,
            } => write!(f, "{}: {}", c, source),
            CliError::Stage {
                context: None,
                source,
            } => write!(f, "{}", source),
        }
    }
}

impl From<UsageError> for CliError {
    fn from(e: UsageError) -> Self {
        CliError::Usage(e)
    }
}

impl From<aunets_core::Error> for CliError {
    fn from(e: aunets_core::Error) -> Self {
        CliError::Stage {
            context: None,
            source: e,
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => data::run(a),
        Command::Pretrain(a) => train::run_pretrain(a),
        Command::TrainAu(a) => train::run_train_au(a),
        Command::TrainView(a) => train::run_train_view(a),
        Command::Predict(a) => infer::run_predict(a),
        Command::Evaluate(a) => report::run_evaluate(a),
        Command::Params(a) => params::run(a),
        Command::Saliency(a) => infer::run_saliency(a),
    }
}

fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // --help and --version land here too; they are not errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e);
            e.exit_code()
        }
    }
}

fn main() {
    std::process::exit(run());
}
