//! `evaluate`: score a prediction CSV against dataset labels.

use std::path::PathBuf;

use clap::Args;

use aunets_core::datakit::load_dataset;
use aunets_core::detectors::AuSet;
use aunets_core::evalkit::evaluate_predictions;
use aunets_core::multiview::read_predictions_csv;

use crate::CliError;

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Prediction CSV produced by `predict`.
    #[arg(long)]
    pred: PathBuf,
    /// Score the raw decisions instead of the smoothed ones.
    #[arg(long)]
    raw: bool,
    /// Optional CSV copy of the report table.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let records = load_dataset(&args.data)?;
    let rows = read_predictions_csv(&args.pred, AuSet::Synthetic)?;
    let which = if args.raw { "raw" } else { "smoothed" };
    let report = evaluate_predictions(which, &rows, &records, !args.raw)?;
    print!("{}", report.render_text());
    if let Some(out) = &args.out {
        if let Some(dir) = out.parent() {
            std::fs::create_dir_all(dir).map_err(aunets_core::Error::from)?;
        }
        std::fs::write(out, report.render_csv()).map_err(aunets_core::Error::from)?;
        println!("report written to {}", out.display());
    }
    Ok(())
}
