//! The `bargrain` command line.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

pub mod inspect;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::model::{checkpoint, AblationMode};
use crate::preprocess::{generate_synthetic, load_dataset, save_dataset};
use crate::train::{self, report, TrainConfig};

pub use inspect::{inspect, Edge, GraphKind, InspectionReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const EDGES_FILTERED_FILE: &str = "edges_filtered.csv";
pub const EDGES_OPTIMAL_FILE: &str = "edges_optimal.csv";
pub const DEGREES_FILE: &str = "degrees.csv";

#[derive(Debug, Parser)]
#[command(name = "bargrain", version, about = "Dual-graph brain network classifier")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes the checkpoint plus `<stem>_log.csv` and
    /// `<stem>_metrics.json` beside it.
    Train(TrainArgs),
    /// Score a checkpoint on every subject of a dataset.
    Eval(EvalArgs),
    /// Train all four modes on one split and write the comparison table.
    Ablate(AblateArgs),
    /// Write a synthetic dataset with planted class structure.
    Synth(SynthArgs),
    /// Export both graphs of one subject.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<AblationMode>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics JSON path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 80)]
    pub subjects: usize,
    #[arg(long, default_value_t = 16)]
    pub rois: usize,
    #[arg(long, default_value_t = 64)]
    pub steps: usize,
    #[arg(long, default_value_t = 3)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub subject: String,
    #[arg(long, default_value_t = 2.0)]
    pub top_percent: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

/// Sibling artifact paths for a checkpoint: `(log, metrics)`.
pub fn artifact_paths(checkpoint: &Path) -> (PathBuf, PathBuf) {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    (
        checkpoint.with_file_name(format!("{stem}_log.csv")),
        checkpoint.with_file_name(format!("{stem}_metrics.json")),
    )
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TrainConfig::from_json(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Inspect(a) => cmd_inspect(&a),
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mode) = args.mode {
        config.mode = mode;
    }
    let dataset = load_dataset(&args.data)?;
    let outcome = train::train_model(&dataset, &config)?;
    let (log_path, metrics_path) = artifact_paths(&args.out);
    checkpoint::save(&outcome.state, &args.out)?;
    report::write_text(&log_path, &report::log_csv(&outcome.log))?;
    report::write_text(&metrics_path, &report::metrics_json(&outcome.test_metrics)?)?;
    let m = &outcome.test_metrics;
    println!(
        "best epoch {} of {}; test f1 {:.4} auc {:.4}",
        outcome.best_epoch,
        outcome.log.len(),
        m.f1,
        m.auc
    );
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let state = checkpoint::load(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let all: Vec<usize> = (0..dataset.len()).collect();
    let metrics = train::evaluate(&state, &dataset, &all)?;
    let json = report::metrics_json(&metrics)?;
    match &args.out {
        Some(path) => report::write_text(path, &json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let mut config = read_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let dataset = load_dataset(&args.data)?;
    let table = train::run_ablation(&dataset, &config)?;
    report::write_text(&args.out, &report::ablation_csv(&table))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let dataset = generate_synthetic(args.subjects, args.rois, args.steps, args.seed)?;
    save_dataset(&dataset, &args.out)
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<()> {
    let state = checkpoint::load(&args.model)?;
    let dataset = load_dataset(&args.data)?;
    let idx = dataset
        .position(&args.subject)
        .ok_or_else(|| Error::Validation(format!("unknown subject `{}`", args.subject)))?;
    let report = inspect(&state, &dataset.subjects[idx], args.top_percent)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    report::write_text(
        args.out.join(EDGES_FILTERED_FILE),
        &inspect::edges_csv(&report.filtered_edges),
    )?;
    report::write_text(
        args.out.join(EDGES_OPTIMAL_FILE),
        &inspect::edges_csv(&report.optimal_edges),
    )?;
    report::write_text(args.out.join(DEGREES_FILE), &inspect::degrees_csv(&report))?;
    println!(
        "{}: {} filtered edges, {} optimal edges",
        args.subject, report.filtered_total, report.optimal_total
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_names_follow_stem() {
        let (log, metrics) = artifact_paths(Path::new("runs/model.ckpt"));
        assert_eq!(log, Path::new("runs/model_log.csv"));
        assert_eq!(metrics, Path::new("runs/model_metrics.json"));
    }

    #[test]
    fn usage_errors_exit_two() {
        let code = |args: &[&str]| Cli::try_parse_from(args).unwrap_err().exit_code();
        assert_eq!(code(&["bargrain", "train", "--config", "c.json", "--out", "m.ckpt"]), EXIT_USAGE);
        assert_eq!(code(&["bargrain", "train", "--data", "d", "--config", "c", "--out", "o", "--mode", "bogus"]), EXIT_USAGE);
        assert_eq!(code(&["bargrain", "frobnicate"]), EXIT_USAGE);
        assert!(Cli::try_parse_from(["bargrain", "synth", "--out", "d"]).is_ok());
    }

    #[test]
    fn numerical_errors_exit_three() {
        assert_eq!(exit_code(&Error::Divergence { epoch: 4 }), 3);
        assert_eq!(exit_code(&Error::Validation("x".into())), 2);
    }
}
