//! `pedintent` command-line front end.

pub mod commands;
pub mod config;
pub mod error;
pub mod frames;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use error::CliError;

/// Thread-count override for the global worker pool.
pub const THREADS_ENV: &str = "PEDINTENT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pedintent", version, about = "Pedestrian tracking and crossing-intent prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON file of flat dotted keys, e.g. {"tracker.max_age": 5}.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use the small CI-scale network defaults.
    #[arg(long)]
    pub reduced: bool,
    /// Override one config key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InputArgs {
    /// Detections CSV: frame,id,bb_left,bb_top,bb_width,bb_height,confidence.
    #[arg(long, value_name = "FILE", conflicts_with = "synth")]
    pub detections: Option<PathBuf>,
    /// Directory of frame images named by index (000000.png, ...).
    #[arg(long, value_name = "DIR", conflicts_with = "synth")]
    pub frames: Option<PathBuf>,
    /// Use a synthetic scenario built from the scenario config and seed.
    #[arg(long)]
    pub synth: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track detections and write frame,track_id,bb_left,bb_top,bb_width,bb_height.
    Track {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Train the intent network and write an STDN1 weights file.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Train on clips cut from synthetic scenarios.
        #[arg(long, conflicts_with = "dataset")]
        synth: bool,
        /// Directory holding ground_truth.csv and frames/; may be repeated.
        #[arg(long, value_name = "DIR")]
        dataset: Vec<PathBuf>,
        #[arg(long, value_name = "FILE")]
        weights: PathBuf,
        /// Loss-history CSV.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Track, then write frame,track_id,p_cross for every full window.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_name = "FILE")]
        weights: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run both stages and score them against ground truth.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_name = "FILE", conflicts_with = "synth")]
        ground_truth: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        weights: PathBuf,
        /// Text report.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// JSON copy of the report.
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
    /// Compare backpropagated gradients with central differences.
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
        /// Zero input and zero weights.
        #[arg(long)]
        zero: bool,
    },
    /// Per-stage latency on a synthetic scenario.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        /// Weights to load; a freshly initialized network is used otherwise.
        #[arg(long, value_name = "FILE")]
        weights: Option<PathBuf>,
    },
    /// Write a synthetic scenario as frames, detections and ground truth.
    Synth {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

/// Sizes the global worker pool from `PEDINTENT_THREADS` when it is set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Validation(format!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    if n == 0 {
        return Err(CliError::Validation(format!("{THREADS_ENV} must be >= 1")));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Track { common, input, out } => commands::track(&common, &input, out.as_deref()),
        Command::Train { common, synth, dataset, weights, out } => {
            commands::train(&common, synth, &dataset, &weights, out.as_deref())
        }
        Command::Predict { common, input, weights, out } => {
            commands::predict(&common, &input, &weights, out.as_deref())
        }
        Command::Eval { common, input, ground_truth, weights, out, json } => commands::eval(
            &common,
            &input,
            ground_truth.as_deref(),
            &weights,
            out.as_deref(),
            json.as_deref(),
        ),
        Command::Gradcheck { common, corrupt_gradient, zero } => commands::gradcheck(&common, corrupt_gradient, zero),
        Command::Bench { common, weights } => commands::bench(&common, weights.as_deref()),
        Command::Synth { common, out } => commands::synth(&common, &out),
    }
}
