//! Command-line entry point.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{PairSelection, RunConfig, ScalpConfig};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(name = "neurovis", version, about = "Joint EEG/image embeddings and compatibility-based analyses")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model checkpoint to read.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Worker threads for data-parallel loops.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic paired EEG/image dataset.
    GenData,
    /// Write a preprocessed copy of a dataset.
    Preprocess,
    /// Train EEG-ChannelNet with a softmax head.
    TrainEeg,
    /// Train both encoders under the triplet loss.
    TrainJoint,
    /// Linear-probe classification on frozen joint embeddings, or test
    /// accuracy of an EEG classifier checkpoint.
    EvalClassify,
    /// Multiscale occlusion saliency maps.
    Saliency {
        /// Dataset row to analyse; all selected pairs if omitted.
        #[arg(long)]
        pair: Option<usize>,
        /// Image-classifier checkpoint for a baseline map of the same images.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
    /// Per-channel importance by noise replacement.
    ChannelImportance {
        #[arg(long)]
        class: Option<usize>,
    },
    /// Channel-by-layer association under feature suppression.
    Association {
        #[arg(long)]
        pair: Option<usize>,
    },
    /// Render per-channel scores as a scalp map.
    RenderMap {
        /// CSV with a header row whose last column is the score.
        #[arg(long)]
        scores: PathBuf,
    },
    /// Saliency metrics of a map against planted fixations.
    Metrics {
        /// Map as CSV of raw values (normalized before scoring) or PGM.
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        pair: usize,
    },
    /// Train one EEG classifier per frequency band.
    AblateBands,
    /// Train one EEG classifier per time window.
    AblateWindows,
}

/// Usage errors exit 2, configuration errors 3, everything else 1.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 3,
        Error::InvalidArgument(_) => 2,
        _ => 1,
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            exit_code(&e)
        }
    }
}
