//! `aestylegan` command-line tool.
//!
//! Exit codes: 0 success, 2 usage or configuration problems (including a
//! missing or unreadable checkpoint), 3 runtime failures such as a non-finite
//! loss or a dataset too small to evaluate.

pub mod commands;
pub mod config;
pub mod grid;

use std::ffi::OsString;
use std::path::PathBuf;

use aestylegan::Error;
use clap::{Args, Parser, Subcommand};

pub use config::{GridConfig, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "aestylegan", version, about = "Train and use an autoencoding StyleGAN")]
pub struct Cli {
    /// Run configuration file (TOML, dotted keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set trainer.mode=JOINT`.
    #[arg(long = "set", value_name = "KEY=VAL", global = true)]
    pub set: Vec<String>,
    /// Shorthand for `--set trainer.seed=N --set eval.seed=N`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `out_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from scratch or resume from a checkpoint.
    Train {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write a grid of samples from the EMA generator.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples, defaults to the grid size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Reconstruct images and report per-image errors.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image directory or synthetic dataset URI.
        #[arg(long)]
        images: String,
        /// Use only the first N images.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Copy a range of styles from B images into A images.
    StyleMix(StyleMixArgs),
    /// Compute the full metric report.
    Eval {
        /// Required unless `--bypass` is given, in which case a fresh model is used for path length.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset, defaults to `data` from the configuration.
        #[arg(long)]
        data: Option<String>,
        /// JSON report path, defaults to `<out>/report.json`; a `.txt` table is written next to it.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Use the real images as both samples and reconstructions.
        #[arg(long)]
        bypass: bool,
    },
}

#[derive(Debug, Args)]
pub struct StyleMixArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub sources_a: String,
    #[arg(long)]
    pub sources_b: String,
    /// Style indices copied from B, e.g. `7-11`.
    #[arg(long = "range", value_name = "RANGE")]
    pub copy_range: String,
    #[arg(long)]
    pub n_a: Option<usize>,
    #[arg(long)]
    pub n_b: Option<usize>,
}

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) | Error::Format(_) | Error::Integrity(_) => 2,
        _ => 3,
    }
}

/// Parses `args` (including the program name) and runs the command.
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
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
