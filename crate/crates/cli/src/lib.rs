//! Command-line pipeline around `flare-core`: data generation, training,
//! scoring, filtering evaluation, validation studies and ablations, with
//! versioned file formats and run manifests.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod plot;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{Context, Study};
use crate::config::{DatasetName, RunConfig};
use crate::error::Outcome;

#[derive(Debug, Parser)]
#[command(name = "flare-uq", version, about = "Epistemic uncertainty for diffusion samples")]
pub struct Cli {
    /// JSON run config; `validate` falls back to the sine preset without one.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Accepted for compatibility; computation is single-threaded.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory; defaults to the config's `output_dir`, then `.`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes the configured dataset to data.csv.
    GenData,
    /// Trains the denoiser and writes checkpoint.flre.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Samples from the checkpoint and scores each sample.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n_samples: Option<usize>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Filtering metrics for one or more score files.
    Eval {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        samples: PathBuf,
        /// `NAME=PATH`, or a `scores_NAME.csv` path; repeatable.
        #[arg(long, required = true, num_args = 1..)]
        scores: Vec<String>,
        #[arg(long)]
        no_plot: bool,
    },
    /// Runs a validation study; exits 1 when its criterion fails.
    Validate {
        #[command(subcommand)]
        study: Study,
    },
    /// Mean score against the subnetwork keep fraction.
    AblateKeep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

impl Cli {
    pub fn run(self) -> anyhow::Result<Outcome> {
        let config = match (&self.config, &self.command) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Command::Validate { .. }) => RunConfig::preset(DatasetName::Sine, 0),
            (None, _) => return Err(error::CliError::Config("--config is required for this command".into()).into()),
        };
        let ctx = Context::new(config, self.seed, self.out, self.threads)?;
        match self.command {
            Command::GenData => commands::gen_data(&ctx),
            Command::Train { data } => commands::train(&ctx, data.as_deref()),
            Command::Score { checkpoint, n_samples, data } => commands::score(&ctx, &checkpoint, n_samples, data.as_deref()),
            Command::Eval { real, samples, scores, no_plot } => commands::eval(&ctx, &real, &samples, &scores, !no_plot),
            Command::Validate { study } => commands::validate(&ctx, &study),
            Command::AblateKeep { checkpoint, data } => commands::ablate_keep(&ctx, &checkpoint, data.as_deref()),
        }
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { error::EXIT_USAGE } else { error::EXIT_OK };
        }
    };
    match cli.run() {
        Ok(outcome) => outcome.exit_code(),
        Err(e) => {
            eprintln!("flare-uq: error: {e:#}");
            error::exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn missing_config_is_a_usage_error() {
        assert_eq!(run(["flare-uq", "gen-data", "--out", "/nonexistent-dir-never"]), error::EXIT_USAGE);
        assert_eq!(run(["flare-uq", "bogus"]), error::EXIT_USAGE);
    }
}
