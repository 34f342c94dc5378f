//! Command-line wiring for the sentiment forecasting engine: stage-oriented
//! subcommands over a shared TOML config, with run manifests for exact
//! reruns.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use senticast_core::baselines::BaselineModel;

#[derive(Debug, Parser)]
#[command(name = "senticast", version, about = "Sentiment forecasting over social corpora")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(short, long, default_value = "senticast.toml")]
    pub config: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BaselineArg {
    Voter,
    Degroot,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a deterministic synthetic corpus, mock script, and lexicon.
    Synth,
    /// Validate the corpus files; optionally emit an anonymized copy.
    Ingest,
    /// Select the evaluation cohort by the configured criteria.
    Select,
    /// Label every comment with the configured sentiment scorer.
    Label,
    /// Extract tone and attitude features for the selected users.
    Extract,
    /// Run the role-playing forecast over the cohort.
    Forecast {
        /// Also write the full rectification trace.
        #[arg(long)]
        trace: bool,
    },
    /// Run an opinion-dynamics baseline over the cohort.
    Baseline {
        #[arg(long, value_enum)]
        model: BaselineArg,
    },
    /// Build ground truth and score predictions against it.
    Evaluate {
        /// Predictions file; defaults to the forecasts path.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Expand expert seeds into a reviewer fine-tuning dataset.
    BuildFinetune,
}

/// Parses argv and runs the selected command. Library-shaped so tests can
/// drive the binary in-process.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    dispatch(&cli)
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let config = RunConfig::load(&cli.config)?;
    let config_path = cli.config.as_path();
    match &cli.command {
        Command::Synth => commands::cmd_synth(&config, config_path),
        Command::Ingest => commands::cmd_ingest(&config, config_path),
        Command::Select => commands::cmd_select(&config, config_path),
        Command::Label => commands::cmd_label(&config, config_path),
        Command::Extract => commands::cmd_extract(&config, config_path),
        Command::Forecast { trace } => commands::cmd_forecast(&config, config_path, *trace),
        Command::Baseline { model } => {
            let model = match model {
                BaselineArg::Voter => BaselineModel::Voter,
                BaselineArg::Degroot => BaselineModel::DeGroot,
            };
            commands::cmd_baseline(&config, config_path, model)
        }
        Command::Evaluate { predictions } => {
            commands::cmd_evaluate(&config, config_path, predictions.as_deref())
        }
        Command::BuildFinetune => commands::cmd_build_finetune(&config, config_path),
    }
}
