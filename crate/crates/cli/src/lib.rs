//! Command-line pipeline around the `derivdoa` library.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use derivdoa::io::csv::Column;

use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "derivdoa",
    version,
    about = "DOA + derivative localization pipeline"
)]
pub struct Cli {
    /// Pipeline configuration file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set fusion.alpha=0.7`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ColumnArg {
    Raw,
    Fused,
    Truth,
}

impl From<ColumnArg> for Column {
    fn from(c: ColumnArg) -> Self {
        match c {
            ColumnArg::Raw => Column::Raw,
            ColumnArg::Fused => Column::Fused,
            ColumnArg::Truth => Column::Truth,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render random scenes: WAV, metadata CSV and derivative CSV per recording.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// SALSA-Lite features of WAV files.
    Extract {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// DOA and derivative predictions for derivative CSVs.
    Predict {
        #[arg(long)]
        out: PathBuf,
        /// Directory holding `<recording>.slt` (regressor only).
        #[arg(long)]
        features_dir: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Train the regressor on every `*.deriv.csv` + `.slt` pair in a directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        features_dir: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse prediction CSVs into trajectory CSVs.
    Fuse {
        #[arg(long)]
        out: PathBuf,
        /// Directory holding `<recording>.meta.csv` ground truth.
        #[arg(long)]
        truth_dir: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score estimates against ground truth.
    Eval {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        truth_dir: PathBuf,
        /// Trajectory-file columns to score, one report row each.
        #[arg(long, value_enum, value_delimiter = ',', default_value = "fused")]
        columns: Vec<ColumnArg>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// SVG trajectories per class and classwise MAE bars from trajectory CSVs.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Print the effective configuration.
    ShowConfig,
}

/// Runs one command and returns its stdout text.
pub fn run(cli: &Cli) -> Result<String> {
    let cfg = PipelineConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match &cli.command {
        Command::Simulate { out } => commands::simulate(&cfg, out),
        Command::Extract { out, inputs } => commands::extract(&cfg, out, inputs),
        Command::Predict {
            out,
            features_dir,
            checkpoint,
            inputs,
        } => commands::predict(
            &cfg,
            out,
            inputs,
            features_dir.as_deref(),
            checkpoint.as_deref(),
        ),
        Command::Train {
            data,
            features_dir,
            out,
        } => commands::train(&cfg, data, out, features_dir.as_deref()),
        Command::Fuse {
            out,
            truth_dir,
            inputs,
        } => commands::fuse(&cfg, out, inputs, truth_dir.as_deref()),
        Command::Eval {
            out,
            truth_dir,
            columns,
            inputs,
        } => {
            let cols: Vec<Column> = columns.iter().map(|&c| c.into()).collect();
            commands::eval(&cfg, out, inputs, truth_dir, &cols)
        }
        Command::Plot { out, inputs } => commands::plot(&cfg, out, inputs),
        Command::ShowConfig => Ok(cfg.to_toml()),
    }
}
