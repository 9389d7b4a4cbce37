use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "idea", version, about = "Interpretable dynamic ensemble forecaster")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (or a lookback ensemble) and write checkpoints.
    Train(Flags),
    /// Score checkpoints against the held-out horizon of each series.
    Eval(Flags),
    /// Forecast the next horizon of every series.
    Forecast(Flags),
    /// Record group-1 activations over typical and silent samples.
    ShiftExperiment(Flags),
    /// Per-frequency dataset statistics.
    Stats(Flags),
    /// Write a synthetic dataset and its manifest.
    Synth(Flags),
}

impl Command {
    pub fn flags(&self) -> &Flags {
        match self {
            Command::Train(f)
            | Command::Eval(f)
            | Command::Forecast(f)
            | Command::ShiftExperiment(f)
            | Command::Stats(f)
            | Command::Synth(f) => f,
        }
    }
}

/// Flags override the config file, which overrides the defaults.
#[derive(Debug, Default, Clone, Args)]
pub struct Flags {
    /// TOML file with any subset of the run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sidecar `id_prefix,frequency,period,horizon` file.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub freq: Option<String>,
    /// `tourism` or `m4`; selects horizons and reported metrics.
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub lookback: Option<usize>,
    /// `interpretable` or `generic`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub learners: Option<usize>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    pub context_width: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub comm_dropout: Option<f64>,
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub validation_interval: Option<usize>,
    /// Seeds both initialisation and training.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Repeat to evaluate or forecast with several models.
    #[arg(long = "checkpoint")]
    pub checkpoints: Vec<PathBuf>,
    /// `paper` or `insample`.
    #[arg(long)]
    pub mase_denominator: Option<String>,
    /// `aggregate_then_ratio` or `per_series_mean`.
    #[arg(long)]
    pub owa_aggregation: Option<String>,
    /// `dataset` or `paper` weights for the averaged column.
    #[arg(long)]
    pub weights: Option<String>,
    /// Train one model per lookback multiple 2H..7H.
    #[arg(long)]
    pub ensemble: bool,
    /// Also write input, target and forecast columns for plotting.
    #[arg(long)]
    pub plot_data: bool,
    /// Forecast from the training part so targets are known.
    #[arg(long)]
    pub holdout: bool,
    /// Synthetic series kind: `trend_season` or `silent`.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub period: Option<usize>,
}
