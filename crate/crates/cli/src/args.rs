use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "handover",
    version,
    about = "Preemptive human-to-robot handover: data, training, evaluation, studies and the live service"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic reach dataset (JSON Lines).
    GenData {
        #[command(flatten)]
        common: Common,
        /// Number of trajectories.
        #[arg(long, default_value_t = 500)]
        count: usize,
    },
    /// Train an intent model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset to train on.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score a model's predictions on a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the paired reactive-versus-preemptive study.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = ModeArg::Both)]
        mode: ModeArg,
        /// Participants (seeds) per cell.
        #[arg(long)]
        trials: Option<usize>,
        /// Number of placement cells drawn from the seed.
        #[arg(long)]
        cells: Option<usize>,
        /// Trained model driving the preemptive mode.
        #[arg(long, conflicts_with = "oracle")]
        model: Option<PathBuf>,
        /// Use a predictor that always knows the target instead of a model.
        #[arg(long)]
        oracle: bool,
        /// Report format; defaults to csv for a .csv output path, else json.
        #[arg(long, value_enum)]
        format: Option<FormatArg>,
    },
    /// Serve live sessions over WebSocket at /ws?mode=reactive|preemptive.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Without a model only reactive sessions are accepted.
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::GenData { common, .. }
            | Command::Train { common, .. }
            | Command::Eval { common, .. }
            | Command::Study { common, .. }
            | Command::Serve { common, .. } => common,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Master seed. Limited to the signed 64-bit range so config files can hold it.
    #[arg(long, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    pub seed: Option<u64>,
    /// TOML config file; command-line flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid dimensions, e.g. 5x10.
    #[arg(long)]
    pub grid: Option<GridArg>,
    /// Output file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridArg {
    pub n: usize,
    pub m: usize,
}

impl FromStr for GridArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, m) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("expected NxM, got {s:?}"))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|d| *d > 0)
                .ok_or_else(|| format!("grid dimensions must be positive integers, got {s:?}"))
        };
        Ok(Self {
            n: parse(n)?,
            m: parse(m)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Reactive,
    Preemptive,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}
