//! `mars`: command-line front end for the simulation engine.
//!
//! Exit status is 0 on success, 1 on a runtime failure (with a JSON error
//! record on stderr) and 2 on a usage error.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mars_core::io::ScenarioTag;

#[derive(Debug, Parser)]
#[command(name = "mars", version, about = "Order-level market simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Replay a recorded order log through the simulated exchange.
    Replay {
        /// CSV log, or binary log when the extension is `.bin`.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        minutes: u32,
        /// Leading records that form the starting sequence.
        #[arg(long, default_value_t = 0)]
        opening: usize,
        /// Clock origin; defaults to the first record's timestamp.
        #[arg(long)]
        start_ms: Option<u64>,
        /// Fallback price before any quote exists; defaults to the first record's price.
        #[arg(long)]
        reference: Option<i64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run seeded rollouts from a simulation config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label each rollout's mid-price move and aggregate the votes.
    Forecast {
        /// A trajectory directory or a directory of them.
        #[arg(long = "in")]
        input: PathBuf,
        /// Minute whose opening mid anchors the forecast.
        #[arg(long, default_value_t = 0)]
        from_minute: usize,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
        #[arg(long, requires = "high", conflicts_with = "train", allow_negative_numbers = true)]
        low: Option<f64>,
        #[arg(long, requires = "low", allow_negative_numbers = true)]
        high: Option<f64>,
        /// Trajectories whose rolling labels set the class thresholds at their tertiles.
        #[arg(long, required_unless_present = "low")]
        train: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Impact records from paired runs with and without an agent.
    Impact {
        #[arg(long)]
        with: PathBuf,
        #[arg(long)]
        without: PathBuf,
        #[arg(long)]
        start_minute: u32,
        /// Exclusive.
        #[arg(long)]
        end_minute: u32,
        #[arg(long, default_value_t = 5)]
        lookback: u32,
        #[arg(long, default_value = "default")]
        config_id: String,
        /// Factor weights as a versioned JSON config.
        #[arg(long)]
        factors: Option<PathBuf>,
        /// Traded volume of the historical session over the window.
        #[arg(long)]
        replay_volume: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an impact model to records.
    ImpactFit {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, value_enum)]
        mode: FitMode,
        /// Versioned JSON: the ODE model for `ode`, the search settings for `search`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stylized-fact report over trajectories.
    Stylized {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare simulated and replayed distributions of a minute statistic.
    Detect {
        #[arg(long)]
        sim: PathBuf,
        #[arg(long)]
        replay: PathBuf,
        #[arg(long, default_value_t = mars_core::analytics::DEFAULT_DETECTION_THRESHOLD)]
        threshold: f64,
        #[arg(long, value_enum, default_value_t = Metric::Spread)]
        metric: Metric,
        #[arg(long, default_value_t = mars_core::analytics::DEFAULT_BINS)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an execution policy with policy gradients.
    RlTrain {
        #[arg(long, value_enum, default_value_t = Env::Toy)]
        env: Env,
        /// Simulation config for `--env sim`; its agent block sets the order.
        #[arg(long, required_if_eq("env", "sim"))]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        updates: usize,
        /// Episodes per update.
        #[arg(long, default_value_t = 8192)]
        batch: usize,
        #[arg(long, default_value_t = 4e-5)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find windows of minute returns matching a scenario.
    ScenarioFilter {
        #[arg(long)]
        returns: PathBuf,
        #[arg(long, value_enum, default_value_t = Tag::SharpDrop)]
        tag: Tag,
        #[arg(long, default_value_t = 25)]
        window: usize,
        #[arg(long, default_value_t = -0.05, allow_negative_numbers = true)]
        threshold: f64,
        #[arg(long, default_value_t = 30)]
        max_samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize an order log and optionally fit a count model on it.
    Tokenize {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        start_ms: Option<u64>,
        #[arg(long)]
        reference: Option<i64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        model_out: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FitMode {
    Sqrt,
    Ode,
    Search,
}

#[derive(Clone, Copy, Debug, ValueEnum, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Spread,
    Volume,
    Return,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Env {
    Toy,
    Sim,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Tag {
    SharpDrop,
    SharpRise,
    TrendReversal,
}

impl From<Tag> for ScenarioTag {
    fn from(t: Tag) -> Self {
        match t {
            Tag::SharpDrop => ScenarioTag::SharpDrop,
            Tag::SharpRise => ScenarioTag::SharpRise,
            Tag::TrendReversal => ScenarioTag::TrendReversal,
        }
    }
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Replay { .. } => "replay",
            Command::Simulate { .. } => "simulate",
            Command::Forecast { .. } => "forecast",
            Command::Impact { .. } => "impact",
            Command::ImpactFit { .. } => "impact-fit",
            Command::Stylized { .. } => "stylized",
            Command::Detect { .. } => "detect",
            Command::RlTrain { .. } => "rl-train",
            Command::ScenarioFilter { .. } => "scenario-filter",
            Command::Tokenize { .. } => "tokenize",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let record = serde_json::json!({
                "level": "error",
                "command": name,
                "message": err.to_string(),
                "causes": err.chain().skip(1).map(ToString::to_string).collect::<Vec<_>>(),
            });
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
