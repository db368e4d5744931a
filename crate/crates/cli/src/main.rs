//! `dynrca` command-line tool.
//!
//! Every flag can also be given in a JSON file passed with `--config`, keyed
//! by the long flag name with underscores (`--n-samples` is `n_samples`).
//! Flags win over the file.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use dynrca::RcaError;
use settings::Common;

#[derive(Debug, Parser)]
#[command(name = "dynrca", version, about = "Counterfactual root cause analysis for dynamical systems")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset directory (graph, normal data, factum, truth).
    Generate(GenerateArgs),
    /// Fit the normal-behaviour model of a dataset and save it.
    Train(TrainArgs),
    /// Rank root-cause candidates of a dataset's factum.
    Diagnose(DiagnoseArgs),
    /// Node-level accuracy on random linear benchmark graphs.
    Benchmark(BenchmarkArgs),
    /// Accuracy against the size of an injected additive fault.
    InjectSweep(SweepArgs),
    /// Accuracy when the model graph has edges removed or added.
    Robustness(RobustnessArgs),
    /// Ingest river station CSVs and diagnose the factum window.
    IngestRiver(RiverArgs),
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// linear4, fhn or benchmark.
    #[arg(long)]
    pub system: Option<String>,
    /// Injected constant in multiples of the noise standard deviation.
    #[arg(long)]
    pub constant: Option<f64>,
    /// Benchmark fault kind: parametric or structural.
    #[arg(long)]
    pub kind: Option<String>,
    /// Which factum of the seeded sequence to write.
    #[arg(long)]
    pub index: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// lin or nlin.
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct ClassifierArgs {
    /// corridor, band, loglik or zscore.
    #[arg(long)]
    pub classifier: Option<String>,
    /// Node watched by a corridor or z-score classifier.
    #[arg(long)]
    pub node: Option<String>,
    /// Corridor/band multiplier.
    #[arg(long)]
    pub k: Option<f64>,
    /// Z-score threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Reference trajectory CSV of a band, relative to the dataset.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Band standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    #[command(flatten)]
    #[serde(flatten)]
    pub classifier: ClassifierArgs,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Method variant (lin-n, lin-sn, nlin-n, nlin-sn); repeatable.
    #[arg(long)]
    #[serde(default)]
    pub variant: Vec<String>,
    /// sites (node, time) or nodes.
    #[arg(long)]
    pub candidates: Option<String>,
    /// Node excluded from the candidates; repeatable.
    #[arg(long)]
    #[serde(default)]
    pub exclude: Vec<String>,
    /// Counterfactual exemplars saved next to each report.
    #[arg(long)]
    pub exemplars: Option<usize>,
    /// Also write per-time Shapley values as CSV.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct BenchmarkArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Random graphs per (kind, length).
    #[arg(long)]
    pub graphs: Option<usize>,
    /// Trajectory lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub lengths: Vec<usize>,
    /// parametric and/or structural; repeatable.
    #[arg(long)]
    #[serde(default)]
    pub kind: Vec<String>,
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    pub variant: Vec<String>,
    /// Also write every instance as a dataset directory.
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub write_corpus: bool,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct SweepArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// linear4 or fhn.
    #[arg(long)]
    pub system: Option<String>,
    /// Injected constants in multiples of the noise std, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(default)]
    pub constants: Vec<f64>,
    /// Facta per constant.
    #[arg(long)]
    pub facta: Option<usize>,
    #[arg(long)]
    #[serde(default)]
    pub variant: Vec<String>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RobustnessArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// Graph edits such as `remove:1` or `add:2`; repeatable.
    #[arg(long)]
    #[serde(default)]
    pub edit: Vec<String>,
    #[arg(long)]
    pub facta: Option<usize>,
    /// Injected constant in multiples of the noise std.
    #[arg(long)]
    pub constant: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    pub variant: Vec<String>,
    #[arg(long)]
    #[serde(default, skip_serializing_if = "is_false")]
    pub emit_plot_data: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
pub struct RiverArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub common: Common,
    /// River ingestion file (graph, stations, windows, target).
    #[arg(long)]
    pub river_config: Option<PathBuf>,
    /// Write the synthetic four-station fixture here first and use it.
    #[arg(long)]
    pub write_fixture: Option<PathBuf>,
    /// Training steps kept (the most recent ones).
    #[arg(long)]
    pub subsample_cap: Option<usize>,
    #[arg(long)]
    pub z_threshold: Option<f64>,
    #[arg(long)]
    #[serde(default)]
    pub variant: Vec<String>,
    #[arg(long)]
    pub exemplars: Option<usize>,
}

/// 2 for usage/configuration problems, 3 for bad data, 4 for numerical
/// failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<RcaError>() {
            return if e.is_numeric_error() {
                4
            } else if let RcaError::Config(_) = e {
                2
            } else {
                3
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    1
}

fn run(cli: Cli) -> anyhow::Result<()> {
    use settings::merge_with_config as merged;
    match cli.command {
        Command::Generate(a) => commands::generate(merged(&a, a.config.as_deref())?),
        Command::Train(a) => commands::train(merged(&a, a.config.as_deref())?),
        Command::Diagnose(a) => commands::diagnose(merged(&a, a.config.as_deref())?),
        Command::Benchmark(a) => commands::benchmark(merged(&a, a.config.as_deref())?),
        Command::InjectSweep(a) => commands::inject_sweep(merged(&a, a.config.as_deref())?),
        Command::Robustness(a) => commands::robustness(merged(&a, a.config.as_deref())?),
        Command::IngestRiver(a) => commands::ingest_river(merged(&a, a.config.as_deref())?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
