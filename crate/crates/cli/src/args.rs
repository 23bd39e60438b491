//! Command-line flags. Every setting is optional here so that a JSON config
//! file can supply it; flags given on the command line win.

use std::path::PathBuf;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use stix_core::{Interaction, Metric, MissingPolicy};

#[derive(Debug, Parser)]
#[command(name = "stix", version, about = "Spatio-temporal regression for weekly PM2.5 panels")]
pub struct Cli {
    /// Worker threads for all internal parallelism (default: available cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// JSON file with settings for the subcommand; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Aggregate station and hourly reading files into a weekly panel.
    Ingest(IngestArgs),
    /// Partition stations into regions with k-means.
    Cluster(ClusterArgs),
    /// Cross-validate the decay parameters over a grid.
    Cv(CvArgs),
    /// Fit the model with fixed decay parameters.
    Fit(FitArgs),
    /// Score test for the space-time interaction terms.
    Lmtest(LmTestArgs),
    /// Kriging predictions from a saved fit.
    Predict(PredictArgs),
    /// Monte Carlo size and power study on synthetic panels.
    Simulate(SimulateArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Cluster(_) => "cluster",
            Command::Cv(_) => "cv",
            Command::Fit(_) => "fit",
            Command::Lmtest(_) => "lmtest",
            Command::Predict(_) => "predict",
            Command::Simulate(_) => "simulate",
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestArgs {
    /// Stations CSV: station_id,latitude,longitude.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stations: Option<PathBuf>,
    /// Hourly readings CSV: station_id,timestamp,pm25,temperature,humidity,wind_speed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readings: Option<PathBuf>,
    /// First day of the panel (default: first reading's date).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<NaiveDate>,
    /// Last day of the panel, inclusive (default: last reading's date).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub end: Option<NaiveDate>,
    /// What to do with empty weeks: error or interpolate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missing_policy: Option<MissingPolicy>,
    /// Distance: greatcircle or euclidean.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    /// Number of regions (default: integer square root of the station count).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// k-means seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterArgs {
    /// Stations CSV: station_id,latitude,longitude.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stations: Option<PathBuf>,
    /// Distance: greatcircle or euclidean.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<Metric>,
    /// Number of regions (default: integer square root of the station count).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// k-means seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// panel.csv written by `ingest`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panel: Option<PathBuf>,
    /// panel_meta.json (default: next to the panel).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
    /// Spatial decay.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_s: Option<f64>,
    /// Temporal decay.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_t: Option<f64>,
    /// Intervals are reported at confidence 1 - level.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    /// Cap on estimator passes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Relative-change convergence tolerance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmTestArgs {
    /// panel.csv written by `ingest`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panel: Option<PathBuf>,
    /// panel_meta.json (default: next to the panel).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
    /// Spatial decay.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_s: Option<f64>,
    /// Temporal decay.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_t: Option<f64>,
    /// Test level.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    /// Cap on estimator passes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Relative-change convergence tolerance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvArgs {
    /// panel.csv written by `ingest`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panel: Option<PathBuf>,
    /// panel_meta.json (default: next to the panel).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
    /// Comma-separated φ_s candidates.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_s: Option<Vec<f64>>,
    /// Comma-separated φ_t candidates.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_t: Option<Vec<f64>>,
    /// Cap on estimator passes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Relative-change convergence tolerance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictArgs {
    /// panel.csv written by `ingest`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub panel: Option<PathBuf>,
    /// panel_meta.json (default: next to the panel).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<PathBuf>,
    /// fit.json written by `fit`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<PathBuf>,
    /// Requests CSV: station_id,latitude,longitude,week,<covariates>.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub requests: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// Site counts, comma-separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<Vec<usize>>,
    /// Week counts, comma-separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weeks: Option<Vec<usize>>,
    /// Interaction forms, comma-separated: none, linear, quadratic.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interaction: Option<Vec<Interaction>>,
    /// Replicates per cell.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    /// Master seed.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Test level.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    /// True spatial decay, also used by the test.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_s: Option<f64>,
    /// True temporal decay, also used by the test.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi_t: Option<f64>,
    /// Cap on estimator passes.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    /// Relative-change convergence tolerance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Write one synthetic panel (first n, weeks and interaction) instead of running a study.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub emit_panel: Option<bool>,
    /// Output directory.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}
