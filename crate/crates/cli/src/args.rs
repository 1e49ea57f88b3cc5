// SPDX-License-Identifier: Apache-2.0

//! Command-line flags. Every flag can also be set from a JSON config file
//! whose keys are the flag names with `-` replaced by `_`; flags given on
//! the command line win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use graphdiff_core::pipeline::PseudoSource;
use graphdiff_core::pseudolabel::ScoreNormalization;
use graphdiff_core::baseline::P2Solver;
use graphdiff_core::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Parser)]
#[command(name = "graphdiff", version, about = "Graph p=1 diffusion pseudo-labelling and the training loop around it")]
pub struct Cli {
    /// JSON file setting any flag of the subcommand.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian-blob dataset (features + labels).
    Gen(GenArgs),
    /// Build the k-NN graph and export its edges.
    Graph(GraphArgs),
    /// Diffuse labels over the k-NN graph and export pseudo-labels.
    Diffuse(DiffuseArgs),
    /// Quadratic label spreading on the same graph.
    Baseline(BaselineArgs),
    /// Warm start, then alternate diffusion and weighted training over
    /// random labelled splits.
    Pipeline(PipelineArgs),
    /// Score a prediction file against ground truth.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceArg {
    Diffusion,
    Network,
    None,
}

impl From<SourceArg> for PseudoSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Diffusion => PseudoSource::Diffusion,
            SourceArg::Network => PseudoSource::Network,
            SourceArg::None => PseudoSource::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationArg {
    MinShift,
    Softmax,
}

impl From<NormalizationArg> for ScoreNormalization {
    fn from(n: NormalizationArg) -> Self {
        match n {
            NormalizationArg::MinShift => ScoreNormalization::MinShift,
            NormalizationArg::Softmax => ScoreNormalization::Softmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverArg {
    Auto,
    Direct,
    Iterative,
}

impl From<SolverArg> for P2Solver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Auto => P2Solver::Auto,
            SolverArg::Direct => P2Solver::Direct,
            SolverArg::Iterative => P2Solver::Iterative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureFormat {
    Csv,
    Binary,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenArgs {
    /// Samples per cluster, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub counts: Option<Vec<usize>>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Standard deviation of every coordinate around the cluster mean.
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fraction of each cluster marked `labelled`.
    #[arg(long)]
    pub label_fraction: Option<f64>,
    /// Fraction of each cluster marked `test`.
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<FeatureFormat>,
    /// Output directory; receives `features.csv` (or `features.gxf`) and
    /// `labels.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub similarity_exponent: Option<f64>,
    /// Edge CSV `i,j,w`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffuseArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// `index,label,role` CSV; `labelled` rows become constraints.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub similarity_exponent: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub outer_max: Option<usize>,
    #[arg(long)]
    pub inner_max: Option<usize>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub outer_tol: Option<f64>,
    #[arg(long, value_enum)]
    pub normalization: Option<NormalizationArg>,
    /// Accepted for uniformity; diffusion itself is deterministic.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Pseudo-label CSV for every node that is not labelled.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-step CSV `outer_iter,ratio_objective,inner_iters_used`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Metrics JSON over test nodes (or unlabelled nodes with known truth
    /// when there are no test nodes).
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub confidence: Option<f64>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub similarity_exponent: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    #[arg(long, value_enum)]
    pub normalization: Option<NormalizationArg>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub confidence: Option<f64>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineArgs {
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Truth and `test` roles; labelled sets are drawn per split.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub label_fraction: Option<f64>,
    /// Run several label fractions with paired splits, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub epochs_per_round: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub similarity_exponent: Option<f64>,
    #[arg(long, value_enum)]
    pub pseudo_source: Option<SourceArg>,
    /// Effective-number class weights with this beta instead of inverse
    /// frequency.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, value_enum)]
    pub normalization: Option<NormalizationArg>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub outer_max: Option<usize>,
    #[arg(long)]
    pub inner_max: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Worker threads for splits; reports do not depend on it.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Run report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for `error_vs_labels.csv` and `error_vs_epoch.csv`.
    #[arg(long)]
    pub plot_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsArgs {
    /// CSV with `index` and `pred_class` columns (the pseudo-label export
    /// qualifies).
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Score only nodes whose role is `test`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub test_only: Option<bool>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub confidence: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Overlays the flags that were given onto the config file, if any.
pub fn with_config<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> Result<T> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(path)?;
    let usage = |e: serde_json::Error| Error::InvalidConfig(format!("{}: {e}", path.display()));
    let Value::Object(mut merged) = serde_json::from_str::<Value>(&text).map_err(usage)? else {
        return Err(Error::InvalidConfig(format!("{}: expected a JSON object", path.display())));
    };
    if let Value::Object(given) = serde_json::to_value(&flags)? {
        for (key, value) in given {
            if !value.is_null() {
                merged.insert(key, value);
            }
        }
    }
    serde_json::from_value(Value::Object(merged)).map_err(usage)
}

pub fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("--{flag} is required")))
}
