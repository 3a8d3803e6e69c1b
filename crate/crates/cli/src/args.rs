use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "pmm", version, about = "Direct estimation and sensitivity analysis for pattern-mixture models")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Base seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// JSON file with default values for any flag. Flags win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Two-sided significance level.
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a dataset, derive pattern indicators and summarize patterns per visit.
    Validate(DataArgs),
    /// Direct estimates with sandwich standard errors.
    Estimate(EstimateArgs),
    /// Delta-adjusted p-value grid and tipping-point boundary.
    Tipping(TippingArgs),
    /// Monte Carlo study of the direct and imputation estimators.
    Simulate(SimulateArgs),
    /// Multiple imputation with Rubin pooling next to the direct estimate.
    MiCompare(MiArgs),
    /// Write the synthetic two-visit diabetes-trial dataset and its manifest.
    SynthAward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternMode {
    A3Collapse,
    ExplicitColumn,
    AdherenceDerived,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Pmm,
    Rd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Null,
    Diff,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Long-format CSV file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Dataset manifest; defaults to `<data stem>.manifest.json` next to the data.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Reference arm label, overriding the manifest.
    #[arg(long)]
    pub reference: Option<String>,
    /// Pattern rule, overriding the manifest.
    #[arg(long, value_enum)]
    pub pattern_rule: Option<PatternMode>,
    /// With adherence-derived patterns, also put every missing outcome in Pattern B.
    #[arg(long)]
    pub missing_is_pattern_b: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated methods: mar, r2b, j2r, pw, rd, rd-pure.
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    /// Standardize the arm means to the pooled covariate means.
    #[arg(long)]
    pub adjust_baseline: bool,
    /// Anchor return-to-baseline at the pooled baseline mean.
    #[arg(long)]
    pub pooled_baseline: bool,
    /// Write the per-arm model fits as JSON.
    #[arg(long)]
    pub dump_fits: bool,
    /// Write the stacked parameter vector and its sandwich covariance as JSON.
    #[arg(long)]
    pub dump_theta: bool,
}

#[derive(Debug, Args)]
pub struct TippingArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub method: Option<String>,
    /// Arm to compare with the reference; all arms when omitted.
    #[arg(long)]
    pub arm: Option<String>,
    /// Reference-arm penalty range `lo:hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub delta0_range: Option<String>,
    /// Treatment-arm penalty range `lo:hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub delta1_range: Option<String>,
    /// Grid points per axis.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Penalize the treatment arm only.
    #[arg(long)]
    pub one_way: bool,
    /// Shift Pattern B subjects only instead of every imputed subject.
    #[arg(long)]
    pub pattern_b_only: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub kind: Option<Kind>,
    #[arg(long, value_enum)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated methods.
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<String>,
    /// Also run the imputation comparator with this many imputations.
    #[arg(long)]
    pub mi: Option<usize>,
    /// Subjects per arm for the Monte Carlo truth.
    #[arg(long)]
    pub oracle_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MiArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub imputations: Option<usize>,
}

/// Optional defaults read from `--config`. Keys are the long flag names in
/// snake case.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub alpha: Option<f64>,
    pub data: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub reference: Option<String>,
    pub pattern_rule: Option<PatternMode>,
    pub missing_is_pattern_b: Option<bool>,
    pub method: Option<OneOrMany>,
    pub methods: Option<OneOrMany>,
    pub adjust_baseline: Option<bool>,
    pub pooled_baseline: Option<bool>,
    pub dump_fits: Option<bool>,
    pub dump_theta: Option<bool>,
    pub arm: Option<String>,
    pub delta0_range: Option<String>,
    pub delta1_range: Option<String>,
    pub resolution: Option<usize>,
    pub one_way: Option<bool>,
    pub pattern_b_only: Option<bool>,
    pub kind: Option<Kind>,
    pub scenario: Option<Scenario>,
    pub reps: Option<usize>,
    pub mi: Option<usize>,
    pub oracle_size: Option<usize>,
    pub imputations: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => s.split(',').map(str::to_string).collect(),
            OneOrMany::Many(v) => v,
        }
    }
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        if !path.is_file() {
            return Err(usage(format!("config file {} does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

/// A usage error; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Parse `lo:hi` with `lo < hi`.
pub fn parse_range(s: &str) -> anyhow::Result<(f64, f64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| usage(format!("range '{s}' must look like lo:hi")))?;
    let lo: f64 = a.trim().parse().map_err(|_| usage(format!("range '{s}': bad lower bound")))?;
    let hi: f64 = b.trim().parse().map_err(|_| usage(format!("range '{s}': bad upper bound")))?;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(usage(format!("range '{s}' must have finite lo < hi")));
    }
    Ok((lo, hi))
}

/// Flag value if given, else the config value.
pub fn pick<T>(flag: Option<T>, config: Option<T>) -> Option<T> {
    flag.or(config)
}

/// Flags can only switch a boolean on.
pub fn pick_bool(flag: bool, config: Option<bool>) -> bool {
    flag || config.unwrap_or(false)
}

/// Non-empty flag list if given, else the config list.
pub fn pick_list(flag: Vec<String>, config: Option<OneOrMany>) -> Vec<String> {
    let list = if flag.is_empty() { config.map(OneOrMany::into_vec).unwrap_or_default() } else { flag };
    list.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}
