//! Flags, the config file, and the merged view of both.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use veto_core::ope::DEFAULT_RIDGE_LAMBDA;
use veto_core::policy::Variant;
use veto_core::rewards::RewardKind;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "veto-bandit",
    version,
    about = "Contextual-bandit map veto pipeline"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic match log
    Simulate,
    /// Filter a match log and build decision datasets
    Ingest,
    /// Train a bandit policy from a decisions CSV
    Train,
    /// Score models and baselines on a test decisions CSV
    Evaluate,
    /// Print the model's distribution for a draft state
    Recommend,
    /// Run the advisor HTTP service
    Serve,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: veto_core::Error| e.to_string())
}

fn parse_reward(s: &str) -> Result<RewardKind, String> {
    s.parse().map_err(|e: veto_core::Error| e.to_string())
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        other => Err(format!("expected on or off, got '{other}'")),
    }
}

#[derive(Debug, Clone, Default, Parser)]
pub struct Flags {
    /// Config file (TOML); defaults to $VETO_BANDIT_CONFIG
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// split, combo or episodic
    #[arg(long, global = true, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// zero-one or mor
    #[arg(long, global = true, value_parser = parse_reward)]
    pub reward: Option<RewardKind>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restrict policies to available maps during training (on/off)
    #[arg(long, global = true, value_parser = parse_switch)]
    pub mask: Option<bool>,
    /// Ridge penalty of the direct-method reward model
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long = "test-fraction", global = true)]
    pub test_fraction: Option<f64>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Pick the learning rate and epochs by grid search
    #[arg(long, global = true)]
    pub grid: bool,
    #[arg(long, global = true)]
    pub teams: Option<usize>,
    #[arg(long, global = true)]
    pub matches: Option<usize>,
    /// Model file; repeat for several
    #[arg(long = "model", global = true)]
    pub models: Vec<PathBuf>,
    /// Team statistics snapshot written by `ingest`
    #[arg(long, global = true)]
    pub stats: Option<PathBuf>,
    /// Decisions CSV used to score training checkpoints
    #[arg(long, global = true)]
    pub eval: Option<PathBuf>,
    #[arg(long = "checkpoint-every", global = true)]
    pub checkpoint_every: Option<usize>,
    #[arg(long = "min-games", global = true)]
    pub min_games: Option<u32>,
}

/// Config file keys mirror the flag names.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub variant: Option<String>,
    pub reward: Option<String>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub mask: Option<String>,
    pub lambda: Option<f64>,
    pub test_fraction: Option<f64>,
    pub port: Option<u16>,
    pub grid: Option<bool>,
    pub teams: Option<usize>,
    pub matches: Option<usize>,
    pub model: Option<Vec<PathBuf>>,
    pub stats: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
    pub min_games: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| {
            let msg = e.message().to_string();
            CliError::new("config", format!("{}: {msg}", path.display()))
        })
    }
}

/// Every setting after flags override the file and the file overrides the
/// defaults. Written next to each artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub variant: Variant,
    pub reward: RewardKind,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub mask: bool,
    pub lambda: f64,
    pub test_fraction: f64,
    pub port: u16,
    pub grid: bool,
    pub teams: usize,
    pub matches: usize,
    pub models: Vec<PathBuf>,
    pub stats: Option<PathBuf>,
    pub eval: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub min_games: u32,
}

fn from_file<T>(
    value: Option<String>,
    key: &str,
    parse: fn(&str) -> Result<T, String>,
) -> Result<Option<T>, CliError> {
    value
        .map(|v| parse(&v).map_err(|e| CliError::new("config", format!("{key}: {e}"))))
        .transpose()
}

impl Resolved {
    pub fn merge(flags: Flags, file: FileConfig) -> Result<Self, CliError> {
        let variant = from_file(file.variant, "variant", parse_variant)?;
        let reward = from_file(file.reward, "reward", parse_reward)?;
        let mask = from_file(file.mask, "mask", parse_switch)?;
        Ok(Resolved {
            input: flags.input.or(file.input),
            output: flags.output.or(file.output),
            variant: flags.variant.or(variant).unwrap_or(Variant::Combo),
            reward: flags.reward.or(reward).unwrap_or(RewardKind::ZeroOne),
            lr: flags.lr.or(file.lr).unwrap_or(0.1),
            epochs: flags.epochs.or(file.epochs).unwrap_or(3),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            mask: flags.mask.or(mask).unwrap_or(true),
            lambda: flags.lambda.or(file.lambda).unwrap_or(DEFAULT_RIDGE_LAMBDA),
            test_fraction: flags.test_fraction.or(file.test_fraction).unwrap_or(0.2),
            port: flags
                .port
                .or(file.port)
                .unwrap_or(veto_advisor::DEFAULT_PORT),
            grid: flags.grid || file.grid.unwrap_or(false),
            teams: flags.teams.or(file.teams).unwrap_or(20),
            matches: flags.matches.or(file.matches).unwrap_or(5000),
            models: if flags.models.is_empty() {
                file.model.unwrap_or_default()
            } else {
                flags.models
            },
            stats: flags.stats.or(file.stats),
            eval: flags.eval.or(file.eval),
            checkpoint_every: flags
                .checkpoint_every
                .or(file.checkpoint_every)
                .unwrap_or(100),
            min_games: flags
                .min_games
                .or(file.min_games)
                .unwrap_or(veto_core::data_io::MIN_GAMES),
        })
    }

    pub fn input(&self) -> Result<&Path, CliError> {
        self.input
            .as_deref()
            .ok_or_else(|| CliError::new("usage", "--input is required"))
    }

    pub fn output(&self) -> Result<&Path, CliError> {
        self.output
            .as_deref()
            .ok_or_else(|| CliError::new("usage", "--output is required"))
    }
}
