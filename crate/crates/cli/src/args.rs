//! Command-line syntax.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use hetscene::checks::Scope;
use hetscene::encoder::ContextLevel;
use hetscene::scene::Task;

const TIE_RULE: &str = "An agent is predicted positive when its probability is strictly greater \
than 0.5; a probability of exactly 0.5 counts as negative.";

#[derive(Debug, Parser)]
#[command(name = "hetscene", version, about = "Heterogeneous graph attention for traffic scenes and knowledge graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled scene dataset
    Generate(GenerateArgs),
    /// Train scene models or a baseline over several seeds and report test metrics
    #[command(after_help = TIE_RULE)]
    SceneTrain(SceneTrainArgs),
    /// Evaluate a checkpoint on one split of a dataset
    #[command(after_help = TIE_RULE)]
    SceneEval(SceneEvalArgs),
    /// Node classification on a knowledge graph
    Kg(KgArgs),
    /// Compare recorded gradients with central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskChoice {
    #[default]
    Parked,
    Ghost,
    Both,
}

impl TaskChoice {
    pub fn tasks(self) -> Vec<Task> {
        match self {
            TaskChoice::Parked => vec![Task::Parked],
            TaskChoice::Ghost => vec![Task::Ghost],
            TaskChoice::Both => Task::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// The cascaded graph model
    #[default]
    Scene,
    /// Four-layer perceptron on agent features only
    Mlp,
    /// Parked iff the current speed is below 0.1 m/s (parked task only)
    Velocity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ContextArg {
    None,
    Agent,
    Lane,
    Full,
}

impl From<ContextArg> for ContextLevel {
    fn from(c: ContextArg) -> Self {
        match c {
            ContextArg::None => ContextLevel::None,
            ContextArg::Agent => ContextLevel::Agent,
            ContextArg::Lane => ContextLevel::Lane,
            ContextArg::Full => ContextLevel::Full,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KgDatasetName {
    Aifb,
    Mutag,
    Bgs,
    Am,
}

impl KgDatasetName {
    pub fn dir_name(self) -> &'static str {
        match self {
            KgDatasetName::Aifb => "aifb",
            KgDatasetName::Mutag => "mutag",
            KgDatasetName::Bgs => "bgs",
            KgDatasetName::Am => "am",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ScopeArg {
    Ops,
    Layer,
    End2end,
}

impl From<ScopeArg> for Scope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::Ops => Scope::Ops,
            ScopeArg::Layer => Scope::Layer,
            ScopeArg::End2end => Scope::End2End,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Generator configuration (JSON); flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of scenes
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SceneTrainArgs {
    /// Dataset directory written by `generate`
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoints, logs, metrics and the resolved config
    #[arg(long)]
    pub out: PathBuf,
    /// Run configuration (JSON); flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// First seed; run k uses seed + k
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, value_enum)]
    pub task: Option<TaskChoice>,
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Relations available to the scene model
    #[arg(long, value_enum)]
    pub context: Option<ContextArg>,
    /// Drop the trajectory encoder
    #[arg(long)]
    pub no_temporal: bool,
    /// Decode from the last agent embedding only
    #[arg(long)]
    pub no_residual: bool,
    /// Ignore edge features in every layer
    #[arg(long)]
    pub no_edge_features: bool,
}

#[derive(Debug, Args)]
pub struct SceneEvalArgs {
    /// Checkpoint written by `scene-train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory written by `generate`
    #[arg(long)]
    pub data: PathBuf,
    /// Tasks to report; defaults to every task of the checkpoint
    #[arg(long, value_enum)]
    pub task: Option<TaskChoice>,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
    /// Also write metrics and the resolved config to this directory
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KgArgs {
    #[arg(long, value_enum)]
    pub dataset: KgDatasetName,
    /// Directory holding one subdirectory per dataset with `*.nt`, train.tsv and test.tsv
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration (JSON); flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// First seed; run k uses seed + k
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of seeds
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Output directory for the accuracy table and the resolved config
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(value_enum)]
    pub scope: ScopeArg,
}
