use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tfbhtmm::model::{LatentProposal, LatentRule};
use tfbhtmm::tasks::{ModelKind, Task};
use tfbhtmm::HyperParams;

#[derive(Debug, Parser)]
#[command(name = "tfbhtmm", version, about = "Train and evaluate bottom-up hidden tree Markov models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic ternary-tree corpus and its train/test split.
    Generate(GenerateArgs),
    /// Train one model (labelling) or one model per class (classification).
    Train(TrainArgs),
    /// Evaluate checkpoints, or train and evaluate over several seeds.
    Eval(EvalArgs),
    /// Predict the class of every tree in a corpus.
    Classify(PredictArgs),
    /// Predict node labels from tree structure alone.
    Label(PredictArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindArg {
    Tf,
    Sp,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Tf => ModelKind::Tf,
            KindArg::Sp => ModelKind::Sp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classify,
    Label,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Classify => Task::Classify,
            TaskArg::Label => Task::Label,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProposalArg {
    Prior,
    Guided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleArg {
    AsPrinted,
    CoreRatio,
    Exact,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Directory receiving train.trees, test.trees and generate.meta.json.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Trees per type (left-asymmetric, symmetric, right-asymmetric).
    #[arg(long, default_value_t = 260, value_parser = clap::value_parser!(u64).range(1..))]
    pub count_per_type: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Child occupation probabilities of left-asymmetric trees.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.5, 0.2])]
    pub left: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.5, 0.5, 0.5])]
    pub symmetric: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.2, 0.5, 0.8])]
    pub right: Vec<f64>,
    /// Maximum number of levels, root included.
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 3)]
    pub min_nodes: usize,
    /// Largest |n1 - n3| accepted for symmetric trees.
    #[arg(long, default_value_t = 1)]
    pub symmetric_tolerance: usize,
    /// Fraction of each type sent to the test file.
    #[arg(long, default_value_t = 3.0 / 13.0)]
    pub test_fraction: f64,
}

/// Sampler hyper-parameters. `C`, `L` and `M` come from the corpus except `--states`.
#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    /// Hidden states C.
    #[arg(long, default_value_t = 10)]
    pub states: usize,
    #[arg(long, default_value_t = 100)]
    pub iterations: usize,
    /// Size-prior decay.
    #[arg(long, default_value_t = 2.0)]
    pub phi: f64,
    #[arg(long, default_value_t = 1)]
    pub l_min: usize,
    /// Default 5 for classification, 3 for labelling, capped at L.
    #[arg(long)]
    pub l_max: Option<usize>,
    /// Core-row concentration [default: C].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Base-measure concentration [default: C].
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    /// Initial annealing temperature.
    #[arg(long, default_value_t = 10.0)]
    pub t0: f64,
    /// Iteration where the temperature reaches 1 [default: iterations / 2].
    #[arg(long)]
    pub m0: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = ProposalArg::Guided)]
    pub proposal: ProposalArg,
    #[arg(long, value_enum, default_value_t = RuleArg::AsPrinted)]
    pub rule: RuleArg,
}

impl HyperArgs {
    pub fn build(&self, task: Task, arity: usize, alphabet: usize) -> HyperParams {
        let mut h = HyperParams::new(self.states, arity, alphabet).with_iterations(self.iterations);
        h.seed = self.seed;
        h.phi = self.phi;
        h.l_min = self.l_min;
        let default_max = match task {
            Task::Classify => 5,
            Task::Label => 3,
        };
        h.l_max = self.l_max.unwrap_or(default_max.min(arity));
        if let Some(a) = self.alpha {
            h.alpha = a;
        }
        if let Some(a) = self.alpha0 {
            h.alpha0 = a;
        }
        h.gamma = self.gamma;
        h.beta = self.beta;
        h.t0 = self.t0;
        if let Some(m0) = self.m0 {
            h.m0 = m0;
        }
        h.proposal = match self.proposal {
            ProposalArg::Prior => LatentProposal::Prior,
            ProposalArg::Guided => LatentProposal::Guided,
        };
        h.rule = match self.rule {
            RuleArg::AsPrinted => LatentRule::AsPrinted,
            RuleArg::CoreRatio => LatentRule::CoreRatio,
            RuleArg::Exact => LatentRule::Exact,
        };
        h
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output directory for checkpoints, logs and metadata.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    #[arg(long, value_enum, default_value_t = KindArg::Tf)]
    pub model: KindArg,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "TFBHTMM_JOBS", default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Test corpus.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskArg,
    /// Checkpoint directories written by `train`, one per run.
    #[arg(long = "models", num_args = 1.., conflicts_with = "train")]
    pub models: Vec<PathBuf>,
    /// Training corpus: train `--runs` fresh models (seeds seed, seed+1, ...).
    #[arg(long, required_unless_present = "models")]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub runs: u64,
    #[arg(long, value_enum, default_value_t = KindArg::Tf)]
    pub model: KindArg,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Directory for report.json, report.txt and confusion matrices.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, env = "TFBHTMM_JOBS", default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub models: PathBuf,
    /// Corpus to predict on.
    #[arg(long)]
    pub input: PathBuf,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
