//! Command-line flags. Every flag has a key of the same (snake_case) name in
//! the flat JSON config file; flags given on the command line win.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "resonant-gnn", version = env!("RESONANT_GNN_VERSION"), arg_required_else_help = true)]
#[command(about = "Resonance diagnostics, GRN training and structure-attack experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a GCN and write its checkpoint and predictions.
    TrainGcn(TrainGcnArgs),
    /// Train a GRN inductively and write its checkpoint and embeddings.
    TrainGrn(TrainGrnArgs),
    /// Difference diagnostic of a sigmoid GCN over training.
    DiagResonance(DiagResonanceArgs),
    /// Global LRS graph, random control and optionally one node's subgraph.
    ExtractLrs(ExtractLrsArgs),
    /// Perturb a graph once and measure the victim's attack success rate.
    Attack(AttackArgs),
    /// Attack success rate against victim depth.
    AsrSweep(AsrSweepArgs),
    /// Cost lower bound of a structure attack.
    CostBound(CostBoundArgs),
    /// Accuracy of GCN and GRN variants under attack and seen rates.
    RobustnessTable(RobustnessArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::TrainGcn(_) => "train-gcn",
            Command::TrainGrn(_) => "train-grn",
            Command::DiagResonance(_) => "diag-resonance",
            Command::ExtractLrs(_) => "extract-lrs",
            Command::Attack(_) => "attack",
            Command::AsrSweep(_) => "asr-sweep",
            Command::CostBound(_) => "cost-bound",
            Command::RobustnessTable(_) => "robustness-table",
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RunArgs {
    /// Flat JSON config file, or a manifest from an earlier run.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads for experiment grids.
    #[arg(long, env = "RESONANT_GNN_THREADS", default_value_t = 1)]
    pub threads: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DataArgs {
    /// Edge list, one `u v` pair per line.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Feature CSV, one row per node.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// One-hot label CSV, one row per node.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Synthetic dataset, e.g. `sbm:50,50` for two blocks of 50.
    #[arg(long)]
    pub synthetic: Option<String>,
    #[arg(long, default_value_t = 0.2)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.02)]
    pub p_out: f64,
    #[arg(long, default_value_t = 0.1)]
    pub feature_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub graph_seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AttackerArgs {
    /// `greedy` (surrogate gradient) or `random`.
    #[arg(long, default_value = "greedy")]
    pub attack: String,
    #[arg(long, default_value_t = 16)]
    pub surrogate_hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub surrogate_epochs: usize,
    /// Gradient candidates re-scored by exact loss per greedy step.
    #[arg(long, default_value_t = 8)]
    pub rerank: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainGcnArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// `classification` (relu, normalized operator) or `diagnostic`
    /// (sigmoid, raw adjacency).
    #[arg(long, default_value = "classification")]
    pub preset: String,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Learning rate; the preset's default when absent.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.2)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainGrnArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// `e_z`, `z_e`, `shuf` or `z_only`.
    #[arg(long, default_value = "e_z")]
    pub variant: String,
    /// `symmetric` or `one_direction`.
    #[arg(long, default_value = "symmetric")]
    pub anchoring: String,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Largest gradient norm per step; 0 disables clipping.
    #[arg(long, default_value_t = 1.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 0.6)]
    pub seen_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct DiagResonanceArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0, 1])]
    pub ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3])]
    pub gaps: Vec<usize>,
    /// Trailing share of epochs averaged in the summary.
    #[arg(long, default_value_t = 0.2)]
    pub final_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct ExtractLrsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Also dump the subgraph centered on this node.
    #[arg(long)]
    pub node: Option<usize>,
    /// Seed of the random-weight control.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AttackArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub attacker: AttackerArgs,
    /// Perturbation rate: flips as a share of the edge count.
    #[arg(long, default_value_t = 0.05)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.2)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct AsrSweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub attacker: AttackerArgs,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3, 4, 5, 6])]
    pub depths: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0, 1, 2, 3, 4])]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 0.2)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.2)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CostBoundArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Also write `cost_bound.json` and a manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Node count.
    #[arg(long)]
    pub n: Option<u64>,
    /// Perturbation budget.
    #[arg(long)]
    pub r: Option<u64>,
    /// Model depth.
    #[arg(long)]
    pub k: Option<u32>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct RobustnessArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub attacker: AttackerArgs,
    /// `gcn`, `grn_e_z`, `grn_z_e`, `grn_shuf`, `grn_z_only`.
    #[arg(long, value_delimiter = ',', default_values_t = vec!["gcn".to_string(), "grn_e_z".to_string()])]
    pub models: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.05, 0.1, 0.2])]
    pub rates: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.4, 0.6])]
    pub seen_rates: Vec<f64>,
    #[arg(long, default_value_t = 10)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 200)]
    pub gcn_epochs: usize,
    #[arg(long, default_value_t = 200)]
    pub grn_epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub grn_lr: f64,
}
