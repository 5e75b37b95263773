use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use subspace_core::DEFAULT_INIT_STD;

#[derive(Debug, Parser)]
#[command(
    name = "sse",
    version,
    about = "Build, inspect and train subspace embedding codebooks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Assign codes by base-Q digits of the token index.
    RadixAssign(RadixAssign),
    /// Assign codes by recursive k-means over pretrained vectors.
    ClusterAssign(ClusterAssign),
    /// Write reconstructed embedding vectors as an SSE1 matrix.
    Reconstruct(Reconstruct),
    /// Check code uniqueness and structural invariants.
    Verify(CodebookArg),
    /// Parameter accounting for a codebook.
    Stats(Stats),
    /// Fit a codebook's tables to a target embedding matrix.
    Distill(Distill),
    /// Finite-difference check of the table gradients.
    GradCheck(GradCheck),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Dimension of reconstructed vectors.
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Token ids that receive dedicated code tuples, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub reserved: Vec<usize>,
    /// Standard deviation of the initial table entries.
    #[arg(long, default_value_t = DEFAULT_INIT_STD)]
    pub init_std: f64,
}

#[derive(Debug, Args)]
pub struct RadixAssign {
    #[arg(long)]
    pub vocab_size: usize,
    #[arg(long)]
    pub subspaces: usize,
    /// Defaults to the smallest Q with Q^subspaces >= vocab size.
    #[arg(long)]
    pub table_size: Option<usize>,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterAssign {
    /// Pretrained embeddings (SSE1, or tab-separated text with a .tsv extension).
    #[arg(long)]
    pub pretrained: PathBuf,
    #[arg(long)]
    pub subspaces: usize,
    #[arg(long)]
    pub table_size: usize,
    /// Keep cluster sizes within one of each other.
    #[arg(long)]
    pub balanced: bool,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Token pairs sampled for the similarity report.
    #[arg(long, default_value_t = 200_000)]
    pub max_pairs: usize,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Reconstruct {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Only these token ids, in this order.
    #[arg(long, value_delimiter = ',')]
    pub tokens: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct CodebookArg {
    #[arg(long)]
    pub codebook: PathBuf,
}

#[derive(Debug, Args)]
pub struct Stats {
    #[arg(long)]
    pub codebook: PathBuf,
    /// Parameter count of the flat table to compare against; defaults to
    /// vocab_size * embed_dim.
    #[arg(long)]
    pub baseline_params: Option<u64>,
}

#[derive(Debug, Args)]
pub struct Distill {
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long)]
    pub steps: usize,
    #[arg(long)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Tokens per step; at least the vocabulary size means full-batch descent.
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// CSV of the per-step mean squared error.
    #[arg(long)]
    pub history: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradCheck {
    /// vocab_size,embed_dim,subspaces,table_size
    #[arg(long, value_delimiter = ',', required = true)]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}
