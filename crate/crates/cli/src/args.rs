//! Flag definitions. Every flag is optional here; required values are
//! enforced after merging with the config file, so either source can supply
//! them. Flags always win over the file.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mmgibbs",
    version,
    about = "Energy-based models with moment-matched Gaussian Gibbs sampling",
    propagate_version = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Draw a toy 2D dataset (four-mode mixture, two rings, or swiss roll)
    GenerateData(GenerateArgs),
    /// Fit an energy network (dsm) or a posterior network (kl) to a dataset
    Train(TrainArgs),
    /// Run noise/denoise Gibbs chains at one noise level
    Sample(SampleArgs),
    /// Walk chains down a decreasing noise ladder, then denoise
    SampleMultilevel(MultilevelArgs),
    /// Unbiased multi-bandwidth MMD between two sample CSVs
    EvalMmd(MmdArgs),
    /// Dump exact and Gaussian-approximate posterior densities on a grid
    PosteriorGrid(GridArgs),
    /// Check the posterior-moment identities against closed forms and quadrature
    VerifyIdentities(VerifyArgs),
    /// Scatter-plot a sample CSV as a standalone SVG
    Plot(PlotArgs),
}

#[derive(Args)]
pub struct GenerateArgs {
    /// JSON config; flags override individual fields
    #[arg(long, alias = "spec", value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// mog4 | two_rings | swiss_roll
    #[arg(long)]
    pub kind: Option<String>,
    /// Component std (mog4)
    #[arg(long)]
    pub std: Option<f64>,
    /// Inner ring radius (two_rings)
    #[arg(long)]
    pub r1: Option<f64>,
    /// Outer ring radius (two_rings)
    #[arg(long)]
    pub r2: Option<f64>,
    /// Radial jitter std (two_rings, swiss_roll)
    #[arg(long)]
    pub jitter: Option<f64>,
    /// Spiral parameter start (swiss_roll)
    #[arg(long)]
    pub t_min: Option<f64>,
    /// Spiral parameter end (swiss_roll)
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Number of points
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    pub out: Option<String>,
    /// Where the resolved config is echoed (default: parent of --out)
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Training data CSV
    #[arg(long)]
    pub data: Option<String>,
    /// dsm | kl
    #[arg(long)]
    pub objective: Option<String>,
    /// Noise std (single-level training)
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Noise ladder for σ-conditioned dsm training:
    /// geometric:σmax,σmin,K or an explicit comma list
    #[arg(long)]
    pub schedule: Option<String>,
    /// Hidden layer widths, e.g. 400,400,400
    #[arg(long)]
    pub hidden: Option<String>,
    /// Start from this checkpoint instead of random initialization
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps_adam: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output checkpoint path
    #[arg(long)]
    pub out: Option<String>,
    /// Optional per-iteration loss trace CSV
    #[arg(long)]
    pub trace_out: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Args)]
pub struct SampleArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Checkpoint path or analytic:mog
    #[arg(long)]
    pub model: Option<String>,
    /// full | diag:S | iso | learned
    #[arg(long)]
    pub posterior: Option<String>,
    /// Gibbs steps per chain
    #[arg(long)]
    pub steps: Option<usize>,
    /// Independent chains (parallelized, deterministic per chain)
    #[arg(long)]
    pub chains: Option<usize>,
    /// Noise std of the noise/denoise step
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Chains start at init_std · N(0, I)
    #[arg(long)]
    pub init_std: Option<f64>,
    /// Record every thin-th state
    #[arg(long)]
    pub thin: Option<usize>,
    /// Drop recorded states with step ≤ this
    #[arg(long)]
    pub burn_in: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Clean dataset for the iso posterior's variance estimate
    #[arg(long)]
    pub data: Option<String>,
    /// Output CSV path
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Args)]
pub struct MultilevelArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// σ-conditioned checkpoint or analytic:mog
    #[arg(long)]
    pub model: Option<String>,
    /// geometric:σmax,σmin,K or an explicit comma list
    #[arg(long)]
    pub schedule: Option<String>,
    /// Noise/denoise sweeps per level transition
    #[arg(long)]
    pub gibbs_steps: Option<usize>,
    /// Rademacher probes for the diagonal posterior
    #[arg(long)]
    pub rademacher: Option<usize>,
    /// One output sample per chain
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Args)]
pub struct MmdArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// First sample CSV
    #[arg(long)]
    pub a: Option<String>,
    /// Second sample CSV
    #[arg(long)]
    pub b: Option<String>,
    /// Kernel bandwidths, e.g. 0.25,0.5,1,2,4
    #[arg(long)]
    pub bandwidths: Option<String>,
    /// Row label in the output CSV
    #[arg(long)]
    pub label: Option<String>,
    /// Seed recorded in the output CSV for bookkeeping
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Args)]
pub struct GridArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Checkpoint path or analytic:mog
    #[arg(long)]
    pub model: Option<String>,
    /// Noise std the posterior conditions on
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Noisy point x̃ as "x1,x2"
    #[arg(long)]
    pub xtilde: Option<String>,
    /// Grid nodes per axis
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Box lower corner "x1,x2" (default: mean ± 4 std)
    #[arg(long)]
    pub lo: Option<String>,
    /// Box upper corner "x1,x2"
    #[arg(long)]
    pub hi: Option<String>,
    /// Output CSV path
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Args)]
pub struct VerifyArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for the test points
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report path
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Sample CSV to render
    #[arg(long)]
    pub samples: Option<String>,
    /// Output SVG path
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub out_dir: Option<String>,
}
