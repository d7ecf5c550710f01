//! The eight subcommands. Each follows the same shape: merge config file and
//! flags into one fully-explicit resolved config, echo it to the output
//! directory, run, write outputs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use mmgibbs::datasets::{generate, DatasetKind, DatasetSpec, SampleSet};
use mmgibbs::evaluation::{mmd, DEFAULT_BANDWIDTHS};
use mmgibbs::models::{load_checkpoint, save_checkpoint, true_posterior_logpdf, EnergyModel};
use mmgibbs::numgrad::{MlpParams, MlpShape};
use mmgibbs::posterior::{iso_variance, mm_diag_cov_exhaustive, mm_full_cov, mm_mean};
use mmgibbs::sampler::{
    multilevel_gibbs, run_chains, ChainConfig, NoiseSchedule, PosteriorChoice,
};
use mmgibbs::training::{save_trace, train, Objective, TrainConfig};
use mmgibbs::DEFAULT_EPS_CLAMP;

use crate::args;
use crate::errors::CliError;
use crate::model_io::{load_model, LoadedModel, NullEnergy};
use crate::plumbing::{
    echo_cfg, load_cfg, parse_f64_list, parse_levels, parse_pair, parse_usize_list, require,
    resolve_out_dir,
};
use crate::svg;
use crate::verify;

/// RNG stream reserved for one-shot draws outside the chain streams
/// (parameter initialization, iso-variance noising). Chains use streams
/// `0..n_chains`, so this can never collide.
const SIDE_STREAM: u64 = u64::MAX;

// ── generate-data ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateCfg {
    pub spec: DatasetSpec,
    pub out: String,
    pub out_dir: String,
}

impl Default for GenerateCfg {
    fn default() -> Self {
        Self {
            spec: DatasetSpec { kind: DatasetKind::Mog4 { std: 0.2 }, n: 10_000, seed: 0 },
            out: String::new(),
            out_dir: String::new(),
        }
    }
}

fn default_kind(name: &str) -> Result<DatasetKind, CliError> {
    match name {
        "mog4" => Ok(DatasetKind::Mog4 { std: 0.2 }),
        "two_rings" => Ok(DatasetKind::TwoRings { r1: 0.5, r2: 1.0, jitter: 0.025 }),
        "swiss_roll" => Ok(DatasetKind::SwissRoll {
            t_min: 1.5 * std::f64::consts::PI,
            t_max: 4.5 * std::f64::consts::PI,
            jitter: 0.025,
        }),
        other => Err(CliError::Config(format!(
            "unknown dataset kind `{other}` (expected mog4, two_rings or swiss_roll)"
        ))),
    }
}

pub fn run_generate(a: &args::GenerateArgs) -> Result<(), CliError> {
    let mut cfg: GenerateCfg = load_cfg(a.config.as_deref())?;
    if let Some(k) = &a.kind {
        cfg.spec.kind = default_kind(k)?;
    }
    let wrong = |flag: &str, kind: &DatasetKind| {
        CliError::Config(format!("--{flag} does not apply to dataset kind {kind:?}"))
    };
    if let Some(v) = a.std {
        match &mut cfg.spec.kind {
            DatasetKind::Mog4 { std } => *std = v,
            k => return Err(wrong("std", k)),
        }
    }
    if let Some(v) = a.r1 {
        match &mut cfg.spec.kind {
            DatasetKind::TwoRings { r1, .. } => *r1 = v,
            k => return Err(wrong("r1", k)),
        }
    }
    if let Some(v) = a.r2 {
        match &mut cfg.spec.kind {
            DatasetKind::TwoRings { r2, .. } => *r2 = v,
            k => return Err(wrong("r2", k)),
        }
    }
    if let Some(v) = a.jitter {
        match &mut cfg.spec.kind {
            DatasetKind::TwoRings { jitter, .. } | DatasetKind::SwissRoll { jitter, .. } => {
                *jitter = v
            }
            k => return Err(wrong("jitter", k)),
        }
    }
    if let Some(v) = a.t_min {
        match &mut cfg.spec.kind {
            DatasetKind::SwissRoll { t_min, .. } => *t_min = v,
            k => return Err(wrong("t-min", k)),
        }
    }
    if let Some(v) = a.t_max {
        match &mut cfg.spec.kind {
            DatasetKind::SwissRoll { t_max, .. } => *t_max = v,
            k => return Err(wrong("t-max", k)),
        }
    }
    if let Some(v) = a.n {
        cfg.spec.n = v;
    }
    if let Some(v) = a.seed {
        cfg.spec.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    require("out", &cfg.out)?;
    let dir = resolve_out_dir(&mut cfg.out_dir, &cfg.out)?;
    echo_cfg("generate-data", &cfg, &dir)?;

    let set = generate(&cfg.spec)?;
    set.save_csv(&cfg.out)?;
    println!("wrote {} rows × {} cols to {}", set.len(), set.dim(), cfg.out);
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCmdCfg {
    pub train: TrainConfig,
    pub data: String,
    /// Hidden layer widths; ignored (and overwritten in the echo) when
    /// `init` supplies a checkpoint, whose stored shape wins.
    pub hidden: Vec<usize>,
    /// Optional checkpoint to start from instead of random initialization.
    pub init: String,
    pub out: String,
    /// Optional per-iteration loss trace CSV.
    pub trace_out: String,
    pub out_dir: String,
}

impl Default for TrainCmdCfg {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            data: String::new(),
            hidden: vec![400, 400, 400],
            init: String::new(),
            out: String::new(),
            trace_out: String::new(),
            out_dir: String::new(),
        }
    }
}

pub fn run_train(a: &args::TrainArgs) -> Result<(), CliError> {
    let mut cfg: TrainCmdCfg = load_cfg(a.config.as_deref())?;
    if let Some(v) = &a.objective {
        cfg.train.objective = match v.as_str() {
            "dsm" => Objective::Dsm,
            "kl" => Objective::JointKl,
            other => {
                return Err(CliError::Config(format!(
                    "unknown objective `{other}` (expected dsm or kl)"
                )))
            }
        };
    }
    if let Some(v) = a.sigma {
        cfg.train.sigma = v;
    }
    if let Some(v) = &a.schedule {
        cfg.train.sigma_levels = Some(parse_levels(v)?);
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.beta1 {
        cfg.train.beta1 = v;
    }
    if let Some(v) = a.beta2 {
        cfg.train.beta2 = v;
    }
    if let Some(v) = a.eps_adam {
        cfg.train.eps_adam = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = &a.hidden {
        cfg.hidden = parse_usize_list(v, "--hidden")?;
    }
    if let Some(v) = &a.init {
        cfg.init = v.clone();
    }
    if let Some(v) = &a.data {
        cfg.data = v.clone();
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.trace_out {
        cfg.trace_out = v.clone();
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    require("data", &cfg.data)?;
    require("out", &cfg.out)?;
    if cfg.train.objective == Objective::JointKl && cfg.train.sigma_levels.is_some() {
        return Err(CliError::Config(
            "--schedule (multi-level training) applies to the dsm objective only".into(),
        ));
    }

    let data = SampleSet::load_csv(&cfg.data)?;
    let d = data.dim();
    let sigma_conditioned =
        cfg.train.objective == Objective::Dsm && cfg.train.sigma_levels.is_some();
    let (in_dim, out_dim) = match cfg.train.objective {
        Objective::Dsm => (if sigma_conditioned { d + 1 } else { d }, 1),
        Objective::JointKl => (d, 2 * d),
    };

    let params = if cfg.init.is_empty() {
        let shape = MlpShape::new(in_dim, &cfg.hidden, out_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        rng.set_stream(SIDE_STREAM);
        MlpParams::random(&shape, &mut rng)
    } else {
        let (p, ckpt_cond) = load_checkpoint(&cfg.init)?;
        if ckpt_cond != sigma_conditioned {
            return Err(CliError::Config(format!(
                "init checkpoint {} is{} σ-conditioned but this run needs the opposite",
                cfg.init,
                if ckpt_cond { "" } else { " not" }
            )));
        }
        if p.in_dim() != in_dim || p.out_dim() != out_dim {
            return Err(CliError::Config(format!(
                "init checkpoint {} has shape {}→{}, but {} on {}-dimensional data needs {}→{}",
                cfg.init,
                p.in_dim(),
                p.out_dim(),
                if cfg.train.objective == Objective::Dsm { "dsm" } else { "kl" },
                d,
                in_dim,
                out_dim
            )));
        }
        cfg.hidden = p.shape().hidden;
        p
    };

    let dir = resolve_out_dir(&mut cfg.out_dir, &cfg.out)?;
    echo_cfg("train", &cfg, &dir)?;

    let run = train(params, &data, &cfg.train)?;
    if !cfg.trace_out.is_empty() {
        save_trace(&cfg.trace_out, &run.trace)?;
    }
    save_checkpoint(&cfg.out, &run.params, sigma_conditioned)?;

    if let Some(halt) = run.halt {
        return Err(CliError::Numeric(format!(
            "posterior-likelihood training diverged at iteration {} (loss {:.3e} is below the \
             −1e6 guard); last pre-update parameters checkpointed to {}",
            halt.iteration, halt.loss, cfg.out
        )));
    }
    match run.trace.last() {
        Some(last) => println!(
            "trained {} epochs ({} iterations), final loss {:.6}; checkpoint → {}",
            cfg.train.epochs,
            run.trace.len(),
            last.loss,
            cfg.out
        ),
        None => println!("no training iterations ran; initial parameters checkpointed to {}", cfg.out),
    }
    Ok(())
}

// ── sample ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleCfg {
    pub model: String,
    /// full | diag:S | iso | learned
    pub posterior: String,
    pub chain: ChainConfig,
    pub chains: usize,
    /// Drop recorded states with step ≤ burn_in.
    pub burn_in: u32,
    /// Clean dataset used to estimate the shared isotropic variance
    /// (required for --posterior iso, unused otherwise).
    pub data: String,
    pub out: String,
    pub out_dir: String,
}

impl Default for SampleCfg {
    fn default() -> Self {
        Self {
            model: "analytic:mog".into(),
            posterior: "full".into(),
            chain: ChainConfig::default(),
            chains: 1,
            burn_in: 0,
            data: String::new(),
            out: String::new(),
            out_dir: String::new(),
        }
    }
}

enum PosteriorSpec {
    Full,
    Diag(usize),
    Iso,
    Learned,
}

fn parse_posterior(s: &str) -> Result<PosteriorSpec, CliError> {
    match s {
        "full" => Ok(PosteriorSpec::Full),
        "iso" => Ok(PosteriorSpec::Iso),
        "learned" => Ok(PosteriorSpec::Learned),
        "diag" => Ok(PosteriorSpec::Diag(3)),
        other => {
            if let Some(n) = other.strip_prefix("diag:") {
                let probes = n.parse::<usize>().map_err(|_| {
                    CliError::Config(format!("--posterior diag:S needs an integer S, got `{n}`"))
                })?;
                Ok(PosteriorSpec::Diag(probes))
            } else {
                Err(CliError::Config(format!(
                    "unknown posterior `{other}` (expected full, diag:S, iso or learned)"
                )))
            }
        }
    }
}

/// Noise a clean dataset at σ and estimate the x̃-independent variance on it.
fn iso_variance_from_data(
    model: &dyn EnergyModel,
    clean_path: &str,
    sigma: f64,
    seed: u64,
) -> Result<f64, CliError> {
    let clean = SampleSet::load_csv(clean_path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SIDE_STREAM);
    let mut noisy = SampleSet::new(clean.dim());
    let mut buf = vec![0.0; clean.dim()];
    for i in 0..clean.len() {
        for (b, v) in buf.iter_mut().zip(clean.row(i)) {
            *b = v + sigma * rng.sample::<f64, _>(StandardNormal);
        }
        noisy.push(&buf);
    }
    let iso = iso_variance(model, &noisy, sigma)?;
    if iso.clamped {
        eprintln!(
            "mmgibbs: note: isotropic variance estimate fell below the {DEFAULT_EPS_CLAMP:.0e} \
             floor and was clamped"
        );
    }
    Ok(iso.variance)
}

pub fn run_sample(a: &args::SampleArgs) -> Result<(), CliError> {
    let mut cfg: SampleCfg = load_cfg(a.config.as_deref())?;
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.posterior {
        cfg.posterior = v.clone();
    }
    if let Some(v) = a.steps {
        cfg.chain.steps = v;
    }
    if let Some(v) = a.sigma {
        cfg.chain.sigma = v;
    }
    if let Some(v) = a.init_std {
        cfg.chain.init_std = v;
    }
    if let Some(v) = a.thin {
        cfg.chain.thin = v;
    }
    if let Some(v) = a.seed {
        cfg.chain.seed = v;
    }
    if let Some(v) = a.chains {
        cfg.chains = v;
    }
    if let Some(v) = a.burn_in {
        cfg.burn_in = v;
    }
    if let Some(v) = &a.data {
        cfg.data = v.clone();
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    require("out", &cfg.out)?;
    if cfg.burn_in as usize >= cfg.chain.steps {
        return Err(CliError::Config(format!(
            "burn-in {} discards every one of the {} steps",
            cfg.burn_in, cfg.chain.steps
        )));
    }

    let model = load_model(&cfg.model)?;
    let choice = match parse_posterior(&cfg.posterior)? {
        PosteriorSpec::Full => PosteriorChoice::MmFull,
        PosteriorSpec::Diag(probes) => PosteriorChoice::MmDiag { probes },
        PosteriorSpec::Iso => {
            require("data (needed by --posterior iso)", &cfg.data)?;
            let energy = model.as_energy()?;
            let variance =
                iso_variance_from_data(energy, &cfg.data, cfg.chain.sigma, cfg.chain.seed)?;
            println!("isotropic posterior variance: {variance:.6}");
            PosteriorChoice::MmIso { variance }
        }
        PosteriorSpec::Learned => match &model {
            LoadedModel::Posterior(net) => PosteriorChoice::Learned(net.clone()),
            other => {
                return Err(CliError::Capability(format!(
                    "--posterior learned needs a posterior-network checkpoint; {} is {}",
                    cfg.model,
                    other.describe()
                )))
            }
        },
    };
    // A learned posterior drives the whole denoising step itself; hand the
    // sampler an inert stand-in model so no energy is ever queried.
    let null;
    let energy: &dyn EnergyModel = if let PosteriorChoice::Learned(net) = &choice {
        null = NullEnergy { dim: net.dim() };
        &null
    } else {
        model.as_energy()?
    };

    let dir = resolve_out_dir(&mut cfg.out_dir, &cfg.out)?;
    echo_cfg("sample", &cfg, &dir)?;

    let rows = run_chains(energy, &choice, &cfg.chain, cfg.chains)?;
    let rows = if cfg.burn_in == 0 {
        rows
    } else {
        let mut kept = SampleSet::new(rows.dim());
        for i in 0..rows.len() {
            let (chain, step) = rows.meta(i).expect("chain rows are tagged");
            if step > cfg.burn_in {
                kept.push_tagged(rows.row(i), chain, step);
            }
        }
        kept
    };
    rows.save_csv(&cfg.out)?;
    println!(
        "wrote {} rows to {} ({} chains × {} steps, thin {}, burn-in {})",
        rows.len(),
        cfg.out,
        cfg.chains,
        cfg.chain.steps,
        cfg.chain.thin,
        cfg.burn_in
    );
    Ok(())
}

// ── sample-multilevel ────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultilevelCfg {
    pub model: String,
    pub schedule: NoiseSchedule,
    pub chains: usize,
    pub seed: u64,
    pub out: String,
    pub out_dir: String,
}

impl Default for MultilevelCfg {
    fn default() -> Self {
        Self {
            model: "analytic:mog".into(),
            schedule: NoiseSchedule {
                levels: mmgibbs::sampler::geometric(1.0, 0.05, 10).expect("static ladder"),
                gibbs_steps: 3,
                rademacher_probes: 3,
            },
            chains: 100,
            seed: 0,
            out: String::new(),
            out_dir: String::new(),
        }
    }
}

pub fn run_multilevel(a: &args::MultilevelArgs) -> Result<(), CliError> {
    let mut cfg: MultilevelCfg = load_cfg(a.config.as_deref())?;
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = &a.schedule {
        cfg.schedule.levels = parse_levels(v)?;
    }
    if let Some(v) = a.gibbs_steps {
        cfg.schedule.gibbs_steps = v;
    }
    if let Some(v) = a.rademacher {
        cfg.schedule.rademacher_probes = v;
    }
    if let Some(v) = a.chains {
        cfg.chains = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    require("out", &cfg.out)?;

    let model = load_model(&cfg.model)?;
    let energy = model.as_energy()?;
    if let LoadedModel::Energy(_) = &model {
        return Err(CliError::Capability(format!(
            "{} is fixed to a single noise level; multi-level sampling needs a σ-conditioned \
             energy checkpoint or analytic:mog",
            cfg.model
        )));
    }

    let dir = resolve_out_dir(&mut cfg.out_dir, &cfg.out)?;
    echo_cfg("sample-multilevel", &cfg, &dir)?;

    let rows = multilevel_gibbs(energy, &cfg.schedule, cfg.chains, cfg.seed)?;
    rows.save_csv(&cfg.out)?;
    println!(
        "wrote {} rows to {} ({} levels {}→{}, {} sweeps each, {} probes)",
        rows.len(),
        cfg.out,
        cfg.schedule.levels.len(),
        cfg.schedule.levels[0],
        cfg.schedule.levels[cfg.schedule.levels.len() - 1],
        cfg.schedule.gibbs_steps,
        cfg.schedule.rademacher_probes
    );
    Ok(())
}

// ── eval-mmd ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MmdCfg {
    pub a: String,
    pub b: String,
    pub bandwidths: Vec<f64>,
    /// Free-text row label copied into the output CSV.
    pub label: String,
    /// Seed recorded in the output CSV for bookkeeping (this command draws no
    /// random numbers itself).
    pub seed: u64,
    pub out: String,
    pub out_dir: String,
}

impl Default for MmdCfg {
    fn default() -> Self {
        Self {
            a: String::new(),
            b: String::new(),
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
            label: "mmd".into(),
            seed: 0,
            out: String::new(),
            out_dir: String::new(),
        }
    }
}

pub fn run_mmd(a: &args::MmdArgs) -> Result<(), CliError> {
    let mut cfg: MmdCfg = load_cfg(a.config.as_deref())?;
    if let Some(v) = &a.a {
        cfg.a = v.clone();
    }
    if let Some(v) = &a.b {
        cfg.b = v.clone();
    }
    if let Some(v) = &a.bandwidths {
        cfg.bandwidths = parse_f64_list(v, "--bandwidths")?;
    }
    if let Some(v) = &a.label {
        cfg.label = v.clone();
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    require("a", &cfg.a)?;
    require("b", &cfg.b)?;
    require("out", &cfg.out)?;
    let dir = resolve_out_dir(&mut cfg.out_dir, &cfg.out)?;
    echo_cfg("eval-mmd", &cfg, &dir)?;

    let set_a = SampleSet::load_csv(&cfg.a)?;
    let set_b = SampleSet::load_csv(&cfg.b)?;
    let report = mmd(&set_a, &set_b, &cfg.bandwidths)?;
    let mut text = report.csv_header();
    text.push('\n');
    text.push_str(&report.csv_row(&cfg.label, cfg.seed));
    text.push('\n');
    std::fs::write(&cfg.out, text)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", cfg.out)))?;
    println!(
        "mmd² = {:.6e}, mmd = {:.6} (n_a = {}, n_b = {}) → {}",
        report.mmd2,
        report.mmd(),
        report.n_a,
        report.n_b,
        cfg.out
    );
    Ok(())
}

// ── posterior-grid ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridCfg {
    pub model: String,
    pub sigma: f64,
    pub xtilde: Vec<f64>,
    /// Nodes per axis; the dump has nodes² rows.
    pub nodes: usize,
    /// Evaluation box; when absent it is centered on the posterior mean with
    /// a 4-standard-deviation half-width, and the echo records the result.
    pub lo: Option<[f64; 2]>,
    pub hi: Option<[f64; 2]>,
    pub out: String,
    pub out_dir: String,
}

impl Default for GridCfg {
    fn default() -> Self {
        Self {
            model: "analytic:mog".into(),
            sigma: 0.2,
            xtilde: vec![0.0, 0.0],
            nodes: 61,
            lo: None,
            hi: None,
            out: String::new(),
            out_dir: String::new(),
        }
    }
}

/// log N(x; mean, Σ) for a row-major 2×2 covariance.
fn logpdf_full2(x: &[f64], mean: &[f64], cov: &[f64]) -> Result<f64, CliError> {
    let det = cov[0] * cov[3] - cov[1] * cov[2];
    if !(det > 0.0) {
        return Err(CliError::Numeric(format!(
            "grid covariance is not positive definite (det = {det})"
        )));
    }
    let dx = [x[0] - mean[0], x[1] - mean[1]];
    let quad = (cov[3] * dx[0] * dx[0] - (cov[1] + cov[2]) * dx[0] * dx[1]
        + cov[0] * dx[1] * dx[1])
        / det;
    Ok(-(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad)
}

pub fn run_grid(a: &args::GridArgs) -> Result<(), CliError> {
    let mut cfg: GridCfg = load_cfg(a.config.as_deref())?;
    if let Some(v) = &a.model {
        cfg.model = v.clone();
    }
    if let Some(v) = a.sigma {
        cfg.sigma = v;
    }
    if let Some(v) = &a.xtilde {
        cfg.xtilde = parse_pair(v, "--xtilde")?.to_vec();
    }
    if let Some(v) = a.nodes {
        cfg.nodes = v;
    }
    if let Some(v) = &a.lo {
        cfg.lo = Some(parse_pair(v, "--lo")?);
    }
    if let Some(v) = &a.hi {
        cfg.hi = Some(parse_pair(v, "--hi")?);
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    require("out", &cfg.out)?;
    if cfg.nodes < 2 {
        return Err(CliError::Config("--nodes must be at least 2".into()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(CliError::Config(format!("--sigma must be positive, got {}", cfg.sigma)));
    }
    let model = load_model(&cfg.model)?;
    let energy = model.as_energy()?;
    if energy.dim() != 2 {
        return Err(CliError::Config(format!(
            "posterior-grid renders 2-dimensional posteriors; model is {}d",
            energy.dim()
        )));
    }
    if cfg.xtilde.len() != 2 {
        return Err(CliError::Config(format!(
            "--xtilde needs exactly two coordinates, got {}",
            cfg.xtilde.len()
        )));
    }

    let mean = mm_mean(energy, &cfg.xtilde, cfg.sigma);
    let full = mm_full_cov(energy, &cfg.xtilde, cfg.sigma)?;
    let diag = mm_diag_cov_exhaustive(energy, &cfg.xtilde, cfg.sigma, DEFAULT_EPS_CLAMP);
    if cfg.lo.is_none() || cfg.hi.is_none() {
        let half = 4.0 * full.cov[0].max(full.cov[3]).sqrt();
        cfg.lo = Some([mean[0] - half, mean[1] - half]);
        cfg.hi = Some([mean[0] + half, mean[1] + half]);
    }
    let (lo, hi) = (cfg.lo.unwrap(), cfg.hi.unwrap());
    for i in 0..2 {
        if !(hi[i] > lo[i]) {
            return Err(CliError::Config(format!(
                "grid box is empty on axis {}: lo {} hi {}",
                i + 1,
                lo[i],
                hi[i]
            )));
        }
    }
    let dir = resolve_out_dir(&mut cfg.out_dir, &cfg.out)?;
    echo_cfg("posterior-grid", &cfg, &dir)?;

    let analytic = match &model {
        LoadedModel::Analytic(m) => Some(m),
        _ => None,
    };
    let mut text = String::from("x1,x2,gauss_full,gauss_diag");
    if analytic.is_some() {
        text.push_str(",exact");
    }
    text.push('\n');
    let n = cfg.nodes;
    for i in 0..n {
        let x1 = lo[0] + (hi[0] - lo[0]) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let x2 = lo[1] + (hi[1] - lo[1]) * j as f64 / (n - 1) as f64;
            let x = [x1, x2];
            let g_full = logpdf_full2(&x, &mean, &full.cov)?.exp();
            let g_diag = (-(2.0 * std::f64::consts::PI).ln()
                - 0.5 * (diag[0] * diag[1]).ln()
                - 0.5 * ((x1 - mean[0]).powi(2) / diag[0] + (x2 - mean[1]).powi(2) / diag[1]))
                .exp();
            let _ = write!(text, "{x1},{x2},{g_full},{g_diag}");
            if let Some(mog) = analytic {
                let exact = true_posterior_logpdf(mog, cfg.sigma, &cfg.xtilde, &x).exp();
                let _ = write!(text, ",{exact}");
            }
            text.push('\n');
        }
    }
    std::fs::write(&cfg.out, text)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", cfg.out)))?;
    println!(
        "wrote {}×{} grid over [{:.3},{:.3}]×[{:.3},{:.3}] to {}",
        n, n, lo[0], hi[0], lo[1], hi[1], cfg.out
    );
    Ok(())
}

// ── verify-identities ────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyCfg {
    pub seed: u64,
    pub out: String,
    pub out_dir: String,
}

impl Default for VerifyCfg {
    fn default() -> Self {
        Self { seed: 0, out: "verify-report.txt".into(), out_dir: String::new() }
    }
}

pub fn run_verify(a: &args::VerifyArgs) -> Result<(), CliError> {
    let mut cfg: VerifyCfg = load_cfg(a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    require("out", &cfg.out)?;
    let dir = resolve_out_dir(&mut cfg.out_dir, &cfg.out)?;
    echo_cfg("verify-identities", &cfg, &dir)?;

    let lines = verify::run_checks(cfg.seed)?;
    let report = verify::render_report(&lines);
    print!("{report}");
    std::fs::write(&cfg.out, &report)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", cfg.out)))?;
    let failed = lines.iter().filter(|l| !l.passed()).count();
    if failed > 0 {
        return Err(CliError::Numeric(format!(
            "{failed} identity check(s) failed; report written to {}",
            cfg.out
        )));
    }
    Ok(())
}

// ── plot ─────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlotCfg {
    pub samples: String,
    pub out: String,
    pub out_dir: String,
}

pub fn run_plot(a: &args::PlotArgs) -> Result<(), CliError> {
    let mut cfg: PlotCfg = load_cfg(a.config.as_deref())?;
    if let Some(v) = &a.samples {
        cfg.samples = v.clone();
    }
    if let Some(v) = &a.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &a.out_dir {
        cfg.out_dir = v.clone();
    }
    require("samples", &cfg.samples)?;
    require("out", &cfg.out)?;
    let dir = resolve_out_dir(&mut cfg.out_dir, &cfg.out)?;
    echo_cfg("plot", &cfg, &dir)?;

    let set = SampleSet::load_csv(&cfg.samples)?;
    let text = svg::scatter(&set)?;
    std::fs::write(&cfg.out, text)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", cfg.out)))?;
    println!("plotted {} rows → {}", set.len(), cfg.out);
    Ok(())
}
