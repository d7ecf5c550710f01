//! Pseudo-Gibbs sampling: alternate "noise up" `x̃ = x + σ·ε` with a draw
//! from a Gaussian approximation of the denoising posterior `p(x | x̃)`.
//!
//! With the exact posterior this is a Gibbs sweep on the joint `(x, x̃)` and
//! leaves the clean density invariant; with the moment-matched or learned
//! approximations it is only approximately stationary, which is the regime
//! of interest here.
//!
//! Chains are reproducible: chain `c` of a run seeds `ChaCha8Rng` with the
//! configured seed and selects stream `c`, and every step consumes draws in
//! a fixed order (noise-up normals, probe signs if any, posterior normals).

use crate::datasets::SampleSet;
use crate::models::{EnergyModel, PosteriorNet};
use crate::posterior::{
    self, ApproxKind, Covariance, GaussianApprox, PosteriorError,
};
use crate::DEFAULT_EPS_CLAMP;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error(transparent)]
    Posterior(#[from] PosteriorError),
    #[error("chain {chain} produced a non-finite state at step {step}")]
    NonFiniteState { chain: u32, step: usize },
    #[error("bad noise schedule: {0}")]
    BadSchedule(String),
    #[error("bad chain config: {0}")]
    BadConfig(String),
}

/// Which posterior approximation each denoising draw uses.
#[derive(Debug, Clone)]
pub enum PosteriorChoice {
    /// Full covariance from the exact model Hessian.
    MmFull,
    /// Diagonal covariance from `probes` Rademacher Hessian probes.
    MmDiag { probes: usize },
    /// Shared scalar variance, precomputed once (see `posterior::iso_variance`).
    MmIso { variance: f64 },
    /// Trained mean/log-std network.
    Learned(PosteriorNet),
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainConfig {
    pub steps: usize,
    pub sigma: f64,
    /// Chains start at `init_std · z`, `z ~ N(0, I)`.
    pub init_std: f64,
    /// Record every `thin`-th state; the initial state is never recorded,
    /// so a run yields `steps / thin` rows.
    pub thin: usize,
    pub seed: u64,
    pub eps_clamp: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            sigma: 0.2,
            init_std: 0.1f64.sqrt(),
            thin: 1,
            seed: 0,
            eps_clamp: DEFAULT_EPS_CLAMP,
        }
    }
}

/// One noise-up / denoise sweep at a single level.
pub fn gibbs_step<R: Rng>(
    model: &dyn EnergyModel,
    choice: &PosteriorChoice,
    x: &[f64],
    sigma: f64,
    eps_clamp: f64,
    rng: &mut R,
) -> Result<Vec<f64>, SamplerError> {
    gibbs_step_rel(model, choice, x, sigma, sigma, eps_clamp, rng)
}

/// Sweep between two noise levels: noise up by `sigma_noise`, evaluate the
/// model at `sigma_model`, use `sigma_noise` in the posterior formulas.
/// Annealing from σ_hi to σ_lo passes `(σ_hi, √(σ_hi²−σ_lo²))`.
pub fn gibbs_step_rel<R: Rng>(
    model: &dyn EnergyModel,
    choice: &PosteriorChoice,
    x: &[f64],
    sigma_model: f64,
    sigma_noise: f64,
    eps_clamp: f64,
    rng: &mut R,
) -> Result<Vec<f64>, SamplerError> {
    let d = x.len();
    let mut noisy = vec![0.0; d];
    for (n, xi) in noisy.iter_mut().zip(x) {
        *n = xi + sigma_noise * rng.sample::<f64, _>(StandardNormal);
    }
    let approx = match choice {
        PosteriorChoice::MmFull => {
            let mean = posterior::mm_mean_rel(model, &noisy, sigma_model, sigma_noise);
            let rc = posterior::mm_full_cov_rel(model, &noisy, sigma_model, sigma_noise)?;
            GaussianApprox { mean, cov: Covariance::Full(rc.cov), kind: ApproxKind::MmFull }
        }
        PosteriorChoice::MmDiag { probes } => {
            let diag = posterior::mm_diag_cov_rel(
                model,
                &noisy,
                sigma_model,
                sigma_noise,
                *probes,
                eps_clamp,
                rng,
            );
            let mean = posterior::mm_mean_rel(model, &noisy, sigma_model, sigma_noise);
            GaussianApprox { mean, cov: Covariance::Diagonal(diag), kind: ApproxKind::MmDiag }
        }
        PosteriorChoice::MmIso { variance } => {
            let mean = posterior::mm_mean_rel(model, &noisy, sigma_model, sigma_noise);
            GaussianApprox { mean, cov: Covariance::Isotropic(*variance), kind: ApproxKind::MmIso }
        }
        PosteriorChoice::Learned(net) => posterior::learned_posterior(net, &noisy),
    };
    Ok(posterior::sample_gaussian(&approx, rng)?)
}

fn chain_rows(
    model: &dyn EnergyModel,
    choice: &PosteriorChoice,
    cfg: &ChainConfig,
    chain: u32,
) -> Result<SampleSet, SamplerError> {
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(chain as u64);
    let mut x = vec![0.0; d];
    for xi in x.iter_mut() {
        *xi = cfg.init_std * rng.sample::<f64, _>(StandardNormal);
    }
    let mut out = SampleSet::new(d);
    for k in 1..=cfg.steps {
        x = gibbs_step(model, choice, &x, cfg.sigma, cfg.eps_clamp, &mut rng)?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(SamplerError::NonFiniteState { chain, step: k });
        }
        if k % cfg.thin == 0 {
            out.push_tagged(&x, chain, k as u32);
        }
    }
    Ok(out)
}

fn validate_chain_config(cfg: &ChainConfig) -> Result<(), SamplerError> {
    if cfg.thin == 0 {
        return Err(SamplerError::BadConfig("thin must be at least 1".into()));
    }
    if !(cfg.sigma > 0.0) {
        return Err(SamplerError::BadConfig("sigma must be positive".into()));
    }
    if !(cfg.init_std >= 0.0) {
        return Err(SamplerError::BadConfig("init_std must be nonnegative".into()));
    }
    Ok(())
}

fn validate_choice(choice: &PosteriorChoice, model_dim: usize) -> Result<(), SamplerError> {
    match choice {
        PosteriorChoice::MmDiag { probes: 0 } => {
            Err(SamplerError::BadConfig("diagonal posterior needs at least one probe".into()))
        }
        PosteriorChoice::MmIso { variance } if !(*variance > 0.0) => {
            Err(SamplerError::BadConfig("isotropic variance must be positive".into()))
        }
        PosteriorChoice::Learned(net) if net.dim() != model_dim => Err(SamplerError::BadConfig(
            format!("posterior net dimension {} != model dimension {model_dim}", net.dim()),
        )),
        _ => Ok(()),
    }
}

/// Run one chain (stream 0). States `x_k` for `k % thin == 0`, `k ≥ 1`.
pub fn run_chain(
    model: &dyn EnergyModel,
    choice: &PosteriorChoice,
    cfg: &ChainConfig,
) -> Result<SampleSet, SamplerError> {
    validate_chain_config(cfg)?;
    validate_choice(choice, model.dim())?;
    chain_rows(model, choice, cfg, 0)
}

/// Run independent chains on streams `0..n_chains` in parallel and
/// concatenate their rows chain-major. Row metadata is `(chain, step)`.
pub fn run_chains(
    model: &dyn EnergyModel,
    choice: &PosteriorChoice,
    cfg: &ChainConfig,
    n_chains: usize,
) -> Result<SampleSet, SamplerError> {
    validate_chain_config(cfg)?;
    validate_choice(choice, model.dim())?;
    if n_chains == 0 {
        return Err(SamplerError::BadConfig("need at least one chain".into()));
    }
    let parts: Result<Vec<SampleSet>, SamplerError> = (0..n_chains as u32)
        .into_par_iter()
        .map(|c| chain_rows(model, choice, cfg, c))
        .collect();
    let parts = parts?;
    let mut out = SampleSet::new(model.dim());
    for p in &parts {
        out.extend(p);
    }
    Ok(out)
}

/// Descending noise levels with per-phase sweep and probe counts.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    /// Strictly decreasing, all positive; the chain starts at `levels[0]`
    /// and is denoised down to `levels[last]`.
    pub levels: Vec<f64>,
    /// Full noise-up/denoise sweeps per level transition.
    #[serde(default = "default_gibbs_steps")]
    pub gibbs_steps: usize,
    /// Rademacher probes for the diagonal posterior used between levels.
    #[serde(default = "default_gibbs_steps")]
    pub rademacher_probes: usize,
}

fn default_gibbs_steps() -> usize {
    3
}

impl NoiseSchedule {
    pub fn new(levels: Vec<f64>) -> Result<Self, SamplerError> {
        let s = Self { levels, gibbs_steps: 3, rademacher_probes: 3 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.levels.is_empty() {
            return Err(SamplerError::BadSchedule("no noise levels".into()));
        }
        for l in &self.levels {
            if !(*l > 0.0) || !l.is_finite() {
                return Err(SamplerError::BadSchedule(format!("level {l} is not positive")));
            }
        }
        for w in self.levels.windows(2) {
            if !(w[1] < w[0]) {
                return Err(SamplerError::BadSchedule(format!(
                    "levels must strictly decrease, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.gibbs_steps == 0 {
            return Err(SamplerError::BadSchedule("gibbs_steps must be at least 1".into()));
        }
        if self.rademacher_probes == 0 {
            return Err(SamplerError::BadSchedule("rademacher_probes must be at least 1".into()));
        }
        Ok(())
    }
}

/// Geometric ladder from `sigma_max` down to `sigma_min` with `count` levels.
pub fn geometric(sigma_max: f64, sigma_min: f64, count: usize) -> Result<Vec<f64>, SamplerError> {
    if count < 2 {
        return Err(SamplerError::BadSchedule("geometric ladder needs at least two levels".into()));
    }
    if !(sigma_min > 0.0) || !(sigma_max > sigma_min) {
        return Err(SamplerError::BadSchedule(format!(
            "need sigma_max > sigma_min > 0, got {sigma_max} and {sigma_min}"
        )));
    }
    let ratio = sigma_min / sigma_max;
    let mut levels: Vec<f64> = (0..count)
        .map(|i| sigma_max * ratio.powf(i as f64 / (count - 1) as f64))
        .collect();
    levels[0] = sigma_max;
    levels[count - 1] = sigma_min;
    Ok(levels)
}

/// Annealed sampling: start chains at `N(0, levels[0]²·I)`, run `gibbs_steps`
/// sweeps for each adjacent level pair `(σ_hi, σ_lo)` — model at `σ_hi`,
/// relative noise `√(σ_hi²−σ_lo²)`, diagonal posterior — then denoise once
/// with the posterior mean at the final level. One output row per chain.
///
/// A single-level schedule degenerates to `gibbs_steps` plain sweeps at that
/// level followed by the same final denoise.
pub fn multilevel_gibbs(
    model: &dyn EnergyModel,
    schedule: &NoiseSchedule,
    n_chains: usize,
    seed: u64,
) -> Result<SampleSet, SamplerError> {
    schedule.validate()?;
    if n_chains == 0 {
        return Err(SamplerError::BadConfig("need at least one chain".into()));
    }
    let d = model.dim();
    let choice = PosteriorChoice::MmDiag { probes: schedule.rademacher_probes };
    let sigma_top = schedule.levels[0];
    let sigma_final = *schedule.levels.last().unwrap();
    let rows: Result<Vec<(Vec<f64>, u32)>, SamplerError> = (0..n_chains as u32)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let mut x = vec![0.0; d];
            for xi in x.iter_mut() {
                *xi = sigma_top * rng.sample::<f64, _>(StandardNormal);
            }
            let mut sweep = 0usize;
            let run_phase = |x: Vec<f64>,
                                 sigma_model: f64,
                                 sigma_noise: f64,
                                 sweep: &mut usize,
                                 rng: &mut ChaCha8Rng|
             -> Result<Vec<f64>, SamplerError> {
                let mut x = x;
                for _ in 0..schedule.gibbs_steps {
                    x = gibbs_step_rel(
                        model,
                        &choice,
                        &x,
                        sigma_model,
                        sigma_noise,
                        DEFAULT_EPS_CLAMP,
                        rng,
                    )?;
                    *sweep += 1;
                    if !x.iter().all(|v| v.is_finite()) {
                        return Err(SamplerError::NonFiniteState { chain: c, step: *sweep });
                    }
                }
                Ok(x)
            };
            if schedule.levels.len() == 1 {
                x = run_phase(x, sigma_final, sigma_final, &mut sweep, &mut rng)?;
            } else {
                for w in schedule.levels.windows(2) {
                    let (hi, lo) = (w[0], w[1]);
                    let rel = (hi * hi - lo * lo).sqrt();
                    x = run_phase(x, hi, rel, &mut sweep, &mut rng)?;
                }
            }
            let clean = posterior::mm_mean(model, &x, sigma_final);
            if !clean.iter().all(|v| v.is_finite()) {
                return Err(SamplerError::NonFiniteState { chain: c, step: sweep + 1 });
            }
            Ok((clean, sweep as u32))
        })
        .collect();
    let mut out = SampleSet::new(d);
    for (c, (row, sweeps)) in rows?.into_iter().enumerate() {
        out.push_tagged(&row, c as u32, sweeps);
    }
    Ok(out)
}
