//! Minibatch training for the two objectives: the denoising score-matching
//! energy loss and the diagonal-Gaussian posterior likelihood baseline.
//!
//! Reproducibility contract: all randomness (shuffling, noise, level picks)
//! comes from one `ChaCha8` stream seeded by the config, and the per-batch
//! gradient reduction runs over a fixed number of index chunks summed in a
//! fixed order — results are bit-identical for a given seed regardless of
//! how many worker threads rayon uses.

use crate::datasets::SampleSet;
use crate::numgrad::{self, MlpParams, NumgradError, Workspace};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::io::Write as _;
use std::path::Path;
use thiserror::Error;

/// Chunk count for the deterministic minibatch reduction (not tied to the
/// thread count on purpose).
const REDUCE_CHUNKS: usize = 8;

/// Negative-loss threshold below which posterior-likelihood training is
/// declared divergent (the objective is unbounded below on manifold-like
/// data, so the loop halts gracefully instead of overflowing).
pub const KL_DIVERGENCE_FLOOR: f64 = -1e6;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training batch is empty")]
    EmptyBatch,
    #[error("dataset has {n} points, need at least the batch size {batch}")]
    DataTooSmall { n: usize, batch: usize },
    #[error("network {net_in}->{net_out} does not fit {data}-dimensional data for this objective")]
    ShapeMismatch { net_in: usize, net_out: usize, data: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numgrad(#[from] NumgradError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Score matching on noised data: ½‖(x̃−x)/σ² + s_θ(x̃)‖².
    Dsm,
    /// Diagonal-Gaussian posterior likelihood: −log q_θ(x | x̃).
    JointKl,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    /// Noise std for single-level training.
    pub sigma: f64,
    /// When set, each minibatch draws one level uniformly from this list,
    /// feeds `ln σ` as an extra input, and weights the loss by σ².
    pub sigma_levels: Option<Vec<f64>>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Dsm,
            sigma: 0.2,
            sigma_levels: None,
            epochs: 100,
            batch_size: 100,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps_adam: 1e-8,
            seed: 0,
        }
    }
}

/// Bias-corrected Adam moments, shaped like the parameters they update.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: MlpParams,
    v: MlpParams,
    t: u64,
}

impl AdamState {
    pub fn new(like: &MlpParams) -> Self {
        Self { m: like.zeros_like(), v: like.zeros_like(), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        params: &mut MlpParams,
        grads: &MlpParams,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for l in 0..params.layers.len() {
            let pl = &mut params.layers[l];
            let ml = &mut self.m.layers[l];
            let vl = &mut self.v.layers[l];
            let gl = &grads.layers[l];
            let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            };
            for i in 0..pl.w.len() {
                update(&mut pl.w[i], &mut ml.w[i], &mut vl.w[i], gl.w[i]);
            }
            for i in 0..pl.b.len() {
                update(&mut pl.b[i], &mut ml.b[i], &mut vl.b[i], gl.b[i]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub epoch: usize,
    pub loss: f64,
}

/// Why training stopped before the configured epoch count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceHalt {
    pub iteration: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: MlpParams,
    pub trace: Vec<TraceRow>,
    /// Set when the posterior-likelihood guard fired; `params` then hold the
    /// last pre-update state so they can still be checkpointed.
    pub halt: Option<DivergenceHalt>,
}

/// Shared batch-gradient pipeline: noise is drawn sequentially up front, the
/// per-sample terms are then reduced over `REDUCE_CHUNKS` fixed index chunks.
fn batch_terms<F>(n: usize, params: &MlpParams, per_sample: F) -> Result<(f64, MlpParams), TrainError>
where
    F: Fn(usize, &mut MlpParams, &mut Workspace) -> Result<f64, NumgradError> + Sync,
{
    let chunk = n.div_ceil(REDUCE_CHUNKS);
    let parts: Vec<(f64, MlpParams)> = (0..REDUCE_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let lo = (c * chunk).min(n);
            let hi = ((c + 1) * chunk).min(n);
            let mut grads = params.zeros_like();
            let mut ws = Workspace::for_params(params);
            let mut loss = 0.0;
            for i in lo..hi {
                loss += per_sample(i, &mut grads, &mut ws)?;
            }
            Ok((loss, grads))
        })
        .collect::<Result<_, NumgradError>>()?;
    let mut loss = 0.0;
    let mut grads = params.zeros_like();
    for (l, g) in parts {
        loss += l;
        grads.add_scaled(&g, 1.0);
    }
    Ok((loss, grads))
}

fn draw_noisy<R: Rng>(batch: &[&[f64]], sigma: f64, rng: &mut R) -> Vec<Vec<f64>> {
    batch
        .iter()
        .map(|x| {
            x.iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// One DSM minibatch at a single noise level: fresh noise per call, loss and
/// gradients averaged over the batch.
pub fn dsm_minibatch_loss<R: Rng>(
    params: &MlpParams,
    batch: &[&[f64]],
    sigma: f64,
    rng: &mut R,
) -> Result<(f64, MlpParams), TrainError> {
    dsm_minibatch_weighted(params, batch, sigma, &[], 1.0, rng)
}

/// DSM minibatch with conditioning inputs and a loss weight (used for
/// noise-level-conditioned training, weight σ² per level).
pub fn dsm_minibatch_weighted<R: Rng>(
    params: &MlpParams,
    batch: &[&[f64]],
    sigma: f64,
    extra: &[f64],
    weight: f64,
    rng: &mut R,
) -> Result<(f64, MlpParams), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let noisy = draw_noisy(batch, sigma, rng);
    let scale = weight / batch.len() as f64;
    batch_terms(batch.len(), params, |i, grads, ws| {
        numgrad::accumulate_dsm_term(params, batch[i], &noisy[i], extra, sigma, scale, grads, ws)
    })
}

/// One posterior-likelihood minibatch: noise the batch, then average the
/// negative log-likelihood of the clean points under the net's Gaussian.
pub fn kl_minibatch_loss<R: Rng>(
    params: &MlpParams,
    batch: &[&[f64]],
    sigma: f64,
    rng: &mut R,
) -> Result<(f64, MlpParams), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let noisy = draw_noisy(batch, sigma, rng);
    let scale = 1.0 / batch.len() as f64;
    batch_terms(batch.len(), params, |i, grads, ws| {
        numgrad::accumulate_gaussian_nll(params, &noisy[i], batch[i], scale, grads, ws)
    })
}

fn validate(params: &MlpParams, data: &SampleSet, cfg: &TrainConfig) -> Result<(), TrainError> {
    if cfg.batch_size == 0 {
        return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(TrainError::BadConfig("learning_rate must be > 0".into()));
    }
    match &cfg.sigma_levels {
        None => {
            if !(cfg.sigma > 0.0) {
                return Err(TrainError::BadConfig("sigma must be > 0".into()));
            }
        }
        Some(levels) => {
            if cfg.objective != Objective::Dsm {
                return Err(TrainError::BadConfig(
                    "noise-level schedules only apply to DSM training".into(),
                ));
            }
            if levels.is_empty() || levels.iter().any(|s| !(*s > 0.0)) {
                return Err(TrainError::BadConfig("sigma levels must be positive".into()));
            }
        }
    }
    if data.len() < cfg.batch_size {
        return Err(TrainError::DataTooSmall { n: data.len(), batch: cfg.batch_size });
    }
    let d = data.dim();
    let want_in = match (cfg.objective, &cfg.sigma_levels) {
        (Objective::Dsm, Some(_)) => d + 1,
        _ => d,
    };
    let want_out = match cfg.objective {
        Objective::Dsm => 1,
        Objective::JointKl => 2 * d,
    };
    if params.in_dim() != want_in || params.out_dim() != want_out {
        return Err(TrainError::ShapeMismatch {
            net_in: params.in_dim(),
            net_out: params.out_dim(),
            data: d,
        });
    }
    Ok(())
}

/// Full training loop: per-epoch shuffling, `⌈N/B⌉` Adam steps per epoch,
/// per-iteration loss trace. Aborts on a non-finite loss; halts gracefully
/// (returning the current parameters) if posterior-likelihood training drops
/// below [`KL_DIVERGENCE_FLOOR`].
pub fn train(
    params: MlpParams,
    data: &SampleSet,
    cfg: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    validate(&params, data, cfg)?;
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = Vec::new();
    let mut indices: Vec<usize> = (0..data.len()).collect();
    let mut iteration = 0usize;

    for epoch in 1..=cfg.epochs {
        indices.shuffle(&mut rng);
        for ids in indices.chunks(cfg.batch_size) {
            iteration += 1;
            let batch: Vec<&[f64]> = ids.iter().map(|&i| data.row(i)).collect();
            let (loss, grads) = match (cfg.objective, &cfg.sigma_levels) {
                (Objective::Dsm, None) => {
                    dsm_minibatch_loss(&params, &batch, cfg.sigma, &mut rng)?
                }
                (Objective::Dsm, Some(levels)) => {
                    let sigma = levels[rng.random_range(0..levels.len())];
                    let extra = [sigma.ln()];
                    dsm_minibatch_weighted(
                        &params,
                        &batch,
                        sigma,
                        &extra,
                        sigma * sigma,
                        &mut rng,
                    )?
                }
                (Objective::JointKl, _) => {
                    kl_minibatch_loss(&params, &batch, cfg.sigma, &mut rng)?
                }
            };
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss { iteration });
            }
            trace.push(TraceRow { iteration, epoch, loss });
            if cfg.objective == Objective::JointKl && loss < KL_DIVERGENCE_FLOOR {
                return Ok(TrainRun {
                    params,
                    trace,
                    halt: Some(DivergenceHalt { iteration, loss }),
                });
            }
            adam.step(&mut params, &grads, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps_adam);
        }
    }
    Ok(TrainRun { params, trace, halt: None })
}

/// Loss trace as CSV with columns `iteration,epoch,loss`.
pub fn save_trace<P: AsRef<Path>>(path: P, trace: &[TraceRow]) -> Result<(), TrainError> {
    let to_io = |source: std::io::Error| TrainError::Io {
        path: path.as_ref().display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path.as_ref()).map_err(to_io)?;
    let mut buf = String::from("iteration,epoch,loss\n");
    for row in trace {
        buf.push_str(&format!("{},{},{}\n", row.iteration, row.epoch, row.loss));
    }
    f.write_all(buf.as_bytes()).map_err(to_io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianMixture;
    use crate::numgrad::MlpShape;

    fn mog_data(n: usize, seed: u64) -> SampleSet {
        let mog = GaussianMixture::four_corners();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = SampleSet::new(2);
        for _ in 0..n {
            set.push(&mog.sample(&mut rng));
        }
        set
    }

    #[test]
    fn adam_matches_hand_computed_two_step_trace() {
        // One 1->1 layer: a weight w=0.5 and a bias b=0.1, lr 0.1.
        let mut params = MlpParams::zeros(&MlpShape::new(1, &[], 1));
        params.layers[0].w[0] = 0.5;
        params.layers[0].b[0] = 0.1;
        let mut grads = params.zeros_like();
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut adam = AdamState::new(&params);

        // Straight-line recomputation of the textbook update, kept separate
        // from the implementation on purpose.
        let reference = |p0: f64, gs: &[f64]| -> f64 {
            let (mut p, mut m, mut v) = (p0, 0.0, 0.0);
            for (k, &g) in gs.iter().enumerate() {
                let t = (k + 1) as i32;
                m = b1 * m + (1.0 - b1) * g;
                v = b2 * v + (1.0 - b2) * g * g;
                let mh = m / (1.0 - b1.powi(t));
                let vh = v / (1.0 - b2.powi(t));
                p -= lr * mh / (vh.sqrt() + eps);
            }
            p
        };

        grads.layers[0].w[0] = 0.3;
        grads.layers[0].b[0] = -0.2;
        adam.step(&mut params, &grads, lr, b1, b2, eps);
        grads.layers[0].w[0] = -0.1;
        grads.layers[0].b[0] = 0.05;
        adam.step(&mut params, &grads, lr, b1, b2, eps);

        assert!((params.layers[0].w[0] - reference(0.5, &[0.3, -0.1])).abs() < 1e-12);
        assert!((params.layers[0].b[0] - reference(0.1, &[-0.2, 0.05])).abs() < 1e-12);
        assert_eq!(adam.step_count(), 2);
    }

    #[test]
    fn minibatch_loss_equals_average_of_single_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = MlpParams::random(&MlpShape::new(2, &[12, 12], 1), &mut rng);
        let rows = [[0.3, -0.4], [1.1, 0.2], [-0.6, 0.9]];
        let batch: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        let sigma = 0.3;

        let mut rng_a = ChaCha8Rng::seed_from_u64(99);
        let (loss, grads) = dsm_minibatch_loss(&params, &batch, sigma, &mut rng_a).unwrap();

        // Replay the identical noise draws and sum individual terms.
        let mut rng_b = ChaCha8Rng::seed_from_u64(99);
        let noisy = draw_noisy(&batch, sigma, &mut rng_b);
        let mut want_loss = 0.0;
        let mut want_grads = params.zeros_like();
        for (x, xn) in batch.iter().zip(&noisy) {
            let (term, g) = numgrad::param_grad_of_dsm_term(&params, x, xn, sigma).unwrap();
            want_loss += term / 3.0;
            want_grads.add_scaled(&g, 1.0 / 3.0);
        }
        assert!((loss - want_loss).abs() <= 1e-14 * (1.0 + want_loss.abs()));
        for (a, b) in grads.layers.iter().zip(&want_grads.layers) {
            for (x, y) in a.w.iter().zip(&b.w) {
                assert!((x - y).abs() <= 1e-13 * (1.0 + y.abs()));
            }
            for (x, y) in a.b.iter().zip(&b.b) {
                assert!((x - y).abs() <= 1e-13 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn dsm_loss_is_translation_invariant_with_compensated_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let params = MlpParams::random(&MlpShape::new(2, &[16, 16], 1), &mut rng);
        let shift = [1.7, -0.6];

        // f'(y) = f(y − c) via b₁' = b₁ − W₁·c.
        let mut shifted = params.clone();
        let l0 = &params.layers[0];
        for r in 0..l0.rows {
            let wc: f64 = (0..l0.cols).map(|c| l0.w[r * l0.cols + c] * shift[c]).sum();
            shifted.layers[0].b[r] -= wc;
        }

        let rows = [[0.3, -0.4], [1.1, 0.2], [-0.6, 0.9], [0.0, 0.5]];
        let moved: Vec<[f64; 2]> =
            rows.iter().map(|r| [r[0] + shift[0], r[1] + shift[1]]).collect();
        let batch: Vec<&[f64]> = rows.iter().map(|r| &r[..]).collect();
        let batch_moved: Vec<&[f64]> = moved.iter().map(|r| &r[..]).collect();

        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let mut rng_b = ChaCha8Rng::seed_from_u64(7);
        let (la, _) = dsm_minibatch_loss(&params, &batch, 0.25, &mut rng_a).unwrap();
        let (lb, _) = dsm_minibatch_loss(&shifted, &batch_moved, 0.25, &mut rng_b).unwrap();
        assert!((la - lb).abs() < 1e-9 * (1.0 + la.abs()), "{la} vs {lb}");
    }

    #[test]
    fn dsm_loss_floor_matches_posterior_variance_for_gaussian() {
        // With the exact noisy score, the residual is (μ(x̃) − x)/σ², so the
        // expected loss is d·v_post/(2σ⁴) with v_post from the closed form.
        let (s, sigma) = (0.6, 0.4);
        let g = GaussianMixture::single(vec![0.0, 0.0], s).unwrap();
        let noisy = g.noisy(sigma);
        let v_post = s * s * sigma * sigma / (s * s + sigma * sigma);
        let floor = 2.0 * v_post / (2.0 * sigma.powi(4));
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = g.sample(&mut rng);
            let xn: Vec<f64> = x
                .iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let sc = noisy.score(&xn);
            let mut term = 0.0;
            for i in 0..2 {
                let r = (xn[i] - x[i]) / (sigma * sigma) + sc[i];
                term += r * r;
            }
            acc += 0.5 * term;
        }
        let got = acc / n as f64;
        assert!(
            (got - floor).abs() < 0.02 * floor,
            "monte carlo {got} vs floor {floor}"
        );
    }

    #[test]
    fn zero_epochs_leaves_params_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let params = MlpParams::random(&MlpShape::new(2, &[8], 1), &mut rng);
        let data = mog_data(50, 1);
        let cfg = TrainConfig { epochs: 0, batch_size: 10, ..TrainConfig::default() };
        let run = train(params.clone(), &data, &cfg).unwrap();
        assert_eq!(run.params, params);
        assert!(run.trace.is_empty());
        assert!(run.halt.is_none());
    }

    #[test]
    fn training_reduces_dsm_loss_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let params = MlpParams::random(&MlpShape::new(2, &[48, 48], 1), &mut rng);
        let data = mog_data(400, 2);
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 50,
            learning_rate: 1e-3,
            seed: 5,
            ..TrainConfig::default()
        };
        let run = train(params.clone(), &data, &cfg).unwrap();
        assert_eq!(run.trace.len(), 6 * 8);
        let per_epoch: Vec<f64> = (1..=6)
            .map(|e| {
                let rows: Vec<f64> = run
                    .trace
                    .iter()
                    .filter(|r| r.epoch == e)
                    .map(|r| r.loss)
                    .collect();
                rows.iter().sum::<f64>() / rows.len() as f64
            })
            .collect();
        assert!(
            per_epoch[5] < per_epoch[0],
            "final epoch {} vs first {}",
            per_epoch[5],
            per_epoch[0]
        );

        let rerun = train(params, &data, &cfg).unwrap();
        assert_eq!(run.params, rerun.params);
        let pairs = run.trace.iter().zip(&rerun.trace);
        assert!(pairs.clone().all(|(a, b)| a == b));
    }

    #[test]
    fn conditioned_training_accepts_level_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let params = MlpParams::random(&MlpShape::new(3, &[16], 1), &mut rng);
        let data = mog_data(60, 3);
        let cfg = TrainConfig {
            sigma_levels: Some(vec![0.5, 0.3, 0.15]),
            epochs: 2,
            batch_size: 20,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let run = train(params.clone(), &data, &cfg).unwrap();
        assert_eq!(run.trace.len(), 6);
        assert!(run.trace.iter().all(|r| r.loss.is_finite()));
        let rerun = train(params, &data, &cfg).unwrap();
        assert_eq!(run.params, rerun.params);
    }

    #[test]
    fn perfectly_predicting_posterior_net_hits_entropy_floor() {
        // Zero weights: the output is the bias, so the mean head can match a
        // constant dataset exactly with zero log-std → nll = (d/2)·ln 2π.
        let mut params = MlpParams::zeros(&MlpShape::new(2, &[4], 4));
        let point = [0.7, -0.3];
        params.layers.last_mut().unwrap().b[0] = point[0];
        params.layers.last_mut().unwrap().b[1] = point[1];
        let batch: Vec<&[f64]> = vec![&point; 5];
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let (loss, _) = kl_minibatch_loss(&params, &batch, 0.2, &mut rng).unwrap();
        let want = (2.0 * std::f64::consts::PI).ln();
        assert!((loss - want).abs() < 1e-12, "{loss} vs {want}");
    }

    #[test]
    fn optimal_gaussian_posterior_nll_equals_entropy() {
        // The best any diagonal Gaussian can do, in expectation, is the true
        // posterior's entropy: d/2·(ln 2π + 1 + ln v_post) for Gaussian data.
        let (s, sigma) = (0.5, 0.3);
        let g = GaussianMixture::single(vec![0.2, -0.8], s).unwrap();
        let v_post = s * s * sigma * sigma / (s * s + sigma * sigma);
        let denom = s * s + sigma * sigma;
        let entropy = (2.0f64) / 2.0 * ((2.0 * std::f64::consts::PI).ln() + 1.0 + v_post.ln());
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let x = g.sample(&mut rng);
            let xn: Vec<f64> = x
                .iter()
                .map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            for i in 0..2 {
                let m_post = (sigma * sigma * g.means()[0][i] + s * s * xn[i]) / denom;
                let diff = x[i] - m_post;
                acc += 0.5
                    * ((2.0 * std::f64::consts::PI * v_post).ln() + diff * diff / v_post);
            }
        }
        let got = acc / n as f64;
        // Each sample contributes variance ≈ 1 (two ½·χ²₁ terms), so the
        // Monte Carlo standard error is √(1/n) ≈ 0.0022; allow 4 of them.
        assert!((got - entropy).abs() < 0.009, "{got} vs {entropy}");
    }

    #[test]
    fn kl_logstd_drifts_down_on_constant_coordinate() {
        // Second coordinate exactly constant: its posterior is a point mass,
        // so the likelihood pushes that log-std head down without bound.
        let mut data = SampleSet::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..256 {
            data.push(&[rng.sample::<f64, _>(StandardNormal), 0.0]);
        }
        let init = MlpParams::random(&MlpShape::new(2, &[32], 4), &mut rng);
        let cfg = |epochs| TrainConfig {
            objective: Objective::JointKl,
            epochs,
            batch_size: 64,
            learning_rate: 5e-3,
            seed: 11,
            ..TrainConfig::default()
        };
        let probe = [0.3, 0.02];
        let logstd2 = |p: &MlpParams| numgrad::forward(p, &probe).unwrap().0[3];
        let p10 = train(init.clone(), &data, &cfg(10)).unwrap().params;
        let p25 = train(init.clone(), &data, &cfg(25)).unwrap().params;
        let p40 = train(init, &data, &cfg(40)).unwrap().params;
        let (a, b, c) = (logstd2(&p10), logstd2(&p25), logstd2(&p40));
        assert!(a > b && b > c, "log-std not drifting down: {a} {b} {c}");
    }

    #[test]
    fn kl_divergence_guard_halts_with_checkpointable_params() {
        // Mean head exact on constant data, log-std bias pushed far negative:
        // the very first loss is below the floor and the guard must fire.
        let mut params = MlpParams::zeros(&MlpShape::new(2, &[4], 4));
        let point = [0.5, -0.25];
        params.layers.last_mut().unwrap().b[0] = point[0];
        params.layers.last_mut().unwrap().b[1] = point[1];
        params.layers.last_mut().unwrap().b[2] = -6e5;
        params.layers.last_mut().unwrap().b[3] = -6e5;
        let mut data = SampleSet::new(2);
        for _ in 0..40 {
            data.push(&point);
        }
        let cfg = TrainConfig {
            objective: Objective::JointKl,
            epochs: 3,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let run = train(params.clone(), &data, &cfg).unwrap();
        let halt = run.halt.expect("guard must fire");
        assert_eq!(halt.iteration, 1);
        assert!(halt.loss < KL_DIVERGENCE_FLOOR);
        assert_eq!(run.trace.len(), 1);
        assert_eq!(run.params, params, "params are pre-update at the halt");
    }

    #[test]
    fn non_finite_loss_aborts_with_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let mut params = MlpParams::random(&MlpShape::new(2, &[8], 1), &mut rng);
        for w in params.layers[0].w.iter_mut() {
            *w *= 1e250;
        }
        let data = mog_data(30, 4);
        let cfg = TrainConfig { epochs: 1, batch_size: 10, ..TrainConfig::default() };
        match train(params, &data, &cfg) {
            Err(TrainError::NonFiniteLoss { iteration: 1 }) => {}
            other => panic!("expected non-finite abort, got {other:?}"),
        }
    }

    #[test]
    fn config_and_shape_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let params = MlpParams::random(&MlpShape::new(2, &[8], 1), &mut rng);
        let data = mog_data(30, 5);
        let small = TrainConfig { batch_size: 64, ..TrainConfig::default() };
        assert!(matches!(
            train(params.clone(), &data, &small),
            Err(TrainError::DataTooSmall { .. })
        ));

        let kl_shape = TrainConfig {
            objective: Objective::JointKl,
            batch_size: 10,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(params.clone(), &data, &kl_shape),
            Err(TrainError::ShapeMismatch { .. })
        ));

        let bad_sigma = TrainConfig { sigma: 0.0, batch_size: 10, ..TrainConfig::default() };
        assert!(matches!(train(params.clone(), &data, &bad_sigma), Err(TrainError::BadConfig(_))));

        let mut rng2 = ChaCha8Rng::seed_from_u64(32);
        let empty: Vec<&[f64]> = Vec::new();
        assert!(matches!(
            dsm_minibatch_loss(&params, &empty, 0.2, &mut rng2),
            Err(TrainError::EmptyBatch)
        ));
    }

    #[test]
    fn trace_csv_round_trips_through_text() {
        let trace = vec![
            TraceRow { iteration: 1, epoch: 1, loss: 12.5 },
            TraceRow { iteration: 2, epoch: 1, loss: 0.0625 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        save_trace(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "iteration,epoch,loss\n1,1,12.5\n2,1,0.0625\n");
    }
}
