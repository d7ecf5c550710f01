//! Model surface: the analytic Gaussian-mixture oracle with closed-form
//! score and Hessian, MLP energy wrappers around [`crate::numgrad`], the
//! diagonal-Gaussian posterior network, and a plain-text checkpoint format.
//!
//! Everything that can act as a model of a *noisy* data density implements
//! [`EnergyModel`]: the sampler and the posterior constructors only ever see
//! that trait, so analytic oracles and trained networks are interchangeable.

use crate::numgrad::{self, MlpParams};
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("mixture definition invalid: {0}")]
    BadMixture(String),
    #[error("model does not expose a full log-density Hessian; use a diagonal or isotropic posterior")]
    HessianUnavailable,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: checkpoint parse error: {msg}")]
    CheckpointParse { path: String, line: usize, msg: String },
    #[error("checkpoint checksum mismatch in {path}: stored {stored}, computed {computed}")]
    ChecksumMismatch { path: String, stored: String, computed: String },
    #[error("network shape invalid for this role: {0}")]
    BadShape(String),
}

/// A (possibly trained, possibly analytic) model of noisy data densities.
///
/// `sigma` is the noise scale the density is conditioned on. Models that
/// represent a single fixed level (an MLP trained at one σ, or a mixture that
/// convolves itself on the fly) are free to use it or ignore it; the sampler
/// passes the level it is working at.
pub trait EnergyModel: Sync {
    /// Sample dimension d (excluding any conditioning inputs).
    fn dim(&self) -> usize;

    /// `−log q̃_σ(x)` up to an additive constant.
    fn energy(&self, x: &[f64], sigma: f64) -> f64;

    /// `∇ log q̃_σ(x)`.
    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64>;

    /// `(∇² log q̃_σ(x))·v`.
    fn hvp(&self, x: &[f64], v: &[f64], sigma: f64) -> Vec<f64>;

    /// Whether [`EnergyModel::hessian`] returns a valid symmetric Hessian.
    /// Energy-parameterized models do; a raw vector-field score would not.
    fn has_exact_hessian(&self) -> bool {
        true
    }

    /// Row-major `d×d` Hessian `∇² log q̃_σ(x)`, symmetrized. The default
    /// assembles it column-by-column from `hvp`.
    fn hessian(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, ModelError> {
        if !self.has_exact_hessian() {
            return Err(ModelError::HessianUnavailable);
        }
        let d = self.dim();
        let mut h = vec![0.0; d * d];
        let mut e = vec![0.0; d];
        for j in 0..d {
            e[j] = 1.0;
            let col = self.hvp(x, &e, sigma);
            e[j] = 0.0;
            for i in 0..d {
                h[i * d + j] = col[i];
            }
        }
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (h[i * d + j] + h[j * d + i]);
                h[i * d + j] = s;
                h[j * d + i] = s;
            }
        }
        Ok(h)
    }
}

// ── Gaussian mixtures ────────────────────────────────────────────────────

/// Isotropic Gaussian mixture with one shared component std.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    component_std: f64,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        component_std: f64,
    ) -> Result<Self, ModelError> {
        if means.is_empty() || weights.len() != means.len() {
            return Err(ModelError::BadMixture(format!(
                "{} weights for {} means",
                weights.len(),
                means.len()
            )));
        }
        if component_std <= 0.0 || !component_std.is_finite() {
            return Err(ModelError::BadMixture(format!("bad component std {component_std}")));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(ModelError::BadMixture("inconsistent mean dimensions".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(ModelError::BadMixture("weights must be nonnegative, not all zero".into()));
        }
        let weights = weights.iter().map(|w| w / total).collect();
        Ok(Self { weights, means, component_std, dim })
    }

    /// The four-mode benchmark mixture: means (±1, ±1), std 0.2.
    pub fn four_corners() -> Self {
        Self::new(
            vec![0.25; 4],
            vec![
                vec![-1.0, -1.0],
                vec![-1.0, 1.0],
                vec![1.0, 1.0],
                vec![1.0, -1.0],
            ],
            0.2,
        )
        .expect("static definition is valid")
    }

    pub fn single(mean: Vec<f64>, std: f64) -> Result<Self, ModelError> {
        Self::new(vec![1.0], vec![mean], std)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn component_std(&self) -> f64 {
        self.component_std
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// The mixture with `N(0, σ²I)` noise convolved in: same means and
    /// weights, component std `√(s² + σ²)`.
    pub fn noisy(&self, sigma: f64) -> Self {
        Self {
            weights: self.weights.clone(),
            means: self.means.clone(),
            component_std: (self.component_std * self.component_std + sigma * sigma).sqrt(),
            dim: self.dim,
        }
    }

    /// Log responsibilities and the log density, evaluated in log space.
    fn log_resp(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let var = self.component_std * self.component_std;
        let norm = -0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI * var).ln();
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| {
                let sq: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
                w.ln() + norm - 0.5 * sq / var
            })
            .collect();
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        let logpdf = max + sum_exp.ln();
        (logs.iter().map(|l| l - logpdf).collect(), logpdf)
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        self.log_resp(x).1
    }

    /// `∇ log p(x) = Σ_k r_k(x) (μ_k − x)/s²`.
    pub fn score(&self, x: &[f64]) -> Vec<f64> {
        let (log_r, _) = self.log_resp(x);
        let var = self.component_std * self.component_std;
        let mut s = vec![0.0; self.dim];
        for (lr, m) in log_r.iter().zip(&self.means) {
            let r = lr.exp();
            for i in 0..self.dim {
                s[i] += r * (m[i] - x[i]) / var;
            }
        }
        s
    }

    /// `∇² log p(x) = −I/s² + Σ_k r_k u_k u_kᵀ − ḡ ḡᵀ` with
    /// `u_k = (μ_k − x)/s²` and `ḡ = Σ_k r_k u_k`.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let (log_r, _) = self.log_resp(x);
        let var = self.component_std * self.component_std;
        let d = self.dim;
        let mut h = vec![0.0; d * d];
        let mut gbar = vec![0.0; d];
        for (lr, m) in log_r.iter().zip(&self.means) {
            let r = lr.exp();
            let u: Vec<f64> = (0..d).map(|i| (m[i] - x[i]) / var).collect();
            for i in 0..d {
                gbar[i] += r * u[i];
                for j in 0..d {
                    h[i * d + j] += r * u[i] * u[j];
                }
            }
        }
        for i in 0..d {
            h[i * d + i] -= 1.0 / var;
            for j in 0..d {
                h[i * d + j] -= gbar[i] * gbar[j];
            }
        }
        h
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let t: f64 = rng.random::<f64>();
        let mut acc = 0.0;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if t < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .map(|m| m + self.component_std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

/// Exact denoising-posterior log density by Bayes' rule:
/// `log p(x | x̃) = log N(x̃; x, σ²I) + log p(x) − log p̃_σ(x̃)`.
pub fn true_posterior_logpdf(
    mog: &GaussianMixture,
    sigma: f64,
    x_noisy: &[f64],
    x: &[f64],
) -> f64 {
    let d = mog.dim() as f64;
    let var = sigma * sigma;
    let sq: f64 = x_noisy.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
    let log_lik = -0.5 * d * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * sq / var;
    log_lik + mog.logpdf(x) - mog.noisy(sigma).logpdf(x_noisy)
}

impl EnergyModel for GaussianMixture {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, x: &[f64], sigma: f64) -> f64 {
        -self.noisy(sigma).logpdf(x)
    }

    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        self.noisy(sigma).score(x)
    }

    fn hvp(&self, x: &[f64], v: &[f64], sigma: f64) -> Vec<f64> {
        let h = self.noisy(sigma).hessian(x);
        crate::linalg::matvec(self.dim, &h, v)
    }

    fn hessian(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, ModelError> {
        Ok(self.noisy(sigma).hessian(x))
    }
}

// ── MLP wrappers ─────────────────────────────────────────────────────────

/// Scalar energy network modelling one fixed noise level; the σ argument of
/// the trait is ignored.
#[derive(Debug, Clone)]
pub struct MlpEnergy {
    pub params: MlpParams,
}

impl MlpEnergy {
    pub fn new(params: MlpParams) -> Result<Self, ModelError> {
        if params.out_dim() != 1 {
            return Err(ModelError::BadShape(format!(
                "energy network must have a scalar output, got {}",
                params.out_dim()
            )));
        }
        Ok(Self { params })
    }
}

impl EnergyModel for MlpEnergy {
    fn dim(&self) -> usize {
        self.params.in_dim()
    }

    fn energy(&self, x: &[f64], _sigma: f64) -> f64 {
        numgrad::forward(&self.params, x).expect("validated input").0[0]
    }

    fn score(&self, x: &[f64], _sigma: f64) -> Vec<f64> {
        numgrad::score_of_energy(&self.params, x, &[]).expect("validated input")
    }

    fn hvp(&self, x: &[f64], v: &[f64], _sigma: f64) -> Vec<f64> {
        numgrad::log_density_hvp_of_energy(&self.params, x, v, &[]).expect("validated input")
    }
}

/// Energy network conditioned on the noise level through an extra `ln σ`
/// input: models the whole family `q̃_σ` at once.
#[derive(Debug, Clone)]
pub struct SigmaCondMlpEnergy {
    pub params: MlpParams,
}

impl SigmaCondMlpEnergy {
    pub fn new(params: MlpParams) -> Result<Self, ModelError> {
        if params.out_dim() != 1 {
            return Err(ModelError::BadShape("energy network must have a scalar output".into()));
        }
        if params.in_dim() < 2 {
            return Err(ModelError::BadShape(
                "conditioned energy needs at least one sample dim plus the ln σ input".into(),
            ));
        }
        Ok(Self { params })
    }
}

impl EnergyModel for SigmaCondMlpEnergy {
    fn dim(&self) -> usize {
        self.params.in_dim() - 1
    }

    fn energy(&self, x: &[f64], sigma: f64) -> f64 {
        let mut full = x.to_vec();
        full.push(sigma.ln());
        numgrad::forward(&self.params, &full).expect("validated input").0[0]
    }

    fn score(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        numgrad::score_of_energy(&self.params, x, &[sigma.ln()]).expect("validated input")
    }

    fn hvp(&self, x: &[f64], v: &[f64], sigma: f64) -> Vec<f64> {
        numgrad::log_density_hvp_of_energy(&self.params, x, v, &[sigma.ln()])
            .expect("validated input")
    }
}

/// Amortized diagonal-Gaussian posterior `q(x | x̃) = N(mean(x̃), e^{2·logstd(x̃)})`,
/// the joint-KL training baseline.
#[derive(Debug, Clone)]
pub struct PosteriorNet {
    pub params: MlpParams,
}

impl PosteriorNet {
    pub fn new(params: MlpParams) -> Result<Self, ModelError> {
        if params.out_dim() != 2 * params.in_dim() {
            return Err(ModelError::BadShape(format!(
                "posterior network must map d -> 2d, got {} -> {}",
                params.in_dim(),
                params.out_dim()
            )));
        }
        Ok(Self { params })
    }

    pub fn dim(&self) -> usize {
        self.params.in_dim()
    }

    /// `(mean, logstd)` heads.
    pub fn forward(&self, x_noisy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (out, _) = numgrad::forward(&self.params, x_noisy).expect("validated input");
        let d = self.dim();
        (out[..d].to_vec(), out[d..].to_vec())
    }
}

// ── Checkpoints ──────────────────────────────────────────────────────────

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Write parameters as a line-oriented text checkpoint: architecture header,
/// row-major weights in full-precision decimal, a trailing checksum line.
pub fn save_checkpoint<P: AsRef<Path>>(
    path: P,
    params: &MlpParams,
    sigma_conditioned: bool,
) -> Result<(), ModelError> {
    let shape = params.shape();
    let mut out = String::new();
    out.push_str("mlp-checkpoint v1\n");
    let _ = writeln!(out, "sigma_conditioned {}", sigma_conditioned);
    let _ = writeln!(out, "in_dim {}", shape.in_dim);
    let _ = write!(out, "hidden");
    for h in &shape.hidden {
        let _ = write!(out, " {h}");
    }
    out.push('\n');
    let _ = writeln!(out, "out_dim {}", shape.out_dim);
    out.push_str("activation swish\n");
    for (idx, layer) in params.layers.iter().enumerate() {
        let _ = writeln!(out, "layer {idx} {} {}", layer.rows, layer.cols);
        for r in 0..layer.rows {
            for c in 0..layer.cols {
                if c > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", layer.w[r * layer.cols + c]);
            }
            out.push('\n');
        }
        out.push_str("bias");
        for v in &layer.b {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    let digest = fnv1a64(out.as_bytes());
    let _ = writeln!(out, "checksum fnv1a64 {digest:016x}");
    std::fs::write(path.as_ref(), out).map_err(|source| ModelError::Io {
        path: path.as_ref().display().to_string(),
        source,
    })
}

/// Read a checkpoint back; verifies the checksum before trusting any value.
pub fn load_checkpoint<P: AsRef<Path>>(path: P) -> Result<(MlpParams, bool), ModelError> {
    let path_s = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(path.as_ref()).map_err(|source| ModelError::Io {
        path: path_s.clone(),
        source,
    })?;
    let parse_err = |line: usize, msg: String| ModelError::CheckpointParse {
        path: path_s.clone(),
        line,
        msg,
    };

    let checksum_pos = text
        .rfind("\nchecksum fnv1a64 ")
        .ok_or_else(|| parse_err(0, "missing checksum line".into()))?;
    let body = &text[..checksum_pos + 1];
    let stored = text[checksum_pos + 1..]
        .trim_end()
        .strip_prefix("checksum fnv1a64 ")
        .ok_or_else(|| parse_err(0, "malformed checksum line".into()))?
        .to_string();
    let computed = format!("{:016x}", fnv1a64(body.as_bytes()));
    if stored != computed {
        return Err(ModelError::ChecksumMismatch { path: path_s, stored, computed });
    }

    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    // An empty tag accepts any line: used for the raw weight rows.
    let mut expect = |tag: &str| -> Result<(usize, String), ModelError> {
        let (n, line) = lines.next().ok_or_else(|| {
            parse_err(0, format!("unexpected end of file, wanted {:?}", tag))
        })?;
        line.strip_prefix(tag)
            .map(|rest| (n, rest.trim().to_string()))
            .ok_or_else(|| parse_err(n, format!("expected {tag:?}, found {line:?}")))
    };

    expect("mlp-checkpoint v1")?;
    let (n, flag) = expect("sigma_conditioned ")?;
    let sigma_conditioned = match flag.as_str() {
        "true" => true,
        "false" => false,
        other => return Err(parse_err(n, format!("bad flag {other:?}"))),
    };
    let (n, in_dim_s) = expect("in_dim ")?;
    let in_dim: usize = in_dim_s.parse().map_err(|_| parse_err(n, "bad in_dim".into()))?;
    let (n, hidden_s) = expect("hidden")?;
    let hidden: Vec<usize> = hidden_s
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| parse_err(n, "bad hidden widths".into()))?;
    let (n, out_dim_s) = expect("out_dim ")?;
    let out_dim: usize = out_dim_s.parse().map_err(|_| parse_err(n, "bad out_dim".into()))?;
    let (n, act) = expect("activation ")?;
    if act != "swish" {
        return Err(parse_err(n, format!("unsupported activation {act:?}")));
    }

    let shape = numgrad::MlpShape { in_dim, hidden, out_dim };
    let widths = shape.widths();
    let mut layers = Vec::new();
    for l in 0..widths.len() - 1 {
        let (n, head) = expect("layer ")?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != l.to_string() {
            return Err(parse_err(n, format!("bad layer header {head:?}")));
        }
        let rows: usize = parts[1].parse().map_err(|_| parse_err(n, "bad rows".into()))?;
        let cols: usize = parts[2].parse().map_err(|_| parse_err(n, "bad cols".into()))?;
        if rows != widths[l + 1] || cols != widths[l] {
            return Err(parse_err(n, format!("layer {l} shape {rows}x{cols} contradicts header")));
        }
        let mut w = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (n, line) = expect("")?;
            let mut count = 0;
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| parse_err(n, format!("bad weight {tok:?}")))?;
                if !v.is_finite() {
                    return Err(parse_err(n, format!("non-finite weight {tok:?}")));
                }
                w.push(v);
                count += 1;
            }
            if count != cols {
                return Err(parse_err(n, format!("expected {cols} weights, found {count}")));
            }
        }
        let (n, bias_s) = expect("bias")?;
        let b: Vec<f64> = bias_s
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(n, "bad bias".into()))?;
        if b.len() != rows {
            return Err(parse_err(n, format!("expected {rows} biases, found {}", b.len())));
        }
        layers.push(numgrad::Layer { w, b, rows, cols });
    }
    Ok((MlpParams { layers }, sigma_conditioned))
}
