//! Layerwise first- and second-order derivatives for small Swish MLPs.
//!
//! Everything an energy-based workflow needs from the network is one of four
//! things: the value `f(x)`, the input gradient `∇f`, Hessian-vector products
//! `∇²f·v`, and parameter gradients of losses that *contain* `∇f`. Generic
//! tape autodiff is overkill for a fixed affine+Swish stack, so each of those
//! is written as an explicit recursion over layers:
//!
//! * value: `z_l = W_l a_{l-1} + b_l`, `a_l = φ(z_l)` (identity on the last
//!   layer),
//! * gradient: reverse sweep `u_{l-1} = φ'(z_{l-1}) ⊙ (W_lᵀ u_l)`,
//! * HVP: a forward tangent sweep followed by the tangent of the reverse
//!   sweep (forward-over-reverse, exact to round-off),
//! * mixed `∂²/∂θ∂x` terms: reverse-mode through the forward+tangent sweep
//!   (double backprop).
//!
//! All arithmetic is `f64`. Every routine is sequential and deterministic:
//! identical inputs give bit-identical outputs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumgradError {
    #[error("input has {got} components, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("non-finite input component at index {0}")]
    NonFiniteInput(usize),
    #[error("operation requires a scalar-output network, out_dim is {0}")]
    NotScalarOutput(usize),
    #[error("operation requires out_dim == 2·target_dim, got out_dim {out}, target {target}")]
    BadHeadShape { out: usize, target: usize },
}

/// Architecture of a fully-connected Swish network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub in_dim: usize,
    pub hidden: Vec<usize>,
    pub out_dim: usize,
}

impl MlpShape {
    pub fn new(in_dim: usize, hidden: &[usize], out_dim: usize) -> Self {
        Self { in_dim, hidden: hidden.to_vec(), out_dim }
    }

    /// Layer widths including input: `[in, h1, .., hk, out]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.in_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.out_dim);
        w
    }
}

/// One affine layer, weights row-major `rows × cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

/// Parameters of a Swish MLP. Doubles as the container for gradients and
/// Adam moment accumulators, which are shaped exactly like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

impl MlpParams {
    /// Weights drawn `N(0, 1/fan_in)`, biases zero.
    pub fn random<R: Rng>(shape: &MlpShape, rng: &mut R) -> Self {
        let widths = shape.widths();
        let layers = widths
            .windows(2)
            .map(|pair| {
                let (cols, rows) = (pair[0], pair[1]);
                let std = (1.0 / cols as f64).sqrt();
                let w = (0..rows * cols)
                    .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Layer { w, b: vec![0.0; rows], rows, cols }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(shape: &MlpShape) -> Self {
        let widths = shape.widths();
        let layers = widths
            .windows(2)
            .map(|pair| Layer {
                w: vec![0.0; pair[0] * pair[1]],
                b: vec![0.0; pair[1]],
                rows: pair[1],
                cols: pair[0],
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                    rows: l.rows,
                    cols: l.cols,
                })
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn shape(&self) -> MlpShape {
        let hidden = self.layers[..self.layers.len().saturating_sub(1)]
            .iter()
            .map(|l| l.rows)
            .collect();
        MlpShape { in_dim: self.in_dim(), hidden, out_dim: self.out_dim() }
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn zero_out(&mut self) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = 0.0);
            l.b.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// `self += scale · other`, used when merging per-chunk gradient sums.
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += scale * y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v *= s);
            l.b.iter_mut().for_each(|v| *v *= s);
        }
    }
}

// ── Swish ────────────────────────────────────────────────────────────────

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `(φ, φ', φ'')` for `φ(x) = x·σ(x)`:
/// `φ' = σ + x·σ(1−σ)`, `φ'' = σ(1−σ)·(2 + x(1−2σ))`.
#[inline]
pub fn swish_d2(x: f64) -> (f64, f64, f64) {
    let s = sigmoid(x);
    let sp = s * (1.0 - s);
    (x * s, s + x * sp, sp * (2.0 + x * (1.0 - 2.0 * s)))
}

// ── Dense kernels ────────────────────────────────────────────────────────
//
// Dots use four lane accumulators so the loop vectorizes without changing
// the (fixed) summation order.

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (pa, pb) in ca.zip(cb) {
        acc[0] += pa[0] * pb[0];
        acc[1] += pa[1] * pb[1];
        acc[2] += pa[2] * pb[2];
        acc[3] += pa[3] * pb[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn affine_into(layer: &Layer, input: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&layer.w[i * layer.cols..(i + 1) * layer.cols], input) + layer.b[i];
    }
}

#[inline]
fn matvec_into(layer: &Layer, input: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&layer.w[i * layer.cols..(i + 1) * layer.cols], input);
    }
}

/// `out = Wᵀ·u`, accumulated row by row so the inner loop is an axpy.
#[inline]
fn transpose_matvec_into(layer: &Layer, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (i, &ui) in u.iter().enumerate() {
        if ui == 0.0 {
            continue;
        }
        let row = &layer.w[i * layer.cols..(i + 1) * layer.cols];
        for (o, w) in out.iter_mut().zip(row) {
            *o += ui * w;
        }
    }
}

/// `gw += u ⊗ a`, `gb += u`.
#[inline]
fn outer_acc(glayer: &mut Layer, u: &[f64], a: &[f64], with_bias: bool) {
    for (i, &ui) in u.iter().enumerate() {
        if with_bias {
            glayer.b[i] += ui;
        }
        if ui == 0.0 {
            continue;
        }
        let row = &mut glayer.w[i * glayer.cols..(i + 1) * glayer.cols];
        for (g, x) in row.iter_mut().zip(a) {
            *g += ui * x;
        }
    }
}

// ── Workspace ────────────────────────────────────────────────────────────

/// Reusable per-layer buffers. Training loops keep one per worker so the hot
/// path never allocates; the public wrappers below create one per call.
#[derive(Debug, Clone)]
pub struct Workspace {
    /// Activations, `a[0]` is the input; length `L+1`.
    a: Vec<Vec<f64>>,
    /// Pre-activations per layer; length `L`.
    z: Vec<Vec<f64>>,
    /// Tangent channel mirroring `a` and `z`.
    ta: Vec<Vec<f64>>,
    tz: Vec<Vec<f64>>,
    /// Adjoint channels on pre-activation nodes.
    u: Vec<Vec<f64>>,
    u2: Vec<Vec<f64>>,
    /// Scratch sized like activations.
    s1: Vec<Vec<f64>>,
    s2: Vec<Vec<f64>>,
}

impl Workspace {
    pub fn for_params(params: &MlpParams) -> Self {
        let widths = params.shape().widths();
        let acts: Vec<Vec<f64>> = widths.iter().map(|&w| vec![0.0; w]).collect();
        let zs: Vec<Vec<f64>> = widths[1..].iter().map(|&w| vec![0.0; w]).collect();
        Self {
            a: acts.clone(),
            z: zs.clone(),
            ta: acts.clone(),
            tz: zs.clone(),
            u: zs.clone(),
            u2: zs,
            s1: acts.clone(),
            s2: acts,
        }
    }
}

fn forward_ws(params: &MlpParams, x: &[f64], ws: &mut Workspace) {
    let nl = params.layers.len();
    ws.a[0].copy_from_slice(x);
    for l in 0..nl {
        let (head, tail) = ws.a.split_at_mut(l + 1);
        affine_into(&params.layers[l], &head[l], &mut ws.z[l]);
        if l + 1 < nl {
            for (an, &zn) in tail[0].iter_mut().zip(&ws.z[l]) {
                let (phi, _, _) = swish_d2(zn);
                *an = phi;
            }
        } else {
            tail[0].copy_from_slice(&ws.z[l]);
        }
    }
}

fn tangent_ws(params: &MlpParams, v: &[f64], ws: &mut Workspace) {
    let nl = params.layers.len();
    ws.ta[0].copy_from_slice(v);
    for l in 0..nl {
        let (head, tail) = ws.ta.split_at_mut(l + 1);
        matvec_into(&params.layers[l], &head[l], &mut ws.tz[l]);
        if l + 1 < nl {
            for ((tn, &zn), &tzn) in tail[0].iter_mut().zip(&ws.z[l]).zip(&ws.tz[l]) {
                let (_, d1, _) = swish_d2(zn);
                *tn = d1 * tzn;
            }
        } else {
            tail[0].copy_from_slice(&ws.tz[l]);
        }
    }
}

/// Reverse sweep seeded with `seed` on the output pre-activation. Fills
/// `ws.u[l]` (adjoints of `z_l`) and `ws.s1[l]` (adjoints of `a_l`); the
/// input gradient ends up in `ws.s1[0]`.
fn reverse_ws(params: &MlpParams, seed: &[f64], ws: &mut Workspace) {
    let nl = params.layers.len();
    ws.u[nl - 1].copy_from_slice(seed);
    for l in (0..nl).rev() {
        transpose_matvec_into(&params.layers[l], &ws.u[l], &mut ws.s1[l]);
        if l > 0 {
            for ((un, &zn), &gn) in ws.u[l - 1].iter_mut().zip(&ws.z[l - 1]).zip(&ws.s1[l]) {
                let (_, d1, _) = swish_d2(zn);
                *un = d1 * gn;
            }
        }
    }
}

/// Tangent of the reverse sweep (forward-over-reverse). Requires `forward_ws`,
/// `tangent_ws` and `reverse_ws` to have run; leaves the HVP in `ws.s2[0]`.
fn reverse_tangent_ws(params: &MlpParams, ws: &mut Workspace) {
    let nl = params.layers.len();
    ws.u2[nl - 1].iter_mut().for_each(|v| *v = 0.0);
    for l in (0..nl).rev() {
        transpose_matvec_into(&params.layers[l], &ws.u2[l], &mut ws.s2[l]);
        if l > 0 {
            for i in 0..ws.u2[l - 1].len() {
                let (_, d1, d2) = swish_d2(ws.z[l - 1][i]);
                ws.u2[l - 1][i] =
                    d2 * ws.tz[l - 1][i] * ws.s1[l][i] + d1 * ws.s2[l][i];
            }
        }
    }
}

fn check_input(params: &MlpParams, x: &[f64]) -> Result<(), NumgradError> {
    if x.len() != params.in_dim() {
        return Err(NumgradError::InputDim { expected: params.in_dim(), got: x.len() });
    }
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() {
            return Err(NumgradError::NonFiniteInput(i));
        }
    }
    Ok(())
}

// ── Public operations ────────────────────────────────────────────────────

/// Cached activations and pre-activations of one forward pass, with an
/// optional tangent channel when the pass carried a directional derivative.
#[derive(Debug, Clone)]
pub struct DualTrace {
    /// `acts[0]` is the input, `acts[L]` the output.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activations `z_l`, one per layer.
    pub zs: Vec<Vec<f64>>,
    /// `(tangent activations, tangent pre-activations)`.
    pub tangent: Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)>,
}

impl DualTrace {
    /// Recompute every layer from the cached inputs and check the cache is
    /// self-consistent; returns the output. Replay is bit-exact.
    pub fn replay(&self, params: &MlpParams) -> Vec<f64> {
        let nl = params.layers.len();
        for l in 0..nl {
            let mut z = vec![0.0; params.layers[l].rows];
            affine_into(&params.layers[l], &self.acts[l], &mut z);
            assert_eq!(z, self.zs[l], "cached pre-activations diverge at layer {l}");
        }
        self.acts[nl].clone()
    }
}

/// Forward pass; returns the output vector and the cached trace.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, DualTrace), NumgradError> {
    check_input(params, x)?;
    let mut ws = Workspace::for_params(params);
    forward_ws(params, x, &mut ws);
    let out = ws.a.last().unwrap().clone();
    Ok((out, DualTrace { acts: ws.a, zs: ws.z, tangent: None }))
}

/// Forward pass carrying a tangent `v`; returns `(value, J·v, trace)`.
pub fn forward_with_tangent(
    params: &MlpParams,
    x: &[f64],
    v: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, DualTrace), NumgradError> {
    check_input(params, x)?;
    check_input(params, v)?;
    let mut ws = Workspace::for_params(params);
    forward_ws(params, x, &mut ws);
    tangent_ws(params, v, &mut ws);
    let out = ws.a.last().unwrap().clone();
    let tout = ws.ta.last().unwrap().clone();
    Ok((out, tout, DualTrace { acts: ws.a, zs: ws.z, tangent: Some((ws.ta, ws.tz)) }))
}

/// Gradient of a scalar-output network with respect to its input.
pub fn grad_input(params: &MlpParams, x: &[f64]) -> Result<Vec<f64>, NumgradError> {
    if params.out_dim() != 1 {
        return Err(NumgradError::NotScalarOutput(params.out_dim()));
    }
    check_input(params, x)?;
    let mut ws = Workspace::for_params(params);
    forward_ws(params, x, &mut ws);
    reverse_ws(params, &[1.0], &mut ws);
    Ok(ws.s1[0].clone())
}

/// Exact Hessian-vector product `∇²f(x)·v` via forward-over-reverse.
pub fn hvp_input(params: &MlpParams, x: &[f64], v: &[f64]) -> Result<Vec<f64>, NumgradError> {
    if params.out_dim() != 1 {
        return Err(NumgradError::NotScalarOutput(params.out_dim()));
    }
    check_input(params, x)?;
    check_input(params, v)?;
    let mut ws = Workspace::for_params(params);
    forward_ws(params, x, &mut ws);
    tangent_ws(params, v, &mut ws);
    reverse_ws(params, &[1.0], &mut ws);
    reverse_tangent_ws(params, &mut ws);
    Ok(ws.s2[0].clone())
}

/// Full input Hessian assembled column-by-column from HVPs, symmetrized.
/// The raw asymmetry `max |H_ij − H_ji|` is reported alongside; it should sit
/// at round-off level and is a cheap self-check of the second-order sweeps.
pub struct HessianReport {
    /// Row-major `d×d`, symmetrized.
    pub h: Vec<f64>,
    pub max_asymmetry: f64,
}

pub fn hessian_input(params: &MlpParams, x: &[f64]) -> Result<HessianReport, NumgradError> {
    let d = params.in_dim();
    let mut h = vec![0.0; d * d];
    let mut e = vec![0.0; d];
    for j in 0..d {
        e[j] = 1.0;
        let col = hvp_input(params, x, &e)?;
        e[j] = 0.0;
        for i in 0..d {
            h[i * d + j] = col[i];
        }
    }
    let max_asymmetry = crate::linalg::max_asymmetry(d, &h);
    for i in 0..d {
        for j in 0..i {
            let s = 0.5 * (h[i * d + j] + h[j * d + i]);
            h[i * d + j] = s;
            h[j * d + i] = s;
        }
    }
    Ok(HessianReport { h, max_asymmetry })
}

/// One denoising-score-matching term and its parameter gradient:
/// `term = ½‖(x̃−x)/σ² + s_θ(x̃)‖²` with `s_θ = −∇_x̃ f_θ`.
///
/// The parameter gradient needs `∂²f/∂θ∂x̃`; it is obtained by backpropagating
/// through the forward+tangent sweep with the residual as tangent direction
/// (double backprop), not by finite differences.
pub fn param_grad_of_dsm_term(
    params: &MlpParams,
    x: &[f64],
    x_noisy: &[f64],
    sigma: f64,
) -> Result<(f64, MlpParams), NumgradError> {
    let mut grads = params.zeros_like();
    let mut ws = Workspace::for_params(params);
    let term = accumulate_dsm_term(params, x, x_noisy, &[], sigma, 1.0, &mut grads, &mut ws)?;
    Ok((term, grads))
}

/// `param_grad_of_dsm_term` for a conditioned network whose input is
/// `concat(x̃, extra)`; the score is taken with respect to the `x̃` block only.
pub fn param_grad_of_dsm_term_conditioned(
    params: &MlpParams,
    x: &[f64],
    x_noisy: &[f64],
    extra: &[f64],
    sigma: f64,
) -> Result<(f64, MlpParams), NumgradError> {
    let mut grads = params.zeros_like();
    let mut ws = Workspace::for_params(params);
    let term = accumulate_dsm_term(params, x, x_noisy, extra, sigma, 1.0, &mut grads, &mut ws)?;
    Ok((term, grads))
}

/// Workspace-reusing form of the DSM term: adds `weight·∇θ(term)` into
/// `grads` and returns `weight·term`.
pub fn accumulate_dsm_term(
    params: &MlpParams,
    x: &[f64],
    x_noisy: &[f64],
    extra: &[f64],
    sigma: f64,
    weight: f64,
    grads: &mut MlpParams,
    ws: &mut Workspace,
) -> Result<f64, NumgradError> {
    let d = x.len();
    if params.out_dim() != 1 {
        return Err(NumgradError::NotScalarOutput(params.out_dim()));
    }
    if x_noisy.len() != d || d + extra.len() != params.in_dim() {
        return Err(NumgradError::InputDim {
            expected: params.in_dim(),
            got: x_noisy.len() + extra.len(),
        });
    }
    let nl = params.layers.len();
    let inv_s2 = 1.0 / (sigma * sigma);

    // Full network input and the plain sweeps that give the score.
    ws.a[0][..d].copy_from_slice(x_noisy);
    ws.a[0][d..].copy_from_slice(extra);
    for (i, v) in ws.a[0].iter().enumerate() {
        if !v.is_finite() {
            return Err(NumgradError::NonFiniteInput(i));
        }
    }
    let x0 = ws.a[0].clone();
    forward_ws(params, &x0, ws);
    reverse_ws(params, &[1.0], ws);

    // Residual r = (x̃−x)/σ² − ∇_x̃ f, zero tangent in the conditioning slots.
    let mut term = 0.0;
    ws.ta[0].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..d {
        let r = (x_noisy[i] - x[i]) * inv_s2 - ws.s1[0][i];
        ws.ta[0][i] = r;
        term += r * r;
    }
    term *= 0.5;

    // h(θ) = ∇f·r̄ is the tangent output; its θ-gradient times −weight is the
    // term gradient. Seeding the tangent adjoint with −weight folds both in.
    let t0 = ws.ta[0].clone();
    tangent_ws(params, &t0, ws);

    ws.u2[nl - 1][0] = -weight; // τ̄ channel
    ws.u[nl - 1][0] = 0.0; // z̄ channel
    for l in (0..nl).rev() {
        outer_acc(&mut grads.layers[l], &ws.u2[l], &ws.ta[l], false);
        outer_acc(&mut grads.layers[l], &ws.u[l], &ws.a[l], true);
        transpose_matvec_into(&params.layers[l], &ws.u2[l], &mut ws.s2[l]); // t̄
        transpose_matvec_into(&params.layers[l], &ws.u[l], &mut ws.s1[l]); // ā
        if l > 0 {
            for i in 0..ws.u[l - 1].len() {
                let (_, d1, d2) = swish_d2(ws.z[l - 1][i]);
                ws.u[l - 1][i] = ws.s1[l][i] * d1 + ws.s2[l][i] * d2 * ws.tz[l - 1][i];
                ws.u2[l - 1][i] = ws.s2[l][i] * d1;
            }
        }
    }
    Ok(weight * term)
}

/// Negative log-density of `N(target; mean, diag(exp(2·logstd)))` where the
/// network maps `x_noisy` to `(mean, logstd)` heads, plus its parameter
/// gradient by plain backprop.
pub fn param_grad_of_gaussian_nll(
    params: &MlpParams,
    x_noisy: &[f64],
    target: &[f64],
) -> Result<(f64, MlpParams), NumgradError> {
    let mut grads = params.zeros_like();
    let mut ws = Workspace::for_params(params);
    let nll = accumulate_gaussian_nll(params, x_noisy, target, 1.0, &mut grads, &mut ws)?;
    Ok((nll, grads))
}

/// Workspace-reusing form of the Gaussian NLL term.
pub fn accumulate_gaussian_nll(
    params: &MlpParams,
    x_noisy: &[f64],
    target: &[f64],
    weight: f64,
    grads: &mut MlpParams,
    ws: &mut Workspace,
) -> Result<f64, NumgradError> {
    check_input(params, x_noisy)?;
    let d = target.len();
    if params.out_dim() != 2 * d {
        return Err(NumgradError::BadHeadShape { out: params.out_dim(), target: d });
    }
    let nl = params.layers.len();
    forward_ws(params, x_noisy, ws);

    const LN_2PI: f64 = 1.8378770664093453;
    let out = ws.a[nl].clone();
    let mut nll = 0.0;
    let mut seed = vec![0.0; 2 * d];
    for i in 0..d {
        let mean = out[i];
        let logstd = out[d + i];
        let prec = (-2.0 * logstd).exp();
        let diff = target[i] - mean;
        // prec overflows for very negative log-std; a zero residual must not
        // turn that into 0·inf = NaN (the quadratic term is genuinely 0).
        let quad = if diff == 0.0 { 0.0 } else { diff * diff * prec };
        nll += 0.5 * (LN_2PI + 2.0 * logstd + quad);
        seed[i] = weight * if diff == 0.0 { 0.0 } else { -diff * prec };
        seed[d + i] = weight * (1.0 - quad);
    }

    ws.u[nl - 1].copy_from_slice(&seed);
    for l in (0..nl).rev() {
        outer_acc(&mut grads.layers[l], &ws.u[l], &ws.a[l], true);
        transpose_matvec_into(&params.layers[l], &ws.u[l], &mut ws.s1[l]);
        if l > 0 {
            for i in 0..ws.u[l - 1].len() {
                let (_, d1, _) = swish_d2(ws.z[l - 1][i]);
                ws.u[l - 1][i] = d1 * ws.s1[l][i];
            }
        }
    }
    Ok(weight * nll)
}

/// Score `−∇_x̃ f` of a scalar energy net, with optional conditioning inputs
/// appended; returns only the `d` leading components.
pub fn score_of_energy(
    params: &MlpParams,
    x: &[f64],
    extra: &[f64],
) -> Result<Vec<f64>, NumgradError> {
    let mut full = Vec::with_capacity(x.len() + extra.len());
    full.extend_from_slice(x);
    full.extend_from_slice(extra);
    let g = grad_input(params, &full)?;
    Ok(g[..x.len()].iter().map(|v| -v).collect())
}

/// `(∇² log q̃)·v = −(∇²f)·v` restricted to the leading block, with zero
/// tangent through any conditioning inputs.
pub fn log_density_hvp_of_energy(
    params: &MlpParams,
    x: &[f64],
    v: &[f64],
    extra: &[f64],
) -> Result<Vec<f64>, NumgradError> {
    let mut full = Vec::with_capacity(x.len() + extra.len());
    full.extend_from_slice(x);
    full.extend_from_slice(extra);
    let mut vfull = vec![0.0; full.len()];
    vfull[..v.len()].copy_from_slice(v);
    let h = hvp_input(params, &full, &vfull)?;
    Ok(h[..x.len()].iter().map(|v| -v).collect())
}
