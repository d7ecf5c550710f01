//! Sample-quality metrics and quadrature oracles: multi-bandwidth MMD with
//! the unbiased U-statistic, a trapezoid-grid posterior oracle for 2D
//! mixtures, mode-occupancy summaries, and autocorrelation-aware effective
//! sample sizes.

use crate::datasets::SampleSet;
use crate::models::GaussianMixture;
use rayon::prelude::*;
use std::f64::consts::TAU;
use std::fmt::Write as _;
use thiserror::Error;

/// Mixture-of-Gaussians kernel bandwidths used in the experiments.
pub const DEFAULT_BANDWIDTHS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sample sets have different dimensions: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("bad bandwidths: {0}")]
    BadBandwidths(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
}

/// Squared maximum mean discrepancy between two sample sets under a sum of
/// Gaussian kernels `exp(−‖x−y‖²/(2h²))`, one term per bandwidth.
#[derive(Debug, Clone, PartialEq)]
pub struct MmdReport {
    pub n_a: usize,
    pub n_b: usize,
    pub bandwidths: Vec<f64>,
    /// Unbiased MMD² contribution of each bandwidth; sums to `mmd2`.
    pub per_bandwidth: Vec<f64>,
    /// Unbiased U-statistic estimate of MMD²; may be negative near zero.
    pub mmd2: f64,
}

impl MmdReport {
    /// `√max(0, mmd2)` — the number quoted in tables.
    pub fn mmd(&self) -> f64 {
        self.mmd2.max(0.0).sqrt()
    }

    pub fn csv_header(&self) -> String {
        let mut s = String::from("label,seed,n_a,n_b,mmd2,mmd");
        for b in &self.bandwidths {
            let _ = write!(s, ",mmd2_h{b}");
        }
        s
    }

    pub fn csv_row(&self, label: &str, seed: u64) -> String {
        let mut s = format!(
            "{label},{seed},{},{},{},{}",
            self.n_a,
            self.n_b,
            self.mmd2,
            self.mmd()
        );
        for v in &self.per_bandwidth {
            let _ = write!(s, ",{v}");
        }
        s
    }
}

/// Kernel sums within one set: for each bandwidth, `Σ_{i<j} k(xᵢ, xⱼ)`.
fn within_sums(set: &SampleSet, inv2h2: &[f64]) -> Vec<f64> {
    let n = set.len();
    let partials: Vec<Vec<f64>> = (1..n)
        .into_par_iter()
        .map(|i| {
            let xi = set.row(i);
            let mut acc = vec![0.0; inv2h2.len()];
            for j in 0..i {
                let d2: f64 = xi
                    .iter()
                    .zip(set.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                for (a, c) in acc.iter_mut().zip(inv2h2) {
                    *a += (-d2 * c).exp();
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0; inv2h2.len()];
    for p in &partials {
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    sums
}

/// Kernel sums across two sets: for each bandwidth, `Σ_{i,j} k(aᵢ, bⱼ)`.
fn cross_sums(a: &SampleSet, b: &SampleSet, inv2h2: &[f64]) -> Vec<f64> {
    let partials: Vec<Vec<f64>> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let xi = a.row(i);
            let mut acc = vec![0.0; inv2h2.len()];
            for j in 0..b.len() {
                let d2: f64 = xi
                    .iter()
                    .zip(b.row(j))
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum();
                for (s, c) in acc.iter_mut().zip(inv2h2) {
                    *s += (-d2 * c).exp();
                }
            }
            acc
        })
        .collect();
    let mut sums = vec![0.0; inv2h2.len()];
    for p in &partials {
        for (s, v) in sums.iter_mut().zip(p) {
            *s += v;
        }
    }
    sums
}

/// Unbiased multi-bandwidth MMD² between `a` and `b`.
///
/// The estimate is symmetric in its arguments down to the last bit: inputs
/// are ordered canonically (by length, then by the raw bits of the data)
/// before any arithmetic, so `mmd(a, b)` and `mmd(b, a)` run the identical
/// floating-point program.
pub fn mmd(a: &SampleSet, b: &SampleSet, bandwidths: &[f64]) -> Result<MmdReport, EvalError> {
    if a.dim() != b.dim() {
        return Err(EvalError::DimMismatch(a.dim(), b.dim()));
    }
    if bandwidths.is_empty() {
        return Err(EvalError::BadBandwidths("no bandwidths".into()));
    }
    if let Some(h) = bandwidths.iter().find(|h| !(**h > 0.0)) {
        return Err(EvalError::BadBandwidths(format!("bandwidth {h} is not positive")));
    }
    let small = a.len().min(b.len());
    if small < 2 {
        return Err(EvalError::TooFewSamples { need: 2, got: small });
    }

    let swap = match a.len().cmp(&b.len()) {
        std::cmp::Ordering::Less => false,
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => {
            let key = |s: &SampleSet| -> Vec<u64> {
                s.rows().flatten().map(|v| v.to_bits()).collect()
            };
            key(a) > key(b)
        }
    };
    let (x, y) = if swap { (b, a) } else { (a, b) };

    let inv2h2: Vec<f64> = bandwidths.iter().map(|h| 1.0 / (2.0 * h * h)).collect();
    let sx = within_sums(x, &inv2h2);
    let sy = within_sums(y, &inv2h2);
    let sxy = cross_sums(x, y, &inv2h2);
    let (m, n) = (x.len() as f64, y.len() as f64);
    let per_bandwidth: Vec<f64> = (0..bandwidths.len())
        .map(|k| {
            2.0 * sx[k] / (m * (m - 1.0)) + 2.0 * sy[k] / (n * (n - 1.0))
                - 2.0 * sxy[k] / (m * n)
        })
        .collect();
    let mmd2 = per_bandwidth.iter().sum();
    Ok(MmdReport {
        n_a: a.len(),
        n_b: b.len(),
        bandwidths: bandwidths.to_vec(),
        per_bandwidth,
        mmd2,
    })
}

/// Trapezoid-rule quadrature oracle for 2D mixture posteriors. The clean
/// log-density is evaluated once per node at construction and reused.
pub struct GridOracle {
    mog: GaussianMixture,
    lo: [f64; 2],
    hi: [f64; 2],
    nodes: usize,
    log_clean: Vec<f64>,
}

/// Posterior moments from quadrature. `normalization` is the ratio of the
/// grid integral of `p_d(x)·N(x̃; x, σ²I)` to the analytic noisy density at
/// x̃ — 1 up to quadrature and truncation error when the box is adequate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMoments {
    pub mean: Vec<f64>,
    /// Row-major 2×2 covariance.
    pub cov: Vec<f64>,
    pub normalization: f64,
}

impl GridOracle {
    pub fn new(
        mog: &GaussianMixture,
        lo: [f64; 2],
        hi: [f64; 2],
        nodes: usize,
    ) -> Result<Self, EvalError> {
        if mog.dim() != 2 {
            return Err(EvalError::Quadrature("grid oracle is 2D only".into()));
        }
        if nodes < 3 {
            return Err(EvalError::Quadrature("need at least 3 nodes per axis".into()));
        }
        if !(lo[0] < hi[0]) || !(lo[1] < hi[1]) {
            return Err(EvalError::Quadrature("empty integration box".into()));
        }
        let mut log_clean = vec![0.0; nodes * nodes];
        for iy in 0..nodes {
            let y = lo[1] + (hi[1] - lo[1]) * iy as f64 / (nodes - 1) as f64;
            for ix in 0..nodes {
                let x = lo[0] + (hi[0] - lo[0]) * ix as f64 / (nodes - 1) as f64;
                log_clean[iy * nodes + ix] = mog.logpdf(&[x, y]);
            }
        }
        Ok(Self { mog: mog.clone(), lo, hi, nodes, log_clean })
    }

    /// 401×401 nodes on `[−2, 2]²`, adequate for the unit-box mixtures here.
    pub fn default_box(mog: &GaussianMixture) -> Result<Self, EvalError> {
        Self::new(mog, [-2.0, -2.0], [2.0, 2.0], 401)
    }

    fn node(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.lo[0] + (self.hi[0] - self.lo[0]) * ix as f64 / (self.nodes - 1) as f64,
            self.lo[1] + (self.hi[1] - self.lo[1]) * iy as f64 / (self.nodes - 1) as f64,
        ]
    }

    /// Mean, covariance, and normalization diagnostic of the denoising
    /// posterior `p(x | x̃) ∝ p_d(x)·N(x̃; x, σ²I)` by trapezoid quadrature.
    ///
    /// Errors when the normalization leaves `[0.99, 1.01]`: the box or the
    /// resolution is then inadequate and the moments cannot be trusted.
    pub fn posterior_moments(&self, sigma: f64, x_noisy: &[f64]) -> Result<GridMoments, EvalError> {
        assert_eq!(x_noisy.len(), 2);
        assert!(sigma > 0.0);
        let n = self.nodes;
        let inv2s2 = 1.0 / (2.0 * sigma * sigma);
        let log_norm = -(TAU * sigma * sigma).ln();

        let mut logw = vec![0.0; n * n];
        let mut max_lw = f64::NEG_INFINITY;
        for iy in 0..n {
            for ix in 0..n {
                let p = self.node(ix, iy);
                let d2 = (x_noisy[0] - p[0]) * (x_noisy[0] - p[0])
                    + (x_noisy[1] - p[1]) * (x_noisy[1] - p[1]);
                let lw = self.log_clean[iy * n + ix] + log_norm - d2 * inv2s2;
                logw[iy * n + ix] = lw;
                if lw > max_lw {
                    max_lw = lw;
                }
            }
        }
        if !max_lw.is_finite() {
            return Err(EvalError::Quadrature("posterior weight underflow on grid".into()));
        }

        // Trapezoid weights: interior 1, edges 1/2, corners 1/4.
        let axis_w = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let mut w = vec![0.0; n * n];
        let mut total = 0.0;
        for iy in 0..n {
            for ix in 0..n {
                let v = axis_w(ix) * axis_w(iy) * (logw[iy * n + ix] - max_lw).exp();
                w[iy * n + ix] = v;
                total += v;
            }
        }
        let dx = (self.hi[0] - self.lo[0]) / (n - 1) as f64;
        let dy = (self.hi[1] - self.lo[1]) / (n - 1) as f64;
        let log_integral = max_lw + (total * dx * dy).ln();
        let log_evidence = self.mog.noisy(sigma).logpdf(x_noisy);
        let normalization = (log_integral - log_evidence).exp();
        if !(0.99..=1.01).contains(&normalization) {
            return Err(EvalError::Quadrature(format!(
                "grid normalization {normalization:.6} outside [0.99, 1.01]; \
                 enlarge the box or refine the grid"
            )));
        }

        let mut mean = [0.0; 2];
        for iy in 0..n {
            for ix in 0..n {
                let p = self.node(ix, iy);
                let v = w[iy * n + ix];
                mean[0] += v * p[0];
                mean[1] += v * p[1];
            }
        }
        mean[0] /= total;
        mean[1] /= total;

        let mut cov = [0.0; 4];
        for iy in 0..n {
            for ix in 0..n {
                let p = self.node(ix, iy);
                let v = w[iy * n + ix];
                let d0 = p[0] - mean[0];
                let d1 = p[1] - mean[1];
                cov[0] += v * d0 * d0;
                cov[1] += v * d0 * d1;
                cov[3] += v * d1 * d1;
            }
        }
        cov[0] /= total;
        cov[1] /= total;
        cov[2] = cov[1];
        cov[3] /= total;

        Ok(GridMoments { mean: mean.to_vec(), cov: cov.to_vec(), normalization })
    }
}

/// Fraction of samples within `radius` of each center, plus the total
/// fraction inside any ball. Meaningful when the balls are disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeCoverage {
    pub fractions: Vec<f64>,
    pub inside: f64,
}

pub fn mode_coverage(samples: &SampleSet, centers: &[Vec<f64>], radius: f64) -> ModeCoverage {
    let r2 = radius * radius;
    let mut counts = vec![0usize; centers.len()];
    for x in samples.rows() {
        for (m, c) in centers.iter().enumerate() {
            let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 <= r2 {
                counts[m] += 1;
            }
        }
    }
    let n = samples.len().max(1) as f64;
    let fractions: Vec<f64> = counts.iter().map(|c| *c as f64 / n).collect();
    ModeCoverage { inside: fractions.iter().sum(), fractions }
}

/// Per-window mode occupancy along a chain: for each consecutive window of
/// `window` rows, the fraction of its rows within `radius` of each center.
/// A trailing partial window is dropped.
pub fn occupancy_windows(
    samples: &SampleSet,
    centers: &[Vec<f64>],
    radius: f64,
    window: usize,
) -> Vec<Vec<f64>> {
    assert!(window > 0);
    let r2 = radius * radius;
    let mut out = Vec::new();
    let full = samples.len() / window;
    for wdx in 0..full {
        let mut counts = vec![0usize; centers.len()];
        for i in wdx * window..(wdx + 1) * window {
            let x = samples.row(i);
            for (m, c) in centers.iter().enumerate() {
                let d2: f64 = x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 <= r2 {
                    counts[m] += 1;
                }
            }
        }
        out.push(counts.iter().map(|c| *c as f64 / window as f64).collect());
    }
    out
}

/// Effective sample size of a scalar chain by the initial-monotone positive
/// sequence estimator: autocorrelations are summed in adjacent pairs, the
/// pair sums are truncated at the first nonpositive one and forced to be
/// nonincreasing, and `ESS = n / τ` with `τ = 2·Σ pairs − 1`.
pub fn effective_sample_size(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return n as f64;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let gamma = |k: usize| -> f64 {
        let mut s = 0.0;
        for t in 0..n - k {
            s += (xs[t] - mean) * (xs[t + k] - mean);
        }
        s / n as f64
    };
    let g0 = gamma(0);
    if g0 <= 0.0 {
        return n as f64; // constant chain: every value repeats, call it n
    }
    let mut tau = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let pair = (gamma(k) + gamma(k + 1)) / g0;
        if pair <= 0.0 {
            break;
        }
        let capped = pair.min(prev);
        tau += 2.0 * capped;
        prev = capped;
        k += 2;
    }
    let tau = (tau - 1.0).max(1.0 / n as f64);
    n as f64 / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn mog_samples(mog: &GaussianMixture, n: usize, seed: u64) -> SampleSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = SampleSet::new(mog.dim());
        for _ in 0..n {
            set.push(&mog.sample(&mut rng));
        }
        set
    }

    #[test]
    fn two_point_sets_match_hand_computation() {
        let a = SampleSet::from_rows(2, &[[0.0, 0.0], [1.0, 0.0]]);
        let b = SampleSet::from_rows(2, &[[0.0, 1.0], [2.0, -1.0]]);
        let hs = [0.5, 1.0];
        let k = |x: &[f64], y: &[f64], h: f64| {
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            (-d2 / (2.0 * h * h)).exp()
        };
        let report = mmd(&a, &b, &hs).unwrap();
        for (i, h) in hs.iter().enumerate() {
            let want = k(a.row(0), a.row(1), *h) + k(b.row(0), b.row(1), *h)
                - 0.5
                    * (k(a.row(0), b.row(0), *h)
                        + k(a.row(0), b.row(1), *h)
                        + k(a.row(1), b.row(0), *h)
                        + k(a.row(1), b.row(1), *h));
            assert!(
                (report.per_bandwidth[i] - want).abs() < 1e-15,
                "bandwidth {h}: {} vs {want}",
                report.per_bandwidth[i]
            );
        }
        let sum: f64 = report.per_bandwidth.iter().sum();
        assert_eq!(sum, report.mmd2);
    }

    #[test]
    fn mmd_is_bit_exact_symmetric() {
        let mog = GaussianMixture::four_corners();
        let a = mog_samples(&mog, 37, 1);
        let b = mog_samples(&mog, 53, 2);
        let ab = mmd(&a, &b, &DEFAULT_BANDWIDTHS).unwrap();
        let ba = mmd(&b, &a, &DEFAULT_BANDWIDTHS).unwrap();
        assert_eq!(ab.mmd2, ba.mmd2);
        assert_eq!(ab.per_bandwidth, ba.per_bandwidth);
        assert_eq!(ab.n_a, 37);
        assert_eq!(ba.n_a, 53);

        // Equal sizes exercise the content-based ordering.
        let c = mog_samples(&mog, 40, 3);
        let d = mog_samples(&mog, 40, 4);
        let cd = mmd(&c, &d, &DEFAULT_BANDWIDTHS).unwrap();
        let dc = mmd(&d, &c, &DEFAULT_BANDWIDTHS).unwrap();
        assert_eq!(cd.mmd2, dc.mmd2);
    }

    #[test]
    fn same_distribution_mmd_is_near_zero() {
        let mog = GaussianMixture::four_corners();
        let a = mog_samples(&mog, 10_000, 5);
        let b = mog_samples(&mog, 10_000, 6);
        let report = mmd(&a, &b, &DEFAULT_BANDWIDTHS).unwrap();
        assert!(report.mmd2.abs() <= 0.005, "null MMD² {}", report.mmd2);
    }

    #[test]
    fn unbiasedness_across_many_null_pairs() {
        // The U-statistic has mean zero under the null; check the average
        // over repeated draws sits within a few standard errors.
        let mog = GaussianMixture::four_corners();
        let vals: Vec<f64> = (0..100)
            .map(|r| {
                let a = mog_samples(&mog, 200, 1000 + 2 * r);
                let b = mog_samples(&mog, 200, 1001 + 2 * r);
                mmd(&a, &b, &DEFAULT_BANDWIDTHS).unwrap().mmd2
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (vals.len() - 1) as f64)
            .sqrt();
        assert!(
            mean.abs() <= 4.0 * sd / (vals.len() as f64).sqrt(),
            "null mean {mean} vs spread {sd}"
        );
        // And negative estimates do occur near the null — that is what
        // "unbiased around zero" implies.
        assert!(vals.iter().any(|v| *v < 0.0));
    }

    #[test]
    fn permutation_test_is_calibrated_under_the_null() {
        use rand::seq::SliceRandom;
        let mog = GaussianMixture::four_corners();
        let n = 600;
        let a = mog_samples(&mog, n, 7);
        let b = mog_samples(&mog, n, 8);
        let observed = mmd(&a, &b, &DEFAULT_BANDWIDTHS).unwrap().mmd2;

        let mut pooled: Vec<Vec<f64>> =
            a.rows().chain(b.rows()).map(|r| r.to_vec()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut exceed = 0;
        let perms = 99;
        for _ in 0..perms {
            pooled.shuffle(&mut rng);
            let pa = SampleSet::from_rows(2, &pooled[..n]);
            let pb = SampleSet::from_rows(2, &pooled[n..]);
            if mmd(&pa, &pb, &DEFAULT_BANDWIDTHS).unwrap().mmd2 >= observed {
                exceed += 1;
            }
        }
        // Under the null the observed statistic is exchangeable with the
        // permuted ones, so its rank is uniform; reject only the extremes.
        let p = (exceed + 1) as f64 / (perms + 1) as f64;
        assert!(p > 0.01, "permutation p-value {p} too small under the null");
    }

    #[test]
    fn shifted_distribution_is_detected_and_ordered() {
        let mog = GaussianMixture::four_corners();
        let shift = |delta: f64| {
            let means: Vec<Vec<f64>> =
                mog.means().iter().map(|m| vec![m[0] + delta, m[1] + delta]).collect();
            GaussianMixture::new(mog.weights().to_vec(), means, mog.component_std()).unwrap()
        };
        let a = mog_samples(&mog, 2000, 11);
        let b_small = mog_samples(&shift(0.5), 2000, 12);
        let b_large = mog_samples(&shift(1.0), 2000, 13);
        let small = mmd(&a, &b_small, &DEFAULT_BANDWIDTHS).unwrap().mmd2;
        let large = mmd(&a, &b_large, &DEFAULT_BANDWIDTHS).unwrap().mmd2;
        assert!(small > 0.01, "half-unit shift not detected: {small}");
        assert!(large > small, "MMD² should grow with the shift: {large} vs {small}");
    }

    #[test]
    fn mmd_input_validation() {
        let a = SampleSet::from_rows(2, &[[0.0, 0.0], [1.0, 1.0]]);
        let b3 = SampleSet::from_rows(3, &[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert!(matches!(mmd(&a, &b3, &[1.0]), Err(EvalError::DimMismatch(2, 3))));
        let one = SampleSet::from_rows(2, &[[0.0, 0.0]]);
        assert!(matches!(
            mmd(&a, &one, &[1.0]),
            Err(EvalError::TooFewSamples { need: 2, got: 1 })
        ));
        assert!(mmd(&a, &a, &[]).is_err());
        assert!(mmd(&a, &a, &[0.0]).is_err());
    }

    #[test]
    fn grid_matches_single_gaussian_closed_form() {
        let (mu, s, sigma) = ([0.2, -0.1], 0.3, 0.25);
        let g = GaussianMixture::single(mu.to_vec(), s).unwrap();
        let oracle = GridOracle::default_box(&g).unwrap();
        let xt = [0.5, 0.3];
        let m = oracle.posterior_moments(sigma, &xt).unwrap();

        let denom = s * s + sigma * sigma;
        let want_var = s * s * sigma * sigma / denom;
        for i in 0..2 {
            let want = (sigma * sigma * mu[i] + s * s * xt[i]) / denom;
            assert!((m.mean[i] - want).abs() < 1e-6, "mean[{i}] {} vs {want}", m.mean[i]);
        }
        for (i, want) in [want_var, 0.0, 0.0, want_var].iter().enumerate() {
            assert!((m.cov[i] - want).abs() < 1e-6, "cov[{i}] {} vs {want}", m.cov[i]);
        }
        assert!((m.normalization - 1.0).abs() < 1e-4, "normalization {}", m.normalization);
    }

    #[test]
    fn refining_the_grid_reduces_the_error() {
        let (mu, s, sigma) = ([0.2, -0.1], 0.3, 0.25);
        let g = GaussianMixture::single(mu.to_vec(), s).unwrap();
        let xt = [0.5, 0.3];
        let denom = s * s + sigma * sigma;
        let want0 = (sigma * sigma * mu[0] + s * s * xt[0]) / denom;

        // 15 nodes is ~1.5 points per posterior standard deviation — coarse
        // enough for a measurable quadrature error, fine enough to keep the
        // normalization inside its hard bounds.
        let coarse = GridOracle::new(&g, [-2.0, -2.0], [2.0, 2.0], 15)
            .unwrap()
            .posterior_moments(sigma, &xt)
            .unwrap();
        let fine = GridOracle::new(&g, [-2.0, -2.0], [2.0, 2.0], 401)
            .unwrap()
            .posterior_moments(sigma, &xt)
            .unwrap();
        let ec = (coarse.mean[0] - want0).abs();
        let ef = (fine.mean[0] - want0).abs();
        assert!(ef <= ec, "refinement must not hurt: {ef} vs {ec}");
        assert!(ef < 1e-6);
    }

    #[test]
    fn symmetric_observation_has_centered_posterior() {
        let mog = GaussianMixture::four_corners();
        let oracle = GridOracle::default_box(&mog).unwrap();
        let m = oracle.posterior_moments(0.2, &[0.0, 0.0]).unwrap();
        assert!(m.mean[0].abs() < 1e-10 && m.mean[1].abs() < 1e-10, "{:?}", m.mean);
        // Fourfold symmetry also kills the covariance cross term.
        assert!(m.cov[1].abs() < 1e-10);
        assert!((m.cov[0] - m.cov[3]).abs() < 1e-10);
    }

    #[test]
    fn heavy_noise_posterior_approaches_the_prior() {
        // With σ ≫ component std and weak shrinkage toward x̃, the posterior
        // is close to the clean density itself.
        let (mu, s, sigma) = ([0.4, -0.3], 0.2, 2.0);
        let g = GaussianMixture::single(mu.to_vec(), s).unwrap();
        let oracle = GridOracle::default_box(&g).unwrap();
        let m = oracle.posterior_moments(sigma, &[0.5, -0.2]).unwrap();
        for i in 0..2 {
            assert!((m.mean[i] - mu[i]).abs() < 5e-3, "mean[{i}] {}", m.mean[i]);
        }
        assert!((m.cov[0] - s * s).abs() < 5e-3);
        assert!((m.cov[3] - s * s).abs() < 5e-3);
    }

    #[test]
    fn bad_quadrature_setups_error_out() {
        let g = GaussianMixture::single(vec![0.0, 0.0], 0.2).unwrap();
        // Box too small for σ = 1 noise around x̃ far outside: mass truncated.
        let tiny = GridOracle::new(&g, [-0.5, -0.5], [0.5, 0.5], 101).unwrap();
        assert!(matches!(
            tiny.posterior_moments(1.0, &[3.0, 3.0]),
            Err(EvalError::Quadrature(_))
        ));
        assert!(GridOracle::new(&g, [-2.0, -2.0], [2.0, 2.0], 2).is_err());
        assert!(GridOracle::new(&g, [2.0, -2.0], [-2.0, 2.0], 101).is_err());
        let g3 = GaussianMixture::single(vec![0.0; 3], 0.2).unwrap();
        assert!(GridOracle::default_box(&g3).is_err());
    }

    #[test]
    fn mode_coverage_matches_the_analytic_ball_mass() {
        // P(‖x−μ‖ ≤ r) for an isotropic 2D Gaussian is 1 − e^{−r²/(2s²)};
        // with r = 0.3, s = 0.2 that is 1 − e^{−1.125} ≈ 0.6753 per mode,
        // split evenly across the four modes.
        let mog = GaussianMixture::four_corners();
        let set = mog_samples(&mog, 200_000, 20);
        let cov = mode_coverage(&set, mog.means(), 0.3);
        let per_mode = 0.25 * (1.0 - (-1.125f64).exp());
        for (m, f) in cov.fractions.iter().enumerate() {
            assert!((f - per_mode).abs() < 0.004, "mode {m}: {f} vs {per_mode}");
        }
        assert!((cov.inside - 4.0 * per_mode).abs() < 0.006);
    }

    #[test]
    fn occupancy_windows_track_a_hand_built_chain() {
        let centers = vec![vec![0.0, 0.0], vec![2.0, 0.0]];
        let mut set = SampleSet::new(2);
        for _ in 0..10 {
            set.push(&[0.01, 0.0]);
        }
        for _ in 0..5 {
            set.push(&[2.0, 0.01]);
        }
        for _ in 0..5 {
            set.push(&[9.0, 9.0]);
        }
        // 23 rows total: last partial window dropped.
        set.push(&[0.0, 0.0]);
        set.push(&[0.0, 0.0]);
        set.push(&[0.0, 0.0]);
        let occ = occupancy_windows(&set, &centers, 0.3, 10);
        assert_eq!(occ.len(), 2);
        assert_eq!(occ[0], vec![1.0, 0.0]);
        assert_eq!(occ[1], vec![0.0, 0.5]);
    }

    #[test]
    fn effective_sample_size_tracks_ar1_theory() {
        // AR(1) with coefficient a has τ = (1+a)/(1−a).
        let n = 20_000;
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let gen_ar1 = |a: f64, rng: &mut ChaCha8Rng| -> Vec<f64> {
            let mut xs = Vec::with_capacity(n);
            let mut x = rng.sample::<f64, _>(StandardNormal);
            let innov = (1.0 - a * a).sqrt();
            for _ in 0..n {
                x = a * x + innov * rng.sample::<f64, _>(StandardNormal);
                xs.push(x);
            }
            xs
        };

        let pos = gen_ar1(0.6, &mut rng);
        let ess = effective_sample_size(&pos);
        let want = n as f64 / 4.0; // τ = 1.6/0.4
        assert!(
            (ess - want).abs() < 0.25 * want,
            "AR(0.6) ESS {ess} vs {want}"
        );

        let iid = gen_ar1(0.0, &mut rng);
        let ess = effective_sample_size(&iid);
        assert!(ess > 0.8 * n as f64, "iid ESS {ess}");

        let anti = gen_ar1(-0.5, &mut rng);
        let ess = effective_sample_size(&anti);
        assert!(ess > 1.5 * n as f64, "antithetic ESS {ess}");

        assert_eq!(effective_sample_size(&[1.0, 2.0]), 2.0);
        assert_eq!(effective_sample_size(&vec![3.0; 100]), 100.0);
    }

    #[test]
    fn csv_round_trip_text() {
        let a = SampleSet::from_rows(2, &[[0.0, 0.0], [1.0, 0.0]]);
        let b = SampleSet::from_rows(2, &[[0.0, 1.0], [2.0, -1.0]]);
        let r = mmd(&a, &b, &[0.5, 1.0]).unwrap();
        assert_eq!(r.csv_header(), "label,seed,n_a,n_b,mmd2,mmd,mmd2_h0.5,mmd2_h1");
        let row = r.csv_row("demo", 3);
        assert!(row.starts_with("demo,3,2,2,"));
        assert_eq!(row.split(',').count(), 8);
    }
}
