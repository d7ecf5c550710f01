//! Gaussian approximations of the denoising posterior `p(x | x̃)` for
//! `x̃ = x + σε`, built from a model of the *noisy* density:
//!
//! * mean: `μ(x̃) = x̃ + σ²·∇log q̃(x̃)` — exact, no approximation;
//! * full covariance: `Σ(x̃) = σ⁴·∇²log q̃(x̃) + σ²·I`, spectrally clamped to
//!   stay positive semidefinite;
//! * diagonal: the same matrix's diagonal estimated from sign-vector
//!   Hessian-vector products, entrywise clamped;
//! * isotropic: the x̃-independent scalar `σ² − (σ⁴/d)·E‖∇log q̃‖²`;
//! * learned: a trained mean/log-std network.
//!
//! Every constructor takes the noise scale twice in its `_rel` form: the
//! level the model is evaluated at and the noise actually added. Annealed
//! sampling between two levels σ_hi > σ_lo uses `(σ_hi, √(σ_hi²−σ_lo²))`;
//! plain single-level use passes the same σ for both.

use crate::datasets::SampleSet;
use crate::linalg;
use crate::models::{EnergyModel, ModelError, PosteriorNet};
use crate::DEFAULT_EPS_CLAMP;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

/// Log-std range the learned head is clamped to before exponentiation.
pub const LOGSTD_RANGE: (f64, f64) = (-10.0, 5.0);

#[derive(Debug, Error)]
pub enum PosteriorError {
    #[error(transparent)]
    Capability(#[from] ModelError),
    #[error("covariance not positive definite after spectral repair: this is a bug")]
    NotPositiveDefinite,
    #[error("isotropic variance estimation needs a nonempty noisy sample set")]
    EmptySampleSet,
    #[error("sample set dimension {got} does not match model dimension {want}")]
    DimMismatch { want: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    /// Row-major symmetric PSD `d×d` matrix.
    Full(Vec<f64>),
    /// Per-dimension variances.
    Diagonal(Vec<f64>),
    /// One shared variance.
    Isotropic(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproxKind {
    MmFull,
    MmDiag,
    MmIso,
    Learned,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianApprox {
    pub mean: Vec<f64>,
    pub cov: Covariance,
    pub kind: ApproxKind,
}

/// Posterior mean `x̃ + σ²·s(x̃)`.
pub fn mm_mean(model: &dyn EnergyModel, x_noisy: &[f64], sigma: f64) -> Vec<f64> {
    mm_mean_rel(model, x_noisy, sigma, sigma)
}

pub fn mm_mean_rel(
    model: &dyn EnergyModel,
    x_noisy: &[f64],
    sigma_model: f64,
    sigma_noise: f64,
) -> Vec<f64> {
    let s = model.score(x_noisy, sigma_model);
    let v = sigma_noise * sigma_noise;
    x_noisy.iter().zip(&s).map(|(x, si)| x + v * si).collect()
}

/// Full posterior covariance with the spectral lift that was applied to make
/// it PSD (`repair` is 0 when the raw matrix was already admissible).
#[derive(Debug, Clone, PartialEq)]
pub struct RepairedCov {
    pub cov: Vec<f64>,
    pub repair: f64,
}

/// `σ⁴·∇²log q̃(x̃) + σ²·I`, eigenvalue-clamped to `≥ 1e−8·σ²`.
///
/// Errors with a capability error for models that cannot produce a full
/// Hessian; those callers should use [`mm_diag_cov`] instead.
pub fn mm_full_cov(
    model: &dyn EnergyModel,
    x_noisy: &[f64],
    sigma: f64,
) -> Result<RepairedCov, PosteriorError> {
    mm_full_cov_rel(model, x_noisy, sigma, sigma)
}

pub fn mm_full_cov_rel(
    model: &dyn EnergyModel,
    x_noisy: &[f64],
    sigma_model: f64,
    sigma_noise: f64,
) -> Result<RepairedCov, PosteriorError> {
    let d = model.dim();
    let h = model.hessian(x_noisy, sigma_model)?;
    let v2 = sigma_noise * sigma_noise;
    let v4 = v2 * v2;
    let mut cov = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] = v4 * h[i * d + j] + if i == j { v2 } else { 0.0 };
        }
    }
    let floor = 1e-8 * v2;
    let (evals, evecs) = linalg::sym_eigen(d, &cov);
    let mut repair = 0.0f64;
    let mut clamped = evals.clone();
    for l in clamped.iter_mut() {
        if *l < floor {
            repair = repair.max(floor - *l);
            *l = floor;
        }
    }
    if repair > 0.0 {
        cov = linalg::from_eigen(d, &clamped, &evecs);
        // Reassembly symmetrizes only up to round-off; make it exact.
        for i in 0..d {
            for j in 0..i {
                let s = 0.5 * (cov[i * d + j] + cov[j * d + i]);
                cov[i * d + j] = s;
                cov[j * d + i] = s;
            }
        }
    }
    Ok(RepairedCov { cov, repair })
}

/// Diagonal of the full covariance estimated from `s` Rademacher probes:
/// `Diag(H) ≈ (1/S)·Σ v ⊙ Hv`, then `σ⁴·diag + σ²`, clamped entrywise.
pub fn mm_diag_cov<R: Rng>(
    model: &dyn EnergyModel,
    x_noisy: &[f64],
    sigma: f64,
    s: usize,
    eps_clamp: f64,
    rng: &mut R,
) -> Vec<f64> {
    mm_diag_cov_rel(model, x_noisy, sigma, sigma, s, eps_clamp, rng)
}

pub fn mm_diag_cov_rel<R: Rng>(
    model: &dyn EnergyModel,
    x_noisy: &[f64],
    sigma_model: f64,
    sigma_noise: f64,
    s: usize,
    eps_clamp: f64,
    rng: &mut R,
) -> Vec<f64> {
    assert!(s >= 1, "at least one probe vector");
    let d = model.dim();
    let mut diag = vec![0.0; d];
    let mut v = vec![0.0; d];
    for _ in 0..s {
        for vi in v.iter_mut() {
            *vi = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        let hv = model.hvp(x_noisy, &v, sigma_model);
        for i in 0..d {
            diag[i] += v[i] * hv[i];
        }
    }
    finish_diag(&mut diag, s as f64, sigma_noise, eps_clamp);
    diag
}

/// Exhaustive version of the probe average over all `2^d` sign vectors; the
/// cross terms cancel, so this reproduces the exact Hessian diagonal.
pub fn mm_diag_cov_exhaustive(
    model: &dyn EnergyModel,
    x_noisy: &[f64],
    sigma: f64,
    eps_clamp: f64,
) -> Vec<f64> {
    let d = model.dim();
    assert!(d <= 16, "exhaustive enumeration is 2^d probes");
    let mut diag = vec![0.0; d];
    let mut v = vec![0.0; d];
    let total = 1usize << d;
    for mask in 0..total {
        for (i, vi) in v.iter_mut().enumerate() {
            *vi = if mask & (1 << i) != 0 { 1.0 } else { -1.0 };
        }
        let hv = model.hvp(x_noisy, &v, sigma);
        for i in 0..d {
            diag[i] += v[i] * hv[i];
        }
    }
    finish_diag(&mut diag, total as f64, sigma, eps_clamp);
    diag
}

fn finish_diag(diag: &mut [f64], count: f64, sigma_noise: f64, eps_clamp: f64) {
    let v2 = sigma_noise * sigma_noise;
    let v4 = v2 * v2;
    for h in diag.iter_mut() {
        *h = (v4 * (*h / count) + v2).max(eps_clamp);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsoVariance {
    pub variance: f64,
    /// Set when the estimate came out below the clamp floor (possible under
    /// Monte Carlo error) and was clamped.
    pub clamped: bool,
}

/// The x̃-independent variance `σ² − (σ⁴/d)·⟨‖s(x̃)‖²⟩` averaged over the
/// provided noisy samples; estimate once, reuse for the whole chain.
pub fn iso_variance(
    model: &dyn EnergyModel,
    noisy_samples: &SampleSet,
    sigma: f64,
) -> Result<IsoVariance, PosteriorError> {
    if noisy_samples.is_empty() {
        return Err(PosteriorError::EmptySampleSet);
    }
    let d = model.dim();
    if noisy_samples.dim() != d {
        return Err(PosteriorError::DimMismatch { want: d, got: noisy_samples.dim() });
    }
    let sq: Vec<f64> = (0..noisy_samples.len())
        .into_par_iter()
        .map(|i| {
            let s = model.score(noisy_samples.row(i), sigma);
            s.iter().map(|v| v * v).sum::<f64>()
        })
        .collect();
    let mean_sq = sq.iter().sum::<f64>() / sq.len() as f64;
    let v2 = sigma * sigma;
    let raw = v2 - v2 * v2 / d as f64 * mean_sq;
    if raw < DEFAULT_EPS_CLAMP {
        Ok(IsoVariance { variance: DEFAULT_EPS_CLAMP, clamped: true })
    } else {
        Ok(IsoVariance { variance: raw, clamped: false })
    }
}

/// Mean/variance read off a trained posterior net, log-std clamped to
/// [`LOGSTD_RANGE`] before exponentiation.
pub fn learned_posterior(net: &PosteriorNet, x_noisy: &[f64]) -> GaussianApprox {
    let (mean, logstd) = net.forward(x_noisy);
    let var = logstd
        .iter()
        .map(|l| (2.0 * l.clamp(LOGSTD_RANGE.0, LOGSTD_RANGE.1)).exp())
        .collect();
    GaussianApprox { mean, cov: Covariance::Diagonal(var), kind: ApproxKind::Learned }
}

/// Draw `mean + L·z` (full, via Cholesky of the repaired covariance) or
/// `mean + √var ⊙ z`; `z ~ N(0, I)` consumed from `rng` in index order.
pub fn sample_gaussian<R: Rng>(
    approx: &GaussianApprox,
    rng: &mut R,
) -> Result<Vec<f64>, PosteriorError> {
    let d = approx.mean.len();
    let mut z = vec![0.0; d];
    for zi in z.iter_mut() {
        *zi = rng.sample::<f64, _>(StandardNormal);
    }
    match &approx.cov {
        Covariance::Full(cov) => {
            let l = linalg::cholesky_lower(d, cov).ok_or(PosteriorError::NotPositiveDefinite)?;
            let mut out = approx.mean.clone();
            for i in 0..d {
                for j in 0..=i {
                    out[i] += l[i * d + j] * z[j];
                }
            }
            Ok(out)
        }
        Covariance::Diagonal(var) => Ok(approx
            .mean
            .iter()
            .zip(var)
            .zip(&z)
            .map(|((m, v), zi)| m + v.sqrt() * zi)
            .collect()),
        Covariance::Isotropic(var) => {
            let sd = var.sqrt();
            Ok(approx.mean.iter().zip(&z).map(|(m, zi)| m + sd * zi).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::GaussianMixture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// `N(μ_d, s²)` closed forms: posterior mean `(σ²μ_d + s²x̃)/(σ²+s²)`,
    /// variance `s²σ²/(σ²+s²)` per dimension.
    fn closed_form(mu: &[f64], s: f64, sigma: f64, xt: &[f64]) -> (Vec<f64>, f64) {
        let denom = s * s + sigma * sigma;
        let mean = mu
            .iter()
            .zip(xt)
            .map(|(m, x)| (sigma * sigma * m + s * s * x) / denom)
            .collect();
        (mean, s * s * sigma * sigma / denom)
    }

    #[test]
    fn gaussian_closed_form_mean_and_full_cov() {
        let mu = [0.4, -1.2];
        let (s, sigma) = (0.7, 0.5);
        let g = GaussianMixture::single(mu.to_vec(), s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..10 {
            let xt = [
                mu[0] + 2.0 * rng.random::<f64>() - 1.0,
                mu[1] + 2.0 * rng.random::<f64>() - 1.0,
            ];
            let (want_mean, want_var) = closed_form(&mu, s, sigma, &xt);
            let mean = mm_mean(&g, &xt, sigma);
            for (a, b) in mean.iter().zip(&want_mean) {
                assert!((a - b).abs() < 1e-10, "mean {a} vs {b}");
            }
            let rc = mm_full_cov(&g, &xt, sigma).unwrap();
            assert_eq!(rc.repair, 0.0);
            for i in 0..2 {
                for j in 0..2 {
                    let want = if i == j { want_var } else { 0.0 };
                    assert!((rc.cov[i * 2 + j] - want).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gaussian_closed_form_diag_and_iso() {
        let mu = [0.0, 0.0];
        let (s, sigma) = (1.0, 1.0);
        let g = GaussianMixture::single(mu.to_vec(), s).unwrap();
        let xt = [2.0, 0.0];
        let (_, want_var) = closed_form(&mu, s, sigma, &xt);

        // Single probe suffices: the Hessian is a multiple of the identity.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let diag = mm_diag_cov(&g, &xt, sigma, 1, DEFAULT_EPS_CLAMP, &mut rng);
        for v in &diag {
            assert!((v - want_var).abs() < 1e-12, "{v} vs {want_var}");
        }
        let ex = mm_diag_cov_exhaustive(&g, &xt, sigma, DEFAULT_EPS_CLAMP);
        for v in &ex {
            assert!((v - want_var).abs() < 1e-12);
        }

        // ‖s(x̃)‖² equals its expectation exactly on the sphere of radius
        // √(d·(s²+σ²)) around μ_d, so the estimate is exact there.
        let r = (2.0 * (s * s + sigma * sigma)).sqrt();
        let mut set = SampleSet::new(2);
        for k in 0..8 {
            let th = k as f64 * std::f64::consts::PI / 4.0;
            set.push(&[mu[0] + r * th.cos(), mu[1] + r * th.sin()]);
        }
        let iso = iso_variance(&g, &set, sigma).unwrap();
        assert!(!iso.clamped);
        assert!((iso.variance - want_var).abs() < 1e-10, "{} vs {want_var}", iso.variance);
    }

    #[test]
    fn covariance_is_sigma_sq_times_mean_jacobian() {
        // The covariance identity is equivalent to Σ(x̃) = σ²·∂μ/∂x̃.
        let mog = GaussianMixture::four_corners();
        let sigma = 0.2;
        let h = 1e-5;
        let pts = [[0.8, 0.9], [0.1, -0.3], [-0.7, 0.6]];
        for xt in &pts {
            let rc = mm_full_cov(&mog, xt, sigma).unwrap();
            assert_eq!(rc.repair, 0.0);
            for j in 0..2 {
                let mut xp = *xt;
                let mut xm = *xt;
                xp[j] += h;
                xm[j] -= h;
                let mp = mm_mean(&mog, &xp, sigma);
                let mm = mm_mean(&mog, &xm, sigma);
                for i in 0..2 {
                    let jac = (mp[i] - mm[i]) / (2.0 * h);
                    let want = sigma * sigma * jac;
                    let got = rc.cov[i * 2 + j];
                    assert!(
                        (got - want).abs() <= 1e-5 * (1.0 + want.abs()),
                        "Σ[{i}{j}] {got} vs σ²J {want} at {xt:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn exhaustive_probes_match_full_diagonal() {
        let mog = GaussianMixture::four_corners();
        let sigma = 0.2;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let xt = [
                3.0 * rng.random::<f64>() - 1.5,
                3.0 * rng.random::<f64>() - 1.5,
            ];
            let full = mm_full_cov(&mog, &xt, sigma).unwrap();
            let ex = mm_diag_cov_exhaustive(&mog, &xt, sigma, DEFAULT_EPS_CLAMP);
            for i in 0..2 {
                assert!(
                    (ex[i] - full.cov[i * 2 + i]).abs() < 1e-12,
                    "probe diag {} vs full {}",
                    ex[i],
                    full.cov[i * 2 + i]
                );
            }
        }
    }

    /// Constant-curvature stub: log-density Hessian `−c·I` everywhere.
    struct NegCurv {
        c: f64,
    }

    impl EnergyModel for NegCurv {
        fn dim(&self) -> usize {
            2
        }
        fn energy(&self, x: &[f64], _sigma: f64) -> f64 {
            0.5 * self.c * x.iter().map(|v| v * v).sum::<f64>()
        }
        fn score(&self, x: &[f64], _sigma: f64) -> Vec<f64> {
            x.iter().map(|v| -self.c * v).collect()
        }
        fn hvp(&self, _x: &[f64], v: &[f64], _sigma: f64) -> Vec<f64> {
            v.iter().map(|vi| -self.c * vi).collect()
        }
    }

    #[test]
    fn clamps_engage_on_hostile_curvature() {
        let model = NegCurv { c: 1e6 };
        let sigma = 0.2;
        let xt = [0.3, -0.1];
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let diag = mm_diag_cov(&model, &xt, sigma, 4, DEFAULT_EPS_CLAMP, &mut rng);
        assert_eq!(diag, vec![DEFAULT_EPS_CLAMP; 2]);

        let rc = mm_full_cov(&model, &xt, sigma).unwrap();
        assert!(rc.repair > 0.0);
        let floor = 1e-8 * sigma * sigma;
        let (evals, _) = linalg::sym_eigen(2, &rc.cov);
        for l in &evals {
            assert!(*l >= floor * 0.999, "eigenvalue {l} below floor");
        }
        // The repaired matrix must factor.
        assert!(linalg::cholesky_lower(2, &rc.cov).is_some());
    }

    /// Vector-field stub without a usable Hessian.
    struct ScoreOnly;

    impl EnergyModel for ScoreOnly {
        fn dim(&self) -> usize {
            2
        }
        fn energy(&self, _x: &[f64], _sigma: f64) -> f64 {
            0.0
        }
        fn score(&self, x: &[f64], _sigma: f64) -> Vec<f64> {
            vec![-x[0] + 0.3 * x[1], -x[1]]
        }
        fn hvp(&self, _x: &[f64], v: &[f64], _sigma: f64) -> Vec<f64> {
            // Asymmetric Jacobian: fine for probe products, not a Hessian.
            vec![-v[0] + 0.3 * v[1], -v[1]]
        }
        fn has_exact_hessian(&self) -> bool {
            false
        }
    }

    #[test]
    fn full_covariance_requires_hessian_capability() {
        let model = ScoreOnly;
        match mm_full_cov(&model, &[0.1, 0.2], 0.3) {
            Err(PosteriorError::Capability(ModelError::HessianUnavailable)) => {}
            other => panic!("expected capability error, got {other:?}"),
        }
        // The diagonal path must still work.
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let diag = mm_diag_cov(&model, &[0.1, 0.2], 0.3, 8, DEFAULT_EPS_CLAMP, &mut rng);
        assert_eq!(diag.len(), 2);
        assert!(diag.iter().all(|v| *v >= DEFAULT_EPS_CLAMP));
    }

    #[test]
    fn iso_variance_clamps_when_negative_and_validates_input() {
        struct HugeScore;
        impl EnergyModel for HugeScore {
            fn dim(&self) -> usize {
                2
            }
            fn energy(&self, _x: &[f64], _s: f64) -> f64 {
                0.0
            }
            fn score(&self, _x: &[f64], _s: f64) -> Vec<f64> {
                vec![1e4, 0.0]
            }
            fn hvp(&self, _x: &[f64], v: &[f64], _s: f64) -> Vec<f64> {
                v.to_vec()
            }
        }
        let mut set = SampleSet::new(2);
        set.push(&[0.0, 0.0]);
        let iso = iso_variance(&HugeScore, &set, 0.2).unwrap();
        assert!(iso.clamped);
        assert_eq!(iso.variance, DEFAULT_EPS_CLAMP);

        let empty = SampleSet::new(2);
        assert!(matches!(
            iso_variance(&HugeScore, &empty, 0.2),
            Err(PosteriorError::EmptySampleSet)
        ));
        let wrong = {
            let mut s = SampleSet::new(3);
            s.push(&[0.0, 0.0, 0.0]);
            s
        };
        assert!(matches!(
            iso_variance(&HugeScore, &wrong, 0.2),
            Err(PosteriorError::DimMismatch { .. })
        ));
    }

    #[test]
    fn zero_score_model_gives_sigma_squared_iso() {
        struct ZeroScore;
        impl EnergyModel for ZeroScore {
            fn dim(&self) -> usize {
                2
            }
            fn energy(&self, _x: &[f64], _s: f64) -> f64 {
                0.0
            }
            fn score(&self, _x: &[f64], _s: f64) -> Vec<f64> {
                vec![0.0, 0.0]
            }
            fn hvp(&self, _x: &[f64], _v: &[f64], _s: f64) -> Vec<f64> {
                vec![0.0, 0.0]
            }
        }
        let mut set = SampleSet::new(2);
        set.push(&[0.4, -0.5]);
        let iso = iso_variance(&ZeroScore, &set, 0.3).unwrap();
        assert!((iso.variance - 0.09).abs() < 1e-15);
        // And a zero score leaves the mean at x̃.
        assert_eq!(mm_mean(&ZeroScore, &[0.4, -0.5], 0.3), vec![0.4, -0.5]);
    }

    #[test]
    fn learned_posterior_reads_heads_and_clamps() {
        use crate::numgrad::{MlpParams, MlpShape};
        let zero = PosteriorNet::new(MlpParams::zeros(&MlpShape::new(2, &[4], 4))).unwrap();
        let approx = learned_posterior(&zero, &[0.3, 0.4]);
        assert_eq!(approx.mean, vec![0.0, 0.0]);
        assert_eq!(approx.kind, ApproxKind::Learned);
        match &approx.cov {
            Covariance::Diagonal(v) => assert_eq!(v, &vec![1.0, 1.0]),
            other => panic!("{other:?}"),
        }

        let mut extreme = MlpParams::zeros(&MlpShape::new(2, &[4], 4));
        extreme.layers.last_mut().unwrap().b[2] = 12.0;
        extreme.layers.last_mut().unwrap().b[3] = -40.0;
        let net = PosteriorNet::new(extreme).unwrap();
        match learned_posterior(&net, &[0.0, 0.0]).cov {
            Covariance::Diagonal(v) => {
                assert!((v[0] - (2.0f64 * 5.0).exp()).abs() < 1e-7, "upper clamp");
                assert!((v[1] - (2.0f64 * -10.0).exp()).abs() < 1e-30, "lower clamp");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_covariance_sampling_matches_moments() {
        let approx = GaussianApprox {
            mean: vec![1.0, -2.0],
            cov: Covariance::Full(vec![2.0, 1.0, 1.0, 2.0]),
            kind: ApproxKind::MmFull,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let n = 100_000;
        let mut mean = [0.0; 2];
        let mut cov = [0.0; 4];
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let x = sample_gaussian(&approx, &mut rng).unwrap();
            mean[0] += x[0];
            mean[1] += x[1];
            draws.push(x);
        }
        mean[0] /= n as f64;
        mean[1] /= n as f64;
        for x in &draws {
            let d0 = x[0] - mean[0];
            let d1 = x[1] - mean[1];
            cov[0] += d0 * d0;
            cov[1] += d0 * d1;
            cov[2] += d1 * d0;
            cov[3] += d1 * d1;
        }
        for c in cov.iter_mut() {
            *c /= (n - 1) as f64;
        }
        // SE(mean_i) = √(2/n) ≈ 0.0045; SE(cov) ≈ √((σii σjj + σij²)/n).
        assert!((mean[0] - 1.0).abs() < 3.0 * 0.0045, "{}", mean[0]);
        assert!((mean[1] + 2.0).abs() < 3.0 * 0.0045, "{}", mean[1]);
        let se_diag = (8.0f64 / n as f64).sqrt();
        let se_off = (5.0f64 / n as f64).sqrt();
        assert!((cov[0] - 2.0).abs() < 3.0 * se_diag, "{}", cov[0]);
        assert!((cov[3] - 2.0).abs() < 3.0 * se_diag, "{}", cov[3]);
        assert!((cov[1] - 1.0).abs() < 3.0 * se_off, "{}", cov[1]);
    }

    #[test]
    fn indefinite_full_covariance_is_rejected_at_sampling() {
        let approx = GaussianApprox {
            mean: vec![0.0, 0.0],
            cov: Covariance::Full(vec![1.0, 2.0, 2.0, 1.0]),
            kind: ApproxKind::MmFull,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        assert!(matches!(
            sample_gaussian(&approx, &mut rng),
            Err(PosteriorError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn diagonal_and_isotropic_sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let diag = GaussianApprox {
            mean: vec![0.5, -0.5],
            cov: Covariance::Diagonal(vec![0.25, 4.0]),
            kind: ApproxKind::MmDiag,
        };
        let n = 50_000;
        let mut m = [0.0; 2];
        let mut v = [0.0; 2];
        for _ in 0..n {
            let x = sample_gaussian(&diag, &mut rng).unwrap();
            m[0] += x[0];
            m[1] += x[1];
            v[0] += (x[0] - 0.5) * (x[0] - 0.5);
            v[1] += (x[1] + 0.5) * (x[1] + 0.5);
        }
        for i in 0..2 {
            m[i] /= n as f64;
            v[i] /= n as f64;
        }
        assert!((m[0] - 0.5).abs() < 3.0 * (0.25f64 / n as f64).sqrt());
        assert!((m[1] + 0.5).abs() < 3.0 * (4.0f64 / n as f64).sqrt());
        assert!((v[0] - 0.25).abs() < 3.0 * 0.25 * (2.0 / n as f64).sqrt());
        assert!((v[1] - 4.0).abs() < 3.0 * 4.0 * (2.0 / n as f64).sqrt());

        let iso = GaussianApprox {
            mean: vec![0.0, 0.0],
            cov: Covariance::Isotropic(1e-12),
            kind: ApproxKind::MmIso,
        };
        let x = sample_gaussian(&iso, &mut rng).unwrap();
        assert!(x[0].abs() < 1e-5 && x[1].abs() < 1e-5, "tiny variance pins samples to the mean");
    }

    proptest::proptest! {
        /// Whatever symmetric curvature a model reports, the repaired full
        /// covariance must admit a Cholesky factorization.
        #[test]
        fn repaired_covariance_always_factors(
            a in -50.0f64..50.0,
            b in -50.0f64..50.0,
            c in -50.0f64..50.0,
            sigma in 0.05f64..1.5,
        ) {
            struct Stub {
                h: [f64; 4],
            }
            impl EnergyModel for Stub {
                fn dim(&self) -> usize { 2 }
                fn energy(&self, _x: &[f64], _s: f64) -> f64 { 0.0 }
                fn score(&self, _x: &[f64], _s: f64) -> Vec<f64> { vec![0.0, 0.0] }
                fn hvp(&self, _x: &[f64], v: &[f64], _s: f64) -> Vec<f64> {
                    vec![self.h[0] * v[0] + self.h[1] * v[1], self.h[2] * v[0] + self.h[3] * v[1]]
                }
            }
            let model = Stub { h: [a, b, b, c] };
            let rc = mm_full_cov(&model, &[0.0, 0.0], sigma).unwrap();
            proptest::prop_assert!(linalg::cholesky_lower(2, &rc.cov).is_some());
        }
    }
}
