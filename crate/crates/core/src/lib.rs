//! Energy-based models trained with denoising score matching, sampled with
//! pseudo-Gibbs chains whose denoising posteriors are Gaussian approximations
//! matched to the exact posterior moments.
//!
//! The central identities: for data noised as `x̃ = x + σε`, the posterior
//! `q(x | x̃)` has mean `x̃ + σ²·∇log q̃(x̃)` and covariance
//! `σ⁴·∇²log q̃(x̃) + σ²·I`, both computable from the model of the *noisy*
//! density alone. `posterior` builds full, diagonal (Rademacher-estimated) and
//! isotropic versions of that Gaussian, `sampler` alternates noising and
//! denoising with it, and `evaluation` checks the output against analytic
//! oracles and MMD.
//!
//! ```
//! use mmgibbs::models::GaussianMixture;
//! use mmgibbs::sampler::{run_chain, ChainConfig, PosteriorChoice};
//!
//! let mog = GaussianMixture::four_corners();
//! let cfg = ChainConfig { steps: 200, sigma: 0.2, ..ChainConfig::default() };
//! let set = run_chain(&mog, &PosteriorChoice::MmFull, &cfg).unwrap();
//! assert_eq!(set.len(), 200);
//! ```

pub mod datasets;
pub mod evaluation;
pub mod linalg;
pub mod models;
pub mod numgrad;
pub mod posterior;
pub mod sampler;
pub mod training;

pub use datasets::SampleSet;
pub use models::EnergyModel;
pub use posterior::GaussianApprox;

/// Floor used when clamping non-positive variance estimates.
pub const DEFAULT_EPS_CLAMP: f64 = 1e-6;
