//! Model-string resolution: `analytic:mog` for the closed-form oracle, or a
//! checkpoint path classified by its stored shape into one of the network
//! roles.

use mmgibbs::models::{
    load_checkpoint, EnergyModel, GaussianMixture, MlpEnergy, PosteriorNet, SigmaCondMlpEnergy,
};

use crate::errors::CliError;

pub enum LoadedModel {
    /// Four-mode Gaussian mixture oracle; exact score/Hessian at any σ.
    Analytic(GaussianMixture),
    /// Scalar-output network over x: energy of one fixed noise level.
    Energy(MlpEnergy),
    /// Scalar-output network over (x, ln σ): energy of the whole noise family.
    SigmaEnergy(SigmaCondMlpEnergy),
    /// 2d-output network: amortized diagonal-Gaussian denoising posterior.
    Posterior(PosteriorNet),
}

impl LoadedModel {
    pub fn describe(&self) -> String {
        match self {
            LoadedModel::Analytic(_) => "analytic mixture oracle".into(),
            LoadedModel::Energy(m) => {
                format!("energy network ({}d, fixed noise level)", m.dim())
            }
            LoadedModel::SigmaEnergy(m) => {
                format!("energy network ({}d, ln σ conditioned)", m.dim())
            }
            LoadedModel::Posterior(n) => format!("posterior network ({}d)", n.dim()),
        }
    }

    /// The model as a score/energy provider, or a capability error for
    /// posterior networks (they parameterize q(x|x̃) directly and expose no
    /// energy or score).
    pub fn as_energy(&self) -> Result<&dyn EnergyModel, CliError> {
        match self {
            LoadedModel::Analytic(m) => Ok(m),
            LoadedModel::Energy(m) => Ok(m),
            LoadedModel::SigmaEnergy(m) => Ok(m),
            LoadedModel::Posterior(_) => Err(CliError::Capability(
                "this checkpoint is a posterior network; it has no energy or score — \
                 use --posterior learned with it, or point --model at an energy checkpoint"
                    .into(),
            )),
        }
    }
}

/// Resolve a `--model` string. `analytic:mog` avoids any checkpoint; a path
/// is loaded and classified by shape: scalar output ⇒ energy (σ-conditioned
/// when the checkpoint says so), output = 2·input ⇒ posterior network.
pub fn load_model(spec: &str) -> Result<LoadedModel, CliError> {
    if spec == "analytic:mog" {
        return Ok(LoadedModel::Analytic(GaussianMixture::four_corners()));
    }
    if let Some(rest) = spec.strip_prefix("analytic:") {
        return Err(CliError::Config(format!(
            "unknown analytic model `{rest}`; the only built-in oracle is analytic:mog"
        )));
    }
    let (params, sigma_conditioned) = load_checkpoint(spec)?;
    let (ins, outs) = (params.in_dim(), params.out_dim());
    if outs == 1 {
        return Ok(if sigma_conditioned {
            LoadedModel::SigmaEnergy(SigmaCondMlpEnergy::new(params)?)
        } else {
            LoadedModel::Energy(MlpEnergy::new(params)?)
        });
    }
    if outs == 2 * ins && !sigma_conditioned {
        return Ok(LoadedModel::Posterior(PosteriorNet::new(params)?));
    }
    Err(CliError::Config(format!(
        "checkpoint {spec}: shape {ins}→{outs} (σ-conditioned: {sigma_conditioned}) fits no \
         model role (energy nets have 1 output, posterior nets 2·input outputs)"
    )))
}

/// Stand-in energy model for chains driven entirely by a learned posterior:
/// the Gibbs step then never queries the model, but the sampler API still
/// wants one for the dimension.
pub struct NullEnergy {
    pub dim: usize,
}

impl EnergyModel for NullEnergy {
    fn dim(&self) -> usize {
        self.dim
    }

    fn energy(&self, _x: &[f64], _sigma: f64) -> f64 {
        0.0
    }

    fn score(&self, x: &[f64], _sigma: f64) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn hvp(&self, x: &[f64], _v: &[f64], _sigma: f64) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn has_exact_hessian(&self) -> bool {
        false
    }
}
