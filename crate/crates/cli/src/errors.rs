//! One error type per failure class, each with a fixed process exit code and
//! a one-line machine-parsable rendering on stderr.

use mmgibbs::datasets::DatasetError;
use mmgibbs::evaluation::EvalError;
use mmgibbs::models::ModelError;
use mmgibbs::posterior::PosteriorError;
use mmgibbs::sampler::SamplerError;
use mmgibbs::training::TrainError;

/// Failure classes, in exit-code order: config 2, io 3, numeric 4,
/// capability 5. (Exit 1 is left to panics so a crash is distinguishable
/// from a diagnosed failure.)
#[derive(Debug)]
pub enum CliError {
    /// Bad flag value, malformed config or input schema, inconsistent request.
    Config(String),
    /// Missing or unreadable/unwritable file.
    Io(String),
    /// Training diverged or aborted, sampler produced non-finite states,
    /// quadrature or identity verification failed.
    Numeric(String),
    /// Model kind cannot serve the requested role (e.g. a posterior network
    /// asked to act as an energy model).
    Capability(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Capability(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Numeric(_) => "numeric",
            CliError::Capability(_) => "capability",
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m)
            | CliError::Io(m)
            | CliError::Numeric(m)
            | CliError::Capability(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "mmgibbs: error[{}]: {}", self.kind(), self.message())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Io { .. } => CliError::Io(e.to_string()),
            // A file that exists but does not parse is a schema violation,
            // not an IO failure.
            DatasetError::Parse { .. } | DatasetError::BadSpec(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { .. } => CliError::Io(e.to_string()),
            ModelError::HessianUnavailable => CliError::Capability(e.to_string()),
            ModelError::CheckpointParse { .. }
            | ModelError::ChecksumMismatch { .. }
            | ModelError::BadShape(_)
            | ModelError::BadMixture(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io { .. } => CliError::Io(e.to_string()),
            TrainError::NonFiniteLoss { .. } | TrainError::Numgrad(_) => {
                CliError::Numeric(e.to_string())
            }
            TrainError::EmptyBatch
            | TrainError::DataTooSmall { .. }
            | TrainError::ShapeMismatch { .. }
            | TrainError::BadConfig(_) => CliError::Config(e.to_string()),
        }
    }
}

impl From<PosteriorError> for CliError {
    fn from(e: PosteriorError) -> Self {
        match e {
            PosteriorError::Capability(inner) => inner.into(),
            PosteriorError::NotPositiveDefinite => CliError::Numeric(e.to_string()),
            PosteriorError::EmptySampleSet | PosteriorError::DimMismatch { .. } => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Posterior(inner) => inner.into(),
            SamplerError::NonFiniteState { .. } => CliError::Numeric(e.to_string()),
            SamplerError::BadSchedule(_) | SamplerError::BadConfig(_) => {
                CliError::Config(e.to_string())
            }
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Quadrature(_) => CliError::Numeric(e.to_string()),
            EvalError::DimMismatch(..)
            | EvalError::TooFewSamples { .. }
            | EvalError::BadBandwidths(_) => CliError::Config(e.to_string()),
        }
    }
}
