use thiserror::Error;

/// Errors raised by the simulation and estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not unitary (deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("invalid POVM: {0}")]
    InvalidPovm(String),

    #[error("invalid test ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error("zero-probability branch at step {step}: outcome {outcome} has probability {probability:.3e}")]
    ZeroProbabilityBranch { step: u64, outcome: usize, probability: f64 },

    #[error("record {index} out of range: setting {setting} (of {settings}), outcome {outcome} (of {outcomes})")]
    RecordOutOfRange {
        index: usize,
        setting: usize,
        outcome: usize,
        settings: usize,
        outcomes: usize,
    },

    #[error("ill-posed reconstruction: design matrix rank {rank} < {required}")]
    IllPosed { rank: usize, required: usize },

    #[error("insufficient data: {found} consecutive pairs conditioned on setting {setting}, need {required}")]
    InsufficientPairs { setting: usize, found: u64, required: u64 },

    #[error("no fixed point inside the Bloch ball (residual {residual:.3e})")]
    NoFixedPoint { residual: f64 },

    #[error("stage {stage}: {message} (residual {residual:.3e})")]
    Stage { stage: &'static str, message: String, residual: f64 },

    #[error("dataset parse error at line {line}: {message}")]
    DatasetFormat { line: usize, message: String },
}

/// Coarse error class; the command-line tool maps these to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Pipeline,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::NotUnitary { .. } | Error::InvalidPovm(_) | Error::InvalidEnsemble(_) | Error::InvalidConfig(_) => ErrorCategory::Config,
            Error::RecordOutOfRange { .. } | Error::DatasetFormat { .. } => ErrorCategory::Data,
            Error::ZeroProbabilityBranch { .. }
            | Error::IllPosed { .. }
            | Error::InsufficientPairs { .. }
            | Error::NoFixedPoint { .. }
            | Error::Stage { .. } => ErrorCategory::Pipeline,
        }
    }

    /// Stable machine-readable identifier, e.g. `pipeline.split_svd`.
    pub fn code(&self) -> String {
        let tail = match self {
            Error::NotUnitary { .. } => "not_unitary",
            Error::InvalidPovm(_) => "invalid_povm",
            Error::InvalidEnsemble(_) => "invalid_ensemble",
            Error::InvalidConfig(_) => "invalid",
            Error::RecordOutOfRange { .. } => "record_out_of_range",
            Error::DatasetFormat { .. } => "format",
            Error::ZeroProbabilityBranch { .. } => "zero_probability_branch",
            Error::IllPosed { .. } => "ill_posed",
            Error::InsufficientPairs { .. } => "insufficient_pairs",
            Error::NoFixedPoint { .. } => "no_fixed_point",
            Error::Stage { stage, .. } => stage,
        };
        let head = match self.category() {
            ErrorCategory::Config => "config",
            ErrorCategory::Data => "data",
            ErrorCategory::Pipeline => "pipeline",
        };
        format!("{head}.{tail}")
    }

    pub fn stage(stage: &'static str, message: impl Into<String>, residual: f64) -> Self {
        Error::Stage {
            stage,
            message: message.into(),
            residual,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_and_categories() {
        assert_eq!(Error::InvalidConfig("x".into()).code(), "config.invalid");
        assert_eq!(
            Error::DatasetFormat {
                line: 1,
                message: String::new()
            }
            .category(),
            ErrorCategory::Data
        );
        assert_eq!(Error::stage("split_svd", "m", 0.0).code(), "pipeline.split_svd");
        assert_eq!(Error::NoFixedPoint { residual: 1.0 }.category(), ErrorCategory::Pipeline);
    }
}
