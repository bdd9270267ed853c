use flare_core::Error as CoreError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
}

/// Result of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    ValidationFailed,
}

impl Outcome {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Success
        } else {
            Outcome::ValidationFailed
        }
    }

    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => EXIT_OK,
            Outcome::ValidationFailed => EXIT_VALIDATION_FAILED,
        }
    }
}

/// Numerical failures anywhere in the cause chain map to 3, everything else
/// to 2.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err.chain().any(|cause| {
        matches!(
            cause.downcast_ref::<CoreError>(),
            Some(CoreError::NumericalBreakdown(_) | CoreError::NotPositiveDefinite { .. } | CoreError::RankDeficient { .. })
        )
    });
    if numerical {
        EXIT_NUMERICAL
    } else {
        EXIT_USAGE
    }
}
