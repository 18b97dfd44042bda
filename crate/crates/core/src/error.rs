use alloc::boxed::Box;
use alloc::string::String;

use crate::objectives::PrimalWitness;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("infeasible dual state: {0}")]
    InfeasibleDual(String),
    #[error("embedding for example {example}, replicate {replicate} has zero norm")]
    ZeroNormEmbedding { example: usize, replicate: usize },
    #[error("empty sample set")]
    EmptySamples,
    #[error("non-finite objective at step {step}: {value}")]
    NonFinite { step: usize, value: f64 },
    #[error("primal oracle did not converge after {iterations} iterations (best value {})", best.value)]
    NotConverged {
        iterations: usize,
        best: Box<PrimalWitness>,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
