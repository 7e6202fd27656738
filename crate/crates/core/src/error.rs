use std::fmt;

use thiserror::Error;

/// A single violated parameter invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct InvalidParameter {
    pub name: &'static str,
    pub reason: String,
}

impl fmt::Display for InvalidParameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid parameter `{}`: {}", self.name, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}", join_violations(.0))]
    InvalidParameters(Vec<InvalidParameter>),

    #[error("non-finite value from `{0}`")]
    NonFiniteValue(&'static str),

    #[error("control grid is empty")]
    EmptyGrid,

    #[error("value coefficients break down at t = {t}: the horizon is too long for these parameters")]
    HorizonTooLong { t: f64 },

    #[error("path {path} became non-finite at step {step}")]
    NonFiniteState { step: usize, path: usize },

    #[error("Picard iteration did not converge after {iterations} iterations (final gap {gap:e})")]
    PicardNoConvergence { iterations: usize, gap: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameters(vec![InvalidParameter {
            name,
            reason: reason.into(),
        }])
    }
}

fn join_violations(v: &[InvalidParameter]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
