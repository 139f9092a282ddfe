use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MadmError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("series `{series}` did not converge within {terms} terms")]
    NonConvergence { series: &'static str, terms: usize },

    #[error("grid depth cap of {cap} evaluations per level exceeded")]
    DepthCap { cap: usize },

    #[error("truncated state space has {states} states (limit {limit})")]
    StateSpaceTooLarge { states: u128, limit: u128 },
}

impl MadmError {
    /// True for failures of a truncated series or grid to meet its tolerance.
    pub fn is_numerical(&self) -> bool {
        matches!(self, MadmError::NonConvergence { .. } | MadmError::DepthCap { .. })
    }
}

pub type Result<T> = std::result::Result<T, MadmError>;
