use thiserror::Error;

use crate::info::InfoError;
use crate::signs::SignError;
use crate::synthesis::SynthesisError;
use crate::tree::TreeError;

/// Crate-wide error; each variant names the module that raised it.
#[derive(Debug, Error)]
pub enum Error {
    #[error("tree_model: {0}")]
    Tree(#[from] TreeError),
    #[error("sign_ambiguity: {0}")]
    Sign(#[from] SignError),
    #[error("info_measures: {0}")]
    Info(#[from] InfoError),
    #[error("synthesis_engine: {0}")]
    Synthesis(#[from] SynthesisError),
}

impl Error {
    /// `true` when the error is a rejected input rather than a failure during
    /// computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Tree(e) => e.is_validation(),
            Error::Sign(_) => true,
            Error::Info(e) => e.is_validation(),
            Error::Synthesis(e) => e.is_validation(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
