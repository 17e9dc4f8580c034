//! Latent Gaussian trees with correlation-sign ambiguity.
//!
//! A latent Gaussian tree is a zero-mean, unit-variance Gaussian vector whose
//! conditional-independence graph is a tree with some nodes hidden. The
//! observed covariance pins every edge correlation down to its magnitude; the
//! signs of edges incident to hidden nodes can be flipped node-by-node
//! without changing the observed law, giving `2^k` equivalent models for `k`
//! hidden nodes.
//!
//! The crate is organised as:
//!
//! | module | contents |
//! |--------|----------|
//! | [`tree`] | tree files, validation, path-product covariances, determinants, magnitude recovery |
//! | [`signs`] | sign assignments, enumeration of the equivalence class, per-edge sign-variable report |
//! | [`info`] | closed-form and Monte Carlo mutual information, chain/decomposition checks, `pi` optimisation |
//! | [`synthesis`] | layered random-codebook synthesis, rate-region margins, divergence estimates, constraint checklist |
//! | [`channel`] | the linear-Gaussian sign channel `X = A_B Y + Z` shared by `info` and `synthesis` |
//! | [`fixtures`] | reference trees and a random tree generator |
//!
//! All information quantities are in nats.

pub mod channel;
pub mod error;
pub mod fixtures;
pub mod info;
pub mod linalg;
pub mod mc;
pub mod signs;
pub mod synthesis;
pub mod tree;

pub use error::{Error, Result};
pub use info::{BernoulliParams, MIMethod, MIResult, MixtureWeighting};
pub use signs::{SignAssignment, SignClassReport};
pub use synthesis::{Codebook, RateTuple, SynthesisReport};
pub use tree::{CovarianceModel, GaussianTree, NodeKind, TreeSpec};

/// Library version embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
