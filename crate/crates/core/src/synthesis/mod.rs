//! Layered random-codebook synthesis of the observed vector.
//!
//! Hidden layers are generated top-down. The top layer draws its inputs from
//! Gaussian codewords whose sub-block is selected by the sign pattern of the
//! current symbol; each lower layer adds a Gaussian innovation codeword,
//! again chosen per sign pattern, to the linear prediction from the layer
//! above; the observed symbol is the sign channel output of layer 1 plus
//! fresh noise. Rates are in nats per symbol and a codebook at rate `R` and
//! block length `N` holds `ceil(exp(N R))` codewords.

mod codebook;
mod constraints;
mod divergence;
mod engine;
mod rates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::SignChannel;
use crate::info::InfoError;
use crate::tree::GaussianTree;

pub use codebook::{build_codebooks, Codebook, CodebookRecipe, LayerCodebook, SignMode, SubBlock};
pub use constraints::{
    verify_appendix_constraints, verify_appendix_constraints_with, Checklist, ConstraintCheck, DEFAULT_TV_THRESHOLD,
};
pub use divergence::{estimate_divergence, estimate_divergence_with, DivergenceOptions, Statistic, SynthesisReport};
pub use engine::{channel_symbol, synthesize, synthesize_with, SynthesisOptions, SynthesisOutput};
pub use rates::{rate_region_check, BoundCheck, LayerBound};

/// Largest codebook (per layer, Gaussian or sign) that may be built.
pub const CODEBOOK_CAP: usize = 1 << 16;
/// Largest number of mixture components `q` may have for exact evaluation.
pub const MIXTURE_CAP: usize = 1 << 14;
/// Largest number of stored Gaussian values per layer.
pub const STORAGE_CAP: usize = 1 << 26;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("layer {layer}: {which} = ceil(exp(N R)) = {size} exceeds the cap {cap}")]
    CapExceeded { layer: usize, which: &'static str, size: f64, cap: usize },
    #[error("q has {components} mixture components; exact evaluation is capped at {cap}")]
    MixtureTooLarge { components: f64, cap: usize },
    #[error("rates cover {got} layers but the tree has {expected}")]
    LayerMismatch { expected: usize, got: usize },
    #[error("layer {layer}: {field} = {value} must be a finite rate >= 0")]
    InvalidRate { layer: usize, field: &'static str, value: f64 },
    #[error("block length must be at least 1")]
    InvalidBlockLength,
    #[error("tree has no hidden nodes to synthesize from")]
    NoHiddenNodes,
    #[error("codebook was not built for this tree: {0}")]
    CodebookMismatch(String),
    #[error("{field} = {value}; at least {min} required")]
    TooFew { field: &'static str, value: usize, min: usize },
    #[error(transparent)]
    Info(#[from] InfoError),
}

impl SynthesisError {
    pub fn is_validation(&self) -> bool {
        match self {
            SynthesisError::Info(e) => e.is_validation(),
            _ => true,
        }
    }
}

/// `(R_Y, R_B)` of one layer, nats per symbol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    pub ry: f64,
    pub rb: f64,
}

/// Per-layer rates (index 0 is layer 1) and block length `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTuple {
    pub layers: Vec<LayerRate>,
    pub block_len: usize,
}

/// `ceil(exp(N R))`, with a small slack so that `R = ln(M) / N` gives `M`.
pub fn codebook_size(block_len: usize, rate: f64) -> f64 {
    (block_len as f64 * rate - 1e-9).exp().ceil().max(1.0)
}

impl RateTuple {
    pub fn single(ry: f64, rb: f64, block_len: usize) -> Self {
        Self { layers: vec![LayerRate { ry, rb }], block_len }
    }

    /// Same tuple with rates given in bits converted to nats.
    pub fn from_bits(&self) -> Self {
        let ln2 = std::f64::consts::LN_2;
        Self {
            layers: self.layers.iter().map(|l| LayerRate { ry: l.ry * ln2, rb: l.rb * ln2 }).collect(),
            block_len: self.block_len,
        }
    }

    pub fn validate(&self) -> Result<(), SynthesisError> {
        if self.block_len == 0 {
            return Err(SynthesisError::InvalidBlockLength);
        }
        for (i, l) in self.layers.iter().enumerate() {
            for (field, value) in [("R_Y", l.ry), ("R_B", l.rb)] {
                if !(value.is_finite() && value >= 0.0) {
                    return Err(SynthesisError::InvalidRate { layer: i + 1, field, value });
                }
            }
        }
        Ok(())
    }

    /// `(M_Y, M_B)` per layer.
    pub fn codebook_sizes(&self) -> Result<Vec<(usize, usize)>, SynthesisError> {
        self.validate()?;
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let check = |which, rate| {
                    let size = codebook_size(self.block_len, rate);
                    if size > CODEBOOK_CAP as f64 {
                        Err(SynthesisError::CapExceeded { layer: i + 1, which, size, cap: CODEBOOK_CAP })
                    } else {
                        Ok(size as usize)
                    }
                };
                Ok((check("M_Y", l.ry)?, check("M_B", l.rb)?))
            })
            .collect()
    }
}

/// Linear-Gaussian structure used for top-down generation.
#[derive(Debug, Clone)]
pub(crate) struct LayerModel {
    /// Hidden node indices per layer, index 0 is layer 1.
    pub layers: Vec<Vec<usize>>,
    /// Covariance the codewords of each layer are drawn from (top: marginal;
    /// others: innovation given the layer above), as lower Cholesky factors,
    /// row-major.
    pub draw_chol: Vec<Vec<f64>>,
    /// Prediction gain of layer `l` from layer `l+1`, row-major
    /// `k_l x k_{l+1}`; empty for the top layer.
    pub gains: Vec<Vec<f64>>,
    pub output: SignChannel,
}

impl LayerModel {
    pub fn new(tree: &GaussianTree) -> Result<Self, SynthesisError> {
        if tree.hidden_count() == 0 {
            return Err(SynthesisError::NoHiddenNodes);
        }
        let top = tree.max_layer();
        let layers: Vec<Vec<usize>> = (1..=top).map(|l| tree.hidden_at_layer(l)).collect();
        let mut draw_chol = Vec::with_capacity(top);
        let mut gains = Vec::with_capacity(top);
        let flatten = |m: &nalgebra::DMatrix<f64>| -> Vec<f64> {
            (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
        };
        for l in 0..top {
            if l + 1 == top {
                let ch = SignChannel::between(tree, &layers[l], &[])?;
                draw_chol.push(flatten(&ch.noise_factor().l()));
                gains.push(Vec::new());
            } else {
                let ch = SignChannel::between(tree, &layers[l], &layers[l + 1])?;
                draw_chol.push(flatten(&ch.noise_factor().l()));
                gains.push(flatten(&ch.gain));
            }
        }
        let output = SignChannel::between(tree, tree.observed_indices(), &layers[0])?;
        Ok(Self { layers, draw_chol, gains, output })
    }

    pub fn top(&self) -> usize {
        self.layers.len()
    }

    pub fn width(&self, l: usize) -> usize {
        self.layers[l].len()
    }
}

/// Sub-block index of a sign pattern. The top layer's covariance is
/// unchanged by a global flip, so patterns are taken modulo it there.
pub(crate) fn block_index(pattern: &[f64], top: bool) -> usize {
    let flip = top && pattern[0] < 0.0;
    let mut idx = 0;
    for (j, &s) in pattern.iter().enumerate() {
        if (s < 0.0) != flip {
            idx |= 1 << j;
        }
    }
    if top {
        idx >> 1
    } else {
        idx
    }
}

pub(crate) fn block_count(k: usize, top: bool) -> usize {
    if top {
        1 << (k - 1)
    } else {
        1 << k
    }
}

/// Representative sign pattern of a sub-block.
pub(crate) fn block_pattern(index: usize, k: usize, top: bool) -> Vec<f64> {
    let bits = if top { index << 1 } else { index };
    (0..k).map(|j| if bits >> j & 1 == 1 { -1.0 } else { 1.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        let r = RateTuple::single(1.0, 0.5, 8);
        assert_eq!(r.codebook_sizes().unwrap(), vec![(2981, 55)]);
        let r = RateTuple::single((16384f64).ln(), 0.0, 1);
        assert_eq!(r.codebook_sizes().unwrap(), vec![(16384, 1)]);
        assert!(matches!(RateTuple::single(2.0, 0.0, 8).codebook_sizes(), Err(SynthesisError::CapExceeded { .. })));
        assert!(matches!(RateTuple::single(-0.1, 0.0, 8).codebook_sizes(), Err(SynthesisError::InvalidRate { .. })));
        assert_eq!(RateTuple::single(0.1, 0.1, 0).codebook_sizes(), Err(SynthesisError::InvalidBlockLength));
    }

    #[test]
    fn block_indexing_round_trips() {
        for top in [false, true] {
            for k in 1..5 {
                for i in 0..block_count(k, top) {
                    let p = block_pattern(i, k, top);
                    assert_eq!(block_index(&p, top), i);
                    if top {
                        let neg: Vec<f64> = p.iter().map(|s| -s).collect();
                        assert_eq!(block_index(&neg, top), i);
                    }
                }
            }
        }
    }
}
