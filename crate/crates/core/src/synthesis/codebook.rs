use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{block_count, block_pattern, LayerModel, RateTuple, SynthesisError, STORAGE_CAP};
use crate::info::BernoulliParams;
use crate::mc;
use crate::tree::GaussianTree;

const STREAM_SIGNS: u64 = 0x5167_0000;
const STREAM_BLOCKS: u64 = 0xB10C_0000;

/// How sign codewords are generated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignMode {
    /// I.i.d. Bernoulli(pi) signs, `M_B` codewords.
    #[default]
    Random,
    /// A single all-`+1` codeword regardless of the declared rate.
    Constant,
}

/// Everything needed to regenerate a codebook.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodebookRecipe {
    pub rates: RateTuple,
    pub pi: BernoulliParams,
    pub seed: u64,
    pub sign_mode: SignMode,
}

/// Gaussian codewords of one sign pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBlock {
    /// Representative pattern (`+1`/`-1` per node).
    pub pattern: Vec<f64>,
    /// `len x N x k`, row-major.
    pub codewords: Vec<f64>,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCodebook {
    pub nodes: Vec<String>,
    pub top: bool,
    /// `M_B x N x k` signs as `+1.0`/`-1.0`.
    pub signs: Vec<f64>,
    pub sign_count: usize,
    pub blocks: Vec<SubBlock>,
}

impl LayerCodebook {
    pub fn width(&self) -> usize {
        self.nodes.len()
    }

    /// Sign pattern of codeword `k` at symbol `t`.
    pub fn sign(&self, k: usize, t: usize, block_len: usize) -> &[f64] {
        let w = self.width();
        let start = (k * block_len + t) * w;
        &self.signs[start..start + w]
    }

    /// Gaussian codeword `i` of sub-block `b` at symbol `t`.
    pub fn gaussian(&self, b: usize, i: usize, t: usize, block_len: usize) -> &[f64] {
        let w = self.width();
        let start = (i * block_len + t) * w;
        &self.blocks[b].codewords[start..start + w]
    }

    /// Gaussian codewords per sub-block (the smallest, should they differ).
    pub fn gaussian_count(&self) -> usize {
        self.blocks.iter().map(|b| b.len).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub recipe: CodebookRecipe,
    /// Index 0 is layer 1.
    pub layers: Vec<LayerCodebook>,
}

pub fn build_codebooks(
    tree: &GaussianTree,
    rates: &RateTuple,
    pi: &BernoulliParams,
    seed: u64,
) -> Result<Codebook, SynthesisError> {
    Codebook::build(tree, rates, pi, seed, SignMode::Random)
}

impl Codebook {
    /// Draws every codebook of every layer from `seed`.
    ///
    /// Sign codewords are i.i.d. with `P(+1) = pi`. Each sub-block holds
    /// `M_Y` Gaussian codewords whose symbols are i.i.d.
    /// `N(0, D_b S D_b)` for the block's pattern `b`, where `S` is the top
    /// layer's covariance or a lower layer's innovation covariance.
    pub fn build(
        tree: &GaussianTree,
        rates: &RateTuple,
        pi: &BernoulliParams,
        seed: u64,
        sign_mode: SignMode,
    ) -> Result<Self, SynthesisError> {
        let model = LayerModel::new(tree)?;
        if rates.layers.len() != model.top() {
            return Err(SynthesisError::LayerMismatch { expected: model.top(), got: rates.layers.len() });
        }
        let sizes = rates.codebook_sizes()?;
        let n = rates.block_len;
        let mut layers = Vec::with_capacity(model.top());
        for (l, &(m_y, m_b)) in sizes.iter().enumerate() {
            let nodes = &model.layers[l];
            let k = nodes.len();
            let top = l + 1 == model.top();
            let pis = pi.values_for(tree, nodes)?;

            let sign_count = match sign_mode {
                SignMode::Random => m_b,
                SignMode::Constant => 1,
            };
            let mut rng = mc::rng_for(seed, STREAM_SIGNS + l as u64, 0);
            let signs: Vec<f64> = match sign_mode {
                SignMode::Random => (0..sign_count * n * k)
                    .map(|idx| if rng.random::<f64>() < pis[idx % k] { 1.0 } else { -1.0 })
                    .collect(),
                SignMode::Constant => vec![1.0; n * k],
            };

            let n_blocks = block_count(k, top);
            let stored = n_blocks as f64 * m_y as f64 * n as f64 * k as f64;
            if stored > STORAGE_CAP as f64 {
                return Err(SynthesisError::CapExceeded {
                    layer: l + 1,
                    which: "stored codeword values",
                    size: stored,
                    cap: STORAGE_CAP,
                });
            }
            let chol = &model.draw_chol[l];
            let blocks = (0..n_blocks)
                .map(|b| {
                    let pattern = block_pattern(b, k, top);
                    let mut rng = mc::rng_for(seed, STREAM_BLOCKS + l as u64, b as u64);
                    let mut z = vec![0.0; k];
                    let mut codewords = Vec::with_capacity(m_y * n * k);
                    for _ in 0..m_y * n {
                        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
                        for r in 0..k {
                            let v: f64 = (0..=r).map(|c| chol[r * k + c] * z[c]).sum();
                            codewords.push(pattern[r] * v);
                        }
                    }
                    SubBlock { pattern, codewords, len: m_y }
                })
                .collect();
            layers.push(LayerCodebook {
                nodes: nodes.iter().map(|&h| tree.id(h).to_string()).collect(),
                top,
                signs,
                sign_count,
                blocks,
            });
        }
        Ok(Self { recipe: CodebookRecipe { rates: rates.clone(), pi: pi.clone(), seed, sign_mode }, layers })
    }

    pub fn block_len(&self) -> usize {
        self.recipe.rates.block_len
    }

    /// Same recipe with another seed.
    pub fn regenerate(&self, tree: &GaussianTree, seed: u64) -> Result<Self, SynthesisError> {
        Self::build(tree, &self.recipe.rates, &self.recipe.pi, seed, self.recipe.sign_mode)
    }

    /// Number of components of the induced mixture, `prod_l M_Y^l M_B^l`.
    pub fn mixture_components(&self) -> f64 {
        self.layers.iter().map(|l| l.gaussian_count() as f64 * l.sign_count as f64).product()
    }

    /// Sub-block count per layer.
    pub fn sub_blocks(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.blocks.len()).collect()
    }

    /// Actual `(M_Y, M_B)` per layer.
    pub fn sizes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.gaussian_count(), l.sign_count)).collect()
    }

    /// Removes Gaussian codeword `index` from sub-block `block` of layer
    /// `layer` (0-based), making that sub-block one codeword short.
    pub fn drop_gaussian_codeword(&mut self, layer: usize, block: usize, index: usize) {
        let n = self.block_len();
        let lc = &mut self.layers[layer];
        let w = lc.nodes.len();
        let sb = &mut lc.blocks[block];
        sb.codewords.drain(index * n * w..(index + 1) * n * w);
        sb.len -= 1;
    }

    /// Checks that the layers match the tree's hidden layers.
    pub(crate) fn check_tree(&self, tree: &GaussianTree) -> Result<(), SynthesisError> {
        let top = tree.max_layer();
        if self.layers.len() != top {
            return Err(SynthesisError::CodebookMismatch(format!(
                "{} codebook layers, tree has {top}",
                self.layers.len()
            )));
        }
        for (l, lc) in self.layers.iter().enumerate() {
            let ids: Vec<String> = tree.hidden_at_layer(l + 1).iter().map(|&h| tree.id(h).to_string()).collect();
            if ids != lc.nodes {
                return Err(SynthesisError::CodebookMismatch(format!("layer {} nodes differ", l + 1)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::info::BernoulliParams;

    fn two_layer_rates(n: usize) -> RateTuple {
        RateTuple {
            layers: vec![super::super::LayerRate { ry: 0.3, rb: 0.2 }, super::super::LayerRate { ry: 0.3, rb: 0.2 }],
            block_len: n,
        }
    }

    #[test]
    fn star_sizes_and_blocks() {
        let s1 = fixtures::star();
        let cb = build_codebooks(&s1, &RateTuple::single(1.0, 0.5, 8), &BernoulliParams::uniform(&s1, 0.5), 1).unwrap();
        assert_eq!(cb.sizes(), vec![(2981, 55)]);
        assert_eq!(cb.sub_blocks(), vec![1]);
    }

    #[test]
    fn sub_block_counts() {
        let d1 = fixtures::dumbbell();
        let cb = build_codebooks(&d1, &RateTuple::single(0.3, 0.2, 4), &BernoulliParams::uniform(&d1, 0.5), 1).unwrap();
        assert_eq!(cb.sub_blocks(), vec![2]);
        let t = fixtures::two_layer();
        let cb = build_codebooks(&t, &two_layer_rates(2), &BernoulliParams::uniform(&t, 0.5), 1).unwrap();
        assert_eq!(cb.sub_blocks(), vec![16, 2]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let d1 = fixtures::dumbbell();
        let pi = BernoulliParams::uniform(&d1, 0.5);
        let r = RateTuple::single(0.4, 0.3, 6);
        let a = build_codebooks(&d1, &r, &pi, 11).unwrap();
        assert_eq!(a, build_codebooks(&d1, &r, &pi, 11).unwrap());
        assert_ne!(a, build_codebooks(&d1, &r, &pi, 12).unwrap());
    }

    #[test]
    fn layer_mismatch_and_tamper() {
        let t = fixtures::two_layer();
        let pi = BernoulliParams::uniform(&t, 0.5);
        assert!(matches!(
            build_codebooks(&t, &RateTuple::single(0.3, 0.2, 2), &pi, 1),
            Err(SynthesisError::LayerMismatch { expected: 2, got: 1 })
        ));
        let mut cb = build_codebooks(&t, &two_layer_rates(2), &pi, 1).unwrap();
        let before = cb.sizes()[0].0;
        cb.drop_gaussian_codeword(0, 3, 0);
        assert_eq!(cb.sizes()[0].0, before - 1);
    }

    #[test]
    fn constant_signs() {
        let s1 = fixtures::star();
        let cb = Codebook::build(
            &s1,
            &RateTuple::single(0.5, 0.5, 8),
            &BernoulliParams::uniform(&s1, 0.5),
            1,
            SignMode::Constant,
        )
        .unwrap();
        assert_eq!(cb.sizes()[0].1, 1);
        assert!(cb.layers[0].signs.iter().all(|&s| s == 1.0));
    }
}
