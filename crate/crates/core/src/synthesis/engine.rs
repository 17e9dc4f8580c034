use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::{block_index, block_pattern, Codebook, LayerModel, SignMode, SynthesisError};
use crate::mc;
use crate::tree::GaussianTree;

const STREAM_RUNS: u64 = 0x52_0000;

// symbols, (layer, codeword) picks, sign values
type RunTrace = (Vec<f64>, Vec<(usize, usize)>, Vec<f64>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SynthesisOptions {
    /// Add channel noise; when off the output is exactly `G u`.
    pub noise: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { noise: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisOutput {
    pub runs: usize,
    pub block_len: usize,
    pub observed: Vec<String>,
    /// `runs x N x n`, row-major.
    pub samples: Vec<f64>,
    /// Per run, per layer (index 0 is layer 1): `(Gaussian index, sign index)`.
    pub indices: Vec<Vec<(usize, usize)>>,
    /// Layer-1 channel inputs, `runs x N x k_1`.
    pub inputs: Vec<f64>,
}

impl SynthesisOutput {
    pub fn symbol(&self, run: usize, t: usize) -> &[f64] {
        let n = self.observed.len();
        let start = (run * self.block_len + t) * n;
        &self.samples[start..start + n]
    }

    /// `run,t,node,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,t,node,value\n");
        for run in 0..self.runs {
            for t in 0..self.block_len {
                for (x, id) in self.symbol(run, t).iter().zip(&self.observed) {
                    out.push_str(&format!("{run},{t},{id},{x}\n"));
                }
            }
        }
        out
    }
}

/// Layer-1 inputs (`N x k_1`) for one choice of codeword indices per layer.
pub(crate) fn layer_one_inputs(model: &LayerModel, cb: &Codebook, tuple: &[(usize, usize)]) -> Vec<f64> {
    let n = cb.block_len();
    let top = model.top();
    let mut upper: Vec<f64> = Vec::new();
    for l in (0..top).rev() {
        let lc = &cb.layers[l];
        let k = lc.width();
        let (i, kk) = tuple[l];
        let mut u = vec![0.0; n * k];
        for t in 0..n {
            let s = lc.sign(kk, t, n);
            let g = lc.gaussian(block_index(s, lc.top), i, t, n);
            for r in 0..k {
                let mut v = s[r] * g[r];
                if l + 1 < top {
                    let kw = model.width(l + 1);
                    let gain = &model.gains[l][r * kw..(r + 1) * kw];
                    v += gain.iter().zip(&upper[t * kw..(t + 1) * kw]).map(|(a, b)| a * b).sum::<f64>();
                }
                u[t * k + r] = v;
            }
        }
        upper = u;
    }
    upper
}

/// Noise-free output of one symbol from layer-1 inputs `y` and signs `b`:
/// `G (b * y)`.
pub fn channel_symbol(tree: &GaussianTree, y: &[f64], b: &[f64]) -> Result<Vec<f64>, SynthesisError> {
    let model = LayerModel::new(tree)?;
    let k = model.width(0);
    if y.len() != k || b.len() != k {
        return Err(SynthesisError::CodebookMismatch(format!("expected {k} layer-1 inputs and signs")));
    }
    let u: Vec<f64> = y.iter().zip(b).map(|(a, s)| a * s).collect();
    Ok(model.output.mean(&u))
}

pub fn synthesize(
    tree: &GaussianTree,
    codebook: &Codebook,
    runs: usize,
    seed: u64,
) -> Result<SynthesisOutput, SynthesisError> {
    synthesize_with(tree, codebook, runs, seed, SynthesisOptions::default())
}

/// Each run draws uniform codeword indices per layer and emits `N` symbols
/// `x_t = G u_t + z_t` with fresh noise `z_t ~ N(0, C)`.
pub fn synthesize_with(
    tree: &GaussianTree,
    codebook: &Codebook,
    runs: usize,
    seed: u64,
    opts: SynthesisOptions,
) -> Result<SynthesisOutput, SynthesisError> {
    codebook.check_tree(tree)?;
    let model = LayerModel::new(tree)?;
    let n = codebook.block_len();
    let d = tree.observed_count();
    let k1 = model.width(0);
    let per_run: Vec<RunTrace> = (0..runs)
        .into_par_iter()
        .map(|run| {
            let mut rng = mc::rng_for(seed, STREAM_RUNS, run as u64);
            let tuple: Vec<(usize, usize)> = codebook
                .layers
                .iter()
                .map(|lc| (rng.random_range(0..lc.gaussian_count()), rng.random_range(0..lc.sign_count)))
                .collect();
            let u = layer_one_inputs(&model, codebook, &tuple);
            let mut x = Vec::with_capacity(n * d);
            let mut eta = vec![0.0; d];
            let mut z = vec![0.0; d];
            for t in 0..n {
                let mean = model.output.mean(&u[t * k1..(t + 1) * k1]);
                if opts.noise {
                    eta.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
                    model.output.colour_noise(&eta, &mut z);
                }
                x.extend(mean.iter().zip(&z).map(|(m, z)| m + z));
            }
            (x, tuple, u)
        })
        .collect();
    let mut out = SynthesisOutput {
        runs,
        block_len: n,
        observed: tree.observed_indices().iter().map(|&o| tree.id(o).to_string()).collect(),
        samples: Vec::with_capacity(runs * n * d),
        indices: Vec::with_capacity(runs),
        inputs: Vec::with_capacity(runs * n * k1),
    };
    for (x, tuple, u) in per_run {
        out.samples.extend(x);
        out.indices.push(tuple);
        out.inputs.extend(u);
    }
    Ok(out)
}

/// One symbol emitted as if from a freshly drawn codebook: signs and
/// Gaussian codeword entries are drawn directly from their generating laws.
/// Writes the output into `x`, the layer-1 inputs into `u1` and the layer-1
/// sign pattern into `s1`.
pub(crate) fn fresh_symbol(
    model: &LayerModel,
    pis: &[Vec<f64>],
    sign_mode: SignMode,
    rng: &mut ChaCha8Rng,
    x: &mut [f64],
    u1: &mut Vec<f64>,
    s1: &mut Vec<f64>,
) {
    let top = model.top();
    let mut upper: Vec<f64> = Vec::new();
    for l in (0..top).rev() {
        let k = model.width(l);
        let s: Vec<f64> = (0..k)
            .map(|j| match sign_mode {
                SignMode::Random => {
                    if rng.random::<f64>() < pis[l][j] {
                        1.0
                    } else {
                        -1.0
                    }
                }
                SignMode::Constant => 1.0,
            })
            .collect();
        let pattern = block_pattern(block_index(&s, l + 1 == top), k, l + 1 == top);
        let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
        let chol = &model.draw_chol[l];
        let mut u = vec![0.0; k];
        for r in 0..k {
            let g = pattern[r] * (0..=r).map(|c| chol[r * k + c] * z[c]).sum::<f64>();
            u[r] = s[r] * g;
            if l + 1 < top {
                let kw = model.width(l + 1);
                u[r] += model.gains[l][r * kw..(r + 1) * kw].iter().zip(&upper).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        if l == 0 {
            *s1 = s;
        }
        upper = u;
    }
    let d = model.output.out_dim();
    let eta: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let mut noise = vec![0.0; d];
    model.output.colour_noise(&eta, &mut noise);
    let mean = model.output.mean(&upper);
    for r in 0..d {
        x[r] = mean[r] + noise[r];
    }
    *u1 = upper;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::info::BernoulliParams;
    use crate::synthesis::{build_codebooks, RateTuple};

    #[test]
    fn debug_symbol_star() {
        let s1 = fixtures::star();
        let x = channel_symbol(&s1, &[2.0], &[1.0]).unwrap();
        assert_eq!(x.len(), 3);
        for (got, want) in x.iter().zip([1.2, 1.4, 1.6]) {
            assert!((got - want).abs() < 1e-12);
        }
        let neg = channel_symbol(&s1, &[2.0], &[-1.0]).unwrap();
        assert!(neg.iter().zip(&x).all(|(a, b)| (a + b).abs() < 1e-12));
    }

    #[test]
    fn zero_noise_equals_gain_times_inputs() {
        let d1 = fixtures::dumbbell();
        let cb = build_codebooks(&d1, &RateTuple::single(0.4, 0.3, 4), &BernoulliParams::uniform(&d1, 0.5), 2).unwrap();
        let out = synthesize_with(&d1, &cb, 20, 5, SynthesisOptions { noise: false }).unwrap();
        let model = LayerModel::new(&d1).unwrap();
        for run in 0..20 {
            for t in 0..4 {
                let u = &out.inputs[(run * 4 + t) * 2..(run * 4 + t + 1) * 2];
                let expect = model.output.mean(u);
                assert_eq!(out.symbol(run, t), &expect[..]);
            }
        }
    }

    #[test]
    fn two_layer_runs() {
        let t = fixtures::two_layer();
        let rates = RateTuple {
            layers: vec![super::super::LayerRate { ry: 0.5, rb: 0.3 }, super::super::LayerRate { ry: 0.5, rb: 0.3 }],
            block_len: 3,
        };
        let cb = build_codebooks(&t, &rates, &BernoulliParams::uniform(&t, 0.5), 4).unwrap();
        let out = synthesize(&t, &cb, 10, 1).unwrap();
        assert_eq!(out.samples.len(), 10 * 3 * 8);
        assert!(out.samples.iter().all(|v| v.is_finite()));
        assert!(out.to_csv().lines().count() == 1 + 10 * 3 * 8);
    }
}
