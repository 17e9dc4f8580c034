//! Information measures of latent Gaussian trees.
//!
//! `X` is the observed vector, `Y` the hidden vector and `B` the per-hidden-node
//! sign vector, drawn independently with `P(B_h = +1) = pi_h`. Given `B = b`
//! the hidden inputs reach `X` through the sign channel with mean `G (b * y)`,
//! so `I(X; Y~)` for `Y~ = B * Y` is a Gaussian quantity fixed by the tree,
//! while `I(X; Y)` and `I(X; B | Y)` involve finite Gaussian mixtures over `b`
//! and are estimated by Monte Carlo. Every estimate is in nats.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::SignChannel;
use crate::linalg::{self, log_sum_exp, GaussianFactor};
use crate::mc::{self, Welford};
use crate::signs::{apply_sign_assignment, SignAssignment};
use crate::tree::{joint_covariance, observed_hidden_corr_sq, GaussianTree, TreeError, DEFAULT_TRIPLE_TOLERANCE};

/// Smallest sample count accepted by the Monte Carlo estimators.
pub const MIN_SAMPLES: usize = 1000;
/// Largest number of sign inputs a mixture may enumerate.
pub const MAX_MIXTURE_INPUTS: usize = 16;
/// Condition number above which determinants are refused.
pub const CONDITION_LIMIT: f64 = 1e12;

pub(crate) const STREAM_X_Y: u64 = 1;
const STREAM_X_B_GIVEN_Y: u64 = 2;
const STREAM_H_X: u64 = 3;
const STREAM_H_X_GIVEN_B: u64 = 4;
const STREAM_DECOMP_FIRST: u64 = 5;
const STREAM_DECOMP_SECOND: u64 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfoError {
    #[error("{context} is ill-conditioned (condition number {condition:e})")]
    IllConditioned { context: String, condition: f64 },
    #[error("closed form needs every observed node to be a leaf of a hidden node: {0}")]
    NotLeafOnly(String),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("samples = {samples}; at least {min} required")]
    TooFewSamples { samples: usize, min: usize },
    #[error("wrong shape: {0}")]
    WrongShape(String),
    #[error("pi has no value for hidden node `{0}`")]
    MissingPi(String),
    #[error("pi names `{0}`, which is not a hidden node")]
    UnknownPiNode(String),
    #[error("pi for `{id}` is {value}; must be a number in [0, 1]")]
    InvalidPi { id: String, value: f64 },
    #[error("grid step {0} must lie in (0, 0.25]")]
    InvalidGrid(f64),
    #[error("{count} sign inputs in one mixture; at most {cap} supported")]
    TooManyInputs { count: usize, cap: usize },
}

impl InfoError {
    pub fn is_validation(&self) -> bool {
        !matches!(self, InfoError::IllConditioned { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MIMethod {
    ClosedForm,
    DirectGaussian,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MIResult {
    pub value: f64,
    pub std_error: f64,
    pub method: MIMethod,
    pub samples_used: usize,
}

impl MIResult {
    fn exact(value: f64, method: MIMethod) -> Self {
        Self { value, std_error: 0.0, method, samples_used: 0 }
    }

    fn monte_carlo(value: f64, std_error: f64, samples: usize) -> Self {
        Self { value, std_error, method: MIMethod::MonteCarlo, samples_used: samples }
    }

    /// `self + other` for independent estimates.
    pub fn plus(&self, other: &MIResult) -> MIResult {
        MIResult {
            value: self.value + other.value,
            std_error: self.std_error.hypot(other.std_error),
            method: if self.method == other.method { self.method } else { MIMethod::MonteCarlo },
            samples_used: self.samples_used + other.samples_used,
        }
    }

    /// `|a - b| / sqrt(se_a^2 + se_b^2)`; infinite when both are exact and differ.
    pub fn z_score(&self, other: &MIResult) -> f64 {
        let diff = (self.value - other.value).abs();
        let se = self.std_error.hypot(other.std_error);
        if diff == 0.0 {
            0.0
        } else {
            diff / se
        }
    }
}

/// How the sign mixture `p(x | y)` weighs the sign patterns.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureWeighting {
    /// `B` independent of the conditioning `Y`: weights are `pi(b)`.
    #[default]
    Prior,
    /// Conditioning on the signed hidden vector of the flipped tree: weights
    /// are `pi(b) N(b * y; 0, S_Y)`, normalized.
    Posterior,
}

/// `P(B_h = +1)` per hidden node. Values are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliParams {
    pub pi: BTreeMap<String, f64>,
}

impl BernoulliParams {
    pub fn uniform(tree: &GaussianTree, p: f64) -> Self {
        Self::from_pairs(tree.hidden_indices().iter().map(|&h| (tree.id(h).to_string(), p)))
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let pi = pairs.into_iter().map(|(s, p)| (s.into(), if p.is_nan() { p } else { p.clamp(0.0, 1.0) })).collect();
        Self { pi }
    }

    /// Values for the given nodes (indices), checking coverage.
    pub fn values_for(&self, tree: &GaussianTree, nodes: &[usize]) -> Result<Vec<f64>, InfoError> {
        for (id, &p) in &self.pi {
            match tree.index_of(id) {
                Ok(i) if tree.is_hidden(i) => {}
                _ => return Err(InfoError::UnknownPiNode(id.clone())),
            }
            if !p.is_finite() {
                return Err(InfoError::InvalidPi { id: id.clone(), value: p });
            }
        }
        nodes
            .iter()
            .map(|&n| self.pi.get(tree.id(n)).copied().ok_or_else(|| InfoError::MissingPi(tree.id(n).to_string())))
            .collect()
    }

    /// Values in hidden (file) order.
    pub fn hidden_values(&self, tree: &GaussianTree) -> Result<Vec<f64>, InfoError> {
        self.values_for(tree, tree.hidden_indices())
    }
}

fn check_samples(samples: usize) -> Result<(), InfoError> {
    if samples < MIN_SAMPLES {
        return Err(InfoError::TooFewSamples { samples, min: MIN_SAMPLES });
    }
    Ok(())
}

/// `I(X; Y~) = ln(|S_X| |S_Y| / |S_XY|) / 2` from the joint covariance.
pub fn mi_direct(tree: &GaussianTree) -> Result<MIResult, InfoError> {
    let model = joint_covariance(tree);
    let cond = linalg::condition_number(&model.joint);
    if cond.is_nan() || cond >= CONDITION_LIMIT {
        return Err(InfoError::IllConditioned { context: "joint covariance".into(), condition: cond });
    }
    let ld = |m: &DMatrix<f64>, what: &str| {
        linalg::log_det_spd(m).ok_or_else(|| InfoError::IllConditioned { context: what.into(), condition: cond })
    };
    let lx = ld(&model.observed_block, "observed covariance")?;
    let ly = ld(&model.hidden_block(), "hidden covariance")?;
    let lxy = ld(&model.joint, "joint covariance")?;
    Ok(MIResult::exact(0.5 * (lx + ly - lxy), MIMethod::DirectGaussian))
}

/// `I(X; Y~) = ln(|S_X| / prod_i (1 - r_i)) / 2`, where `r_i` is the triple
/// ratio of leaf `i` with its hidden parent. Reads only `sigma_x` (in the
/// structure's observed order); the structure supplies the topology.
pub fn mi_closed_form(sigma_x: &DMatrix<f64>, structure: &GaussianTree) -> Result<MIResult, InfoError> {
    if structure.hidden_count() == 0 {
        return Err(InfoError::NotLeafOnly("tree has no hidden nodes".into()));
    }
    if !structure.observed_are_leaves() {
        let inner = structure.observed_indices().iter().find(|&&o| structure.degree(o) != 1).unwrap();
        return Err(InfoError::NotLeafOnly(format!("observed node `{}` is internal", structure.id(*inner))));
    }
    let n = structure.observed_count();
    if sigma_x.nrows() != n || sigma_x.ncols() != n {
        return Err(TreeError::DimensionMismatch { rows: sigma_x.nrows(), cols: sigma_x.ncols(), expected: n }.into());
    }
    let mut log_prod = 0.0;
    for (p, &o) in structure.observed_indices().iter().enumerate() {
        let parent = structure.neighbors(o)[0].0;
        let r = observed_hidden_corr_sq(structure, sigma_x, p, parent, DEFAULT_TRIPLE_TOLERANCE)?;
        log_prod += (1.0 - r).ln();
    }
    let lx = linalg::log_det_spd(sigma_x)
        .ok_or_else(|| InfoError::IllConditioned { context: "observed covariance".into(), condition: f64::INFINITY })?;
    Ok(MIResult::exact(0.5 * (lx - log_prod), MIMethod::ClosedForm))
}

/// Sign patterns of a mixture over channel inputs.
struct SignMixture {
    /// Sign per input for each pattern.
    patterns: Vec<Vec<f64>>,
    log_prior: Vec<f64>,
    weighting: MixtureWeighting,
}

impl SignMixture {
    fn new(ch: &SignChannel, pi: &[f64], weighting: MixtureWeighting) -> Result<Self, InfoError> {
        let free: Vec<usize> =
            (0..ch.in_dim()).filter(|&j| weighting == MixtureWeighting::Posterior || ch.active()[j]).collect();
        if free.len() > MAX_MIXTURE_INPUTS {
            return Err(InfoError::TooManyInputs { count: free.len(), cap: MAX_MIXTURE_INPUTS });
        }
        let mut patterns = Vec::new();
        let mut log_prior = Vec::new();
        for mask in 0..1usize << free.len() {
            let mut s = vec![1.0; ch.in_dim()];
            let mut lp = 0.0;
            for (bit, &j) in free.iter().enumerate() {
                if mask >> bit & 1 == 1 {
                    s[j] = -1.0;
                    lp += (1.0 - pi[j]).ln();
                } else {
                    lp += pi[j].ln();
                }
            }
            if lp > f64::NEG_INFINITY {
                patterns.push(s);
                log_prior.push(lp);
            }
        }
        Ok(Self { patterns, log_prior, weighting })
    }
}

struct Scratch {
    eps: Vec<f64>,
    y: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    s: Vec<f64>,
    xw: Vec<f64>,
    eta: Vec<f64>,
    hc: Vec<f64>,
    logs: Vec<f64>,
    weights: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new(ch: &SignChannel, patterns: usize) -> Self {
        let (d, m) = (ch.out_dim(), ch.in_dim());
        Self {
            eps: vec![0.0; m],
            y: vec![0.0; m],
            b: vec![0.0; m],
            c: vec![0.0; m],
            s: vec![0.0; m],
            xw: vec![0.0; d],
            eta: vec![0.0; d],
            hc: vec![0.0; d * m],
            logs: vec![0.0; patterns],
            weights: vec![0.0; patterns],
            tmp: vec![0.0; m],
        }
    }
}

/// One draw of `(y, b, x)`; returns `(ln p(x | y, b), ln p(x | y))`.
///
/// Random numbers are consumed in a fixed order (input normals, sign
/// uniforms, noise normals) so that sweeps over `pi` share them.
fn conditional_draw(
    ch: &SignChannel,
    mix: &SignMixture,
    pi: &[f64],
    rng: &mut ChaCha8Rng,
    sc: &mut Scratch,
) -> (f64, f64) {
    let (d, m) = (ch.out_dim(), ch.in_dim());
    ch.sample_input(rng, &mut sc.eps, &mut sc.y);
    for (b, &p) in sc.b[..m].iter_mut().zip(pi) {
        let u: f64 = rng.random();
        *b = if u < p { 1.0 } else { -1.0 };
    }
    for e in sc.eta.iter_mut() {
        *e = rng.sample(StandardNormal);
    }
    // the conditioning value `c` and the channel input `s = b * c`
    for j in 0..m {
        sc.c[j] = match mix.weighting {
            MixtureWeighting::Prior => sc.y[j],
            MixtureWeighting::Posterior => sc.b[j] * sc.y[j],
        };
        sc.s[j] = sc.b[j] * sc.c[j];
    }
    ch.whitened_mean(&sc.s, &mut sc.xw);
    for (x, e) in sc.xw.iter_mut().zip(&sc.eta) {
        *x += e;
    }
    let h = ch.whitened_gain();
    for r in 0..d {
        for j in 0..m {
            sc.hc[r * m + j] = h[r * m + j] * sc.c[j];
        }
    }
    for (p, pat) in mix.patterns.iter().enumerate() {
        let mut dist = 0.0;
        for r in 0..d {
            let row = &sc.hc[r * m..(r + 1) * m];
            let mean: f64 = row.iter().zip(pat).map(|(h, s)| h * s).sum();
            let diff = sc.xw[r] - mean;
            dist += diff * diff;
        }
        let mut w = mix.log_prior[p];
        if mix.weighting == MixtureWeighting::Posterior {
            for ((t, &s), &c) in sc.tmp[..m].iter_mut().zip(pat).zip(&sc.c) {
                *t = s * c;
            }
            w -= 0.5 * ch.input_quadratic(&sc.tmp);
        }
        sc.weights[p] = w;
        sc.logs[p] = w - 0.5 * dist;
    }
    let mut log_mix = ch.log_norm() + log_sum_exp(&sc.logs);
    if mix.weighting == MixtureWeighting::Posterior {
        log_mix -= log_sum_exp(&sc.weights);
    }
    let log_true = ch.log_norm() - 0.5 * sc.eta.iter().map(|e| e * e).sum::<f64>();
    (log_true, log_mix)
}

/// Mean of `f(ln p(x|y,b), ln p(x|y))` over seeded draws from the channel.
fn conditional_mc(
    ch: &SignChannel,
    pi: &[f64],
    weighting: MixtureWeighting,
    samples: usize,
    seed: u64,
    stream: u64,
    f: fn(f64, f64) -> f64,
) -> Result<Welford, InfoError> {
    let mix = SignMixture::new(ch, pi, weighting)?;
    let parts = mc::batches(samples, seed, stream, |rng, count| {
        let mut sc = Scratch::new(ch, mix.patterns.len());
        let mut w = Welford::default();
        for _ in 0..count {
            let (t, m) = conditional_draw(ch, &mix, pi, rng, &mut sc);
            w.push(f(t, m));
        }
        w
    });
    let mut total = Welford::default();
    parts.iter().for_each(|p| total.merge(p));
    Ok(total)
}

/// Generic `I(O; I)` for a channel with Bernoulli sign inputs, where `O` are
/// the channel outputs and `I` the unsigned inputs.
pub(crate) fn channel_mi_without_signs(
    ch: &SignChannel,
    pi: &[f64],
    weighting: MixtureWeighting,
    samples: usize,
    seed: u64,
    stream: u64,
) -> Result<MIResult, InfoError> {
    check_samples(samples)?;
    let w = conditional_mc(ch, pi, weighting, samples, seed, stream, |_, m| m)?;
    Ok(MIResult::monte_carlo(ch.output_entropy() + w.mean, w.std_error(), samples))
}

fn channel_sign_mi(
    ch: &SignChannel,
    pi: &[f64],
    weighting: MixtureWeighting,
    samples: usize,
    seed: u64,
    stream: u64,
) -> Result<MIResult, InfoError> {
    check_samples(samples)?;
    if SignMixture::new(ch, pi, weighting)?.patterns.len() == 1 {
        return Ok(MIResult::monte_carlo(0.0, 0.0, samples));
    }
    let w = conditional_mc(ch, pi, weighting, samples, seed, stream, |t, m| t - m)?;
    Ok(MIResult::monte_carlo(w.mean, w.std_error(), samples))
}

pub fn mi_x_y(tree: &GaussianTree, pi: &BernoulliParams, samples: usize, seed: u64) -> Result<MIResult, InfoError> {
    mi_x_y_with(tree, pi, samples, seed, MixtureWeighting::Prior)
}

/// Monte Carlo `I(X; Y) = h(X) + E ln p(X | Y)`, with `h(X)` Gaussian.
pub fn mi_x_y_with(
    tree: &GaussianTree,
    pi: &BernoulliParams,
    samples: usize,
    seed: u64,
    weighting: MixtureWeighting,
) -> Result<MIResult, InfoError> {
    let ch = SignChannel::observed_from_hidden(tree)?;
    let p = pi.hidden_values(tree)?;
    channel_mi_without_signs(&ch, &p, weighting, samples, seed, STREAM_X_Y)
}

pub fn mi_x_b_given_y(
    tree: &GaussianTree,
    pi: &BernoulliParams,
    samples: usize,
    seed: u64,
) -> Result<MIResult, InfoError> {
    mi_x_b_given_y_with(tree, pi, samples, seed, MixtureWeighting::Prior)
}

/// Monte Carlo `I(X; B | Y) = E[ln p(X | Y, B) - ln p(X | Y)]`, where
/// `p(x | y)` is the sign mixture.
pub fn mi_x_b_given_y_with(
    tree: &GaussianTree,
    pi: &BernoulliParams,
    samples: usize,
    seed: u64,
    weighting: MixtureWeighting,
) -> Result<MIResult, InfoError> {
    let ch = SignChannel::observed_from_hidden(tree)?;
    let p = pi.hidden_values(tree)?;
    channel_sign_mi(&ch, &p, weighting, samples, seed, STREAM_X_B_GIVEN_Y)
}

/// Monte Carlo `I(X; B) = h(X) - h(X | B)`.
///
/// `h(X)` is the plug-in entropy of the sign-marginal mixture
/// `sum_b pi(b) N(0, S_X(b))` and `h(X | B)` that of the component drawn;
/// the two use independent sample streams. With a single possible sign
/// pattern the result is exactly 0.
pub fn mi_x_b(tree: &GaussianTree, pi: &BernoulliParams, samples: usize, seed: u64) -> Result<MIResult, InfoError> {
    check_samples(samples)?;
    let p = pi.hidden_values(tree)?;
    let k = tree.hidden_count();
    if k > MAX_MIXTURE_INPUTS {
        return Err(InfoError::TooManyInputs { count: k, cap: MAX_MIXTURE_INPUTS });
    }
    let mut comps: Vec<(usize, f64, GaussianFactor)> = Vec::new();
    for mask in 0..1usize << k {
        let lp: f64 = (0..k).map(|j| if mask >> j & 1 == 1 { (1.0 - p[j]).ln() } else { p[j].ln() }).sum();
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let b = SignAssignment::from_pairs(
            tree.hidden_indices()
                .iter()
                .enumerate()
                .map(|(j, &h)| (tree.id(h), if mask >> j & 1 == 1 { -1 } else { 1 })),
        );
        let flipped = apply_sign_assignment(tree, &b).expect("assignment covers every hidden node");
        let f = GaussianFactor::new(&joint_covariance(&flipped).observed_block).ok_or_else(|| {
            InfoError::IllConditioned { context: "observed covariance".into(), condition: f64::INFINITY }
        })?;
        comps.push((mask, lp, f));
    }
    if comps.len() == 1 {
        return Ok(MIResult::monte_carlo(0.0, 0.0, samples));
    }
    let n = tree.observed_count();
    let draw = |rng: &mut ChaCha8Rng| -> (usize, nalgebra::DVector<f64>) {
        let mut mask = 0;
        for (j, pj) in p.iter().enumerate() {
            let u: f64 = rng.random();
            if u >= *pj {
                mask |= 1 << j;
            }
        }
        let ci = comps.iter().position(|c| c.0 == mask).expect("drawn pattern has positive probability");
        let z = nalgebra::DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        (ci, comps[ci].2.l() * z)
    };
    let h_x = mc::mean_of(samples, seed, STREAM_H_X, |rng| {
        let (_, x) = draw(rng);
        let logs: Vec<f64> = comps.iter().map(|(_, lp, f)| lp + f.log_density(&x)).collect();
        -log_sum_exp(&logs)
    });
    let h_x_given_b = mc::mean_of(samples, seed, STREAM_H_X_GIVEN_B, |rng| {
        let (ci, x) = draw(rng);
        -comps[ci].2.log_density(&x)
    });
    Ok(MIResult::monte_carlo(h_x.mean - h_x_given_b.mean, h_x.std_error().hypot(h_x_given_b.std_error()), 2 * samples))
}

/// Both sides of the two-hidden-node decomposition
/// `I(X; B | Y) = I(X_1; B_1 | Y) + I(X_2; B_2 | Y)`, where `X_i` are the
/// observed leaves of hidden node `i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    pub lhs: MIResult,
    pub rhs: MIResult,
    pub first: MIResult,
    pub second: MIResult,
}

impl Decomposition {
    pub fn z_score(&self) -> f64 {
        self.lhs.z_score(&self.rhs)
    }
}

pub fn decomposition_check(
    tree: &GaussianTree,
    pi: &BernoulliParams,
    samples: usize,
    seed: u64,
) -> Result<Decomposition, InfoError> {
    decomposition_check_with(tree, pi, samples, seed, MixtureWeighting::Prior)
}

/// Requires exactly two adjacent hidden nodes, each with at least two
/// observed leaves and no other observed neighbours. All three terms use
/// independent sample streams.
pub fn decomposition_check_with(
    tree: &GaussianTree,
    pi: &BernoulliParams,
    samples: usize,
    seed: u64,
    weighting: MixtureWeighting,
) -> Result<Decomposition, InfoError> {
    let hidden = tree.hidden_indices();
    if hidden.len() != 2 {
        return Err(InfoError::WrongShape(format!("need 2 hidden nodes, found {}", hidden.len())));
    }
    let (h1, h2) = (hidden[0], hidden[1]);
    if !tree.neighbors(h1).iter().any(|&(v, _)| v == h2) {
        return Err(InfoError::WrongShape("the two hidden nodes are not adjacent".into()));
    }
    if !tree.observed_are_leaves() {
        return Err(InfoError::WrongShape("observed nodes must be leaves".into()));
    }
    let leaves = |h: usize| -> Vec<usize> {
        tree.neighbors(h).iter().map(|&(v, _)| v).filter(|&v| !tree.is_hidden(v)).collect()
    };
    let (x1, x2) = (leaves(h1), leaves(h2));
    for (h, x) in [(h1, &x1), (h2, &x2)] {
        if x.len() < 2 {
            return Err(InfoError::WrongShape(format!(
                "hidden node `{}` has fewer than 2 observed leaves",
                tree.id(h)
            )));
        }
    }
    let p = pi.hidden_values(tree)?;
    let lhs = mi_x_b_given_y_with(tree, pi, samples, seed, weighting)?;
    let ch1 = SignChannel::between(tree, &x1, hidden)?;
    let ch2 = SignChannel::between(tree, &x2, hidden)?;
    let first = channel_sign_mi(&ch1, &p, weighting, samples, seed, STREAM_DECOMP_FIRST)?;
    let second = channel_sign_mi(&ch2, &p, weighting, samples, seed, STREAM_DECOMP_SECOND)?;
    Ok(Decomposition { lhs, rhs: first.plus(&second), first, second })
}

/// `I(X; Y) + I(X; B | Y)` against the fixed `I(X; Y~)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainCheck {
    pub i_x_y: MIResult,
    pub i_x_b_given_y: MIResult,
    pub sum: MIResult,
    pub total: MIResult,
}

impl ChainCheck {
    pub fn z_score(&self) -> f64 {
        self.sum.z_score(&self.total)
    }
}

pub fn chain_check(
    tree: &GaussianTree,
    pi: &BernoulliParams,
    samples: usize,
    seed: u64,
) -> Result<ChainCheck, InfoError> {
    let i_x_y = mi_x_y(tree, pi, samples, seed)?;
    let i_x_b_given_y = mi_x_b_given_y(tree, pi, samples, seed)?;
    Ok(ChainCheck { i_x_y, i_x_b_given_y, sum: i_x_y.plus(&i_x_b_given_y), total: mi_direct(tree)? })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiSweep {
    /// One `pi` shared by every hidden node.
    Shared,
    /// Full grid over each hidden node's `pi` (at most two hidden nodes).
    PerNode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    /// `pi` per hidden node (hidden order).
    pub pi: Vec<f64>,
    pub result: MIResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiOptimum {
    pub pi_star: BernoulliParams,
    pub sweep: PiSweep,
    pub hidden: Vec<String>,
    pub curve: Vec<CurvePoint>,
}

impl PiOptimum {
    /// Curve as CSV: one `pi` column (shared sweep) or one per hidden node.
    pub fn curve_csv(&self) -> String {
        let mut out = match self.sweep {
            PiSweep::Shared => "pi".to_string(),
            PiSweep::PerNode => self.hidden.iter().map(|h| format!("pi_{h}")).collect::<Vec<_>>().join(","),
        };
        out.push_str(",value,std_error\n");
        for p in &self.curve {
            let pis: Vec<String> = match self.sweep {
                PiSweep::Shared => vec![format!("{}", p.pi[0])],
                PiSweep::PerNode => p.pi.iter().map(|v| format!("{v}")).collect(),
            };
            out.push_str(&format!("{},{},{}\n", pis.join(","), p.result.value, p.result.std_error));
        }
        out
    }

    /// Largest `|v(pi) - v(1 - pi)| / sqrt(se^2 + se'^2)` over the curve.
    pub fn max_asymmetry_z(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in &self.curve {
            let mirror: Vec<f64> = a.pi.iter().map(|p| 1.0 - p).collect();
            if let Some(b) = self.curve.iter().find(|b| b.pi.iter().zip(&mirror).all(|(x, y)| (x - y).abs() < 1e-9)) {
                worst = worst.max(a.result.z_score(&b.result));
            }
        }
        worst
    }
}

/// Grid `0, step, 2 step, ..., 1`.
pub fn pi_grid(step: f64) -> Result<Vec<f64>, InfoError> {
    if !(step > 0.0 && step <= 0.25) {
        return Err(InfoError::InvalidGrid(step));
    }
    let n = (1.0 / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=n).map(|i| (i as f64 * step).min(1.0)).collect();
    if 1.0 - grid[n] > 1e-9 {
        grid.push(1.0);
    }
    Ok(grid)
}

pub fn optimize_pi(tree: &GaussianTree, grid_step: f64, samples: usize, seed: u64) -> Result<PiOptimum, InfoError> {
    optimize_pi_with(tree, grid_step, samples, seed, PiSweep::Shared, MixtureWeighting::Prior)
}

/// Grid search for the `pi` maximizing Monte Carlo `I(X; B | Y)`.
///
/// All grid points reuse the same random numbers, so differences along the
/// curve are not swamped by independent noise. Ties go to the first point.
pub fn optimize_pi_with(
    tree: &GaussianTree,
    grid_step: f64,
    samples: usize,
    seed: u64,
    sweep: PiSweep,
    weighting: MixtureWeighting,
) -> Result<PiOptimum, InfoError> {
    check_samples(samples)?;
    let grid = pi_grid(grid_step)?;
    let k = tree.hidden_count();
    let points: Vec<Vec<f64>> = match sweep {
        PiSweep::Shared => grid.iter().map(|&p| vec![p; k]).collect(),
        PiSweep::PerNode => match k {
            1 => grid.iter().map(|&p| vec![p]).collect(),
            2 => grid.iter().flat_map(|&a| grid.iter().map(move |&b| vec![a, b])).collect(),
            _ => return Err(InfoError::WrongShape(format!("per-node sweep supports 1 or 2 hidden nodes, found {k}"))),
        },
    };
    let ch = SignChannel::observed_from_hidden(tree)?;
    let mut curve = Vec::with_capacity(points.len());
    for pi in points {
        let result = channel_sign_mi(&ch, &pi, weighting, samples, seed, STREAM_X_B_GIVEN_Y)?;
        curve.push(CurvePoint { pi, result });
    }
    let best = curve
        .iter()
        .enumerate()
        .fold(0, |best, (i, p)| if p.result.value > curve[best].result.value { i } else { best });
    let hidden: Vec<String> = tree.hidden_indices().iter().map(|&h| tree.id(h).to_string()).collect();
    let pi_star = BernoulliParams::from_pairs(hidden.iter().cloned().zip(curve[best].pi.iter().copied()));
    Ok(PiOptimum { pi_star, sweep, hidden, curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    const S1_TOTAL: f64 = 0.729_430_995_1;

    #[test]
    fn star_direct_and_closed_form() {
        let s1 = fixtures::star();
        let d = mi_direct(&s1).unwrap();
        assert!((d.value - S1_TOTAL).abs() < 1e-9, "{}", d.value);
        let c = mi_closed_form(&joint_covariance(&s1).observed_block, &s1).unwrap();
        assert!((c.value - d.value).abs() < 1e-12);
        assert_eq!(c.method, MIMethod::ClosedForm);
        assert_eq!(c.std_error, 0.0);
    }

    #[test]
    fn closed_form_rejects_inconsistent_and_internal() {
        let s1 = fixtures::star();
        let mut sx = joint_covariance(&s1).observed_block;
        sx[(1, 2)] = 0.10;
        sx[(2, 1)] = 0.10;
        assert!(matches!(mi_closed_form(&sx, &s1), Err(InfoError::Tree(TreeError::InconsistentCovariance { .. }))));
        let spec = crate::tree::TreeSpec::new()
            .hidden("h")
            .observed("a")
            .observed("b")
            .observed("c")
            .observed("d")
            .edge("h", "a", 0.5)
            .edge("h", "b", 0.5)
            .edge("h", "c", 0.5)
            .edge("c", "d", 0.5);
        let t = crate::tree::validate_tree(spec).unwrap();
        assert!(matches!(mi_closed_form(&joint_covariance(&t).observed_block, &t), Err(InfoError::NotLeafOnly(_))));
    }

    #[test]
    fn near_independence() {
        let spec = crate::tree::TreeSpec::new()
            .hidden("y")
            .observed("a")
            .observed("b")
            .observed("c")
            .edge("y", "a", 0.01)
            .edge("y", "b", 0.01)
            .edge("y", "c", 0.01);
        let t = crate::tree::validate_tree(spec).unwrap();
        assert!(mi_direct(&t).unwrap().value < 1e-3);
    }

    #[test]
    fn degenerate_pi_gives_exact_zero() {
        let s1 = fixtures::star();
        let one = BernoulliParams::uniform(&s1, 1.0);
        assert_eq!(mi_x_b(&s1, &one, 2000, 1).unwrap().value, 0.0);
        let r = mi_x_b_given_y(&s1, &one, 2000, 1).unwrap();
        assert_eq!((r.value, r.std_error), (0.0, 0.0));
    }

    #[test]
    fn too_few_samples() {
        let s1 = fixtures::star();
        let pi = BernoulliParams::uniform(&s1, 0.5);
        assert_eq!(mi_x_y(&s1, &pi, 999, 0), Err(InfoError::TooFewSamples { samples: 999, min: 1000 }));
    }

    #[test]
    fn pi_coverage_errors() {
        let d1 = fixtures::dumbbell();
        let pi = BernoulliParams::from_pairs([("y1", 0.5)]);
        assert_eq!(mi_x_y(&d1, &pi, 1000, 0), Err(InfoError::MissingPi("y2".into())));
        let pi = BernoulliParams::from_pairs([("y1", 0.5), ("y2", 0.5), ("x1", 0.5)]);
        assert_eq!(mi_x_y(&d1, &pi, 1000, 0), Err(InfoError::UnknownPiNode("x1".into())));
        assert_eq!(BernoulliParams::from_pairs([("y", 1.7)]).pi["y"], 1.0);
    }

    #[test]
    fn grid() {
        assert_eq!(pi_grid(0.25).unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(pi_grid(0.05).unwrap().len(), 21);
        assert_eq!(pi_grid(0.3), Err(InfoError::InvalidGrid(0.3)));
        assert_eq!(pi_grid(0.0), Err(InfoError::InvalidGrid(0.0)));
        assert_eq!(*pi_grid(0.15).unwrap().last().unwrap(), 1.0);
    }

    #[test]
    fn posterior_weighting_breaks_dumbbell_decomposition() {
        // Conditioning on the flipped tree's signed hidden vector couples the
        // two sign bits through Y, so the per-node terms overcount.
        let d1 = fixtures::dumbbell();
        let pi = BernoulliParams::uniform(&d1, 0.5);
        let prior = decomposition_check(&d1, &pi, 40_000, 3).unwrap();
        assert!(prior.z_score() < 3.0, "{prior:?}");
        let post = decomposition_check_with(&d1, &pi, 40_000, 3, MixtureWeighting::Posterior).unwrap();
        assert!(post.rhs.value - post.lhs.value > 0.04, "{post:?}");
    }

    #[test]
    fn decomposition_shape() {
        let s1 = fixtures::star();
        let pi = BernoulliParams::uniform(&s1, 0.5);
        assert!(matches!(decomposition_check(&s1, &pi, 1000, 0), Err(InfoError::WrongShape(_))));
    }
}
