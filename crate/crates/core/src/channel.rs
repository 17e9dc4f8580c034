//! The linear-Gaussian sign channel.
//!
//! For output nodes `O` and input nodes `I` of a tree, `O | I = u` is Gaussian
//! with mean `G u` and covariance `C`, where `G = S_OI S_I^{-1}` and
//! `C = S_O - G S_IO`. With sign flips `b` on the inputs the mean becomes
//! `G (b * u)`. Densities are evaluated in coordinates whitened by the
//! Cholesky factor of `C`, so a draw is `xw = H (b * u) + eta` with
//! `H = L_C^{-1} G` and standard normal `eta`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::info::InfoError;
use crate::linalg::{self, GaussianFactor};
use crate::tree::{joint_covariance, GaussianTree};

/// Columns of `G` with norm below this are inactive: their sign never reaches
/// the output.
pub const ACTIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SignChannel {
    pub out_nodes: Vec<usize>,
    pub in_nodes: Vec<usize>,
    pub gain: DMatrix<f64>,
    pub noise_cov: DMatrix<f64>,
    pub out_cov: DMatrix<f64>,
    pub in_cov: DMatrix<f64>,
    noise: GaussianFactor,
    input: GaussianFactor,
    /// `H` row-major, `d x m`.
    whitened_gain: Vec<f64>,
    /// `L_I` row-major, `m x m`.
    input_chol: Vec<f64>,
    /// `L_C` row-major, `d x d`.
    noise_chol: Vec<f64>,
    /// `S_I^{-1}` row-major.
    in_precision: Vec<f64>,
    active: Vec<bool>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
}

impl SignChannel {
    /// Channel from `in_nodes` to `out_nodes` (node indices).
    pub fn between(tree: &GaussianTree, out_nodes: &[usize], in_nodes: &[usize]) -> Result<Self, InfoError> {
        let model = joint_covariance(tree);
        let pos = |node: usize| model.position(tree.id(node)).expect("node belongs to the tree");
        let o: Vec<usize> = out_nodes.iter().map(|&n| pos(n)).collect();
        let i: Vec<usize> = in_nodes.iter().map(|&n| pos(n)).collect();
        let out_cov = linalg::submatrix(&model.joint, &o, &o);
        let in_cov = linalg::submatrix(&model.joint, &i, &i);
        let cross = linalg::submatrix(&model.joint, &o, &i);
        let ill = |what: &str| InfoError::IllConditioned { context: what.to_string(), condition: f64::INFINITY };
        let input = GaussianFactor::new(&in_cov).ok_or_else(|| ill("input covariance"))?;
        let gain = input.solve(&cross.transpose()).transpose();
        let mut noise_cov = &out_cov - &gain * cross.transpose();
        noise_cov = (&noise_cov + noise_cov.transpose()) * 0.5;
        let noise = GaussianFactor::new(&noise_cov).ok_or_else(|| ill("conditional output covariance"))?;
        let l_c = noise.l();
        let h = l_c.solve_lower_triangular(&gain).expect("non-singular Cholesky factor");
        let active = (0..gain.ncols()).map(|j| gain.column(j).norm() > ACTIVE_TOLERANCE).collect();
        let precision = input.solve(&DMatrix::identity(in_cov.nrows(), in_cov.nrows()));
        Ok(Self {
            out_nodes: out_nodes.to_vec(),
            in_nodes: in_nodes.to_vec(),
            whitened_gain: row_major(&h),
            input_chol: row_major(&input.l()),
            noise_chol: row_major(&l_c),
            in_precision: row_major(&precision),
            gain,
            noise_cov,
            out_cov,
            in_cov,
            noise,
            input,
            active,
        })
    }

    /// Observed nodes given every hidden node.
    pub fn observed_from_hidden(tree: &GaussianTree) -> Result<Self, InfoError> {
        Self::between(tree, tree.observed_indices(), tree.hidden_indices())
    }

    /// Observed nodes given the layer-1 hidden nodes.
    pub fn observed_from_layer_one(tree: &GaussianTree) -> Result<Self, InfoError> {
        Self::between(tree, tree.observed_indices(), &tree.hidden_at_layer(1))
    }

    pub fn out_dim(&self) -> usize {
        self.out_nodes.len()
    }

    pub fn in_dim(&self) -> usize {
        self.in_nodes.len()
    }

    pub fn active(&self) -> &[bool] {
        &self.active
    }

    pub fn noise_variances(&self) -> Vec<f64> {
        (0..self.out_dim()).map(|i| self.noise_cov[(i, i)]).collect()
    }

    pub fn noise_factor(&self) -> &GaussianFactor {
        &self.noise
    }

    pub fn input_factor(&self) -> &GaussianFactor {
        &self.input
    }

    /// `-(d ln 2pi + ln|C|)/2`.
    pub fn log_norm(&self) -> f64 {
        self.noise.log_norm()
    }

    /// Differential entropy of the outputs, `ln|2 pi e S_O| / 2`.
    pub fn output_entropy(&self) -> f64 {
        let d = self.out_dim() as f64;
        0.5 * (d * (1.0 + (2.0 * std::f64::consts::PI).ln()) + linalg::log_det_spd(&self.out_cov).unwrap_or(f64::NAN))
    }

    /// Noise-free output `G u`.
    pub fn mean(&self, u: &[f64]) -> Vec<f64> {
        (0..self.out_dim()).map(|r| (0..self.in_dim()).map(|c| self.gain[(r, c)] * u[c]).sum()).collect()
    }

    /// `out = H u`.
    pub fn whitened_mean(&self, u: &[f64], out: &mut [f64]) {
        let m = self.in_dim();
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.whitened_gain[r * m..(r + 1) * m];
            *o = row.iter().zip(u).map(|(a, b)| a * b).sum();
        }
    }

    /// `H = L_C^{-1} G`, row-major `d x m`.
    pub fn whitened_gain(&self) -> &[f64] {
        &self.whitened_gain
    }

    /// `out = L_C v` (colours whitened noise).
    pub fn colour_noise(&self, v: &[f64], out: &mut [f64]) {
        let d = self.out_dim();
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..=r).map(|c| self.noise_chol[r * d + c] * v[c]).sum();
        }
    }

    /// Draws inputs `u ~ N(0, S_I)` into `out` using `scratch` for the
    /// standard normals.
    pub fn sample_input<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut [f64], out: &mut [f64]) {
        let m = self.in_dim();
        for e in scratch.iter_mut() {
            *e = rng.sample(StandardNormal);
        }
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..=r).map(|c| self.input_chol[r * m + c] * scratch[c]).sum();
        }
    }

    /// Quadratic form `u^T S_I^{-1} u`.
    pub fn input_quadratic(&self, u: &[f64]) -> f64 {
        let m = self.in_dim();
        let mut q = 0.0;
        for r in 0..m {
            let row = &self.in_precision[r * m..(r + 1) * m];
            q += u[r] * row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn star_gain_and_noise() {
        let ch = SignChannel::observed_from_hidden(&fixtures::star()).unwrap();
        let m = ch.mean(&[2.0]);
        for (got, want) in m.iter().zip([1.2, 1.4, 1.6]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((ch.noise_cov[(0, 1)]).abs() < 1e-12);
        assert!((ch.noise_variances()[2] - 0.36).abs() < 1e-12);
        assert!(ch.active().iter().all(|&a| a));
    }

    #[test]
    fn deep_hidden_nodes_are_inactive() {
        let t = fixtures::two_layer();
        let ch = SignChannel::observed_from_hidden(&t).unwrap();
        let layer1: Vec<bool> = t.hidden_indices().iter().map(|&h| t.layer_of(h) == 1).collect();
        assert_eq!(ch.active(), &layer1[..]);
    }

    #[test]
    fn whitening_reproduces_density() {
        let ch = SignChannel::observed_from_hidden(&fixtures::dumbbell()).unwrap();
        let u = [0.3, -1.1];
        let mut hm = vec![0.0; 4];
        ch.whitened_mean(&u, &mut hm);
        let direct = ch.noise_factor().whiten(&nalgebra::DVector::from_vec(ch.mean(&u)));
        for (a, b) in hm.iter().zip(direct.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let q = ch.input_quadratic(&u);
        let z = ch.input_factor().whiten(&nalgebra::DVector::from_vec(u.to_vec()));
        assert!((q - z.norm_squared()).abs() < 1e-12);
    }
}
