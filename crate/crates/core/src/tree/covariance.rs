use nalgebra::DMatrix;

use super::GaussianTree;
use crate::linalg;

/// Smallest eigenvalue a joint covariance must exceed to count as positive
/// definite.
pub const PD_TOLERANCE: f64 = 1e-10;

/// Joint covariance of all nodes, observed nodes first then hidden nodes
/// (each group in file order).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceModel {
    pub joint: DMatrix<f64>,
    pub observed_block: DMatrix<f64>,
    pub node_order: Vec<String>,
    pub observed_count: usize,
}

impl CovarianceModel {
    pub fn hidden_block(&self) -> DMatrix<f64> {
        let n = self.observed_count;
        let k = self.joint.nrows() - n;
        self.joint.view((n, n), (k, k)).into_owned()
    }

    /// Observed-by-hidden cross covariance.
    pub fn cross_block(&self) -> DMatrix<f64> {
        let n = self.observed_count;
        let k = self.joint.nrows() - n;
        self.joint.view((0, n), (n, k)).into_owned()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.node_order.iter().position(|s| s == id)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.joint)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.min_eigenvalue() > PD_TOLERANCE
    }

    pub fn is_symmetric(&self) -> bool {
        self.joint == self.joint.transpose()
    }

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }
}

pub fn joint_covariance(tree: &GaussianTree) -> CovarianceModel {
    let order: Vec<usize> = tree.observed_indices().iter().chain(tree.hidden_indices()).copied().collect();
    let dim = order.len();
    let mut joint = DMatrix::zeros(dim, dim);
    for (a, &i) in order.iter().enumerate() {
        let row = tree.correlation_row(i);
        for (b, &j) in order.iter().enumerate() {
            joint[(a, b)] = row[j];
        }
    }
    // path products are symmetric in exact arithmetic; enforce it bitwise
    for a in 0..dim {
        for b in 0..a {
            joint[(a, b)] = joint[(b, a)];
        }
    }
    let n = tree.observed_count();
    CovarianceModel {
        observed_block: joint.view((0, 0), (n, n)).into_owned(),
        joint,
        node_order: order.iter().map(|&i| tree.id(i).to_string()).collect(),
        observed_count: n,
    }
}

/// `prod over edges of (1 - rho^2)`.
pub fn tree_determinant(tree: &GaussianTree) -> f64 {
    tree.edges().iter().map(|e| 1.0 - e.rho * e.rho).product()
}

/// Determinant of the joint covariance by LU factorization.
pub fn direct_determinant(model: &CovarianceModel) -> f64 {
    model.joint.clone().determinant()
}
