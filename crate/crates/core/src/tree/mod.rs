//! Latent Gaussian tree structure.
//!
//! A [`TreeSpec`] is the raw node/edge description (as read from a tree
//! file); [`validate_tree`] turns it into a [`GaussianTree`] after checking
//! that it is a minimal latent tree. Every variable has zero mean and unit
//! variance, so the only parameters are the signed edge correlations and the
//! covariance between any two nodes is the product of the correlations along
//! the path joining them.

mod covariance;
mod format;
mod recover;

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use covariance::{direct_determinant, joint_covariance, tree_determinant, CovarianceModel, PD_TOLERANCE};
pub use format::{parse_tree, write_tree};
pub use recover::{
    observed_hidden_corr_sq, recover_edge_magnitudes, recover_edge_magnitudes_with_tolerance, RecoveredEdge,
    DEFAULT_TRIPLE_TOLERANCE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("edge ({u}, {v}) references unknown node `{missing}`")]
    DanglingEdge { u: String, v: String, missing: String },
    #[error("edge ({u}, {v}) has rho = {rho}; |rho| must lie strictly inside (0, 1)")]
    BadCorrelation { u: String, v: String, rho: f64 },
    #[error("not a tree: {0}")]
    NotATree(String),
    #[error("hidden node `{id}` has degree {degree}; minimal trees need at least 3 neighbours")]
    NonMinimal { id: String, degree: usize },
    #[error("tree has no observed nodes")]
    NoObservedNodes,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("observed covariance has shape {rows}x{cols}, expected {expected}x{expected}")]
    DimensionMismatch { rows: usize, cols: usize, expected: usize },
    #[error("inconsistent covariance at {context}: {detail}")]
    InconsistentCovariance { context: String, detail: String },
    #[error("squared correlation {value} for {context} is outside (0, 1)")]
    RatioOutOfRange { context: String, value: f64 },
}

impl TreeError {
    pub fn is_validation(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Observed,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeSpec {
    pub u: String,
    pub v: String,
    pub rho: f64,
}

/// Unvalidated node/edge description of a latent Gaussian tree.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<EdgeSpec>,
}

impl TreeSpec {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observed(mut self, id: impl Into<String>) -> Self {
        self.nodes.push(NodeSpec { id: id.into(), kind: NodeKind::Observed });
        self
    }

    pub fn hidden(mut self, id: impl Into<String>) -> Self {
        self.nodes.push(NodeSpec { id: id.into(), kind: NodeKind::Hidden });
        self
    }

    pub fn edge(mut self, u: impl Into<String>, v: impl Into<String>, rho: f64) -> Self {
        self.edges.push(EdgeSpec { u: u.into(), v: v.into(), rho });
        self
    }
}

/// A validated minimal latent Gaussian tree.
///
/// Node indices follow the order of `spec.nodes`; edge indices follow
/// `spec.edges`. Observed nodes have layer 0, hidden nodes have layer equal to
/// their graph distance to the closest observed node.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTree {
    spec: TreeSpec,
    index: HashMap<String, usize>,
    adjacency: Vec<Vec<(usize, usize)>>,
    layer: Vec<usize>,
    observed: Vec<usize>,
    hidden: Vec<usize>,
}

/// Checks that `spec` describes a minimal latent Gaussian tree and computes
/// its layers.
///
/// Checks run in this order: duplicate ids, dangling endpoints, correlation
/// range, cycles (including self-loops and repeated edges), minimality, and
/// finally connectivity.
pub fn validate_tree(spec: TreeSpec) -> Result<GaussianTree, TreeError> {
    let mut index = HashMap::with_capacity(spec.nodes.len());
    for (i, node) in spec.nodes.iter().enumerate() {
        if index.insert(node.id.clone(), i).is_some() {
            return Err(TreeError::DuplicateNode(node.id.clone()));
        }
    }
    for e in &spec.edges {
        for end in [&e.u, &e.v] {
            if !index.contains_key(end) {
                return Err(TreeError::DanglingEdge { u: e.u.clone(), v: e.v.clone(), missing: end.clone() });
            }
        }
    }
    for e in &spec.edges {
        if !(e.rho.is_finite() && e.rho != 0.0 && e.rho.abs() < 1.0) {
            return Err(TreeError::BadCorrelation { u: e.u.clone(), v: e.v.clone(), rho: e.rho });
        }
    }

    let n_nodes = spec.nodes.len();
    let mut dsu = DisjointSets::new(n_nodes);
    let mut adjacency = vec![Vec::new(); n_nodes];
    for (ei, e) in spec.edges.iter().enumerate() {
        let (a, b) = (index[&e.u], index[&e.v]);
        if a == b {
            return Err(TreeError::NotATree(format!("self-loop on `{}`", e.u)));
        }
        if !dsu.union(a, b) {
            return Err(TreeError::NotATree(format!("edge ({}, {}) closes a cycle", e.u, e.v)));
        }
        adjacency[a].push((b, ei));
        adjacency[b].push((a, ei));
    }

    for (i, node) in spec.nodes.iter().enumerate() {
        if node.kind == NodeKind::Hidden && adjacency[i].len() < 3 {
            return Err(TreeError::NonMinimal { id: node.id.clone(), degree: adjacency[i].len() });
        }
    }

    if n_nodes == 0 || spec.edges.len() + 1 != n_nodes {
        return Err(TreeError::NotATree(format!(
            "{} nodes and {} edges; a spanning tree needs exactly one edge fewer than nodes",
            n_nodes,
            spec.edges.len()
        )));
    }

    let observed: Vec<usize> = (0..n_nodes).filter(|&i| spec.nodes[i].kind == NodeKind::Observed).collect();
    let hidden: Vec<usize> = (0..n_nodes).filter(|&i| spec.nodes[i].kind == NodeKind::Hidden).collect();
    if observed.is_empty() {
        return Err(TreeError::NoObservedNodes);
    }

    // multi-source BFS from every observed node
    let mut layer = vec![usize::MAX; n_nodes];
    let mut queue = VecDeque::new();
    for &o in &observed {
        layer[o] = 0;
        queue.push_back(o);
    }
    while let Some(u) = queue.pop_front() {
        for &(v, _) in &adjacency[u] {
            if layer[v] == usize::MAX {
                layer[v] = layer[u] + 1;
                queue.push_back(v);
            }
        }
    }

    Ok(GaussianTree { spec, index, adjacency, layer, observed, hidden })
}

impl GaussianTree {
    pub fn spec(&self) -> &TreeSpec {
        &self.spec
    }

    pub fn node_count(&self) -> usize {
        self.spec.nodes.len()
    }

    /// Number of observed nodes, `n`.
    pub fn observed_count(&self) -> usize {
        self.observed.len()
    }

    /// Number of hidden nodes, `k`.
    pub fn hidden_count(&self) -> usize {
        self.hidden.len()
    }

    /// Node indices of observed nodes, in file order.
    pub fn observed_indices(&self) -> &[usize] {
        &self.observed
    }

    /// Node indices of hidden nodes, in file order.
    pub fn hidden_indices(&self) -> &[usize] {
        &self.hidden
    }

    pub fn id(&self, node: usize) -> &str {
        &self.spec.nodes[node].id
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.spec.nodes[node].kind
    }

    pub fn is_hidden(&self, node: usize) -> bool {
        self.kind(node) == NodeKind::Hidden
    }

    pub fn index_of(&self, id: &str) -> Result<usize, TreeError> {
        self.index.get(id).copied().ok_or_else(|| TreeError::UnknownNode(id.to_string()))
    }

    /// `(neighbour, edge index)` pairs.
    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adjacency[node].len()
    }

    pub fn edges(&self) -> &[EdgeSpec] {
        &self.spec.edges
    }

    pub fn edge_endpoints(&self, edge: usize) -> (usize, usize) {
        let e = &self.spec.edges[edge];
        (self.index[&e.u], self.index[&e.v])
    }

    pub fn rho(&self, edge: usize) -> f64 {
        self.spec.edges[edge].rho
    }

    /// Layer of a node by index (0 for observed nodes).
    pub fn layer_of(&self, node: usize) -> usize {
        self.layer[node]
    }

    /// Layer of a hidden node by id.
    pub fn layer(&self, id: &str) -> Result<usize, TreeError> {
        Ok(self.layer[self.index_of(id)?])
    }

    /// Largest hidden layer, `L` (0 when there are no hidden nodes).
    pub fn max_layer(&self) -> usize {
        self.hidden.iter().map(|&h| self.layer[h]).max().unwrap_or(0)
    }

    /// Hidden node indices at layer `l`, in file order.
    pub fn hidden_at_layer(&self, l: usize) -> Vec<usize> {
        self.hidden.iter().copied().filter(|&h| self.layer[h] == l).collect()
    }

    /// Position of a hidden node index within [`Self::hidden_indices`].
    pub fn hidden_position(&self, node: usize) -> Option<usize> {
        self.hidden.iter().position(|&h| h == node)
    }

    /// Position of an observed node index within [`Self::observed_indices`].
    pub fn observed_position(&self, node: usize) -> Option<usize> {
        self.observed.iter().position(|&o| o == node)
    }

    /// `true` when every observed node is a leaf.
    pub fn observed_are_leaves(&self) -> bool {
        self.observed.iter().all(|&o| self.degree(o) == 1)
    }

    /// Path-product correlations from `source` to every node.
    pub fn correlation_row(&self, source: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.node_count()];
        row[source] = 1.0;
        let mut stack = vec![(source, usize::MAX)];
        while let Some((u, parent)) = stack.pop() {
            for &(v, e) in &self.adjacency[u] {
                if v != parent {
                    row[v] = row[u] * self.spec.edges[e].rho;
                    stack.push((v, u));
                }
            }
        }
        row
    }

    /// Node indices on the path from `a` to `b`, both ends included.
    pub fn path(&self, a: usize, b: usize) -> Vec<usize> {
        let mut parent = vec![usize::MAX; self.node_count()];
        parent[a] = a;
        let mut stack = vec![a];
        while let Some(u) = stack.pop() {
            if u == b {
                break;
            }
            for &(v, _) in &self.adjacency[u] {
                if parent[v] == usize::MAX {
                    parent[v] = u;
                    stack.push(v);
                }
            }
        }
        let mut path = vec![b];
        let mut cur = b;
        while cur != a {
            cur = parent[cur];
            path.push(cur);
        }
        path.reverse();
        path
    }

    /// For every node, the index (into `neighbors(center)`) of the branch of
    /// `center` containing it; `usize::MAX` for `center` itself.
    pub fn branches(&self, center: usize) -> Vec<usize> {
        let mut branch = vec![usize::MAX; self.node_count()];
        for (bi, &(start, _)) in self.adjacency[center].iter().enumerate() {
            let mut stack = vec![(start, center)];
            while let Some((u, parent)) = stack.pop() {
                branch[u] = bi;
                for &(v, _) in &self.adjacency[u] {
                    if v != parent {
                        stack.push((v, u));
                    }
                }
            }
        }
        branch
    }

    /// Same structure with edge correlations replaced (in edge order).
    pub(crate) fn with_rhos(&self, rhos: impl IntoIterator<Item = f64>) -> GaussianTree {
        let mut out = self.clone();
        for (e, rho) in out.spec.edges.iter_mut().zip(rhos) {
            e.rho = rho;
        }
        out
    }
}

/// Path-product correlation between two nodes.
pub fn pairwise_correlation(tree: &GaussianTree, i: &str, j: &str) -> Result<f64, TreeError> {
    let a = tree.index_of(i)?;
    let b = tree.index_of(j)?;
    Ok(tree.correlation_row(a)[b])
}

/// Residual variances `1 - (explained variance)` of each observed node given
/// its adjacent hidden nodes, in observed order. For a leaf this is
/// `1 - rho^2` of its single edge.
pub fn noise_variances(tree: &GaussianTree) -> Vec<f64> {
    crate::channel::SignChannel::observed_from_layer_one(tree)
        .map(|ch| ch.noise_variances())
        .unwrap_or_else(|_| vec![1.0; tree.observed_count()])
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `false` when `a` and `b` were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}
