//! Sign-equivalence classes of latent Gaussian trees.
//!
//! Flipping a hidden node multiplies the correlation of every incident edge
//! by `-1`; path products between observed nodes pass through each hidden
//! node twice (or not at all), so the observed covariance is unchanged.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::tree::GaussianTree;

/// Default largest `k` for which [`enumerate_equivalent_trees`] runs.
pub const ENUMERATION_CAP: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignError {
    #[error("sign assignment has no value for hidden node `{0}`")]
    MissingAssignment(String),
    #[error("sign assignment names `{0}`, which is not a hidden node")]
    UnknownNode(String),
    #[error("sign for `{id}` is {value}; only -1 and +1 are allowed")]
    InvalidValue { id: String, value: i8 },
    #[error("tree has {k} hidden nodes; enumeration is capped at {cap}")]
    TooManyHidden { k: usize, cap: usize },
    #[error("trees do not share a node set: {0}")]
    MismatchedNodeSets(String),
    #[error("empty tree list")]
    EmptyList,
}

/// A `+1`/`-1` value per hidden node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SignAssignment {
    pub b: BTreeMap<String, i8>,
}

impl SignAssignment {
    pub fn all_plus(tree: &GaussianTree) -> Self {
        Self::from_mask(tree, 0)
    }

    /// Assignment number `mask` in enumeration order: bit `k-1-j` set means
    /// hidden node `j` (file order) is `-1`, so mask 0 is all-plus and the
    /// first hidden node varies slowest.
    pub fn from_mask(tree: &GaussianTree, mask: u64) -> Self {
        let k = tree.hidden_count();
        let b = tree
            .hidden_indices()
            .iter()
            .enumerate()
            .map(|(j, &h)| (tree.id(h).to_string(), if mask >> (k - 1 - j) & 1 == 1 { -1 } else { 1 }))
            .collect();
        Self { b }
    }

    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, i8)>,
        S: Into<String>,
    {
        Self { b: pairs.into_iter().map(|(s, v)| (s.into(), v)).collect() }
    }

    /// Pointwise product.
    pub fn compose(&self, other: &SignAssignment) -> SignAssignment {
        let b = self.b.iter().map(|(id, v)| (id.clone(), v * other.b.get(id).copied().unwrap_or(1))).collect();
        SignAssignment { b }
    }

    /// Sign per node index (observed nodes are `+1`).
    fn node_signs(&self, tree: &GaussianTree) -> Result<Vec<f64>, SignError> {
        for (id, &v) in &self.b {
            match tree.index_of(id) {
                Ok(i) if tree.is_hidden(i) => {}
                _ => return Err(SignError::UnknownNode(id.clone())),
            }
            if v != 1 && v != -1 {
                return Err(SignError::InvalidValue { id: id.clone(), value: v });
            }
        }
        let mut s = vec![1.0; tree.node_count()];
        for &h in tree.hidden_indices() {
            let v = self.b.get(tree.id(h)).ok_or_else(|| SignError::MissingAssignment(tree.id(h).to_string()))?;
            s[h] = *v as f64;
        }
        Ok(s)
    }
}

/// Multiplies each edge correlation by `b(u) b(v)`, with observed nodes
/// fixed at `+1`.
pub fn apply_sign_assignment(tree: &GaussianTree, b: &SignAssignment) -> Result<GaussianTree, SignError> {
    let s = b.node_signs(tree)?;
    let rhos: Vec<f64> = (0..tree.edges().len())
        .map(|e| {
            let (u, v) = tree.edge_endpoints(e);
            tree.rho(e) * s[u] * s[v]
        })
        .collect();
    Ok(tree.with_rhos(rhos))
}

pub fn enumerate_equivalent_trees(tree: &GaussianTree) -> Result<Vec<GaussianTree>, SignError> {
    enumerate_equivalent_trees_with_cap(tree, ENUMERATION_CAP)
}

/// All `2^k` sign-flipped versions of `tree`, all-plus first, in the order of
/// [`SignAssignment::from_mask`].
pub fn enumerate_equivalent_trees_with_cap(tree: &GaussianTree, cap: usize) -> Result<Vec<GaussianTree>, SignError> {
    let k = tree.hidden_count();
    if k > cap {
        return Err(SignError::TooManyHidden { k, cap });
    }
    (0..1u64 << k)
        .into_par_iter()
        .map(|mask| apply_sign_assignment(tree, &SignAssignment::from_mask(tree, mask)))
        .collect()
}

/// Elementwise tolerance used by [`verify_equivalence`].
pub const EQUIVALENCE_TOLERANCE: f64 = 1e-12;

/// `true` iff every tree has the same observed covariance as the first.
pub fn verify_equivalence(trees: &[GaussianTree]) -> Result<bool, SignError> {
    let first = trees.first().ok_or(SignError::EmptyList)?;
    let key = |t: &GaussianTree| {
        let mut nodes: Vec<(String, crate::tree::NodeKind)> =
            t.spec().nodes.iter().map(|n| (n.id.clone(), n.kind)).collect();
        nodes.sort_by(|a, b| a.0.cmp(&b.0));
        nodes
    };
    let reference_nodes = key(first);
    let observed_ids: Vec<String> = first.observed_indices().iter().map(|&i| first.id(i).to_string()).collect();
    let reference = observed_matrix(first, &observed_ids);
    for (ti, t) in trees.iter().enumerate().skip(1) {
        if key(t) != reference_nodes {
            return Err(SignError::MismatchedNodeSets(format!("tree {ti} differs from tree 0")));
        }
        let m = observed_matrix(t, &observed_ids);
        if m.iter().zip(&reference).any(|(a, b)| (a - b).abs() > EQUIVALENCE_TOLERANCE) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn observed_matrix(t: &GaussianTree, ids: &[String]) -> Vec<f64> {
    let idx: Vec<usize> = ids.iter().map(|id| t.index_of(id).expect("node set checked")).collect();
    let mut out = Vec::with_capacity(idx.len() * idx.len());
    for &a in &idx {
        let row = t.correlation_row(a);
        out.extend(idx.iter().map(|&b| row[b]));
    }
    out
}

/// A binary sign variable of the per-edge view.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SignVariable {
    /// Common sign of the edges joining a hidden node to its observed class.
    Class(String),
    /// Sign of a hidden-hidden edge.
    Edge(String, String),
}

impl fmt::Display for SignVariable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SignVariable::Class(h) => write!(f, "B[{h}]"),
            SignVariable::Edge(u, v) => write!(f, "B[{u},{v}]"),
        }
    }
}

impl Serialize for SignVariable {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// `prod(lhs) = prod(rhs)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignConstraint {
    pub lhs: Vec<SignVariable>,
    pub rhs: Vec<SignVariable>,
}

impl fmt::Display for SignConstraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[SignVariable]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("*");
        write!(f, "{} = {}", join(&self.lhs), join(&self.rhs))
    }
}

/// Observed nodes whose edge signs flip with `owner`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignClass {
    pub owner: String,
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignClassReport {
    pub edge_sign_variables: usize,
    pub constraints: Vec<SignConstraint>,
    pub free_variables: usize,
    pub classes: Vec<SignClass>,
    pub variables: Vec<SignVariable>,
}

impl SignClassReport {
    /// `(variables, constraints, free)`.
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.edge_sign_variables, self.constraints.len(), self.free_variables)
    }

    /// Checks every constraint against variable values.
    pub fn satisfied_by(&self, values: &BTreeMap<SignVariable, i8>) -> bool {
        let prod = |v: &[SignVariable]| v.iter().map(|x| values.get(x).copied().unwrap_or(1)).product::<i8>();
        self.constraints.iter().all(|c| prod(&c.lhs) == prod(&c.rhs))
    }
}

/// Values of the per-edge sign variables induced by a node assignment.
pub fn sign_variable_values(report: &SignClassReport, b: &SignAssignment) -> BTreeMap<SignVariable, i8> {
    let get = |id: &String| b.b.get(id).copied().unwrap_or(1);
    report
        .variables
        .iter()
        .map(|v| {
            let value = match v {
                SignVariable::Class(h) => get(h),
                SignVariable::Edge(u, w) => get(u) * get(w),
            };
            (v.clone(), value)
        })
        .collect()
}

/// Per-edge sign variables and the constraints tying them to `k` free node
/// flips.
///
/// Each hidden node adjacent to an observed node owns one class variable;
/// observed nodes reached through other observed nodes join the class of the
/// hidden node they are reached from. Each hidden-hidden edge has its own
/// variable. Within every connected group of hidden nodes, the class variable
/// of the first owner times that of each later owner must equal the product
/// of the edge variables on the hidden path between them.
pub fn sign_class_report(tree: &GaussianTree) -> SignClassReport {
    let id = |i: usize| tree.id(i).to_string();
    let mut classes = Vec::new();
    let mut owners = Vec::new();
    for &h in tree.hidden_indices() {
        let mut members = Vec::new();
        let mut stack: Vec<(usize, usize)> =
            tree.neighbors(h).iter().filter(|(v, _)| !tree.is_hidden(*v)).map(|&(v, _)| (v, h)).collect();
        while let Some((u, parent)) = stack.pop() {
            members.push(u);
            for &(v, _) in tree.neighbors(u) {
                if v != parent && !tree.is_hidden(v) {
                    stack.push((v, u));
                }
            }
        }
        if !members.is_empty() {
            members.sort_unstable();
            owners.push(h);
            classes.push(SignClass { owner: id(h), members: members.into_iter().map(id).collect() });
        }
    }

    let mut variables: Vec<SignVariable> = owners.iter().map(|&h| SignVariable::Class(id(h))).collect();
    let mut hidden_edges = 0;
    for e in 0..tree.edges().len() {
        let (u, v) = tree.edge_endpoints(e);
        if tree.is_hidden(u) && tree.is_hidden(v) {
            hidden_edges += 1;
            variables.push(SignVariable::Edge(id(u), id(v)));
        }
    }

    let mut constraints = Vec::new();
    let mut component = vec![usize::MAX; tree.node_count()];
    for &h in tree.hidden_indices() {
        if component[h] != usize::MAX {
            continue;
        }
        let mut stack = vec![h];
        component[h] = h;
        while let Some(u) = stack.pop() {
            for &(v, _) in tree.neighbors(u) {
                if tree.is_hidden(v) && component[v] == usize::MAX {
                    component[v] = h;
                    stack.push(v);
                }
            }
        }
        let members: Vec<usize> = owners.iter().copied().filter(|&o| component[o] == h).collect();
        let Some((&first, rest)) = members.split_first() else { continue };
        for &o in rest {
            let path = tree.path(first, o);
            let lhs = path
                .windows(2)
                .map(|w| {
                    let e = tree.neighbors(w[0]).iter().find(|(v, _)| *v == w[1]).expect("adjacent").1;
                    let (u, v) = tree.edge_endpoints(e);
                    SignVariable::Edge(id(u), id(v))
                })
                .collect();
            constraints
                .push(SignConstraint { lhs, rhs: vec![SignVariable::Class(id(first)), SignVariable::Class(id(o))] });
        }
    }

    SignClassReport {
        edge_sign_variables: owners.len() + hidden_edges,
        constraints,
        free_variables: tree.hidden_count(),
        classes,
        variables,
    }
}
