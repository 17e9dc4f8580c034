use nalgebra::DMatrix;
use serde::Serialize;

use super::{GaussianTree, TreeError};

/// Relative tolerance for agreement between alternative triples.
pub const DEFAULT_TRIPLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveredEdge {
    pub u: String,
    pub v: String,
    pub magnitude: f64,
}

fn check_shape(tree: &GaussianTree, sigma_x: &DMatrix<f64>) -> Result<(), TreeError> {
    let n = tree.observed_count();
    if sigma_x.nrows() != n || sigma_x.ncols() != n {
        return Err(TreeError::DimensionMismatch { rows: sigma_x.nrows(), cols: sigma_x.ncols(), expected: n });
    }
    Ok(())
}

fn agrees(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Squared correlation between observed node `obs` (position in observed
/// order) and hidden node `hidden` (node index), from the triple ratio
/// `s_aj s_ak / s_jk` over observed `j`, `k` lying in branches of `hidden`
/// distinct from each other and from the branch holding `obs`.
///
/// The lowest-index triple gives the value; every other triple must agree
/// within `tol` (relative).
pub fn observed_hidden_corr_sq(
    tree: &GaussianTree,
    sigma_x: &DMatrix<f64>,
    obs: usize,
    hidden: usize,
    tol: f64,
) -> Result<f64, TreeError> {
    check_shape(tree, sigma_x)?;
    let branch = tree.branches(hidden);
    let observed = tree.observed_indices();
    let ba = branch[observed[obs]];
    let context = || format!("({}, {})", tree.id(observed[obs]), tree.id(hidden));
    let mut first: Option<(f64, usize, usize)> = None;
    for j in 0..observed.len() {
        let bj = branch[observed[j]];
        if j == obs || bj == ba {
            continue;
        }
        for k in (j + 1)..observed.len() {
            let bk = branch[observed[k]];
            if k == obs || bk == ba || bk == bj {
                continue;
            }
            let r = sigma_x[(obs, j)] * sigma_x[(obs, k)] / sigma_x[(j, k)];
            match first {
                None => first = Some((r, j, k)),
                Some((r0, j0, k0)) => {
                    if !agrees(r, r0, tol) {
                        return Err(TreeError::InconsistentCovariance {
                            context: context(),
                            detail: format!(
                                "triple ({}, {}) gives {r0}, triple ({}, {}) gives {r}",
                                tree.id(observed[j0]),
                                tree.id(observed[k0]),
                                tree.id(observed[j]),
                                tree.id(observed[k])
                            ),
                        });
                    }
                }
            }
        }
    }
    let Some((r, _, _)) = first else {
        return Err(TreeError::InconsistentCovariance {
            context: context(),
            detail: "no observed triple separates this pair".into(),
        });
    };
    if !r.is_finite() || r <= 0.0 {
        return Err(TreeError::RatioOutOfRange { context: context(), value: r });
    }
    if r >= 1.0 {
        return Err(TreeError::InconsistentCovariance {
            context: context(),
            detail: format!("triple ratio {r} >= 1 is not a squared correlation of any tree model"),
        });
    }
    Ok(r)
}

pub fn recover_edge_magnitudes(
    sigma_x: &DMatrix<f64>,
    structure: &GaussianTree,
) -> Result<Vec<RecoveredEdge>, TreeError> {
    recover_edge_magnitudes_with_tolerance(sigma_x, structure, DEFAULT_TRIPLE_TOLERANCE)
}

/// Edge correlation magnitudes, in edge order, implied by `sigma_x` (indexed
/// in the structure's observed order). The structure's own rho values are
/// ignored.
pub fn recover_edge_magnitudes_with_tolerance(
    sigma_x: &DMatrix<f64>,
    structure: &GaussianTree,
    tol: f64,
) -> Result<Vec<RecoveredEdge>, TreeError> {
    check_shape(structure, sigma_x)?;
    let t = structure;
    let pos = |node: usize| t.observed_position(node).expect("observed node");
    let mut out = Vec::with_capacity(t.edges().len());
    for e in 0..t.edges().len() {
        let (u, v) = t.edge_endpoints(e);
        let magnitude = match (t.is_hidden(u), t.is_hidden(v)) {
            (false, false) => sigma_x[(pos(u), pos(v))].abs(),
            (false, true) => observed_hidden_corr_sq(t, sigma_x, pos(u), v, tol)?.sqrt(),
            (true, false) => observed_hidden_corr_sq(t, sigma_x, pos(v), u, tol)?.sqrt(),
            (true, true) => hidden_edge(t, sigma_x, u, v, tol)?,
        };
        out.push(RecoveredEdge { u: t.id(u).to_string(), v: t.id(v).to_string(), magnitude });
    }
    Ok(out)
}

/// `|s_ab| / sqrt(r(a,h1) r(b,h2))` for `a` on the far side of `h1` and `b` on
/// the far side of `h2`.
fn hidden_edge(t: &GaussianTree, sigma_x: &DMatrix<f64>, h1: usize, h2: usize, tol: f64) -> Result<f64, TreeError> {
    let side = |center: usize, other: usize| -> Vec<usize> {
        let branch = t.branches(center);
        let excluded = branch[other];
        (0..t.observed_count()).filter(|&p| branch[t.observed_indices()[p]] != excluded).collect()
    };
    let left = side(h1, h2);
    let right = side(h2, h1);
    let context = format!("({}, {})", t.id(h1), t.id(h2));
    let mut first: Option<f64> = None;
    for &a in &left {
        let ra = observed_hidden_corr_sq(t, sigma_x, a, h1, tol)?;
        for &b in &right {
            let rb = observed_hidden_corr_sq(t, sigma_x, b, h2, tol)?;
            let m = sigma_x[(a, b)].abs() / (ra * rb).sqrt();
            match first {
                None => first = Some(m),
                Some(m0) if !agrees(m, m0, tol) => {
                    return Err(TreeError::InconsistentCovariance {
                        context,
                        detail: format!("path quotients {m0} and {m} disagree"),
                    })
                }
                _ => {}
            }
        }
    }
    let m = first.expect("both sides of a hidden edge hold observed nodes");
    if !m.is_finite() || m <= 0.0 {
        return Err(TreeError::RatioOutOfRange { context, value: m * m });
    }
    if m >= 1.0 {
        return Err(TreeError::InconsistentCovariance { context, detail: format!("recovered magnitude {m} >= 1") });
    }
    Ok(m)
}
