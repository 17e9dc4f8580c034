//! Reference trees and a random valid-tree generator for tests.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::tree::{validate_tree, GaussianTree, TreeSpec};

/// Hidden `y` with observed leaves `x1`, `x2`, `x3` at correlations 0.6, 0.7, 0.8.
pub fn star() -> GaussianTree {
    validate_tree(star_spec()).expect("star fixture is valid")
}

pub fn star_spec() -> TreeSpec {
    TreeSpec::new()
        .hidden("y")
        .observed("x1")
        .observed("x2")
        .observed("x3")
        .edge("y", "x1", 0.6)
        .edge("y", "x2", 0.7)
        .edge("y", "x3", 0.8)
}

/// Two adjacent hidden nodes `y1`, `y2` (rho 0.5), each with two observed leaves.
pub fn dumbbell() -> GaussianTree {
    validate_tree(dumbbell_spec()).expect("dumbbell fixture is valid")
}

pub fn dumbbell_spec() -> TreeSpec {
    TreeSpec::new()
        .hidden("y1")
        .hidden("y2")
        .observed("x1")
        .observed("x2")
        .observed("x3")
        .observed("x4")
        .edge("y1", "y2", 0.5)
        .edge("y1", "x1", 0.6)
        .edge("y1", "x2", 0.7)
        .edge("y2", "x3", 0.6)
        .edge("y2", "x4", 0.7)
}

/// Two-layer tree with six hidden nodes: `y1..y4` at layer 1 (two observed
/// leaves each) and `p1`, `p2` at layer 2, with `p1` joining `y1`, `y2`, `p2`
/// joining `y3`, `y4`, and an edge `p1`-`p2`.
pub fn two_layer() -> GaussianTree {
    validate_tree(two_layer_spec()).expect("two-layer fixture is valid")
}

pub fn two_layer_spec() -> TreeSpec {
    let mut spec = TreeSpec::new();
    for h in ["y1", "y2", "y3", "y4", "p1", "p2"] {
        spec = spec.hidden(h);
    }
    for i in 1..=8 {
        spec = spec.observed(format!("x{i}"));
    }
    let leaf_rho = [0.8, 0.7, 0.75, 0.65, 0.7, 0.8, 0.6, 0.85];
    for (i, rho) in leaf_rho.iter().enumerate() {
        spec = spec.edge(format!("y{}", i / 2 + 1), format!("x{}", i + 1), *rho);
    }
    spec.edge("p1", "y1", 0.7).edge("p1", "y2", 0.6).edge("p2", "y3", 0.65).edge("p2", "y4", 0.75).edge("p1", "p2", 0.5)
}

#[derive(Debug, Clone, Copy)]
pub struct RandomTreeOptions {
    pub max_observed: usize,
    pub max_hidden: usize,
    /// Observed nodes are all leaves.
    pub leaf_only: bool,
    pub rho_min: f64,
    pub rho_max: f64,
}

impl Default for RandomTreeOptions {
    fn default() -> Self {
        Self { max_observed: 8, max_hidden: 4, leaf_only: false, rho_min: 0.2, rho_max: 0.9 }
    }
}

/// Draws a random minimal latent tree with `|rho|` uniform on
/// `[rho_min, rho_max]` and a random sign per edge.
///
/// Hidden nodes form a random tree (random attachment); each then receives
/// enough observed leaves to reach degree 3. Remaining observed budget is
/// spent on extra leaves and, unless `leaf_only`, on observed nodes attached
/// to observed nodes or inserted into hidden-hidden edges.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, opts: &RandomTreeOptions) -> GaussianTree {
    loop {
        if let Some(t) = try_random_tree(rng, opts) {
            return t;
        }
    }
}

fn try_random_tree<R: Rng + ?Sized>(rng: &mut R, opts: &RandomTreeOptions) -> Option<GaussianTree> {
    let min_hidden = usize::from(opts.leaf_only);
    let k = rng.random_range(min_hidden..=opts.max_hidden);
    let mut edges: Vec<(String, String)> = Vec::new();
    let mut degree = vec![0usize; k];
    for h in 1..k {
        let p = rng.random_range(0..h);
        edges.push((format!("h{p}"), format!("h{h}")));
        degree[p] += 1;
        degree[h] += 1;
    }
    let mut observed: Vec<String> = Vec::new();
    let new_obs = |observed: &mut Vec<String>| {
        let id = format!("x{}", observed.len() + 1);
        observed.push(id.clone());
        id
    };
    for (h, d) in degree.iter().enumerate() {
        for _ in *d..3 {
            let x = new_obs(&mut observed);
            edges.push((format!("h{h}"), x));
        }
    }
    if k == 0 {
        new_obs(&mut observed);
    }
    if observed.len() > opts.max_observed {
        return None;
    }
    let extra = rng.random_range(0..=opts.max_observed - observed.len());
    for _ in 0..extra {
        let choice = rng.random_range(0..3);
        if opts.leaf_only || k == 0 {
            if k == 0 {
                let target = observed[rng.random_range(0..observed.len())].clone();
                let x = new_obs(&mut observed);
                edges.push((target, x));
            } else {
                let x = new_obs(&mut observed);
                edges.push((format!("h{}", rng.random_range(0..k)), x));
            }
        } else if choice == 0 {
            let x = new_obs(&mut observed);
            edges.push((format!("h{}", rng.random_range(0..k)), x));
        } else if choice == 1 {
            let target = observed[rng.random_range(0..observed.len())].clone();
            let x = new_obs(&mut observed);
            edges.push((target, x));
        } else {
            let hh: Vec<usize> =
                (0..edges.len()).filter(|&e| edges[e].0.starts_with('h') && edges[e].1.starts_with('h')).collect();
            let x = new_obs(&mut observed);
            match hh.choose(rng) {
                Some(&e) => {
                    let (a, b) = edges[e].clone();
                    edges[e] = (a, x.clone());
                    edges.push((x, b));
                }
                None => edges.push((format!("h{}", rng.random_range(0..k)), x)),
            }
        }
    }
    if observed.len() < 2 && k == 0 {
        return None;
    }
    let mut spec = TreeSpec::new();
    for h in 0..k {
        spec = spec.hidden(format!("h{h}"));
    }
    for x in &observed {
        spec = spec.observed(x.clone());
    }
    for (u, v) in edges {
        let mag = rng.random_range(opts.rho_min..=opts.rho_max);
        let rho = if rng.random_bool(0.5) { mag } else { -mag };
        spec = spec.edge(u, v, rho);
    }
    validate_tree(spec).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generator_respects_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for leaf_only in [false, true] {
            let opts = RandomTreeOptions { leaf_only, ..Default::default() };
            for _ in 0..300 {
                let t = random_tree(&mut rng, &opts);
                assert!(t.observed_count() <= 8 && t.hidden_count() <= 4);
                assert!(t.edges().iter().all(|e| (0.2..=0.9).contains(&e.rho.abs())));
                if leaf_only {
                    assert!(t.observed_are_leaves());
                    assert!(t.hidden_count() >= 1);
                }
            }
        }
    }

    #[test]
    fn generator_reaches_internal_observed_nodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let opts = RandomTreeOptions::default();
        let any_internal = (0..200).any(|_| !random_tree(&mut rng, &opts).observed_are_leaves());
        assert!(any_internal);
    }
}
