use lts_core::fixtures::{self, random_tree, RandomTreeOptions};
use lts_core::info::{mi_closed_form, mi_direct};
use lts_core::tree::{
    direct_determinant, joint_covariance, observed_hidden_corr_sq, parse_tree, recover_edge_magnitudes,
    tree_determinant, validate_tree, write_tree, TreeError, TreeSpec,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tree_from_seed(seed: u64, leaf_only: bool) -> lts_core::GaussianTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tree(&mut rng, &RandomTreeOptions { leaf_only, ..Default::default() })
}

/// Gaussian elimination with partial pivoting, independent of the library.
fn det_oracle(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            let pivot = a[c].clone();
            for (v, p) in a[r][c..n].iter_mut().zip(&pivot[c..n]) {
                *v -= f * p;
            }
        }
    }
    det
}

#[test]
fn star_covariance_entries() {
    let s1 = fixtures::star();
    let sx = joint_covariance(&s1).observed_block;
    let want = [[1.0, 0.42, 0.48], [0.42, 1.0, 0.56], [0.48, 0.56, 1.0]];
    for i in 0..3 {
        for j in 0..3 {
            assert!((sx[(i, j)] - want[i][j]).abs() < 1e-15);
        }
    }
}

#[test]
fn star_mi_matches_hand_oracle() {
    // det of the observed block by cofactor expansion, conditional entropies
    // from the per-leaf noise variances
    let (a, b, c) = (0.42f64, 0.48f64, 0.56f64);
    let det = 1.0 + 2.0 * a * b * c - a * a - b * b - c * c;
    let oracle = 0.5 * (det.ln() - [0.6f64, 0.7, 0.8].iter().map(|r| (1.0 - r * r).ln()).sum::<f64>());
    let s1 = fixtures::star();
    assert!((mi_direct(&s1).unwrap().value - oracle).abs() < 1e-12);
    assert!((oracle - 0.7294).abs() < 5e-5);
}

#[test]
fn dumbbell_determinant_golden() {
    let d1 = fixtures::dumbbell();
    let model = joint_covariance(&d1);
    let want: f64 = [0.5f64, 0.6, 0.7, 0.6, 0.7].iter().map(|r| 1.0 - r * r).product();
    assert!((tree_determinant(&d1) - want).abs() < 1e-15);
    assert!((det_oracle(&model.joint) - want).abs() < 1e-12);
    assert!((want - 0.079_902_72).abs() < 1e-12);
    assert!((det_oracle(&model.observed_block) - 0.616_515).abs() < 1e-12);
}

#[test]
fn format_round_trip() {
    for spec in [fixtures::star_spec(), fixtures::dumbbell_spec(), fixtures::two_layer_spec()] {
        let text = write_tree(&spec);
        assert_eq!(parse_tree(&text).unwrap(), spec);
    }
}

#[test]
fn parse_errors_name_line() {
    let err = parse_tree("node y hidden\nedge y x1 zero\n").unwrap_err();
    assert!(matches!(err, TreeError::Parse { line: 2, .. }), "{err:?}");
}

#[test]
fn validation_rejects() {
    let base = || TreeSpec::new().hidden("y").observed("a").observed("b").observed("c");
    let cases = [
        base().edge("y", "a", 0.5).edge("y", "b", 0.5).edge("y", "zz", 0.5),
        base().edge("y", "a", 1.0).edge("y", "b", 0.5).edge("y", "c", 0.5),
        base().edge("y", "a", 0.5).edge("y", "b", 0.5),
        base().edge("y", "a", 0.5).edge("y", "b", 0.5).edge("a", "b", 0.5).edge("y", "c", 0.5),
        TreeSpec::new().hidden("y").hidden("z").edge("y", "z", 0.5),
    ];
    for spec in cases {
        assert!(validate_tree(spec).is_err());
    }
}

#[test]
fn recovery_rejects_inconsistent_triple() {
    let s1 = fixtures::star();
    let mut sx = joint_covariance(&s1).observed_block;
    sx[(0, 1)] = 0.9;
    sx[(1, 0)] = 0.9;
    assert!(matches!(recover_edge_magnitudes(&sx, &s1), Err(TreeError::InconsistentCovariance { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn determinant_identity(seed in any::<u64>()) {
        let t = tree_from_seed(seed, false);
        let model = joint_covariance(&t);
        let want = tree_determinant(&t);
        let direct = direct_determinant(&model);
        prop_assert!(((direct - want) / want).abs() < 1e-12);
        prop_assert!(((det_oracle(&model.joint) - want) / want).abs() < 1e-12);
        prop_assert!(model.is_positive_definite());
        prop_assert!(model.is_symmetric());
        for i in 0..model.joint.nrows() {
            prop_assert_eq!(model.joint[(i, i)], 1.0);
        }
    }

    #[test]
    fn covariance_is_path_product(seed in any::<u64>()) {
        let t = tree_from_seed(seed, false);
        let model = joint_covariance(&t);
        for a in 0..t.node_count() {
            for b in 0..t.node_count() {
                let path = t.path(a, b);
                let mut prod = 1.0;
                for w in path.windows(2) {
                    let e = t.neighbors(w[0]).iter().find(|(v, _)| *v == w[1]).unwrap().1;
                    prod *= t.rho(e);
                }
                let (pa, pb) = (model.position(t.id(a)).unwrap(), model.position(t.id(b)).unwrap());
                prop_assert!((model.joint[(pa, pb)] - prod).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn recovery_round_trip(seed in any::<u64>()) {
        let t = tree_from_seed(seed, true);
        let sx = joint_covariance(&t).observed_block;
        let rec = recover_edge_magnitudes(&sx, &t).unwrap();
        prop_assert_eq!(rec.len(), t.edges().len());
        for (r, e) in rec.iter().zip(t.edges()) {
            prop_assert!((r.magnitude - e.rho.abs()).abs() < 1e-9);
        }
    }

    #[test]
    fn triples_agree(seed in any::<u64>()) {
        let t = tree_from_seed(seed, true);
        let sx = joint_covariance(&t).observed_block;
        for &h in t.hidden_indices() {
            for (pos, &o) in t.observed_indices().iter().enumerate() {
                let path = t.path(o, h);
                let mut prod = 1.0;
                for w in path.windows(2) {
                    let e = t.neighbors(w[0]).iter().find(|(v, _)| *v == w[1]).unwrap().1;
                    prod *= t.rho(e);
                }
                let got = observed_hidden_corr_sq(&t, &sx, pos, h, 1e-12).unwrap();
                prop_assert!((got - prod * prod).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_equals_direct(seed in any::<u64>()) {
        let t = tree_from_seed(seed, true);
        let sx = joint_covariance(&t).observed_block;
        let direct = mi_direct(&t).unwrap().value;
        let closed = mi_closed_form(&sx, &t).unwrap().value;
        prop_assert!((direct - closed).abs() < 1e-9);
        prop_assert!(direct > 0.0);
    }

    #[test]
    fn write_parse_round_trip(seed in any::<u64>()) {
        let t = tree_from_seed(seed, false);
        let text = write_tree(t.spec());
        prop_assert_eq!(&parse_tree(&text).unwrap(), t.spec());
    }
}
