use std::collections::BTreeSet;

use lts_core::fixtures::{self, random_tree, RandomTreeOptions};
use lts_core::signs::{
    apply_sign_assignment, enumerate_equivalent_trees, enumerate_equivalent_trees_with_cap, sign_class_report,
    sign_variable_values, verify_equivalence, SignAssignment, SignError,
};
use lts_core::tree::joint_covariance;
use lts_core::GaussianTree;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tree_from_seed(seed: u64) -> GaussianTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_tree(&mut rng, &RandomTreeOptions::default())
}

fn rho_signature(t: &GaussianTree) -> Vec<u64> {
    t.edges().iter().map(|e| e.rho.to_bits()).collect()
}

#[test]
fn fixture_counts() {
    for (tree, count, report) in
        [(fixtures::star(), 2, (1, 0, 1)), (fixtures::dumbbell(), 4, (3, 1, 2)), (fixtures::two_layer(), 64, (9, 3, 6))]
    {
        let all = enumerate_equivalent_trees(&tree).unwrap();
        assert_eq!(all.len(), count);
        assert!(verify_equivalence(&all).unwrap());
        let distinct: BTreeSet<Vec<u64>> = all.iter().map(rho_signature).collect();
        assert_eq!(distinct.len(), count);
        assert_eq!(sign_class_report(&tree).counts(), report);
    }
}

#[test]
fn dumbbell_constraint_reads_naturally() {
    let r = sign_class_report(&fixtures::dumbbell());
    assert_eq!(r.constraints.len(), 1);
    assert_eq!(r.constraints[0].to_string(), "B[y1,y2] = B[y1]*B[y2]");
}

#[test]
fn first_member_is_input() {
    let d1 = fixtures::dumbbell();
    let all = enumerate_equivalent_trees(&d1).unwrap();
    assert_eq!(rho_signature(&all[0]), rho_signature(&d1));
    // mask 1 flips the last hidden node
    let flipped = SignAssignment::from_pairs([("y1", 1), ("y2", -1)]);
    assert_eq!(rho_signature(&all[1]), rho_signature(&apply_sign_assignment(&d1, &flipped).unwrap()));
}

#[test]
fn changing_observed_covariance_breaks_equivalence() {
    let s1 = fixtures::star();
    let other = lts_core::tree::validate_tree(
        lts_core::TreeSpec::new()
            .hidden("y")
            .observed("x1")
            .observed("x2")
            .observed("x3")
            .edge("y", "x1", -0.6)
            .edge("y", "x2", 0.7)
            .edge("y", "x3", 0.8),
    )
    .unwrap();
    assert!(!verify_equivalence(&[s1, other]).unwrap());
}

#[test]
fn errors() {
    let d1 = fixtures::dumbbell();
    assert!(matches!(
        apply_sign_assignment(&d1, &SignAssignment::from_pairs([("y1", 1)])),
        Err(SignError::MissingAssignment(_))
    ));
    assert!(matches!(
        apply_sign_assignment(&d1, &SignAssignment::from_pairs([("y1", 1), ("y2", 1), ("x1", 1)])),
        Err(SignError::UnknownNode(_))
    ));
    assert!(matches!(
        apply_sign_assignment(&d1, &SignAssignment::from_pairs([("y1", 1), ("y2", 0)])),
        Err(SignError::InvalidValue { .. })
    ));
    assert!(matches!(enumerate_equivalent_trees_with_cap(&d1, 1), Err(SignError::TooManyHidden { k: 2, cap: 1 })));
    assert!(matches!(verify_equivalence(&[]), Err(SignError::EmptyList)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn enumeration_preserves_observed_law(seed in any::<u64>()) {
        let t = tree_from_seed(seed);
        let all = enumerate_equivalent_trees(&t).unwrap();
        prop_assert_eq!(all.len(), 1usize << t.hidden_count());
        prop_assert!(verify_equivalence(&all).unwrap());
        let base = joint_covariance(&t).observed_block;
        for m in &all {
            let sx = joint_covariance(m).observed_block;
            prop_assert!((&sx - &base).amax() <= 1e-12);
        }
    }

    #[test]
    fn flips_form_a_group(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let t = tree_from_seed(seed);
        let k = t.hidden_count();
        let mask = if k == 0 { 0 } else { (1u64 << k) - 1 };
        let (sa, sb) = (SignAssignment::from_mask(&t, a & mask), SignAssignment::from_mask(&t, b & mask));
        let ab = apply_sign_assignment(&apply_sign_assignment(&t, &sa).unwrap(), &sb).unwrap();
        let composed = apply_sign_assignment(&t, &sa.compose(&sb)).unwrap();
        prop_assert_eq!(rho_signature(&ab), rho_signature(&composed));
        let twice = apply_sign_assignment(&apply_sign_assignment(&t, &sa).unwrap(), &sa).unwrap();
        prop_assert_eq!(rho_signature(&twice), rho_signature(&t));
    }

    #[test]
    fn hidden_edge_sign_law(seed in any::<u64>(), m in any::<u64>()) {
        let t = tree_from_seed(seed);
        let k = t.hidden_count();
        let mask = if k == 0 { 0 } else { m & ((1u64 << k) - 1) };
        let b = SignAssignment::from_mask(&t, mask);
        let flipped = apply_sign_assignment(&t, &b).unwrap();
        for e in 0..t.edges().len() {
            let (u, v) = t.edge_endpoints(e);
            let s = |n: usize| if t.is_hidden(n) { b.b[t.id(n)] as f64 } else { 1.0 };
            prop_assert_eq!(flipped.rho(e), t.rho(e) * s(u) * s(v));
        }
    }

    #[test]
    fn report_counts(seed in any::<u64>(), m in any::<u64>()) {
        let t = tree_from_seed(seed);
        let r = sign_class_report(&t);
        prop_assert_eq!(r.free_variables, t.hidden_count());
        prop_assert_eq!(r.edge_sign_variables, r.variables.len());
        prop_assert_eq!(r.edge_sign_variables - r.constraints.len(), r.free_variables);
        let k = t.hidden_count();
        let mask = if k == 0 { 0 } else { m & ((1u64 << k) - 1) };
        let values = sign_variable_values(&r, &SignAssignment::from_mask(&t, mask));
        prop_assert!(r.satisfied_by(&values));
    }
}
