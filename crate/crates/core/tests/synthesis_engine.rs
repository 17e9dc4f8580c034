use lts_core::fixtures;
use lts_core::synthesis::{
    build_codebooks, channel_symbol, estimate_divergence_with, rate_region_check, synthesize, synthesize_with,
    verify_appendix_constraints, verify_appendix_constraints_with, Codebook, DivergenceOptions, LayerRate, SignMode,
    SynthesisError, SynthesisOptions,
};
use lts_core::tree::joint_covariance;
use lts_core::{BernoulliParams, GaussianTree, RateTuple};
use nalgebra::DMatrix;

/// Covariance each sub-block's codeword symbols should follow, before the
/// block's sign pattern: marginal for the top layer, innovation given the
/// layer above otherwise.
fn draw_covariance(tree: &GaussianTree, cb: &Codebook, l: usize) -> DMatrix<f64> {
    let model = joint_covariance(tree);
    let pos = |ids: &[String]| ids.iter().map(|id| model.position(id).unwrap()).collect::<Vec<_>>();
    let here = pos(&cb.layers[l].nodes);
    let block = |a: &[usize], b: &[usize]| DMatrix::from_fn(a.len(), b.len(), |i, j| model.joint[(a[i], b[j])]);
    let s = block(&here, &here);
    if l + 1 == cb.layers.len() {
        return s;
    }
    let up = pos(&cb.layers[l + 1].nodes);
    let cross = block(&here, &up);
    s - &cross * block(&up, &up).try_inverse().unwrap() * cross.transpose()
}

fn sub_block_law(tree: &GaussianTree, cb: &Codebook) {
    let n = cb.block_len();
    for (l, lc) in cb.layers.iter().enumerate() {
        let s = draw_covariance(tree, cb, l);
        let k = lc.width();
        for (bi, b) in lc.blocks.iter().enumerate() {
            let m = (b.len * n) as f64;
            for i in 0..k {
                for j in 0..k {
                    let want = b.pattern[i] * b.pattern[j] * s[(i, j)];
                    let mut got = 0.0;
                    for c in 0..b.len {
                        for t in 0..n {
                            let g = lc.gaussian(bi, c, t, n);
                            got += g[i] * g[j] / m;
                        }
                    }
                    let se = ((s[(i, i)] * s[(j, j)] + s[(i, j)].powi(2)) / m).sqrt();
                    assert!((got - want).abs() < 5.0 * se, "layer {l} block {bi} ({i},{j}): {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn sub_block_law_holds() {
    let d1 = fixtures::dumbbell();
    let cb = build_codebooks(&d1, &RateTuple::single(1.0, 0.3, 6), &BernoulliParams::uniform(&d1, 0.5), 2).unwrap();
    assert_eq!(cb.sub_blocks(), vec![2]);
    sub_block_law(&d1, &cb);
    let t = fixtures::two_layer();
    let rates =
        RateTuple { layers: vec![LayerRate { ry: 0.8, rb: 0.2 }, LayerRate { ry: 0.8, rb: 0.2 }], block_len: 6 };
    let cb = build_codebooks(&t, &rates, &BernoulliParams::uniform(&t, 0.5), 3).unwrap();
    assert_eq!(cb.sub_blocks(), vec![16, 2]);
    sub_block_law(&t, &cb);
}

#[test]
fn determinism() {
    let d1 = fixtures::dumbbell();
    let pi = BernoulliParams::uniform(&d1, 0.4);
    let rates = RateTuple::single(0.8, 0.3, 4);
    let a = build_codebooks(&d1, &rates, &pi, 7).unwrap();
    let b = build_codebooks(&d1, &rates, &pi, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, build_codebooks(&d1, &rates, &pi, 8).unwrap());
    let xa = synthesize(&d1, &a, 500, 1).unwrap();
    let xb = synthesize(&d1, &b, 500, 1).unwrap();
    assert_eq!(xa, xb);
    assert_eq!(xa.to_csv(), xb.to_csv());
    let mut o = DivergenceOptions::new(2_000, 3);
    o.bound_samples = 2_000;
    let ra = estimate_divergence_with(&d1, &a, &o).unwrap();
    let rb = estimate_divergence_with(&d1, &b, &o).unwrap();
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
}

#[test]
fn zero_noise_identity() {
    let s1 = fixtures::star();
    let y = 1.3;
    assert_eq!(channel_symbol(&s1, &[y], &[1.0]).unwrap(), vec![0.6 * y, 0.7 * y, 0.8 * y]);
    assert_eq!(channel_symbol(&s1, &[y], &[-1.0]).unwrap(), vec![-0.6 * y, -0.7 * y, -0.8 * y]);

    let d1 = fixtures::dumbbell();
    let cb = build_codebooks(&d1, &RateTuple::single(0.5, 0.5, 3), &BernoulliParams::uniform(&d1, 0.5), 1).unwrap();
    let out = synthesize_with(&d1, &cb, 50, 2, SynthesisOptions { noise: false }).unwrap();
    for run in 0..out.runs {
        for t in 0..out.block_len {
            let u = &out.inputs[(run * out.block_len + t) * 2..][..2];
            assert_eq!(out.symbol(run, t), channel_symbol(&d1, u, &[1.0, 1.0]).unwrap().as_slice());
        }
    }
}

#[test]
fn unit_variance() {
    for tree in [fixtures::star(), fixtures::two_layer()] {
        let layers = vec![LayerRate { ry: 0.93, rb: 0.1 }; tree.max_layer()];
        let cb = build_codebooks(&tree, &RateTuple { layers, block_len: 8 }, &BernoulliParams::uniform(&tree, 0.5), 5)
            .unwrap();
        let out = synthesize(&tree, &cb, 10_000, 6).unwrap();
        let d = out.observed.len();
        let m = (out.runs * out.block_len) as f64;
        for c in 0..d {
            let var: f64 = out.samples.iter().skip(c).step_by(d).map(|x| x * x).sum::<f64>() / m;
            assert!((var - 1.0).abs() < 0.05, "coordinate {c}: {var}");
        }
    }
}

#[test]
fn checklist_and_tampering() {
    let s1 = fixtures::star();
    let pi = BernoulliParams::uniform(&s1, 0.5);
    let rates = RateTuple::single(0.93, 0.1, 4);
    let mut o = DivergenceOptions::new(5_000, 4);
    o.audit_runs = 5_000;
    o.bound_samples = 5_000;
    let cb = build_codebooks(&s1, &rates, &pi, 9).unwrap();
    let r = estimate_divergence_with(&s1, &cb, &o).unwrap();
    assert!(r.bound_check.as_ref().unwrap().satisfied());
    let c = verify_appendix_constraints(&s1, &cb, &r);
    assert!(c.all_passed(), "{c:?}");
    assert_eq!(c.items.len(), 6);

    let mut short = cb.clone();
    short.drop_gaussian_codeword(0, 0, 0);
    let rs = estimate_divergence_with(&s1, &short, &o).unwrap();
    assert_eq!(verify_appendix_constraints(&s1, &short, &rs).failed(), vec![4]);

    let constant = Codebook::build(&s1, &rates, &pi, 9, SignMode::Constant).unwrap();
    let rc = estimate_divergence_with(&s1, &constant, &o).unwrap();
    assert_eq!(rc.independence_stat.value, 0.0);
    assert_eq!(verify_appendix_constraints(&s1, &constant, &rc).failed(), vec![5]);

    assert_eq!(verify_appendix_constraints_with(&s1, &cb, &r, 1e-6).failed(), vec![6]);
}

#[test]
fn two_layer_divergence_runs() {
    let t = fixtures::two_layer();
    let rates =
        RateTuple { layers: vec![LayerRate { ry: 0.5, rb: 0.1 }, LayerRate { ry: 0.5, rb: 0.1 }], block_len: 2 };
    let cb = build_codebooks(&t, &rates, &BernoulliParams::uniform(&t, 0.5), 1).unwrap();
    let mut o = DivergenceOptions::new(2_000, 1);
    o.bound_samples = 2_000;
    let r = estimate_divergence_with(&t, &cb, &o).unwrap();
    assert_eq!(r.mixture_components as f64, cb.mixture_components());
    assert_eq!(r.bound_check.unwrap().layers.len(), 2);
    assert!(r.kl_estimate.is_finite());
}

#[test]
fn errors() {
    let s1 = fixtures::star();
    let t = fixtures::two_layer();
    let pi = BernoulliParams::uniform(&s1, 0.5);
    assert!(matches!(
        build_codebooks(&t, &RateTuple::single(0.5, 0.5, 2), &BernoulliParams::uniform(&t, 0.5), 1),
        Err(SynthesisError::LayerMismatch { expected: 2, got: 1 })
    ));
    assert!(matches!(
        build_codebooks(&s1, &RateTuple::single(3.0, 0.5, 8), &pi, 1),
        Err(SynthesisError::CapExceeded { .. })
    ));
    let big = build_codebooks(&s1, &RateTuple::single(1.2, 0.6, 8), &pi, 1).unwrap();
    assert!(matches!(
        estimate_divergence_with(&s1, &big, &DivergenceOptions::new(100, 1)),
        Err(SynthesisError::MixtureTooLarge { .. })
    ));
    let cb = build_codebooks(&s1, &RateTuple::single(0.5, 0.5, 2), &pi, 1).unwrap();
    assert!(synthesize(&fixtures::dumbbell(), &cb, 10, 1).is_err());
    assert!(
        rate_region_check(&t, &RateTuple::single(0.5, 0.5, 2), &BernoulliParams::uniform(&t, 0.5), 2_000, 1).is_err()
    );
}

#[test]
fn independence_holds_for_skewed_pi() {
    let d1 = fixtures::dumbbell();
    for p in [0.1, 0.3, 0.9] {
        let pi = BernoulliParams::uniform(&d1, p);
        let cb = build_codebooks(&d1, &RateTuple::single(0.6, 0.3, 2), &pi, 2).unwrap();
        let mut o = DivergenceOptions::new(1_000, 5);
        o.audit_runs = 20_000;
        o.bound_samples = 0;
        let r = estimate_divergence_with(&d1, &cb, &o).unwrap();
        let s = r.independence_stat;
        assert!(s.value.abs() <= 3.0 * s.std_error, "pi {p}: {s:?}");
    }
}
