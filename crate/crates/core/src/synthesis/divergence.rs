use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::engine::{fresh_symbol, layer_one_inputs};
use super::{rate_region_check, BoundCheck, Codebook, LayerModel, RateTuple, SignMode, SynthesisError, MIXTURE_CAP};
use crate::info::BernoulliParams;
use crate::linalg::{self, log_sum_exp, GaussianFactor};
use crate::mc::{self, Welford};
use crate::tree::{joint_covariance, GaussianTree};

const STREAM_KL: u64 = 0x4B_0000;
const STREAM_ENSEMBLE: u64 = 0xE5_0000;
const STREAM_AUDIT: u64 = 0xA0_0000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceOptions {
    /// Draws from `q` per codebook for the KL estimate.
    pub samples: usize,
    /// Codebooks averaged over; the first is the one supplied, the rest are
    /// regenerated from the same recipe with derived seeds.
    pub codebooks: usize,
    /// Runs, each with a freshly drawn codebook, for the independence,
    /// residual and lag-1 statistics.
    pub audit_runs: usize,
    /// Monte Carlo samples for the rate-region margins; 0 skips them.
    pub bound_samples: usize,
    pub seed: u64,
}

impl DivergenceOptions {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self { samples, codebooks: 1, audit_runs: samples, bound_samples: 20_000, seed }
    }
}

/// An estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Statistic {
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthesisReport {
    pub rates: RateTuple,
    pub pi: BernoulliParams,
    pub sign_mode: SignMode,
    /// Actual `(M_Y, M_B)` per layer of the supplied codebook.
    pub codebook_sizes: Vec<(usize, usize)>,
    pub sub_blocks: Vec<usize>,
    /// How sub-blocks are sized.
    pub sub_block_sizing: String,
    pub mixture_components: usize,
    pub bound_check: Option<BoundCheck>,
    pub samples: usize,
    pub codebooks: usize,
    pub seed: u64,
    /// `E[ln q(X^N) - sum_t ln p(X_t)]` in nats, averaged over codebooks.
    pub kl_estimate: f64,
    pub kl_std_error: f64,
    pub kl_per_codebook: Vec<f64>,
    /// Pinsker: `sqrt(max(kl, 0) / 2)`.
    pub tv_upper_bound: f64,
    /// Frobenius norm of pooled empirical covariance minus target, first codebook.
    pub empirical_cov_error: f64,
    /// Bias-corrected Gaussian likelihood-ratio MI between emitted symbols and
    /// the layer-1 sign pattern.
    pub independence_stat: Statistic,
    /// Normalized chi-square of residual cross-correlations given the inputs.
    pub residual_stat: f64,
    /// Normalized chi-square of lag-1 cross-covariances; `None` when `N = 1`.
    pub lag1_stat: Option<f64>,
    pub audit_runs: usize,
}

pub fn estimate_divergence(
    tree: &GaussianTree,
    codebook: &Codebook,
    samples: usize,
    seed: u64,
) -> Result<SynthesisReport, SynthesisError> {
    estimate_divergence_with(tree, codebook, &DivergenceOptions::new(samples, seed))
}

/// Row-major inverse of a lower-triangular factor.
fn lower_inverse(l: &DMatrix<f64>) -> Vec<f64> {
    let d = l.nrows();
    let inv = l.clone().solve_lower_triangular(&DMatrix::identity(d, d)).expect("non-singular factor");
    (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| inv[(i, j)]).collect()
}

fn mat_vec(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = m[r * d..(r + 1) * d].iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

/// Exact mixture `q` of one codebook in whitened coordinates.
struct Mixture {
    /// Per component, `N x d` means.
    means: Vec<f64>,
    /// Per component, `N x d` means whitened by the noise factor.
    whitened: Vec<f64>,
    norms: Vec<f64>,
    count: usize,
    stride: usize,
}

fn enumerate_mixture(model: &LayerModel, cb: &Codebook) -> Mixture {
    let n = cb.block_len();
    let d = model.output.out_dim();
    let k1 = model.width(0);
    let stride = n * d;
    let mut tuples: Vec<Vec<(usize, usize)>> = vec![Vec::new()];
    for lc in &cb.layers {
        let mut next = Vec::with_capacity(tuples.len() * lc.gaussian_count() * lc.sign_count);
        for t in &tuples {
            for i in 0..lc.gaussian_count() {
                for k in 0..lc.sign_count {
                    let mut v = t.clone();
                    v.push((i, k));
                    next.push(v);
                }
            }
        }
        tuples = next;
    }
    let count = tuples.len();
    let mut means = Vec::with_capacity(count * stride);
    let mut whitened = Vec::with_capacity(count * stride);
    let mut norms = Vec::with_capacity(count);
    let mut buf = vec![0.0; d];
    for tuple in &tuples {
        let u = layer_one_inputs(model, cb, tuple);
        let mut norm = 0.0;
        for t in 0..n {
            let ut = &u[t * k1..(t + 1) * k1];
            means.extend(model.output.mean(ut));
            model.output.whitened_mean(ut, &mut buf);
            norm += buf.iter().map(|v| v * v).sum::<f64>();
            whitened.extend_from_slice(&buf);
        }
        norms.push(norm);
    }
    Mixture { means, whitened, norms, count, stride }
}

struct KlBatch {
    stats: Welford,
    cov: Vec<f64>,
    symbols: usize,
}

/// KL estimate for one codebook, plus pooled second moments.
fn kl_single(
    model: &LayerModel,
    cb: &Codebook,
    target: &GaussianFactor,
    target_inv: &[f64],
    samples: usize,
    seed: u64,
    stream: u64,
) -> (Welford, DMatrix<f64>) {
    let mix = enumerate_mixture(model, cb);
    let n = cb.block_len();
    let d = model.output.out_dim();
    let log_count = (mix.count as f64).ln();
    let noise_norm = model.output.log_norm();
    let target_norm = target.log_norm();
    let parts = mc::batches(samples, seed, stream, |rng, count| {
        let mut stats = Welford::default();
        let mut cov = vec![0.0; d * d];
        let mut eta = vec![0.0; mix.stride];
        let mut xw = vec![0.0; mix.stride];
        let mut x = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut logs = vec![0.0; mix.count];
        for _ in 0..count {
            let j = rng.random_range(0..mix.count);
            eta.iter_mut().for_each(|e| *e = rng.sample(StandardNormal));
            let w = &mix.whitened[j * mix.stride..(j + 1) * mix.stride];
            for ((o, a), b) in xw.iter_mut().zip(w).zip(&eta) {
                *o = a + b;
            }
            let xw_norm: f64 = xw.iter().map(|v| v * v).sum();
            for (c, l) in logs.iter_mut().enumerate() {
                let wc = &mix.whitened[c * mix.stride..(c + 1) * mix.stride];
                let dot: f64 = wc.iter().zip(&xw).map(|(a, b)| a * b).sum();
                *l = -0.5 * (xw_norm - 2.0 * dot + mix.norms[c]);
            }
            let log_q = -log_count + n as f64 * noise_norm + log_sum_exp(&logs);
            let mut log_p = 0.0;
            for t in 0..n {
                model.output.colour_noise(&eta[t * d..(t + 1) * d], &mut x);
                let base = j * mix.stride + t * d;
                for (xr, &mu) in x.iter_mut().zip(&mix.means[base..base + d]) {
                    *xr += mu;
                }
                mat_vec(target_inv, &x, &mut z);
                log_p += target_norm - 0.5 * z.iter().map(|v| v * v).sum::<f64>();
                for a in 0..d {
                    for b in 0..d {
                        cov[a * d + b] += x[a] * x[b];
                    }
                }
            }
            stats.push(log_q - log_p);
        }
        KlBatch { stats, cov, symbols: count * n }
    });
    let mut stats = Welford::default();
    let mut cov = DMatrix::zeros(d, d);
    let mut symbols = 0;
    for p in &parts {
        stats.merge(&p.stats);
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += p.cov[a * d + b];
            }
        }
        symbols += p.symbols;
    }
    (stats, cov / symbols.max(1) as f64)
}

/// `(sum z^2 - m) / sqrt(2 m)`: approximately standard normal under the null
/// when the `m` entries are independent `N(0, 1)`.
fn normalized_chi_square(z2_sum: f64, m: usize) -> f64 {
    if m == 0 {
        0.0
    } else {
        (z2_sum - m as f64) / (2.0 * m as f64).sqrt()
    }
}

/// Gaussian likelihood-ratio MI between `d`-dimensional symbols and a group
/// label, bias-corrected by its null mean `df / (2n)`.
fn group_mi(symbols: &[f64], groups: &[usize], d: usize) -> Statistic {
    let n = groups.len();
    let mut labels: Vec<usize> = groups.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let cov_of = |idx: &[usize]| -> Option<f64> {
        let m = idx.len() as f64;
        let mut mean = vec![0.0; d];
        for &i in idx {
            for r in 0..d {
                mean[r] += symbols[i * d + r] / m;
            }
        }
        let mut c = DMatrix::zeros(d, d);
        for &i in idx {
            for a in 0..d {
                for b in 0..d {
                    c[(a, b)] += (symbols[i * d + a] - mean[a]) * (symbols[i * d + b] - mean[b]) / m;
                }
            }
        }
        linalg::log_det_spd(&c)
    };
    let all: Vec<usize> = (0..n).collect();
    let Some(total) = cov_of(&all) else { return Statistic { value: 0.0, std_error: 0.0 } };
    let mut within = 0.0;
    let mut used_n = 0usize;
    let mut used_groups = 0usize;
    let mut parts = Vec::new();
    for &g in &labels {
        let idx: Vec<usize> = (0..n).filter(|&i| groups[i] == g).collect();
        if idx.len() < 5 * d {
            continue;
        }
        if let Some(ld) = cov_of(&idx) {
            parts.push((idx.len(), ld));
            used_n += idx.len();
            used_groups += 1;
        }
    }
    if used_groups < 2 {
        return Statistic { value: 0.0, std_error: 0.0 };
    }
    for (m, ld) in parts {
        within += m as f64 / used_n as f64 * ld;
    }
    let raw = 0.5 * (total - within);
    let df = ((used_groups - 1) * (d + d * (d + 1) / 2)) as f64;
    let nn = used_n as f64;
    Statistic { value: raw - df / (2.0 * nn), std_error: (2.0 * df).sqrt() / (2.0 * nn) }
}

struct AuditBatch {
    x: Vec<f64>,
    residual: Vec<f64>,
    groups: Vec<usize>,
}

/// KL divergence of the synthesized block law from the i.i.d. target, with
/// moment and independence diagnostics.
pub fn estimate_divergence_with(
    tree: &GaussianTree,
    codebook: &Codebook,
    opts: &DivergenceOptions,
) -> Result<SynthesisReport, SynthesisError> {
    codebook.check_tree(tree)?;
    for (field, value, min) in
        [("samples", opts.samples, 2), ("codebooks", opts.codebooks, 1), ("audit_runs", opts.audit_runs, 2)]
    {
        if value < min {
            return Err(SynthesisError::TooFew { field, value, min });
        }
    }
    let components = codebook.mixture_components();
    if components > MIXTURE_CAP as f64 {
        return Err(SynthesisError::MixtureTooLarge { components, cap: MIXTURE_CAP });
    }
    let model = LayerModel::new(tree)?;
    let n = codebook.block_len();
    let d = tree.observed_count();
    let sigma_x = joint_covariance(tree).observed_block;
    let target = GaussianFactor::new(&sigma_x).expect("tree covariance is positive definite");
    let target_inv = lower_inverse(&target.l());

    let mut per_codebook = Vec::with_capacity(opts.codebooks);
    let mut first_stats = Welford::default();
    let mut first_cov = DMatrix::zeros(d, d);
    for e in 0..opts.codebooks {
        let regenerated;
        let cb = if e == 0 {
            codebook
        } else {
            let s = mc::derive_seed(codebook.recipe.seed, STREAM_ENSEMBLE, e as u64);
            regenerated = codebook.regenerate(tree, s)?;
            &regenerated
        };
        if cb.mixture_components() > MIXTURE_CAP as f64 {
            return Err(SynthesisError::MixtureTooLarge { components: cb.mixture_components(), cap: MIXTURE_CAP });
        }
        let (stats, cov) = kl_single(&model, cb, &target, &target_inv, opts.samples, opts.seed, STREAM_KL + e as u64);
        if e == 0 {
            first_stats = stats;
            first_cov = cov;
        }
        per_codebook.push(stats.mean);
    }
    let (kl, kl_se) = if opts.codebooks == 1 {
        (first_stats.mean, first_stats.std_error())
    } else {
        let mut w = Welford::default();
        per_codebook.iter().for_each(|&v| w.push(v));
        (w.mean, w.std_error())
    };
    let empirical_cov_error = (&first_cov - &sigma_x).norm();

    // audit runs: each run behaves as if drawn from a fresh codebook
    let pis: Vec<Vec<f64>> =
        model.layers.iter().map(|nodes| codebook.recipe.pi.values_for(tree, nodes)).collect::<Result<_, _>>()?;
    let noise_inv = lower_inverse(&model.output.noise_factor().l());
    let sign_mode = codebook.recipe.sign_mode;
    let parts = mc::batches(opts.audit_runs, opts.seed, STREAM_AUDIT, |rng, count| {
        let mut batch = AuditBatch {
            x: Vec::with_capacity(count * n * d),
            residual: Vec::with_capacity(count * n * d),
            groups: Vec::with_capacity(count * n),
        };
        let mut x = vec![0.0; d];
        let mut u1 = Vec::new();
        let mut s1 = Vec::new();
        let mut diff = vec![0.0; d];
        let mut r = vec![0.0; d];
        for _ in 0..count * n {
            fresh_symbol(&model, &pis, sign_mode, rng, &mut x, &mut u1, &mut s1);
            let mean = model.output.mean(&u1);
            for i in 0..d {
                diff[i] = x[i] - mean[i];
            }
            mat_vec(&noise_inv, &diff, &mut r);
            batch.x.extend_from_slice(&x);
            batch.residual.extend_from_slice(&r);
            batch.groups.push(s1.iter().enumerate().map(|(j, &s)| usize::from(s < 0.0) << j).sum());
        }
        batch
    });
    let mut xs = Vec::with_capacity(opts.audit_runs * n * d);
    let mut residuals = Vec::with_capacity(opts.audit_runs * n * d);
    let mut groups = Vec::with_capacity(opts.audit_runs * n);
    for p in parts {
        xs.extend(p.x);
        residuals.extend(p.residual);
        groups.extend(p.groups);
    }
    let symbols = groups.len();

    // (1) residual cross-correlations
    let mut z2 = 0.0;
    for a in 0..d {
        for b in (a + 1)..d {
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for i in 0..symbols {
                let (ra, rb) = (residuals[i * d + a], residuals[i * d + b]);
                sab += ra * rb;
                saa += ra * ra;
                sbb += rb * rb;
            }
            let corr = sab / (saa * sbb).sqrt();
            z2 += corr * corr * symbols as f64;
        }
    }
    let residual_stat = normalized_chi_square(z2, d * (d - 1) / 2);

    // (2) symbols vs sign pattern
    let independence_stat = group_mi(&xs, &groups, d);

    // (3) lag-1 cross-covariance of whitened symbols
    let lag1_stat = (n > 1).then(|| {
        let mut v = vec![0.0; xs.len()];
        for i in 0..symbols {
            mat_vec(&target_inv, &xs[i * d..(i + 1) * d], &mut v[i * d..(i + 1) * d]);
        }
        let mut c = vec![0.0; d * d];
        let mut pairs = 0usize;
        for run in 0..opts.audit_runs {
            for t in 0..n - 1 {
                let i = run * n + t;
                for a in 0..d {
                    for b in 0..d {
                        c[a * d + b] += v[i * d + a] * v[(i + 1) * d + b];
                    }
                }
                pairs += 1;
            }
        }
        let z2: f64 = c.iter().map(|s| (s / pairs as f64).powi(2) * pairs as f64).sum();
        normalized_chi_square(z2, d * d)
    });

    let bound_check = if opts.bound_samples > 0 {
        Some(rate_region_check(tree, &codebook.recipe.rates, &codebook.recipe.pi, opts.bound_samples, opts.seed)?)
    } else {
        None
    };

    Ok(SynthesisReport {
        rates: codebook.recipe.rates.clone(),
        pi: codebook.recipe.pi.clone(),
        sign_mode,
        codebook_sizes: codebook.sizes(),
        sub_blocks: codebook.sub_blocks(),
        sub_block_sizing: "every sub-block holds M_Y codewords; not rebalanced by pi".into(),
        mixture_components: components as usize,
        bound_check,
        samples: opts.samples,
        codebooks: opts.codebooks,
        seed: opts.seed,
        kl_estimate: kl,
        kl_std_error: kl_se,
        kl_per_codebook: per_codebook,
        tv_upper_bound: (kl.max(0.0) / 2.0).sqrt(),
        empirical_cov_error,
        independence_stat,
        residual_stat,
        lag1_stat,
        audit_runs: opts.audit_runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::synthesis::build_codebooks;

    #[test]
    fn group_mi_null_is_centred() {
        let mut rng = mc::rng_for(1, 0, 0);
        let n = 20_000;
        let d = 3;
        let xs: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let s = group_mi(&xs, &groups, d);
        assert!(s.value.abs() < 4.0 * s.std_error, "{s:?}");
    }

    #[test]
    fn group_mi_detects_shift() {
        let mut rng = mc::rng_for(2, 0, 0);
        let n = 5_000;
        let groups: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let xs: Vec<f64> = groups.iter().map(|&g| rng.sample::<f64, _>(StandardNormal) + g as f64 * 0.3).collect();
        let s = group_mi(&xs, &groups, 1);
        assert!(s.value > 10.0 * s.std_error);
    }

    #[test]
    fn mixture_cap() {
        let s1 = fixtures::star();
        let cb = build_codebooks(&s1, &RateTuple::single(1.0, 0.5, 8), &BernoulliParams::uniform(&s1, 0.5), 1).unwrap();
        assert!(matches!(estimate_divergence(&s1, &cb, 100, 1), Err(SynthesisError::MixtureTooLarge { .. })));
    }

    #[test]
    fn small_run_report_is_consistent() {
        let s1 = fixtures::star();
        let cb = build_codebooks(&s1, &RateTuple::single(0.6, 0.6, 3), &BernoulliParams::uniform(&s1, 0.5), 1).unwrap();
        let r = estimate_divergence(&s1, &cb, 2_000, 4).unwrap();
        assert!(r.kl_estimate >= -3.0 * r.kl_std_error);
        assert_eq!(r.tv_upper_bound, (r.kl_estimate.max(0.0) / 2.0).sqrt());
        assert_eq!(r.mixture_components, 7 * 7);
        assert!(r.lag1_stat.is_some());
    }
}
