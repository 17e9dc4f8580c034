use std::path::{Path, PathBuf};

use lts_core::info::{self, MIResult, PiSweep};
use lts_core::signs::{self, SignAssignment};
use lts_core::synthesis::{
    self, rate_region_check, Codebook, DivergenceOptions, LayerRate, SignMode, SynthesisReport, MIXTURE_CAP,
};
use lts_core::tree::{self, CovarianceModel};
use lts_core::{BernoulliParams, GaussianTree, MixtureWeighting, RateTuple};
use serde_json::{json, Value};

use crate::args::{Command, MiMethod, Signs, Sweep, SynthArgs, Weighting};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::write_atomic;

/// Rate margin used by `report-all` when no rates are given.
const DEFAULT_MARGIN: f64 = 0.2;
/// Samples for the rate margins inside `report-all`.
const REPORT_BOUND_SAMPLES: usize = 20_000;

pub fn load_tree(path: &Path) -> Result<GaussianTree, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::field("tree path", format!("file `{}` not found", path.display()))
        } else {
            CliError::field("tree path", format!("cannot read `{}`: {e}", path.display()))
        }
    })?;
    let spec =
        tree::parse_tree(&text).map_err(|e| CliError::Validation(format!("tree_model: `{}` {e}", path.display())))?;
    Ok(tree::validate_tree(spec)?)
}

pub fn run(command: &Command, cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let tree = load_tree(&cfg.tree_path)?;
    match command {
        Command::Validate(_) => Ok(validate(&tree)),
        Command::Covariance(_) => Ok(covariance(&tree)),
        Command::EnumerateSigns { tree_dir, .. } => enumerate_signs(&tree, cfg, tree_dir.as_deref()),
        Command::SignReport(_) => Ok(sign_report(&tree)),
        Command::Mi { method, .. } => mi(&tree, cfg, *method),
        Command::MiConditional { weighting, .. } => mi_conditional(&tree, cfg, weighting_of(*weighting)),
        Command::OptimizePi { sweep, weighting, curve, .. } => {
            optimize_pi(&tree, cfg, *sweep, weighting_of(*weighting), curve.as_deref())
        }
        Command::RateCheck(_) => rate_check(&tree, cfg),
        Command::Synthesize { synth, runs, csv, .. } => synthesize(&tree, cfg, synth, *runs, csv.as_deref()),
        Command::VerifyConstraints { synth, tv_threshold, .. } => verify_constraints(&tree, cfg, synth, *tv_threshold),
        Command::ReportAll(_) => report_all(&tree, cfg),
    }
}

fn weighting_of(w: Weighting) -> MixtureWeighting {
    match w {
        Weighting::Prior => MixtureWeighting::Prior,
        Weighting::Posterior => MixtureWeighting::Posterior,
    }
}

fn ids(tree: &GaussianTree, nodes: &[usize]) -> Vec<String> {
    nodes.iter().map(|&n| tree.id(n).to_string()).collect()
}

fn mi_json(cfg: &ExperimentConfig, r: &MIResult) -> Value {
    json!({
        "value": cfg.info(r.value),
        "std_error": cfg.info(r.std_error),
        "method": r.method,
        "samples_used": r.samples_used,
    })
}

fn validate(tree: &GaussianTree) -> Value {
    let (n, k) = (tree.observed_count(), tree.hidden_count());
    json!({
        "valid": true,
        "n": n,
        "k": k,
        "summary": format!("k={k}, n={n}"),
        "observed": ids(tree, tree.observed_indices()),
        "hidden": ids(tree, tree.hidden_indices()),
        "edges": tree.edges().len(),
        "layers": tree.max_layer(),
        "observed_are_leaves": tree.observed_are_leaves(),
    })
}

fn covariance(tree: &GaussianTree) -> Value {
    let model = tree::joint_covariance(tree);
    let identity = tree::tree_determinant(tree);
    let direct = tree::direct_determinant(&model);
    let recovered = if tree.observed_are_leaves() && tree.hidden_count() > 0 {
        match tree::recover_edge_magnitudes(&model.observed_block, tree) {
            Ok(r) => json!(r),
            Err(e) => json!({ "error": e.to_string() }),
        }
    } else {
        Value::Null
    };
    json!({
        "node_order": model.node_order,
        "joint": CovarianceModel::to_rows(&model.joint),
        "observed_block": CovarianceModel::to_rows(&model.observed_block),
        "tree_determinant": identity,
        "direct_determinant": direct,
        "relative_error": ((direct - identity) / identity).abs(),
        "min_eigenvalue": model.min_eigenvalue(),
        "positive_definite": model.is_positive_definite(),
        "recovered_magnitudes": recovered,
    })
}

fn enumerate_signs(tree: &GaussianTree, cfg: &ExperimentConfig, tree_dir: Option<&Path>) -> Result<Value, CliError> {
    let members = signs::enumerate_equivalent_trees(tree)?;
    let equivalent = signs::verify_equivalence(&members)?;
    let k = tree.hidden_count();
    let stem = cfg.tree_path.file_stem().and_then(|s| s.to_str()).unwrap_or("tree").to_string();
    let dir: Option<PathBuf> = tree_dir.map(Path::to_path_buf).or_else(|| {
        cfg.output_path.as_ref().map(|out| {
            let parent = out.parent().map(Path::to_path_buf).unwrap_or_default();
            parent.join(format!("{stem}_signs"))
        })
    });
    let mut listed = Vec::with_capacity(members.len());
    for (mask, member) in members.iter().enumerate() {
        let text = tree::write_tree(member.spec());
        let assignment = SignAssignment::from_mask(tree, mask as u64);
        let mut entry = json!({
            "index": mask,
            "assignment": assignment.b,
            "rho": member.edges().iter().map(|e| json!({ "u": e.u, "v": e.v, "rho": e.rho })).collect::<Vec<_>>(),
        });
        match &dir {
            Some(d) => {
                let name = if k == 0 { format!("{stem}_0.tree") } else { format!("{stem}_{mask:0k$b}.tree") };
                let path = d.join(name);
                write_atomic(&path, &text)?;
                entry["file"] = json!(path);
            }
            None => entry["tree"] = json!(text),
        }
        listed.push(entry);
    }
    Ok(json!({
        "k": k,
        "count": members.len(),
        "equivalent": equivalent,
        "tolerance": signs::EQUIVALENCE_TOLERANCE,
        "members": listed,
    }))
}

fn sign_report(tree: &GaussianTree) -> Value {
    let r = signs::sign_class_report(tree);
    let (variables, constraints, free) = r.counts();
    json!({
        "variables": variables,
        "constraints": constraints,
        "free": free,
        "constraint_text": r.constraints.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        "report": r,
    })
}

fn mi(tree: &GaussianTree, cfg: &ExperimentConfig, method: MiMethod) -> Result<Value, CliError> {
    let mut out = json!({ "units": cfg.units });
    let direct = matches!(method, MiMethod::Direct | MiMethod::Both).then(|| info::mi_direct(tree)).transpose()?;
    let closed = if matches!(method, MiMethod::Closed | MiMethod::Both) {
        let sx = tree::joint_covariance(tree).observed_block;
        Some(info::mi_closed_form(&sx, tree)?)
    } else {
        None
    };
    if let Some(d) = &direct {
        out["direct"] = mi_json(cfg, d);
    }
    if let Some(c) = &closed {
        out["closed_form"] = mi_json(cfg, c);
    }
    if let (Some(d), Some(c)) = (&direct, &closed) {
        out["difference"] = json!(cfg.info((d.value - c.value).abs()));
    }
    Ok(out)
}

fn mi_conditional(tree: &GaussianTree, cfg: &ExperimentConfig, weighting: MixtureWeighting) -> Result<Value, CliError> {
    let pi = cfg.pi.params(tree);
    let (n, seed) = (cfg.samples, cfg.seed);
    let i_x_y = info::mi_x_y_with(tree, &pi, n, seed, weighting)?;
    let i_x_b_given_y = info::mi_x_b_given_y_with(tree, &pi, n, seed, weighting)?;
    let i_x_b = info::mi_x_b(tree, &pi, n, seed)?;
    let total = info::mi_direct(tree)?;
    let sum = i_x_y.plus(&i_x_b_given_y);
    let decomposition = match info::decomposition_check_with(tree, &pi, n, seed, weighting) {
        Ok(d) => json!({
            "lhs": mi_json(cfg, &d.lhs),
            "rhs": mi_json(cfg, &d.rhs),
            "first": mi_json(cfg, &d.first),
            "second": mi_json(cfg, &d.second),
            "z": d.z_score(),
        }),
        Err(info::InfoError::WrongShape(why)) => json!({ "skipped": why }),
        Err(e) => return Err(e.into()),
    };
    Ok(json!({
        "units": cfg.units,
        "pi": pi,
        "weighting": weighting,
        "i_x_y": mi_json(cfg, &i_x_y),
        "i_x_b_given_y": mi_json(cfg, &i_x_b_given_y),
        "i_x_b": mi_json(cfg, &i_x_b),
        "i_x_b_z": i_x_b.value.abs() / i_x_b.std_error.max(f64::MIN_POSITIVE),
        "chain": {
            "sum": mi_json(cfg, &sum),
            "total": mi_json(cfg, &total),
            "z": sum.z_score(&total),
        },
        "decomposition": decomposition,
    }))
}

fn optimize_pi(
    tree: &GaussianTree,
    cfg: &ExperimentConfig,
    sweep: Option<Sweep>,
    weighting: MixtureWeighting,
    curve_path: Option<&Path>,
) -> Result<Value, CliError> {
    let sweep = match sweep {
        Some(Sweep::Shared) => PiSweep::Shared,
        Some(Sweep::PerNode) => PiSweep::PerNode,
        None if tree.hidden_count() <= 2 => PiSweep::PerNode,
        None => PiSweep::Shared,
    };
    let o = info::optimize_pi_with(tree, cfg.grid_step, cfg.samples, cfg.seed, sweep, weighting)?;
    let mut csv = match sweep {
        PiSweep::Shared => "pi".to_string(),
        PiSweep::PerNode => o.hidden.iter().map(|h| format!("pi_{h}")).collect::<Vec<_>>().join(","),
    };
    csv.push_str(",value,std_error\n");
    let mut curve = Vec::with_capacity(o.curve.len());
    for p in &o.curve {
        let pis: Vec<String> = match sweep {
            PiSweep::Shared => vec![format!("{}", p.pi[0])],
            PiSweep::PerNode => p.pi.iter().map(|v| format!("{v}")).collect(),
        };
        let (v, se) = (cfg.info(p.result.value), cfg.info(p.result.std_error));
        csv.push_str(&format!("{},{v},{se}\n", pis.join(",")));
        curve.push(json!({ "pi": p.pi, "value": v, "std_error": se }));
    }
    if let Some(path) = curve_path {
        write_atomic(path, &csv)?;
    }
    Ok(json!({
        "units": cfg.units,
        "sweep": sweep,
        "weighting": weighting,
        "hidden": o.hidden,
        "pi_star": o.pi_star,
        "grid_step": cfg.grid_step,
        "max_asymmetry_z": o.max_asymmetry_z(),
        "curve": curve,
    }))
}

fn required_rates(tree: &GaussianTree, cfg: &ExperimentConfig) -> Result<RateTuple, CliError> {
    cfg.rates(tree.max_layer())?.ok_or_else(|| CliError::field("--ry/--rb", "rates are required for this command"))
}

fn bound_json(cfg: &ExperimentConfig, b: &synthesis::BoundCheck) -> Value {
    json!({
        "satisfied": b.satisfied(),
        "layers": b.layers.iter().map(|l| json!({
            "layer": l.layer,
            "ry": cfg.info(l.ry),
            "rb": cfg.info(l.rb),
            "i_y": mi_json(cfg, &l.i_y),
            "i_joint": mi_json(cfg, &l.i_joint),
            "margin_y": cfg.info(l.margin_y),
            "margin_joint": cfg.info(l.margin_joint),
        })).collect::<Vec<_>>(),
    })
}

fn rate_check(tree: &GaussianTree, cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let rates = required_rates(tree, cfg)?;
    let pi = cfg.pi.params(tree);
    let b = rate_region_check(tree, &rates, &pi, cfg.samples, cfg.seed)?;
    Ok(json!({ "units": cfg.units, "bounds": bound_json(cfg, &b) }))
}

/// Report with information quantities in the configured units.
fn report_json(cfg: &ExperimentConfig, r: &SynthesisReport) -> Value {
    let mut v = serde_json::to_value(r).unwrap_or(Value::Null);
    v["kl_estimate"] = json!(cfg.info(r.kl_estimate));
    v["kl_std_error"] = json!(cfg.info(r.kl_std_error));
    v["kl_per_codebook"] = json!(r.kl_per_codebook.iter().map(|&x| cfg.info(x)).collect::<Vec<_>>());
    v["independence_stat"] =
        json!({ "value": cfg.info(r.independence_stat.value), "std_error": cfg.info(r.independence_stat.std_error) });
    v["rates"]["layers"] =
        json!(r.rates.layers.iter().map(|l| json!({ "ry": cfg.info(l.ry), "rb": cfg.info(l.rb) })).collect::<Vec<_>>());
    v["bound_check"] = r.bound_check.as_ref().map(|b| bound_json(cfg, b)).unwrap_or(Value::Null);
    v["units"] = json!(cfg.units);
    v
}

fn build_codebook(
    tree: &GaussianTree,
    cfg: &ExperimentConfig,
    synth: &SynthArgs,
    rates: &RateTuple,
) -> Result<Codebook, CliError> {
    let mode = match synth.signs {
        Signs::Random => SignMode::Random,
        Signs::Constant => SignMode::Constant,
    };
    let pi = cfg.pi.params(tree);
    Ok(Codebook::build(tree, rates, &pi, synth.codebook_seed.unwrap_or(cfg.seed), mode)?)
}

fn divergence_options(cfg: &ExperimentConfig, synth: &SynthArgs) -> DivergenceOptions {
    DivergenceOptions {
        samples: cfg.samples,
        codebooks: synth.codebooks,
        audit_runs: synth.audit_runs.unwrap_or(cfg.samples),
        bound_samples: synth.bound_samples,
        seed: cfg.seed,
    }
}

fn synthesize(
    tree: &GaussianTree,
    cfg: &ExperimentConfig,
    synth: &SynthArgs,
    runs: usize,
    csv: Option<&Path>,
) -> Result<Value, CliError> {
    let rates = required_rates(tree, cfg)?;
    let cb = build_codebook(tree, cfg, synth, &rates)?;
    if let Some(path) = csv {
        let out = synthesis::synthesize(tree, &cb, runs, cfg.seed)?;
        write_atomic(path, &out.to_csv())?;
    }
    let report = synthesis::estimate_divergence_with(tree, &cb, &divergence_options(cfg, synth))?;
    Ok(json!({
        "runs": runs,
        "samples_csv": csv,
        "report": report_json(cfg, &report),
    }))
}

fn verify_constraints(
    tree: &GaussianTree,
    cfg: &ExperimentConfig,
    synth: &SynthArgs,
    tv_threshold: f64,
) -> Result<Value, CliError> {
    if !(tv_threshold.is_finite() && tv_threshold > 0.0) {
        return Err(CliError::field("--tv-threshold", format!("must be positive (got {tv_threshold})")));
    }
    let rates = required_rates(tree, cfg)?;
    let cb = build_codebook(tree, cfg, synth, &rates)?;
    let report = synthesis::estimate_divergence_with(tree, &cb, &divergence_options(cfg, synth))?;
    let checklist = synthesis::verify_appendix_constraints_with(tree, &cb, &report, tv_threshold);
    Ok(json!({
        "all_passed": checklist.all_passed(),
        "failed": checklist.failed(),
        "checklist": checklist,
        "report": report_json(cfg, &report),
    }))
}

struct Verdicts(Vec<Value>);

impl Verdicts {
    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.0.push(json!({ "check": name, "passed": passed, "detail": detail }));
    }
}

/// Rates `DEFAULT_MARGIN` above both inequalities of every layer.
fn rates_above_frontier(
    tree: &GaussianTree,
    cfg: &ExperimentConfig,
    pi: &BernoulliParams,
) -> Result<RateTuple, CliError> {
    let zero = RateTuple { layers: vec![LayerRate { ry: 0.0, rb: 0.0 }; tree.max_layer()], block_len: cfg.block_len };
    let b = rate_region_check(tree, &zero, pi, REPORT_BOUND_SAMPLES, cfg.seed)?;
    Ok(RateTuple {
        layers: b
            .layers
            .iter()
            .map(|l| {
                let ry = l.i_y.value.max(0.0) + DEFAULT_MARGIN;
                LayerRate { ry, rb: (l.i_joint.value + DEFAULT_MARGIN - ry).max(0.0) }
            })
            .collect(),
        block_len: cfg.block_len,
    })
}

fn report_all(tree: &GaussianTree, cfg: &ExperimentConfig) -> Result<Value, CliError> {
    let mut checks = Verdicts(Vec::new());
    let mut sections = serde_json::Map::new();
    let pi = cfg.pi.params(tree);

    sections.insert("validate".into(), validate(tree));

    let cov = covariance(tree);
    let rel = cov["relative_error"].as_f64().unwrap_or(f64::INFINITY);
    checks.push("determinant identity", rel < 1e-12, format!("relative error {rel:e}"));
    checks.push(
        "positive definite",
        cov["positive_definite"] == json!(true),
        format!("min eigenvalue {}", cov["min_eigenvalue"]),
    );
    sections.insert("covariance".into(), cov);

    match signs::enumerate_equivalent_trees(tree) {
        Ok(members) => {
            let ok = signs::verify_equivalence(&members)?;
            let want = 1usize << tree.hidden_count();
            checks.push(
                "sign equivalence",
                ok && members.len() == want,
                format!("{} trees, expected {want}", members.len()),
            );
            sections.insert("enumerate_signs".into(), json!({ "count": members.len(), "equivalent": ok }));
        }
        Err(e) => sections.insert("enumerate_signs".into(), json!({ "skipped": e.to_string() })).map_or((), |_| ()),
    }
    let sr = sign_report(tree);
    let free_ok = sr["free"].as_u64() == Some(tree.hidden_count() as u64);
    checks.push("free sign variables equal k", free_ok, format!("free = {}", sr["free"]));
    sections.insert("sign_report".into(), sr);

    if tree.observed_are_leaves() && tree.hidden_count() > 0 {
        let m = mi(tree, cfg, MiMethod::Both)?;
        let diff = m["difference"].as_f64().unwrap_or(f64::INFINITY);
        checks.push("closed form equals direct", diff < cfg.info(1e-9), format!("difference {diff:e}"));
        sections.insert("mi".into(), m);
    } else {
        sections.insert("mi".into(), mi(tree, cfg, MiMethod::Direct)?);
    }

    if tree.hidden_count() == 0 {
        sections.insert("synthesis".into(), json!({ "skipped": "tree has no hidden nodes" }));
        return Ok(finish(sections, checks));
    }

    let mc = mi_conditional(tree, cfg, MixtureWeighting::Prior)?;
    let z_chain = mc["chain"]["z"].as_f64().unwrap_or(f64::INFINITY);
    checks.push("chain identity", z_chain <= 3.0, format!("z = {z_chain:.3}"));
    let z_b = mc["i_x_b_z"].as_f64().unwrap_or(f64::INFINITY);
    checks.push("signs independent of observations", z_b <= 3.0, format!("z = {z_b:.3}"));
    if let Some(z) = mc["decomposition"]["z"].as_f64() {
        checks.push("decomposition", z <= 3.0, format!("z = {z:.3}"));
    }
    sections.insert("mi_conditional".into(), mc);

    let op = optimize_pi(tree, cfg, None, MixtureWeighting::Prior, None)?;
    let star: Vec<f64> =
        op["pi_star"]["pi"].as_object().map(|m| m.values().filter_map(Value::as_f64).collect()).unwrap_or_default();
    let near_half = star.iter().all(|p| (p - 0.5).abs() <= cfg.grid_step + 1e-12);
    checks.push("optimal pi is one half", near_half, format!("pi* = {star:?}"));
    let asym = op["max_asymmetry_z"].as_f64().unwrap_or(f64::INFINITY);
    checks.push("curve symmetric about one half", asym <= 3.0, format!("max z = {asym:.3}"));
    sections.insert("optimize_pi".into(), op);

    let rates = match cfg.rates(tree.max_layer())? {
        Some(r) => r,
        None => rates_above_frontier(tree, cfg, &pi)?,
    };
    let cb = match Codebook::build(tree, &rates, &pi, cfg.seed, SignMode::Random) {
        Ok(cb) => cb,
        Err(e) if e.is_validation() => {
            sections.insert("synthesis".into(), json!({ "skipped": e.to_string(), "rates": rates }));
            return Ok(finish(sections, checks));
        }
        Err(e) => return Err(e.into()),
    };
    if cb.mixture_components() > MIXTURE_CAP as f64 {
        let why = format!("{} mixture components exceed the cap {MIXTURE_CAP}", cb.mixture_components());
        sections.insert("synthesis".into(), json!({ "skipped": why, "rates": rates }));
        return Ok(finish(sections, checks));
    }
    let opts = DivergenceOptions {
        samples: cfg.samples,
        codebooks: 1,
        audit_runs: cfg.samples,
        bound_samples: REPORT_BOUND_SAMPLES,
        seed: cfg.seed,
    };
    let report = synthesis::estimate_divergence_with(tree, &cb, &opts)?;
    let checklist = synthesis::verify_appendix_constraints(tree, &cb, &report);
    for c in &checklist.items {
        let detail = format!("{} = {:.4} (limit {})", c.detail, c.value, c.threshold);
        checks.push(&format!("constraint {}: {}", c.id, c.name), c.passed, detail);
    }
    sections.insert("synthesis".into(), json!({ "checklist": checklist, "report": report_json(cfg, &report) }));
    Ok(finish(sections, checks))
}

fn finish(mut sections: serde_json::Map<String, Value>, checks: Verdicts) -> Value {
    let all = checks.0.iter().all(|c| c["passed"] == json!(true));
    sections.insert("checks".into(), Value::Array(checks.0));
    sections.insert("all_passed".into(), json!(all));
    Value::Object(sections)
}
