use serde::Serialize;

use super::{codebook_size, Codebook, SynthesisReport};
use crate::tree::GaussianTree;

/// Default bound on the Pinsker TV upper bound for constraint 6.
pub const DEFAULT_TV_THRESHOLD: f64 = 0.75;
/// Largest accepted normalized statistic (or `|value| / std_error`).
pub const SIGMA_LIMIT: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintCheck {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Checklist {
    pub items: Vec<ConstraintCheck>,
}

impl Checklist {
    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<u8> {
        self.items.iter().filter(|c| !c.passed).map(|c| c.id).collect()
    }
}

pub fn verify_appendix_constraints(tree: &GaussianTree, codebook: &Codebook, report: &SynthesisReport) -> Checklist {
    verify_appendix_constraints_with(tree, codebook, report, DEFAULT_TV_THRESHOLD)
}

/// The six codebook constraints. Checks 1-3 and 6 read the report; checks 4
/// and 5 compare the codebook's actual cardinalities with those its declared
/// rates imply.
pub fn verify_appendix_constraints_with(
    tree: &GaussianTree,
    codebook: &Codebook,
    report: &SynthesisReport,
    tv_threshold: f64,
) -> Checklist {
    let mut items = Vec::with_capacity(6);

    items.push(ConstraintCheck {
        id: 1,
        name: "output coordinates independent given inputs",
        passed: report.residual_stat <= SIGMA_LIMIT,
        value: report.residual_stat,
        threshold: SIGMA_LIMIT,
        detail: "normalized chi-square of whitened residual cross-correlations".into(),
    });

    let ind = report.independence_stat;
    let z = if ind.value == 0.0 { 0.0 } else { ind.value.abs() / ind.std_error };
    items.push(ConstraintCheck {
        id: 2,
        name: "outputs independent of signs",
        passed: z <= SIGMA_LIMIT,
        value: z,
        threshold: SIGMA_LIMIT,
        detail: format!("MI {:.3e} +/- {:.3e} nats", ind.value, ind.std_error),
    });

    let (value, detail) = match report.lag1_stat {
        Some(v) => (v, "normalized chi-square of lag-1 cross-covariances".to_string()),
        None => (0.0, "not applicable for N = 1".to_string()),
    };
    items.push(ConstraintCheck {
        id: 3,
        name: "symbols i.i.d. across time",
        passed: value <= SIGMA_LIMIT,
        value,
        threshold: SIGMA_LIMIT,
        detail,
    });

    let n = codebook.block_len();
    let structure = codebook.check_tree(tree).err().map(|e| e.to_string());
    let mut y_dev = 0.0f64;
    let mut b_dev = 0.0f64;
    let mut y_notes = Vec::new();
    let mut b_notes = Vec::new();
    for (l, (lc, rate)) in codebook.layers.iter().zip(&codebook.recipe.rates.layers).enumerate() {
        let want_y = codebook_size(n, rate.ry);
        for (bi, b) in lc.blocks.iter().enumerate() {
            let dev = (b.len as f64 - want_y).abs();
            if dev > 0.0 {
                y_notes.push(format!("layer {} block {bi}: {} codewords, declared {want_y}", l + 1, b.len));
            }
            y_dev = y_dev.max(dev);
        }
        let want_b = codebook_size(n, rate.rb);
        let dev = (lc.sign_count as f64 - want_b).abs();
        if dev > 0.0 {
            b_notes.push(format!("layer {}: {} sign codewords, declared {want_b}", l + 1, lc.sign_count));
        }
        b_dev = b_dev.max(dev);
    }
    let note = |notes: Vec<String>| match (&structure, notes.is_empty()) {
        (Some(s), _) => s.clone(),
        (None, true) => "matches ceil(exp(N R))".to_string(),
        (None, false) => notes.join("; "),
    };
    items.push(ConstraintCheck {
        id: 4,
        name: "Gaussian codebook cardinality",
        passed: y_dev == 0.0 && structure.is_none(),
        value: y_dev,
        threshold: 0.0,
        detail: note(y_notes),
    });
    items.push(ConstraintCheck {
        id: 5,
        name: "sign codebook cardinality",
        passed: b_dev == 0.0 && structure.is_none(),
        value: b_dev,
        threshold: 0.0,
        detail: note(b_notes),
    });

    items.push(ConstraintCheck {
        id: 6,
        name: "total variation bound",
        passed: report.tv_upper_bound <= tv_threshold,
        value: report.tv_upper_bound,
        threshold: tv_threshold,
        detail: format!("Pinsker bound from KL {:.4} nats", report.kl_estimate),
    });

    Checklist { items }
}
