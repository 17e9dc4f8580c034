use std::fmt::Write;

use super::{NodeKind, TreeError, TreeSpec};

/// Parses the line-oriented tree format:
///
/// ```text
/// # comment
/// node y hidden
/// node x1 observed
/// edge y x1 0.6
/// ```
pub fn parse_tree(text: &str) -> Result<TreeSpec, TreeError> {
    let mut spec = TreeSpec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let fields: Vec<&str> = content.split_whitespace().collect();
        let err = |message: String| TreeError::Parse { line, message };
        match fields.as_slice() {
            [] => {}
            ["node", id, kind] => {
                let kind = match *kind {
                    "observed" => NodeKind::Observed,
                    "hidden" => NodeKind::Hidden,
                    other => return Err(err(format!("node kind must be `observed` or `hidden`, got `{other}`"))),
                };
                spec.nodes.push(super::NodeSpec { id: id.to_string(), kind });
            }
            ["edge", u, v, rho] => {
                let rho: f64 = rho.parse().map_err(|_| err(format!("rho `{rho}` is not a decimal number")))?;
                spec.edges.push(super::EdgeSpec { u: u.to_string(), v: v.to_string(), rho });
            }
            ["node", ..] => return Err(err("expected `node <id> observed|hidden`".into())),
            ["edge", ..] => return Err(err("expected `edge <u> <v> <rho>`".into())),
            [other, ..] => return Err(err(format!("unknown record `{other}`"))),
        }
    }
    Ok(spec)
}

pub fn write_tree(spec: &TreeSpec) -> String {
    let mut out = String::new();
    for n in &spec.nodes {
        let kind = match n.kind {
            NodeKind::Observed => "observed",
            NodeKind::Hidden => "hidden",
        };
        writeln!(out, "node {} {kind}", n.id).unwrap();
    }
    for e in &spec.edges {
        writeln!(out, "edge {} {} {:?}", e.u, e.v, e.rho).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn round_trip() {
        let spec = fixtures::two_layer().spec().clone();
        assert_eq!(parse_tree(&write_tree(&spec)).unwrap(), spec);
    }

    #[test]
    fn comments_and_blank_lines() {
        let spec = parse_tree("# star\n\nnode y hidden  # root\nnode x1 observed\nedge y x1 -0.25\n").unwrap();
        assert_eq!(spec.nodes.len(), 2);
        assert_eq!(spec.edges[0].rho, -0.25);
    }

    #[test]
    fn errors_name_the_line() {
        assert_eq!(
            parse_tree("node a observed\nedge a b x\n"),
            Err(TreeError::Parse { line: 2, message: "rho `x` is not a decimal number".into() })
        );
        assert!(matches!(parse_tree("vertex a\n"), Err(TreeError::Parse { line: 1, .. })));
        assert!(matches!(parse_tree("node a leaf\n"), Err(TreeError::Parse { line: 1, .. })));
        assert!(matches!(parse_tree("edge a b\n"), Err(TreeError::Parse { line: 1, .. })));
    }
}
