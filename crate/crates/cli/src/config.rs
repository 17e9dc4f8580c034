use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lts_core::{BernoulliParams, GaussianTree};
use serde::{Deserialize, Serialize};

use crate::args::{CommonArgs, Units};
use crate::error::CliError;

pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_SAMPLES: usize = 20_000;
pub const DEFAULT_GRID: f64 = 0.05;
pub const DEFAULT_PI: f64 = 0.5;
pub const DEFAULT_BLOCKLEN: usize = 4;

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl From<OneOrMany> for Vec<f64> {
    fn from(v: OneOrMany) -> Self {
        match v {
            OneOrMany::One(x) => vec![x],
            OneOrMany::Many(xs) => xs,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum PiValue {
    One(f64),
    Text(String),
    Table(BTreeMap<String, f64>),
}

/// Contents of a `--config` TOML file. Every key is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    samples: Option<usize>,
    grid: Option<f64>,
    ry: Option<OneOrMany>,
    rb: Option<OneOrMany>,
    pi: Option<PiValue>,
    blocklen: Option<usize>,
    units: Option<Units>,
    out: Option<PathBuf>,
    deterministic: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum PiSpec {
    Uniform(f64),
    PerNode(BTreeMap<String, f64>),
}

impl PiSpec {
    pub fn params(&self, tree: &GaussianTree) -> BernoulliParams {
        match self {
            PiSpec::Uniform(p) => BernoulliParams::uniform(tree, *p),
            PiSpec::PerNode(m) => BernoulliParams::from_pairs(m.clone()),
        }
    }
}

/// Fully resolved settings for one run; echoed into every report.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub tree_path: PathBuf,
    pub seed: u64,
    pub samples: usize,
    pub grid_step: f64,
    /// As given, in `units`.
    pub ry: Option<Vec<f64>>,
    pub rb: Option<Vec<f64>>,
    pub pi: PiSpec,
    pub block_len: usize,
    pub units: Units,
    pub output_path: Option<PathBuf>,
    pub deterministic: bool,
}

fn parse_pi(text: &str) -> Result<PiSpec, CliError> {
    let text = text.trim();
    if !text.contains('=') {
        let p = text.parse::<f64>().map_err(|_| CliError::field("--pi", format!("`{text}` is not a number")))?;
        return Ok(PiSpec::Uniform(p));
    }
    let mut map = BTreeMap::new();
    for part in text.split(',') {
        let (id, value) = part
            .split_once('=')
            .ok_or_else(|| CliError::field("--pi", format!("`{part}` is not of the form node=value")))?;
        let p = value
            .trim()
            .parse::<f64>()
            .map_err(|_| CliError::field("--pi", format!("value `{value}` for `{id}` is not a number")))?;
        map.insert(id.trim().to_string(), p);
    }
    Ok(PiSpec::PerNode(map))
}

fn read_file_config(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::field("--config", format!("cannot read `{}`: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::field("--config", format!("`{}`: {e}", path.display())))
}

impl ExperimentConfig {
    /// Merges flags over the config file over defaults, then checks every field.
    pub fn resolve(command: &str, tree_path: &Path, args: &CommonArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => read_file_config(p)?,
            None => FileConfig::default(),
        };
        let pi = match (&args.pi, file.pi) {
            (Some(text), _) => parse_pi(text)?,
            (None, Some(PiValue::One(p))) => PiSpec::Uniform(p),
            (None, Some(PiValue::Text(t))) => parse_pi(&t)?,
            (None, Some(PiValue::Table(m))) => PiSpec::PerNode(m),
            (None, None) => PiSpec::Uniform(DEFAULT_PI),
        };
        let cfg = ExperimentConfig {
            command: command.to_string(),
            tree_path: tree_path.to_path_buf(),
            seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            samples: args.samples.or(file.samples).unwrap_or(DEFAULT_SAMPLES),
            grid_step: args.grid.or(file.grid).unwrap_or(DEFAULT_GRID),
            ry: args.ry.clone().or(file.ry.map(Into::into)),
            rb: args.rb.clone().or(file.rb.map(Into::into)),
            pi,
            block_len: args.blocklen.or(file.blocklen).unwrap_or(DEFAULT_BLOCKLEN),
            units: args.units.or(file.units).unwrap_or_default(),
            output_path: args.out.clone().or(file.out),
            deterministic: args.deterministic || file.deterministic.unwrap_or(false),
        };
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.seed == 0 {
            return Err(CliError::field("--seed", "must be positive (got 0)"));
        }
        if self.samples == 0 {
            return Err(CliError::field("--samples", "must be positive (got 0)"));
        }
        if !(self.grid_step > 0.0 && self.grid_step <= 0.25) {
            return Err(CliError::field("--grid", format!("step must lie in (0, 0.25] (got {})", self.grid_step)));
        }
        if self.block_len == 0 {
            return Err(CliError::field("--blocklen", "must be positive (got 0)"));
        }
        for (field, rates) in [("--ry", &self.ry), ("--rb", &self.rb)] {
            if let Some(rs) = rates {
                if rs.is_empty() {
                    return Err(CliError::field(field, "no rate given"));
                }
                if let Some(r) = rs.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
                    return Err(CliError::field(field, format!("rates must be finite and non-negative (got {r})")));
                }
            }
        }
        let bad_pi = |p: f64| !(0.0..=1.0).contains(&p);
        match &self.pi {
            PiSpec::Uniform(p) if bad_pi(*p) => {
                return Err(CliError::field("--pi", format!("must lie in [0, 1] (got {p})")));
            }
            PiSpec::PerNode(m) => {
                if let Some((id, p)) = m.iter().find(|(_, p)| bad_pi(**p)) {
                    return Err(CliError::field("--pi", format!("value for `{id}` must lie in [0, 1] (got {p})")));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Per-layer rates in nats for a tree with `layers` hidden layers. A
    /// single value applies to every layer.
    pub fn rates(&self, layers: usize) -> Result<Option<lts_core::RateTuple>, CliError> {
        let (ry, rb) = match (&self.ry, &self.rb) {
            (None, None) => return Ok(None),
            (Some(_), None) => return Err(CliError::field("--rb", "required together with --ry")),
            (None, Some(_)) => return Err(CliError::field("--ry", "required together with --rb")),
            (Some(ry), Some(rb)) => (ry, rb),
        };
        let expand = |field: &str, v: &[f64]| -> Result<Vec<f64>, CliError> {
            match v.len() {
                1 => Ok(vec![v[0]; layers]),
                n if n == layers => Ok(v.to_vec()),
                n => Err(CliError::field(field, format!("{n} rates given for a tree with {layers} hidden layers"))),
            }
        };
        let (ry, rb) = (expand("--ry", ry)?, expand("--rb", rb)?);
        let tuple = lts_core::RateTuple {
            layers: ry.into_iter().zip(rb).map(|(ry, rb)| lts_core::synthesis::LayerRate { ry, rb }).collect(),
            block_len: self.block_len,
        };
        Ok(Some(match self.units {
            Units::Nats => tuple,
            Units::Bits => tuple.from_bits(),
        }))
    }

    /// Converts a nat quantity to the reporting units.
    pub fn info(&self, nats: f64) -> f64 {
        match self.units {
            Units::Nats => nats,
            Units::Bits => nats / std::f64::consts::LN_2,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pi_forms() {
        assert_eq!(parse_pi("0.3").unwrap(), PiSpec::Uniform(0.3));
        let PiSpec::PerNode(m) = parse_pi("y1=0.5, y2=1").unwrap() else { panic!() };
        assert_eq!(m["y2"], 1.0);
        assert!(parse_pi("y1=abc").is_err());
        assert!(parse_pi("half").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 9\nsamples = 5000\nry = [0.5, 0.6]\npi = { y1 = 0.2 }\n").unwrap();
        let args = CommonArgs { config: Some(path), seed: Some(3), ..Default::default() };
        let cfg = ExperimentConfig::resolve("mi", Path::new("t.tree"), &args).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.samples, 5000);
        assert_eq!(cfg.ry, Some(vec![0.5, 0.6]));
        assert!(matches!(cfg.pi, PiSpec::PerNode(_)));
    }

    #[test]
    fn errors_name_fields() {
        let cases = [
            (CommonArgs { seed: Some(0), ..Default::default() }, "--seed"),
            (CommonArgs { grid: Some(0.5), ..Default::default() }, "--grid"),
            (CommonArgs { pi: Some("1.5".into()), ..Default::default() }, "--pi"),
            (CommonArgs { ry: Some(vec![-1.0]), ..Default::default() }, "--ry"),
            (CommonArgs { blocklen: Some(0), ..Default::default() }, "--blocklen"),
        ];
        for (args, field) in cases {
            let err = ExperimentConfig::resolve("mi", Path::new("t.tree"), &args).unwrap_err();
            assert_eq!(err.exit_code(), 1);
            assert!(err.to_string().contains(field), "{err}");
        }
    }
}
