//! Line-oriented `key = value` configuration with dotted sections, plus the
//! rule-specification vocabulary shared by the CLI and the experiment
//! harness.
//!
//! Value syntaxes:
//!   scalars        `0.7`, `42`, `true`
//!   vectors        `1,1` or `0.3,0.7`
//!   matrices       `0.7,0.3; 0.3,0.7` (rows separated by `;`)
//!   distributions  `(1,0):0.5; (0,1):0.5` or scalar atoms `1:0.7; 0:0.3`
//! `#` starts a comment. Keys are case-sensitive. A `schema_version` key is
//! required.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rules::{
    deterministic_rule, homogeneous_rule, nonhomogeneous_wrapper, one_hot_rule,
    power_law_perturbation, rpw_rule, AdditionRule, ResponseSpec, RowSampler, RpwParams,
};
use crate::spectral::Regime;

pub const SCHEMA_VERSION: u64 = 1;

/// Flat parsed key/value view of a config file.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn parse_err(line_no: usize, msg: impl std::fmt::Display) -> Error {
    Error::ConfigParse(format!("line {line_no}: {msg}"))
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some(eq) = line.find('=') else {
                return Err(parse_err(line_no, "expected `key = value`"));
            };
            let key = line[..eq].trim();
            let value = line[eq + 1..].trim();
            if key.is_empty() {
                return Err(parse_err(line_no, "empty key"));
            }
            if values.insert(key.to_string(), value.to_string()).is_some() {
                return Err(parse_err(line_no, format!("duplicate key `{key}`")));
            }
        }
        Ok(RawConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::ConfigParse(format!("missing key `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<Option<f64>> {
        self.get(key)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::ConfigParse(format!("`{key}`: not a number: {s}")))
            })
            .transpose()
    }

    pub fn u64(&self, key: &str) -> Result<Option<u64>> {
        self.get(key)
            .map(|s| {
                s.parse::<u64>()
                    .map_err(|_| Error::ConfigParse(format!("`{key}`: not an integer: {s}")))
            })
            .transpose()
    }

    pub fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.get(key)
            .map(|s| {
                s.parse::<bool>()
                    .map_err(|_| Error::ConfigParse(format!("`{key}`: not a bool: {s}")))
            })
            .transpose()
    }

    pub fn vector(&self, key: &str) -> Result<Option<Vec<f64>>> {
        self.get(key).map(|s| parse_vector(key, s)).transpose()
    }

    pub fn u64_list(&self, key: &str) -> Result<Option<Vec<u64>>> {
        self.get(key)
            .map(|s| {
                s.split(',')
                    .map(|p| {
                        p.trim().parse::<u64>().map_err(|_| {
                            Error::ConfigParse(format!("`{key}`: not an integer list: {s}"))
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn matrix(&self, key: &str) -> Result<Option<DMatrix<f64>>> {
        self.get(key).map(|s| parse_matrix(key, s)).transpose()
    }
}

fn parse_vector(key: &str, s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::ConfigParse(format!("`{key}`: not a vector: {s}")))
        })
        .collect()
}

fn parse_matrix(key: &str, s: &str) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> =
        s.split(';').map(|row| parse_vector(key, row)).collect::<Result<_>>()?;
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::ConfigParse(format!("`{key}`: ragged or empty matrix")));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(flat.len() / cols, cols, &flat))
}

/// Parse `(v1,v2,...):w; ...` or scalar `x:w; ...` atom lists.
fn parse_atoms(key: &str, s: &str) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut out = Vec::new();
    for part in s.split(';') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (value_str, weight_str) = if let Some(stripped) = part.strip_prefix('(') {
            let close = stripped.find(')').ok_or_else(|| {
                Error::ConfigParse(format!("`{key}`: unclosed parenthesis in `{part}`"))
            })?;
            let rest = stripped[close + 1..].trim();
            let rest = rest.strip_prefix(':').ok_or_else(|| {
                Error::ConfigParse(format!("`{key}`: expected `(vector):weight` in `{part}`"))
            })?;
            (&stripped[..close], rest)
        } else {
            let colon = part.rfind(':').ok_or_else(|| {
                Error::ConfigParse(format!("`{key}`: expected `value:weight` in `{part}`"))
            })?;
            (&part[..colon], &part[colon + 1..])
        };
        let value = parse_vector(key, value_str)?;
        let weight = weight_str
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::ConfigParse(format!("`{key}`: bad weight in `{part}`")))?;
        out.push((value, weight));
    }
    if out.is_empty() {
        return Err(Error::ConfigParse(format!("`{key}`: empty atom list")));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Rule specifications
// ---------------------------------------------------------------------------

/// Declarative rule description, buildable into an `AdditionRule`.
#[derive(Debug, Clone, Serialize)]
pub enum RuleSpec {
    Rpw { d1: ResponseSpec, d2: ResponseSpec },
    Homogeneous { rows: Vec<Vec<(Vec<f64>, f64)>> },
    Deterministic { h: Vec<Vec<f64>> },
    OneHot { weights: Vec<f64> },
    Nonhomogeneous { base: Box<RuleSpec>, exponent: f64, direction: Vec<Vec<f64>> },
}

impl RuleSpec {
    pub fn rpw_dichotomous(p1: f64, p2: f64) -> Self {
        RuleSpec::Rpw {
            d1: ResponseSpec::Dichotomous { p: p1 },
            d2: ResponseSpec::Dichotomous { p: p2 },
        }
    }

    pub fn build(&self) -> Result<Box<dyn AdditionRule>> {
        match self {
            RuleSpec::Rpw { d1, d2 } => {
                Ok(Box::new(rpw_rule(RpwParams { d1: d1.clone(), d2: d2.clone() })?))
            }
            RuleSpec::Homogeneous { rows } => {
                let samplers = rows.iter().map(|r| RowSampler::new(r.clone())).collect();
                Ok(Box::new(homogeneous_rule(samplers)?))
            }
            RuleSpec::Deterministic { h } => {
                let m = rows_to_matrix(h)?;
                Ok(Box::new(deterministic_rule(&m)?))
            }
            RuleSpec::OneHot { weights } => Ok(Box::new(one_hot_rule(weights)?)),
            RuleSpec::Nonhomogeneous { base, exponent, direction } => {
                let base_rule = base.build()?;
                let dir = rows_to_matrix(direction)?;
                let shift_bound = dir.abs().max();
                let pert =
                    power_law_perturbation(base_rule.declared_mean().clone(), dir, *exponent)?;
                Ok(Box::new(nonhomogeneous_wrapper(base_rule, pert, shift_bound)))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            RuleSpec::Rpw { d1, d2 } => {
                format!("rpw(p1={:.6}, p2={:.6})", d1.mean(), d2.mean())
            }
            RuleSpec::Homogeneous { rows } => format!("homogeneous(d={})", rows.len()),
            RuleSpec::Deterministic { h } => format!("deterministic(d={})", h.len()),
            RuleSpec::OneHot { weights } => format!("one_hot(d={})", weights.len()),
            RuleSpec::Nonhomogeneous { base, exponent, .. } => {
                format!("nonhomogeneous({}, exponent={exponent})", base.describe())
            }
        }
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::ConfigParse("matrix rows must be square and nonempty".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
    Ok(DMatrix::from_row_slice(d, d, &flat))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn parse_response(raw: &RawConfig, prefix: &str, key: &str) -> Result<Option<ResponseSpec>> {
    if let Some(s) = raw.get(&format!("{prefix}.{key}")) {
        let atoms = parse_atoms(key, s)?;
        let flat: Vec<(f64, f64)> = atoms
            .into_iter()
            .map(|(v, w)| {
                if v.len() != 1 {
                    Err(Error::ConfigParse(format!("`{prefix}.{key}`: responses are scalar")))
                } else {
                    Ok((v[0], w))
                }
            })
            .collect::<Result<_>>()?;
        return Ok(Some(ResponseSpec::Discrete { atoms: flat }));
    }
    Ok(None)
}

/// Read `<prefix>.kind` and the matching parameters into a `RuleSpec`.
pub fn rule_spec_from(raw: &RawConfig, prefix: &str) -> Result<RuleSpec> {
    let kind = raw.require(&format!("{prefix}.kind"))?;
    match kind {
        "rpw" => {
            let d1 = match parse_response(raw, prefix, "d1")? {
                Some(spec) => spec,
                None => ResponseSpec::Dichotomous {
                    p: raw
                        .f64(&format!("{prefix}.p1"))?
                        .ok_or_else(|| Error::ConfigParse(format!("`{prefix}.p1` required")))?,
                },
            };
            let d2 = match parse_response(raw, prefix, "d2")? {
                Some(spec) => spec,
                None => ResponseSpec::Dichotomous {
                    p: raw
                        .f64(&format!("{prefix}.p2"))?
                        .ok_or_else(|| Error::ConfigParse(format!("`{prefix}.p2` required")))?,
                },
            };
            Ok(RuleSpec::Rpw { d1, d2 })
        }
        "deterministic" => {
            let h = raw
                .matrix(&format!("{prefix}.h"))?
                .ok_or_else(|| Error::ConfigParse(format!("`{prefix}.h` required")))?;
            Ok(RuleSpec::Deterministic { h: matrix_to_rows(&h) })
        }
        "one_hot" => {
            let v = raw
                .vector(&format!("{prefix}.v"))?
                .ok_or_else(|| Error::ConfigParse(format!("`{prefix}.v` required")))?;
            Ok(RuleSpec::OneHot { weights: v })
        }
        "homogeneous" => {
            let mut rows = Vec::new();
            for q in 1.. {
                match raw.get(&format!("{prefix}.row{q}")) {
                    Some(s) => rows.push(parse_atoms(&format!("{prefix}.row{q}"), s)?),
                    None => break,
                }
            }
            if rows.is_empty() {
                return Err(Error::ConfigParse(format!("`{prefix}.row1` required")));
            }
            Ok(RuleSpec::Homogeneous { rows })
        }
        "nonhomogeneous" => {
            let base = rule_spec_from(raw, &format!("{prefix}.base"))?;
            let exponent = raw
                .f64(&format!("{prefix}.perturbation.exponent"))?
                .ok_or_else(|| Error::ConfigParse("perturbation.exponent required".into()))?;
            let dir = raw
                .matrix(&format!("{prefix}.perturbation.matrix"))?
                .ok_or_else(|| Error::ConfigParse("perturbation.matrix required".into()))?;
            Ok(RuleSpec::Nonhomogeneous {
                base: Box::new(base),
                exponent,
                direction: matrix_to_rows(&dir),
            })
        }
        other => Err(Error::ConfigParse(format!("unknown rule kind `{other}`"))),
    }
}

// ---------------------------------------------------------------------------
// Full experiment configuration file
// ---------------------------------------------------------------------------

/// Everything a config file can specify. Sections unused by a given
/// subcommand are optional.
#[derive(Debug, Clone)]
pub struct FileConfig {
    pub rule: RuleSpec,
    pub y0: Vec<f64>,
    pub seed: u64,
    pub threads: usize,
    pub deterministic: bool,
    pub quad_tol: f64,
    pub mc_horizons: Option<Vec<u64>>,
    pub mc_replicates: Option<u64>,
    pub mc_cov_rel_tol: f64,
    pub mc_ks_alpha: f64,
    pub mc_expected_regime: Option<Regime>,
    pub limit_paths: u64,
    pub limit_grid_points: usize,
    pub limit_t_max: f64,
    pub limit_rel_tol: f64,
    pub sim_n: u64,
    pub sim_stride: Option<u64>,
    pub lil_horizons: Option<Vec<u64>>,
    pub lil_replicates: u64,
    pub lil_process: String,
    pub lil_component: usize,
}

pub fn load_config(text: &str) -> Result<FileConfig> {
    let raw = RawConfig::parse(text)?;
    let version = raw.u64("schema_version")?.ok_or_else(|| {
        Error::ConfigParse("missing `schema_version` (current version is 1)".into())
    })?;
    if version != SCHEMA_VERSION {
        return Err(Error::ConfigParse(format!("unsupported schema_version {version}")));
    }
    let rule = rule_spec_from(&raw, "rule")?;
    let y0 = raw
        .vector("urn.y0")?
        .ok_or_else(|| Error::ConfigParse("missing `urn.y0`".into()))?;
    let regime = match raw.get("mc.expected_regime") {
        None => None,
        Some("subcritical") => Some(Regime::Subcritical),
        Some("critical") => Some(Regime::Critical),
        Some(other) => {
            return Err(Error::ConfigParse(format!("unknown expected regime `{other}`")))
        }
    };
    Ok(FileConfig {
        rule,
        y0,
        seed: raw.u64("seed")?.unwrap_or(0),
        threads: raw.u64("threads")?.unwrap_or(0) as usize,
        deterministic: raw.bool("deterministic")?.unwrap_or(false),
        quad_tol: raw.f64("gamma.quad_tol")?.unwrap_or(crate::covariance::DEFAULT_QUAD_TOL),
        mc_horizons: raw.u64_list("mc.horizons")?,
        mc_replicates: raw.u64("mc.replicates")?,
        mc_cov_rel_tol: raw.f64("mc.cov_rel_tol")?.unwrap_or(0.05),
        mc_ks_alpha: raw.f64("mc.ks_alpha")?.unwrap_or(0.001),
        mc_expected_regime: regime,
        limit_paths: raw.u64("limit.paths")?.unwrap_or(10_000),
        limit_grid_points: raw.u64("limit.grid_points")?.unwrap_or(4096) as usize,
        limit_t_max: raw.f64("limit.t_max")?.unwrap_or(1.0),
        limit_rel_tol: raw.f64("limit.rel_tol")?.unwrap_or(0.03),
        sim_n: raw.u64("sim.n")?.unwrap_or(1000),
        sim_stride: raw.u64("sim.checkpoint_stride")?.filter(|&s| s > 0),
        lil_horizons: raw.u64_list("lil.horizons")?,
        lil_replicates: raw.u64("lil.replicates")?.unwrap_or(100),
        lil_process: raw.get("lil.process").unwrap_or("n").to_string(),
        lil_component: raw.u64("lil.component")?.unwrap_or(1) as usize,
    })
}

/// Read a matrix from CSV text: one row per line, comma-separated decimals.
pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|p| {
                p.trim().parse::<f64>().map_err(|_| {
                    Error::ConfigParse(format!("csv line {}: not a number: {p}", i + 1))
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    let cols = rows.first().map(|r| r.len()).unwrap_or(0);
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::ConfigParse("csv: ragged or empty matrix".into()));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(flat.len() / cols, cols, &flat))
}
