//! Line-oriented run configuration.
//!
//! ```text
//! # comment
//! controller.A = [0.499 -0.05; 0.01 1.0]
//! controller.B = [1; 0]
//! analysis.lambdas = [0.01 0.99]
//! sim.seed = 1
//! ```
//!
//! Keys: `controller.{A,B,C,D}`, `plant.{A,B,C,D}`, `lyapunov.P`,
//! `analysis.lambdas`, `analysis.tol`, `sim.h`, `sim.seed`. Matrices list
//! rows separated by `;` and entries separated by whitespace; scalars may be
//! written bare or as `[v]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::linalg::{is_psd, Matrix, SymMatrix, DEFAULT_TOL};
use crate::sim::StateSpace;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Parsed and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Controller matrices; `dt` is left unset.
    pub controller: Option<StateSpace>,
    /// Continuous plant.
    pub plant: Option<StateSpace>,
    /// Loop-head candidate in quadratic form.
    pub p: Option<SymMatrix>,
    pub lambdas: Option<Vec<f64>>,
    pub tol: f64,
    pub h: f64,
    pub seed: u64,
}

const KEYS: &[&str] = &[
    "controller.A",
    "controller.B",
    "controller.C",
    "controller.D",
    "plant.A",
    "plant.B",
    "plant.C",
    "plant.D",
    "lyapunov.P",
    "analysis.lambdas",
    "analysis.tol",
    "sim.h",
    "sim.seed",
];

fn parse_matrix(text: &str) -> Result<Matrix, String> {
    let t = text.trim();
    let inner = match (t.strip_prefix('['), t.strip_suffix(']')) {
        (Some(_), Some(_)) => &t[1..t.len() - 1],
        (None, None) => t,
        _ => return Err("unbalanced brackets".into()),
    };
    if inner.trim().is_empty() {
        return Ok(Matrix::zeros(0, 0));
    }
    let rows: Vec<Vec<f64>> = inner
        .split(';')
        .map(|r| {
            r.split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| format!("malformed number '{v}'")))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Matrix::try_from_rows(&rows).map_err(|e| e.to_string())
}

fn scalar(key: &str, m: &Matrix) -> Result<f64, ConfigError> {
    if m.shape() != (1, 1) {
        return Err(ConfigError::Invalid(format!("{key} must be a scalar")));
    }
    Ok(m[(0, 0)])
}

fn block(raw: &BTreeMap<String, Matrix>, prefix: &str) -> Result<Option<StateSpace>, ConfigError> {
    let get = |k: &str| raw.get(&format!("{prefix}.{k}")).cloned();
    match (get("A"), get("B"), get("C"), get("D")) {
        (None, None, None, None) => Ok(None),
        (Some(a), Some(b), c, d) => {
            let n = a.rows();
            let c = c.unwrap_or_else(|| Matrix::zeros(0, n));
            let d = d.unwrap_or_else(|| Matrix::zeros(c.rows(), b.cols()));
            StateSpace::new(a, b, c, d, None)
                .map(Some)
                .map_err(|e| ConfigError::Invalid(format!("{prefix}: {e}")))
        }
        _ => Err(ConfigError::Invalid(format!("{prefix} needs at least A and B"))),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut raw: BTreeMap<String, Matrix> = BTreeMap::new();
        for (li, line) in text.lines().enumerate() {
            let err = |message: String| ConfigError::Syntax { line: li + 1, message };
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected 'key = value'".into()))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(err(format!("unknown key '{key}'")));
            }
            let m = parse_matrix(value).map_err(|m| err(format!("{key}: {m}")))?;
            if raw.insert(key.to_string(), m).is_some() {
                return Err(err(format!("duplicate key '{key}'")));
            }
        }
        let controller = block(&raw, "controller")?;
        let plant = block(&raw, "plant")?;
        let p = match raw.get("lyapunov.P") {
            None => None,
            Some(m) => {
                if !m.is_square() || m.rows() == 0 {
                    return Err(ConfigError::Invalid("lyapunov.P must be square".into()));
                }
                let sym = m.transpose().max_abs_diff(m).unwrap_or(f64::INFINITY);
                if sym > 1e-12 * m.max_abs().max(1.0) {
                    return Err(ConfigError::Invalid("lyapunov.P must be symmetric".into()));
                }
                let s = SymMatrix::from_matrix(m).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                let chk = is_psd(&s, 0.0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
                if !(chk.min_eigenvalue > 0.0) {
                    return Err(ConfigError::Invalid(format!(
                        "lyapunov.P must be positive definite (smallest eigenvalue {})",
                        chk.min_eigenvalue
                    )));
                }
                if let Some(c) = &controller {
                    if c.states() != s.dim() {
                        return Err(ConfigError::Invalid(format!(
                            "lyapunov.P is {0}x{0} but the controller has {1} states",
                            s.dim(),
                            c.states()
                        )));
                    }
                }
                Some(s)
            }
        };
        let lambdas = match raw.get("analysis.lambdas") {
            None => None,
            Some(m) => {
                if m.rows() != 1 {
                    return Err(ConfigError::Invalid("analysis.lambdas must be a single row".into()));
                }
                let l = m.row_slice(0).to_vec();
                if l.iter().any(|v| !(*v > 0.0)) {
                    return Err(ConfigError::Invalid("analysis.lambdas must be positive".into()));
                }
                if l.iter().sum::<f64>() > 1.0 + 1e-12 {
                    return Err(ConfigError::Invalid("analysis.lambdas must sum to at most 1".into()));
                }
                Some(l)
            }
        };
        let tol = match raw.get("analysis.tol") {
            None => DEFAULT_TOL,
            Some(m) => {
                let t = scalar("analysis.tol", m)?;
                if !(t >= 0.0) {
                    return Err(ConfigError::Invalid("analysis.tol must be nonnegative".into()));
                }
                t
            }
        };
        let h = match raw.get("sim.h") {
            None => 0.01,
            Some(m) => {
                let h = scalar("sim.h", m)?;
                if !(h > 0.0) {
                    return Err(ConfigError::Invalid("sim.h must be positive".into()));
                }
                h
            }
        };
        let seed = match raw.get("sim.seed") {
            None => 1,
            Some(m) => {
                let s = scalar("sim.seed", m)?;
                if s < 0.0 || s.fract() != 0.0 || s > u64::MAX as f64 {
                    return Err(ConfigError::Invalid("sim.seed must be a nonnegative integer".into()));
                }
                s as u64
            }
        };
        Ok(RunConfig {
            controller,
            plant,
            p,
            lambdas,
            tol,
            h,
            seed,
        })
    }
}

/// `[a b; c d]` with shortest round-trip numbers.
pub fn format_matrix(m: &Matrix) -> String {
    let rows: Vec<String> = (0..m.rows())
        .map(|i| {
            m.row_slice(i)
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    format!("[{}]", rows.join("; "))
}

/// A system block in config syntax under `prefix`.
pub fn format_block(prefix: &str, sys: &StateSpace) -> String {
    let mut out = String::new();
    for (k, m) in [("A", &sys.a), ("B", &sys.b), ("C", &sys.c), ("D", &sys.d)] {
        let _ = writeln!(out, "{prefix}.{k} = {}", format_matrix(m));
    }
    out
}
