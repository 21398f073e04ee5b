//! Forward and backward propagation of ellipsoid facts through a program.
//!
//! The loop-head candidate `E_P` is checked for inductiveness, not inferred:
//! the analysis pushes it once around the loop body and compares.
//!
//! ```
//! use ctrlcert::analyzer::{analyze_forward, AnalysisConfig};
//! use ctrlcert::lang::parse;
//! use ctrlcert::linalg::SymMatrix;
//!
//! let program = parse(
//!     "x := 0;\nloop {\n  input y;\n  if (y > 1) { y := 1; }\n  if (y < -1) { y := -1; }\n  x := 0.5*x + 0.5*y;\n}\n",
//! )
//! .unwrap();
//! let cfg = AnalysisConfig::new(SymMatrix::identity(1), vec![0.5, 0.5]).unwrap();
//! let out = analyze_forward(&program, &cfg).unwrap();
//! assert!(out.inductive);
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::certifier::{check_sprocedure, find_witness, search_multipliers, CertError, Certificate, Obligation};
use crate::ellipsoid::{
    contains, coord_bound, from_quadform, functional_bound, merge_product, EllipsoidError, ProductFactor, QuadForm,
    ScalarBound, ShapeEllipsoid,
};
use crate::lang::fact::Fact;
use crate::lang::{emit_annotated, run_body, run_init, AffineExpr, AnnotatedProgram, Cmp, Guard, Program, RuntimeError, Stmt, StmtKind};
use crate::linalg::{is_psd, sym_eigen, sym_inverse, LinalgError, Matrix, SymMatrix, DEFAULT_TOL};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("line {line}: unbounded operand '{var}'")]
    UnboundedOperand { var: String, line: usize },
    #[error("line {line}: unsupported pattern: {message}")]
    Unsupported { line: usize, message: String },
    #[error("nothing to merge: no bounded scalar is available")]
    NothingToMerge,
    #[error("initial state is outside the loop-head ellipsoid (V = {value})")]
    InitOutside { value: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn unsupported(line: usize, message: impl Into<String>) -> AnalysisError {
    AnalysisError::Unsupported {
        line,
        message: message.into(),
    }
}

/// Loop-head candidate and multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    /// Quadratic form of the candidate invariant `E_P`.
    pub p: SymMatrix,
    pub lambdas: Vec<f64>,
    pub tol: f64,
    /// Replace `lambdas` by the best grid multipliers when they certify.
    pub search_lambdas: bool,
}

impl AnalysisConfig {
    pub fn new(p: SymMatrix, lambdas: Vec<f64>) -> Result<Self, AnalysisError> {
        let chk = is_psd(&p, 0.0)?;
        if !(chk.min_eigenvalue > 0.0) {
            return Err(AnalysisError::Config(format!(
                "P must be positive definite (smallest eigenvalue {})",
                chk.min_eigenvalue
            )));
        }
        if lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(AnalysisError::Config("multipliers must be positive".into()));
        }
        if lambdas.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(AnalysisError::Config("multipliers must sum to at most 1".into()));
        }
        Ok(AnalysisConfig {
            p,
            lambdas,
            tol: DEFAULT_TOL,
            search_lambdas: false,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_search(mut self, search: bool) -> Self {
        self.search_lambdas = search;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forward" => Ok(Direction::Forward),
            "backward" => Ok(Direction::Backward),
            other => Err(format!("unknown direction '{other}' (expected forward or backward)")),
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Forward => "forward",
            Direction::Backward => "backward",
        })
    }
}

/// Knowledge about a variable kept outside the joint ellipsoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    Unconstrained,
    Point(f64),
    /// Closed range; either end may be infinite.
    Interval { lo: f64, hi: f64 },
}

impl Scalar {
    fn range(self) -> (f64, f64) {
        match self {
            Scalar::Unconstrained => (f64::NEG_INFINITY, f64::INFINITY),
            Scalar::Point(k) => (k, k),
            Scalar::Interval { lo, hi } => (lo, hi),
        }
    }

    fn from_range(lo: f64, hi: f64) -> Scalar {
        if lo == hi {
            Scalar::Point(lo)
        } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
            Scalar::Unconstrained
        } else {
            Scalar::Interval { lo, hi }
        }
    }

    fn hull(self, other: Scalar) -> Scalar {
        let (a, b) = (self.range(), other.range());
        Scalar::from_range(a.0.min(b.0), a.1.max(b.1))
    }

    /// `v² ≤ c` when both ends are finite.
    pub fn square_bound(self) -> Option<f64> {
        match self {
            Scalar::Interval { lo, hi } if lo.is_finite() && hi.is_finite() => Some((lo * lo).max(hi * hi)),
            _ => None,
        }
    }
}

/// Joint ellipsoid with the exact quadratic form when one is known.
#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub shape: ShapeEllipsoid,
    pub phi: Option<SymMatrix>,
}

impl Joint {
    fn vars(&self) -> &[String] {
        self.shape.vars()
    }

    fn quadform(&self) -> Result<QuadForm, EllipsoidError> {
        match &self.phi {
            Some(phi) => QuadForm::new(self.vars().to_vec(), phi.clone()),
            None => self.shape.to_quadform(),
        }
    }
}

/// Abstract state at a program point.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractState {
    pub joint: Option<Joint>,
    pub scalars: BTreeMap<String, Scalar>,
    pub reachable: bool,
}

impl AbstractState {
    pub fn top() -> Self {
        AbstractState {
            joint: None,
            scalars: BTreeMap::new(),
            reachable: true,
        }
    }

    pub fn unreachable() -> Self {
        AbstractState {
            reachable: false,
            ..Self::top()
        }
    }

    /// `vars ∈ E_P`.
    pub fn in_ellipsoid(vars: Vec<String>, p: &SymMatrix) -> Result<Self, AnalysisError> {
        let q = QuadForm::new(vars, p.clone())?;
        Ok(AbstractState {
            joint: Some(Joint {
                shape: from_quadform(&q)?,
                phi: Some(p.clone()),
            }),
            ..Self::top()
        })
    }

    fn in_joint(&self, var: &str) -> bool {
        self.joint.as_ref().is_some_and(|j| j.vars().iter().any(|v| v == var))
    }

    pub fn scalar(&self, var: &str) -> Scalar {
        self.scalars.get(var).copied().unwrap_or(Scalar::Unconstrained)
    }

    /// Facts describing the state, joint ellipsoid first.
    pub fn facts(&self) -> Vec<Fact> {
        if !self.reachable {
            return vec![Fact::False];
        }
        let mut out = Vec::new();
        if let Some(j) = &self.joint {
            out.push(match &j.phi {
                Some(phi) => Fact::InE(QuadForm::new(j.vars().to_vec(), phi.clone()).expect("cached form is valid")),
                None => Fact::InG(j.shape.clone()),
            });
        }
        for (var, s) in &self.scalars {
            let var = var.clone();
            match *s {
                Scalar::Unconstrained => {}
                Scalar::Point(value) => out.push(Fact::Eq { var, value }),
                Scalar::Interval { lo, hi } if lo == -hi && hi.is_finite() => out.push(Fact::Sq { var, bound: hi * hi }),
                Scalar::Interval { lo, hi } => {
                    if lo.is_finite() {
                        out.push(Fact::Ge { var: var.clone(), value: lo });
                    }
                    if hi.is_finite() {
                        out.push(Fact::Le { var, value: hi });
                    }
                }
            }
        }
        out
    }

    /// Best-effort abstraction of a fact list. Ellipsoid facts after the
    /// first one, and singular quadratic forms, are dropped.
    pub fn from_facts(facts: &[Fact]) -> AbstractState {
        let mut st = AbstractState::top();
        let narrow = |st: &mut AbstractState, var: &str, lo: f64, hi: f64| {
            let (a, b) = st.scalar(var).range();
            let (lo, hi) = (a.max(lo), b.min(hi));
            if lo > hi {
                st.reachable = false;
            }
            st.scalars.insert(var.to_string(), Scalar::from_range(lo, hi));
        };
        for f in facts {
            match f {
                Fact::True => {}
                Fact::False => st.reachable = false,
                Fact::InE(q) | Fact::Quad(q) => {
                    if st.joint.is_none() {
                        if let Ok(shape) = from_quadform(q) {
                            st.joint = Some(Joint {
                                shape,
                                phi: Some(q.form().clone()),
                            });
                        }
                    }
                }
                Fact::InG(g) => {
                    if st.joint.is_none() {
                        st.joint = Some(Joint {
                            shape: g.clone(),
                            phi: None,
                        });
                    }
                }
                Fact::Sq { var, bound } => {
                    let r = bound.max(0.0).sqrt();
                    narrow(&mut st, var, -r, r);
                }
                Fact::Eq { var, value } => narrow(&mut st, var, *value, *value),
                Fact::Le { var, value } => narrow(&mut st, var, f64::NEG_INFINITY, *value),
                Fact::Ge { var, value } => narrow(&mut st, var, *value, f64::INFINITY),
            }
        }
        if let Some(j) = &st.joint {
            for v in j.vars() {
                st.scalars.remove(v);
            }
        }
        if !st.reachable {
            return AbstractState::unreachable();
        }
        st
    }
}

/// `v := e`. Point-valued operands are folded into constants; every other
/// operand must be tracked in the joint ellipsoid.
pub fn transfer_assign(state: &AbstractState, var: &str, expr: &AffineExpr, line: usize) -> Result<AbstractState, AnalysisError> {
    if !state.reachable {
        return Ok(state.clone());
    }
    let joint_vars: Vec<String> = state.joint.as_ref().map_or_else(Vec::new, |j| j.vars().to_vec());
    let mut coef = vec![0.0; joint_vars.len()];
    let mut constant = 0.0;
    for t in &expr.terms {
        match &t.var {
            None => constant += t.coef,
            Some(w) => {
                if let Some(i) = joint_vars.iter().position(|v| v == w) {
                    coef[i] += t.coef;
                } else {
                    match state.scalar(w) {
                        Scalar::Point(k) => constant += t.coef * k,
                        Scalar::Interval { lo, hi } if lo.is_finite() && hi.is_finite() => {
                            return Err(unsupported(line, format!("operand '{w}' must be merged into the joint ellipsoid first")))
                        }
                        _ => {
                            return Err(AnalysisError::UnboundedOperand {
                                var: w.clone(),
                                line,
                            })
                        }
                    }
                }
            }
        }
    }
    let mut out = state.clone();
    if coef.iter().all(|c| *c == 0.0) {
        if out.in_joint(var) {
            let keep: Vec<String> = joint_vars.iter().filter(|v| *v != var).cloned().collect();
            out = project(&out, &keep.iter().chain(out.scalars.keys()).cloned().collect::<Vec<_>>())?;
        }
        out.scalars.insert(var.to_string(), Scalar::Point(constant));
        return Ok(out);
    }
    if constant != 0.0 {
        return Err(unsupported(line, "affine offset on a tracked expression (ellipsoids are centred at the origin)"));
    }
    let joint = out.joint.take().expect("nonzero coefficients imply a joint");
    let n = joint_vars.len();
    let (m, new_vars) = match joint_vars.iter().position(|v| v == var) {
        Some(i) => {
            let mut m = Matrix::identity(n);
            for (j, c) in coef.iter().enumerate() {
                m[(i, j)] = *c;
            }
            (m, joint_vars.clone())
        }
        None => {
            let m = Matrix::identity(n).vstack(&Matrix::row(&coef))?;
            let mut vars = joint_vars.clone();
            vars.push(var.to_string());
            (m, vars)
        }
    };
    out.scalars.remove(var);
    out.joint = Some(Joint {
        shape: crate::ellipsoid::affine_image(&joint.shape, &m, new_vars)?,
        phi: None,
    });
    Ok(out)
}

/// `input v`: `v` becomes unconstrained and leaves the joint ellipsoid.
pub fn transfer_input(state: &AbstractState, var: &str) -> Result<AbstractState, AnalysisError> {
    if !state.reachable {
        return Ok(state.clone());
    }
    let mut out = state.clone();
    if let Some(j) = &state.joint {
        if j.vars().iter().any(|v| v == var) {
            let keep: Vec<String> = j.vars().iter().filter(|v| *v != var).cloned().collect();
            out.joint = if keep.is_empty() {
                None
            } else {
                Some(Joint {
                    shape: j.shape.project(&keep)?,
                    phi: None,
                })
            };
        }
    }
    out.scalars.insert(var.to_string(), Scalar::Unconstrained);
    Ok(out)
}

fn refine(s: Scalar, cmp: Cmp, c: f64) -> Option<Scalar> {
    let (lo, hi) = s.range();
    let (lo, hi, empty) = match cmp {
        Cmp::Gt => (lo.max(c), hi, hi <= c),
        Cmp::Ge => (lo.max(c), hi, hi < c),
        Cmp::Lt => (lo, hi.min(c), lo >= c),
        Cmp::Le => (lo, hi.min(c), lo > c),
    };
    (!empty).then(|| Scalar::from_range(lo, hi))
}

fn negate(cmp: Cmp) -> Cmp {
    match cmp {
        Cmp::Gt => Cmp::Le,
        Cmp::Ge => Cmp::Lt,
        Cmp::Lt => Cmp::Ge,
        Cmp::Le => Cmp::Gt,
    }
}

/// `if (v cmp c) { … }`: both branches refined on `v`, the then-branch run
/// through its constant assignments, then joined by interval hull.
pub fn transfer_guard_join(state: &AbstractState, guard: &Guard, line: usize) -> Result<AbstractState, AnalysisError> {
    if !state.reachable {
        return Ok(state.clone());
    }
    if state.in_joint(&guard.var) {
        return Err(unsupported(line, format!("guard on '{}', which is tracked in the joint ellipsoid", guard.var)));
    }
    let cur = state.scalar(&guard.var);
    let then_state = match refine(cur, guard.cmp, guard.value) {
        None => None,
        Some(s) => {
            let mut st = state.clone();
            st.scalars.insert(guard.var.clone(), s);
            for inner in &guard.body {
                match &inner.kind {
                    StmtKind::Skip => {}
                    StmtKind::Assign { var, expr } => {
                        if st.in_joint(var) || expr.vars().iter().any(|v| st.in_joint(v)) {
                            return Err(unsupported(inner.line, "guard bodies may only assign constants to scalars"));
                        }
                        st = transfer_assign(&st, var, expr, inner.line)?;
                        if !matches!(st.scalar(var), Scalar::Point(_)) {
                            return Err(unsupported(inner.line, "guard bodies may only assign constants to scalars"));
                        }
                    }
                    _ => return Err(unsupported(inner.line, "guard bodies may only contain assignments and skip")),
                }
            }
            Some(st)
        }
    };
    let else_state = refine(cur, negate(guard.cmp), guard.value).map(|s| {
        let mut st = state.clone();
        st.scalars.insert(guard.var.clone(), s);
        st
    });
    Ok(match (then_state, else_state) {
        (None, None) => AbstractState::unreachable(),
        (Some(t), None) => t,
        (None, Some(e)) => e,
        (Some(t), Some(e)) => {
            let mut out = e.clone();
            let keys: Vec<String> = t.scalars.keys().chain(e.scalars.keys()).cloned().collect();
            for k in keys {
                out.scalars.insert(k.clone(), t.scalar(&k).hull(e.scalar(&k)));
            }
            out
        }
    })
}

/// Replaces the joint ellipsoid and every finitely bounded scalar by their
/// weighted product `merge_product(…; lambdas)`.
pub fn weaken_to_product(state: &AbstractState, lambdas: &[f64]) -> Result<AbstractState, AnalysisError> {
    if !state.reachable {
        return Ok(state.clone());
    }
    let mut factors = Vec::new();
    if let Some(j) = &state.joint {
        factors.push(ProductFactor::Quad(j.quadform()?));
    }
    let mut merged = Vec::new();
    for (var, s) in &state.scalars {
        if let Some(bound) = s.square_bound() {
            factors.push(ProductFactor::Bound(ScalarBound::Square { var: var.clone(), bound }));
            merged.push(var.clone());
        }
    }
    if merged.is_empty() {
        return Err(AnalysisError::NothingToMerge);
    }
    let q = merge_product(&factors, lambdas)?;
    let mut out = state.clone();
    for v in &merged {
        out.scalars.remove(v);
    }
    out.joint = Some(Joint {
        shape: from_quadform(&q)?,
        phi: Some(q.form().clone()),
    });
    Ok(out)
}

/// Keeps only `keep` (joint variables in the order given).
pub fn project(state: &AbstractState, keep: &[String]) -> Result<AbstractState, AnalysisError> {
    if !state.reachable {
        return Ok(state.clone());
    }
    let mut out = state.clone();
    out.scalars.retain(|k, _| keep.contains(k));
    if let Some(j) = &state.joint {
        let kept: Vec<String> = keep.iter().filter(|v| j.vars().contains(v)).cloned().collect();
        out.joint = if kept.is_empty() {
            None
        } else if kept.as_slice() == j.vars() {
            Some(j.clone())
        } else {
            Some(Joint {
                shape: j.shape.project(&kept)?,
                phi: None,
            })
        };
    }
    Ok(out)
}

/// Applies one statement without weakening.
pub fn transfer_stmt(state: &AbstractState, stmt: &Stmt) -> Result<AbstractState, AnalysisError> {
    match &stmt.kind {
        StmtKind::Assign { var, expr } => transfer_assign(state, var, expr, stmt.line),
        StmtKind::Input(v) => transfer_input(state, v),
        StmtKind::Guard(g) => transfer_guard_join(state, g, stmt.line),
        StmtKind::Skip => Ok(state.clone()),
        StmtKind::Output(e) => {
            if state.reachable {
                for v in e.vars() {
                    if !state.in_joint(v) && !matches!(state.scalar(v), Scalar::Point(_)) {
                        return match state.scalar(v).square_bound() {
                            Some(_) => Err(unsupported(stmt.line, format!("operand '{v}' must be merged into the joint ellipsoid first"))),
                            None => Err(AnalysisError::UnboundedOperand {
                                var: v.to_string(),
                                line: stmt.line,
                            }),
                        };
                    }
                }
            }
            Ok(state.clone())
        }
    }
}

/// True when `stmt` reads a variable known only through a finite interval.
pub fn needs_weakening(state: &AbstractState, stmt: &Stmt) -> bool {
    let expr = match &stmt.kind {
        StmtKind::Assign { expr, .. } | StmtKind::Output(expr) => expr,
        _ => return false,
    };
    state.reachable
        && expr
            .vars()
            .iter()
            .any(|v| !state.in_joint(v) && state.scalar(v).square_bound().is_some())
}

/// Substitution `Φ' = MᵀΦM` for `var := expr`.
pub fn wp_assign(phi: &QuadForm, var: &str, expr: &AffineExpr) -> Result<QuadForm, AnalysisError> {
    let Some(pos) = phi.vars().iter().position(|v| v == var) else {
        return Ok(phi.clone());
    };
    if expr.constant_part() != 0.0 {
        return Err(unsupported(0, format!("affine offset in the assignment to '{var}'")));
    }
    let mut new_vars: Vec<String> = phi.vars().iter().filter(|v| *v != var).cloned().collect();
    for v in expr.vars() {
        if !new_vars.iter().any(|n| n == v) {
            new_vars.push(v.to_string());
        }
    }
    let n_old = phi.dim();
    let mut m = Matrix::zeros(n_old, new_vars.len());
    for (i, v) in phi.vars().iter().enumerate() {
        if i == pos {
            for w in expr.vars() {
                let j = new_vars.iter().position(|n| n == w).expect("collected above");
                m[(i, j)] = expr.coefficient(w);
            }
        } else {
            let j = new_vars.iter().position(|n| n == v).expect("kept above");
            m[(i, j)] = 1.0;
        }
    }
    Ok(QuadForm::new(new_vars, phi.form().congruence_t(&m)?)?)
}

/// Weakest precondition of `phi` through a statement.
pub fn wp_stmt(phi: &QuadForm, stmt: &Stmt) -> Result<QuadForm, AnalysisError> {
    match &stmt.kind {
        StmtKind::Skip | StmtKind::Output(_) => Ok(phi.clone()),
        StmtKind::Input(v) => {
            if phi.vars().contains(v) {
                Err(unsupported(stmt.line, format!("'{v}' is read from input after the point where it is constrained")))
            } else {
                Ok(phi.clone())
            }
        }
        StmtKind::Assign { var, expr } => wp_assign(phi, var, expr).map_err(|e| match e {
            AnalysisError::Unsupported { message, .. } => unsupported(stmt.line, message),
            other => other,
        }),
        StmtKind::Guard(_) => Err(unsupported(stmt.line, "guards after the weakening point")),
    }
}

/// A one-iteration counterexample: a state in `E_P` and inputs whose
/// successor leaves `E_P`.
#[derive(Debug, Clone, PartialEq)]
pub struct Counterexample {
    pub state: Vec<(String, f64)>,
    pub inputs: Vec<f64>,
    pub v_before: f64,
    pub v_after: f64,
    /// Confirmed by running the interpreter for one iteration.
    pub confirmed: bool,
}

impl Counterexample {
    pub fn values(&self) -> Vec<f64> {
        self.state.iter().map(|(_, v)| *v).chain(self.inputs.iter().copied()).collect()
    }
}

/// Result of [`analyze_forward`] or [`analyze_backward`].
#[derive(Debug, Clone)]
pub struct AnalysisOutcome {
    pub direction: Direction,
    pub annotated: AnnotatedProgram,
    pub listing: String,
    pub inductive: bool,
    pub margin: f64,
    /// Multipliers actually used.
    pub lambdas: Vec<f64>,
    /// Source line where the verdict is decided.
    pub check_line: usize,
    pub witness: Option<Counterexample>,
    /// When no concrete counterexample was confirmed: a point that only the
    /// relaxation rejects. Forward gives a state-space point of the image
    /// outside `E_P`; backward a point over the obligation variables.
    pub relaxation_witness: Option<Vec<f64>>,
    pub bounds: Vec<(String, f64)>,
    /// Loop-body image of the invariant, over the state variables.
    pub final_shape: Option<ShapeEllipsoid>,
    /// The implication discharged by the S-procedure.
    pub obligation: Option<Obligation>,
    pub certificate: Option<Certificate>,
}

impl AnalysisOutcome {
    /// CSV `variable,bound`.
    pub fn bounds_csv(&self) -> String {
        let mut out = String::from("variable,bound\n");
        for (name, b) in &self.bounds {
            out.push_str(&format!("{name},{}\n", crate::fmt::full(*b)));
        }
        out
    }
}

/// Everything the forward pass learns on the way around the loop.
struct ForwardPass {
    facts: Vec<Vec<Fact>>,
    state_vars: Vec<String>,
    /// Body index of the first weakening and the state just before it.
    weakening: Option<(usize, AbstractState)>,
    final_shape: ShapeEllipsoid,
    /// Index of the first trailing `skip`, or the body length.
    trailing: usize,
    output_bounds: Vec<(String, f64)>,
}

fn output_name(e: &AffineExpr) -> String {
    format!("output {e}")
}

/// True when `var` is read by `body[from..]` before being written.
fn live_after(body: &[Stmt], from: usize, var: &str) -> bool {
    for s in &body[from..] {
        if s.reads().contains(&var) {
            return true;
        }
        if s.writes() == Some(var) {
            return false;
        }
    }
    false
}

fn state_vars_checked(program: &Program, cfg: &AnalysisConfig) -> Result<Vec<String>, AnalysisError> {
    let vars = program.state_vars();
    if vars.is_empty() {
        return Err(AnalysisError::Config("the program initializes no state variables".into()));
    }
    if vars.len() != cfg.p.dim() {
        return Err(AnalysisError::Config(format!(
            "P is {0}x{0} but the program has {1} state variables ({2})",
            cfg.p.dim(),
            vars.len(),
            vars.join(", ")
        )));
    }
    Ok(vars)
}

/// Embeds the joint ellipsoid into the state tuple, with zero points as
/// flat directions.
fn state_shape(st: &AbstractState, state_vars: &[String], line: usize) -> Result<ShapeEllipsoid, AnalysisError> {
    let n = state_vars.len();
    let mut r = Matrix::zeros(n, n);
    if st.reachable {
        for v in state_vars {
            if !st.in_joint(v) {
                match st.scalar(v) {
                    Scalar::Point(k) if k == 0.0 => {}
                    _ => return Err(unsupported(line, format!("state variable '{v}' is not tracked at the end of the body"))),
                }
            }
        }
        if let Some(j) = &st.joint {
            let idx: Vec<usize> = j
                .vars()
                .iter()
                .map(|v| state_vars.iter().position(|s| s == v).expect("projected onto state"))
                .collect();
            for (a, &i) in idx.iter().enumerate() {
                for (b, &k) in idx.iter().enumerate() {
                    r[(i, k)] = j.shape.shape()[(a, b)];
                }
            }
        }
    }
    Ok(ShapeEllipsoid::new(state_vars.to_vec(), SymMatrix::from_matrix(&r)?)?)
}

fn forward_pass(program: &Program, cfg: &AnalysisConfig, lambdas: &[f64]) -> Result<ForwardPass, AnalysisError> {
    let state_vars = state_vars_checked(program, cfg)?;
    let mut facts = vec![Vec::new(); program.point_count()];

    let mut st = AbstractState::top();
    for (k, s) in program.init.iter().enumerate() {
        facts[k] = st.facts();
        st = transfer_stmt(&st, s)?;
    }
    let mut z0 = Vec::new();
    for v in &state_vars {
        match st.scalar(v) {
            Scalar::Point(k) => z0.push(k),
            _ => return Err(unsupported(program.loop_line, format!("state variable '{v}' must be initialized to a constant"))),
        }
    }
    let v0 = cfg.p.quad(&z0);
    if v0 > 1.0 + cfg.tol * cfg.p.as_matrix().norm_inf().max(1.0) {
        return Err(AnalysisError::InitOutside { value: v0 });
    }
    let seed = AbstractState::in_ellipsoid(state_vars.clone(), &cfg.p)?;
    facts[program.loop_head_point()] = seed.facts();

    let body = &program.body;
    let trailing = body
        .iter()
        .rposition(|s| !matches!(s.kind, StmtKind::Skip))
        .map_or(0, |i| i + 1);
    let mut st = seed;
    let mut weakening = None;
    let mut output_bounds = Vec::new();
    for k in 0..body.len() {
        let s = &body[k];
        if k == trailing {
            st = project(&st, &state_vars)?;
        }
        facts[program.body_point(k)] = st.facts();
        if k >= trailing {
            continue;
        }
        let weaken_here = needs_weakening(&st, s)
            || (matches!(s.kind, StmtKind::Skip) && k + 1 < trailing && needs_weakening(&st, &body[k + 1]));
        if weaken_here {
            if weakening.is_none() {
                weakening = Some((k, st.clone()));
            }
            st = weaken_to_product(&st, lambdas)?;
        }
        st = transfer_stmt(&st, s)?;
        if let StmtKind::Output(e) = &s.kind {
            if st.reachable {
                let mut constant = e.constant_part();
                let joint_vars: Vec<String> = st.joint.as_ref().map_or_else(Vec::new, |j| j.vars().to_vec());
                let mut c = vec![0.0; joint_vars.len()];
                for v in e.vars() {
                    match joint_vars.iter().position(|j| j == v) {
                        Some(i) => c[i] += e.coefficient(v),
                        None => {
                            if let Scalar::Point(p) = st.scalar(v) {
                                constant += e.coefficient(v) * p;
                            }
                        }
                    }
                }
                let fb = match &st.joint {
                    Some(j) => functional_bound(&j.shape, &c)?,
                    None => 0.0,
                };
                output_bounds.push((output_name(e), constant.abs() + fb));
            }
            let dead: Vec<&str> = e
                .vars()
                .into_iter()
                .filter(|v| !state_vars.iter().any(|s| s == v) && !live_after(body, k + 1, v))
                .collect();
            if !dead.is_empty() {
                let mut keep: Vec<String> = st.joint.as_ref().map_or_else(Vec::new, |j| j.vars().to_vec());
                keep.extend(st.scalars.keys().cloned());
                keep.retain(|v| !dead.contains(&v.as_str()));
                st = project(&st, &keep)?;
            }
        }
    }
    if trailing == body.len() {
        st = project(&st, &state_vars)?;
    }
    let final_shape = state_shape(&st, &state_vars, program.end_line)?;
    let exit = program.loop_exit_point();
    facts[exit] = if trailing < body.len() {
        facts[program.loop_entry_point()].clone()
    } else {
        st.facts()
    };
    if trailing == body.len() && st.facts().is_empty() {
        facts[exit] = vec![Fact::InG(final_shape.clone())];
    }
    *facts.last_mut().expect("points") = vec![Fact::False];
    Ok(ForwardPass {
        facts,
        state_vars,
        weakening,
        final_shape,
        trailing,
        output_bounds,
    })
}

/// The implication checked at the weakening point together with the
/// facts the backward pass attaches after it.
struct BackwardPass {
    obligation: Obligation,
    /// Body index of the weakening point.
    w_index: usize,
    facts_after: Vec<(usize, Vec<Fact>)>,
    /// Variables fixed to zero at the weakening point.
    zero_vars: Vec<String>,
    u_bounds: Vec<(String, f64)>,
}

fn quad_fact(q: &QuadForm) -> Fact {
    if q.dim() == 0 || q.form().as_matrix().max_abs() == 0.0 {
        Fact::True
    } else {
        Fact::Quad(q.clone())
    }
}

fn backward_pass(program: &Program, cfg: &AnalysisConfig, fwd: &ForwardPass) -> Result<BackwardPass, AnalysisError> {
    let body = &program.body;
    let (w_index, w_state) = match &fwd.weakening {
        Some((k, st)) => (*k, st.clone()),
        None => (0, AbstractState::in_ellipsoid(fwd.state_vars.clone(), &cfg.p)?),
    };
    let w_line = body.get(w_index).map_or(program.end_line, |s| s.line);

    // antecedents at the weakening point
    let mut antecedents = Vec::new();
    let mut zero_vars = Vec::new();
    if let Some(j) = &w_state.joint {
        let q = j
            .quadform()
            .map_err(|_| unsupported(w_line, "the joint ellipsoid is flat where the scalar bounds are merged"))?;
        antecedents.push(ProductFactor::Quad(q));
    }
    let mut bounded: Vec<(String, f64)> = Vec::new();
    for (var, s) in &w_state.scalars {
        match *s {
            Scalar::Point(k) if k == 0.0 => zero_vars.push(var.clone()),
            Scalar::Point(k) => antecedents.push(ProductFactor::Bound(ScalarBound::Point {
                var: var.clone(),
                value: k,
            })),
            other => {
                if let Some(bound) = other.square_bound() {
                    antecedents.push(ProductFactor::Bound(ScalarBound::Square {
                        var: var.clone(),
                        bound,
                    }));
                    bounded.push((var.clone(), bound));
                }
            }
        }
    }

    // weakest preconditions from the loop-back goal
    let goal = QuadForm::new(fwd.state_vars.clone(), cfg.p.clone())?;
    let mut phis: Vec<QuadForm> = vec![goal.clone(); body.len() + 1];
    for k in (w_index..body.len()).rev() {
        phis[k] = wp_stmt(&phis[k + 1], &body[k])?;
    }

    // linear functionals of assigned outputs, pulled back to the weakening point
    let mut u_bounds = Vec::new();
    let mut u_ranges: Vec<(usize, usize, String, f64)> = Vec::new();
    for j in w_index..body.len() {
        let StmtKind::Assign { var, .. } = &body[j].kind else { continue };
        let Some(o) = (j + 1..body.len()).find(|&o| matches!(&body[o].kind, StmtKind::Output(e) if e.reads(var))) else {
            continue;
        };
        if (j + 1..o).any(|i| body[i].writes() == Some(var.as_str())) {
            continue;
        }
        let mut c = QuadForm::new(vec![var.clone()], SymMatrix::identity(1))?;
        for i in (w_index..=j).rev() {
            c = wp_stmt(&c, &body[i])?;
        }
        // c = ℓℓᵀ with ℓ the functional over c.vars(); recover ℓ up to sign
        let form = c.form();
        let Some(pivot) = (0..c.dim()).max_by(|&a, &b| form[(a, a)].total_cmp(&form[(b, b)])) else {
            continue;
        };
        if !(form[(pivot, pivot)] > 0.0) {
            continue;
        }
        let s = form[(pivot, pivot)].sqrt();
        let ell: Vec<f64> = (0..c.dim()).map(|i| form[(i, pivot)] / s).collect();
        let mut terms = 0usize;
        let mut total = 0.0;
        let mut ok = true;
        if let Some(j) = &w_state.joint {
            let cj: Vec<f64> = j
                .vars()
                .iter()
                .map(|v| c.vars().iter().position(|w| w == v).map_or(0.0, |i| ell[i]))
                .collect();
            if cj.iter().any(|x| *x != 0.0) {
                terms += 1;
                total += j.shape.shape().quad(&cj);
            }
        }
        for (i, v) in c.vars().iter().enumerate() {
            if w_state.in_joint(v) || ell[i] == 0.0 {
                continue;
            }
            match bounded.iter().find(|(b, _)| b == v) {
                Some((_, b)) => {
                    terms += 1;
                    total += ell[i] * ell[i] * b;
                }
                None if zero_vars.contains(v) => {}
                None => ok = false,
            }
        }
        if ok && terms > 0 {
            let bound = terms as f64 * total;
            u_bounds.push((var.clone(), bound));
            u_ranges.push((j, o, var.clone(), bound));
        }
    }

    let mut facts_after = Vec::new();
    for k in w_index + 1..=body.len() {
        let point = program.body_point(k);
        if k == body.len() {
            facts_after.push((point, vec![Fact::InE(goal.clone())]));
            continue;
        }
        let mut fs = vec![quad_fact(&phis[k])];
        for (var, bound) in &bounded {
            let last_read = (w_index..body.len()).rev().find(|&i| body[i].reads().contains(&var.as_str()));
            let rewritten = (w_index..k).any(|i| body[i].writes() == Some(var.as_str()));
            if !rewritten && last_read.is_some_and(|r| k <= r) {
                fs.push(Fact::Sq {
                    var: var.clone(),
                    bound: *bound,
                });
            }
        }
        for (j, o, var, bound) in &u_ranges {
            if *j < k && k <= *o {
                fs.push(Fact::Sq {
                    var: var.clone(),
                    bound: *bound,
                });
            }
        }
        fs.retain(|f| *f != Fact::True);
        facts_after.push((point, fs));
    }

    // the consequent over the antecedent tuple, zero points substituted
    let consequent = &phis[w_index];
    let mut ante_vars: Vec<String> = Vec::new();
    for a in &antecedents {
        let vs = match a {
            ProductFactor::Quad(q) => q.vars().to_vec(),
            ProductFactor::Bound(b) => vec![b.var().to_string()],
        };
        ante_vars.extend(vs);
    }
    let keep: Vec<usize> = (0..consequent.dim())
        .filter(|&i| !zero_vars.contains(&consequent.vars()[i]))
        .collect();
    for &i in &keep {
        let v = &consequent.vars()[i];
        if !ante_vars.contains(v) {
            return Err(AnalysisError::UnboundedOperand { var: v.clone(), line: w_line });
        }
    }
    let reduced = QuadForm::new(
        keep.iter().map(|&i| consequent.vars()[i].clone()).collect(),
        consequent.form().principal(&keep),
    )?;
    let embedded = QuadForm::new(ante_vars.clone(), reduced.embed(&ante_vars)?)?;
    Ok(BackwardPass {
        obligation: Obligation {
            antecedents,
            consequent: embedded,
            location: w_line,
        },
        w_index,
        facts_after,
        zero_vars,
        u_bounds,
    })
}

/// Runs one loop iteration from the obligation witness and reports whether
/// the successor leaves `E_P`.
fn confirm(program: &Program, cfg: &AnalysisConfig, fwd: &ForwardPass, bwd: &BackwardPass, z: &[f64]) -> Option<Counterexample> {
    let tuple: Vec<String> = bwd
        .obligation
        .antecedents
        .iter()
        .flat_map(|a| match a {
            ProductFactor::Quad(q) => q.vars().to_vec(),
            ProductFactor::Bound(b) => vec![b.var().to_string()],
        })
        .collect();
    let value = |v: &str| -> f64 { tuple.iter().position(|t| t == v).map_or(0.0, |i| z[i]) };
    // the prefix before the weakening point must leave the state untouched
    let prefix_writes_state = program.body[..bwd.w_index]
        .iter()
        .any(|s| s.writes().is_some_and(|w| fwd.state_vars.iter().any(|v| v == w)));
    let mut env = run_init(program).ok()?;
    let state: Vec<(String, f64)> = fwd.state_vars.iter().map(|v| (v.clone(), value(v))).collect();
    for (v, x) in &state {
        env.insert(v.clone(), *x);
    }
    let inputs: Vec<f64> = program
        .body
        .iter()
        .filter_map(|s| match &s.kind {
            StmtKind::Input(v) => Some(value(v)),
            _ => None,
        })
        .collect();
    let x: Vec<f64> = state.iter().map(|(_, v)| *v).collect();
    let v_before = cfg.p.quad(&x);
    run_body(program, &mut env, &mut inputs.clone().into_iter()).ok()?;
    let next: Vec<f64> = fwd.state_vars.iter().map(|v| env.get(v).copied().unwrap_or(0.0)).collect();
    let v_after = cfg.p.quad(&next);
    let confirmed = !prefix_writes_state && v_before <= 1.0 + 1e-12 && v_after > 1.0;
    Some(Counterexample {
        state,
        inputs,
        v_before,
        v_after,
        confirmed,
    })
}

/// Point of the multiplier-weighted antecedent set `Σλᵢ zᵀΦᵢz ≤ 1` that
/// violates the consequent, along the most negative slack direction.
fn relaxed_point(ob: &Obligation, cert: &Certificate) -> Option<Vec<f64>> {
    let forms = ob.antecedent_forms().ok()?;
    let phi = ob.consequent_form().ok()?;
    let v = sym_eigen(&cert.slack).ok()?.vector(0);
    let weighted: f64 = forms.iter().zip(&cert.lambdas).map(|(f, l)| l * f.quad(&v)).sum();
    let scale = if weighted > 0.0 {
        1.0 / weighted.sqrt()
    } else {
        let q = phi.quad(&v);
        if q <= 0.0 {
            return None;
        }
        (2.0 / q).sqrt()
    };
    Some(v.iter().map(|x| x * scale).collect())
}

fn choose_lambdas(cfg: &AnalysisConfig, ob: &Obligation) -> Vec<f64> {
    if cfg.search_lambdas {
        if let Some(c) = search_multipliers(ob, 200, cfg.tol) {
            return c.lambdas;
        }
    }
    cfg.lambdas.clone()
}

fn state_bounds(cfg: &AnalysisConfig, state_vars: &[String]) -> Result<Vec<(String, f64)>, AnalysisError> {
    let g = ShapeEllipsoid::new(state_vars.to_vec(), sym_inverse(&cfg.p)?)?;
    Ok(state_vars
        .iter()
        .enumerate()
        .map(|(i, v)| (v.clone(), coord_bound(&g, i)))
        .collect())
}

fn counterexample(
    program: &Program,
    cfg: &AnalysisConfig,
    fwd: &ForwardPass,
    bwd: &BackwardPass,
) -> Option<Counterexample> {
    let z = find_witness(&bwd.obligation, cfg.tol)?;
    confirm(program, cfg, fwd, bwd, &z)
}

/// Forward propagation: seeds the loop head with `x ∈ E_P`, pushes it once
/// around the body, and checks that the image is contained in `E_P`.
pub fn analyze_forward(program: &Program, cfg: &AnalysisConfig) -> Result<AnalysisOutcome, AnalysisError> {
    let mut lambdas = cfg.lambdas.clone();
    if cfg.search_lambdas {
        let probe = forward_pass(program, cfg, &lambdas)?;
        let bwd = backward_pass(program, cfg, &probe)?;
        lambdas = choose_lambdas(cfg, &bwd.obligation);
    }
    let fwd = forward_pass(program, cfg, &lambdas)?;
    let outer = ShapeEllipsoid::new(fwd.state_vars.clone(), sym_inverse(&cfg.p)?)?;
    let verdict = contains(&fwd.final_shape, &outer, cfg.tol)?;
    let check_line = if fwd.trailing < program.body.len() {
        program.body[fwd.trailing].line
    } else {
        program.end_line
    };
    let (witness, relaxation_witness) = if verdict.contained {
        (None, None)
    } else {
        let concrete = backward_pass(program, cfg, &fwd)
            .ok()
            .and_then(|bwd| counterexample(program, cfg, &fwd, &bwd))
            .filter(|c| c.confirmed);
        let relax = if concrete.is_none() { verdict.witness.clone() } else { None };
        (concrete, relax)
    };
    let mut bounds = state_bounds(cfg, &fwd.state_vars)?;
    bounds.extend(fwd.output_bounds.iter().cloned());
    let listing = emit_annotated(program, &fwd.facts).map_err(|e| unsupported(0, e.to_string()))?;
    Ok(AnalysisOutcome {
        direction: Direction::Forward,
        annotated: AnnotatedProgram {
            program: program.clone(),
            facts: fwd.facts.clone(),
            fact_lines: vec![None; program.point_count()],
        },
        listing,
        inductive: verdict.contained,
        margin: verdict.margin,
        lambdas,
        check_line,
        witness,
        relaxation_witness,
        bounds,
        final_shape: Some(fwd.final_shape),
        obligation: None,
        certificate: None,
    })
}

/// Backward propagation: pulls the loop-back goal `x ∈ E_P` through the
/// body by substitution and discharges the resulting implication at the
/// weakening point with the S-procedure.
pub fn analyze_backward(program: &Program, cfg: &AnalysisConfig) -> Result<AnalysisOutcome, AnalysisError> {
    let fwd = forward_pass(program, cfg, &cfg.lambdas)?;
    let bwd = backward_pass(program, cfg, &fwd)?;
    let lambdas = choose_lambdas(cfg, &bwd.obligation);
    let cert = if lambdas.len() == bwd.obligation.antecedents.len() {
        check_sprocedure(&bwd.obligation, &lambdas, cfg.tol)?
    } else {
        return Err(AnalysisError::Ellipsoid(EllipsoidError::MultiplierCount {
            expected: bwd.obligation.antecedents.len(),
            got: lambdas.len(),
        }));
    };
    let (witness, relaxation_witness) = if cert.certified {
        (None, None)
    } else {
        let concrete = counterexample(program, cfg, &fwd, &bwd).filter(|c| c.confirmed);
        let relax = if concrete.is_none() { relaxed_point(&bwd.obligation, &cert) } else { None };
        (concrete, relax)
    };

    let mut facts = fwd.facts.clone();
    for (point, fs) in &bwd.facts_after {
        facts[*point] = fs.clone();
    }
    let w_point = program.body_point(bwd.w_index);
    let _ = &bwd.zero_vars;
    debug_assert!(w_point <= program.loop_exit_point());
    let mut bounds = state_bounds(cfg, &fwd.state_vars)?;
    for (var, b) in &bwd.u_bounds {
        bounds.push((var.clone(), b.sqrt()));
    }
    let listing = emit_annotated(program, &facts).map_err(|e| unsupported(0, e.to_string()))?;
    Ok(AnalysisOutcome {
        direction: Direction::Backward,
        annotated: AnnotatedProgram {
            program: program.clone(),
            facts,
            fact_lines: vec![None; program.point_count()],
        },
        listing,
        inductive: cert.certified,
        margin: cert.margin,
        lambdas,
        check_line: bwd.obligation.location,
        witness,
        relaxation_witness,
        bounds,
        final_shape: None,
        obligation: Some(bwd.obligation),
        certificate: Some(cert),
    })
}

/// Runs the requested direction.
pub fn analyze(program: &Program, cfg: &AnalysisConfig, direction: Direction) -> Result<AnalysisOutcome, AnalysisError> {
    match direction {
        Direction::Forward => analyze_forward(program, cfg),
        Direction::Backward => analyze_backward(program, cfg),
    }
}

/// Heuristic loop-head candidate for `x' = A x + B y`, `y² ≤ 1`: solves
/// `AᵀPA − P = −I` by fixed-point iteration, then scans a scale `α` and
/// multipliers for which `αP` passes the one-step S-procedure. May fail.
pub fn suggest_lyapunov(a: &Matrix, b: &Matrix) -> Option<(SymMatrix, Vec<f64>)> {
    let n = a.rows();
    if !a.is_square() || b.rows() != n || b.cols() != 1 {
        return None;
    }
    let mut p = SymMatrix::identity(n);
    for _ in 0..200 {
        let next = p.congruence_t(a).ok()?.add(&SymMatrix::identity(n)).ok()?;
        let diff = next.as_matrix().max_abs_diff(p.as_matrix())?;
        p = next;
        if diff <= 1e-12 * p.as_matrix().max_abs() {
            break;
        }
    }
    if !p.as_matrix().max_abs().is_finite() {
        return None;
    }
    let ab = a.hstack(b).ok()?;
    let mut best: Option<(f64, SymMatrix, Vec<f64>)> = None;
    for e in -40..=40 {
        let alpha = 10f64.powf(e as f64 / 8.0);
        let ps = p.scale(alpha);
        let lhs = ps.congruence_t(&ab).ok()?;
        for i in 1..200 {
            let l1 = i as f64 / 200.0;
            let rhs = SymMatrix::block_diag(&[&ps.scale(l1), &SymMatrix::diag(&[1.0 - l1])]);
            let m = is_psd(&rhs.sub(&lhs).ok()?, 0.0).ok()?.min_eigenvalue;
            if m >= 0.0 && best.as_ref().is_none_or(|b| m > b.0) {
                best = Some((m, ps.clone(), vec![l1, 1.0 - l1]));
            }
        }
    }
    best.map(|(_, p, l)| (p, l))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    const LEADLAG: &str = include_str!("../../../corpus/leadlag.ctl");
    const LEADLAG_EXPANDED: &str = include_str!("../../../corpus/leadlag-expanded.ctl");
    const SCALAR: &str = include_str!("../../../corpus/scalar.ctl");
    const DIAG: &str = include_str!("../../../corpus/diag.ctl");

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn lead_lag_p() -> SymMatrix {
        SymMatrix::from_rows(&[&[0.03, 0.2], &[0.2, 10.0]])
    }

    fn lead_lag_cfg() -> AnalysisConfig {
        AnalysisConfig::new(lead_lag_p(), vec![0.01, 0.99]).unwrap()
    }

    fn fresh_clamped() -> AbstractState {
        let p = parse("loop { input y; if (y > 1) { y := 1; } if (y < -1) { y := -1; } }").unwrap();
        let mut st = AbstractState::top();
        for s in &p.body {
            st = transfer_stmt(&st, s).unwrap();
        }
        st
    }

    fn guard_of(src: &str) -> Guard {
        match &parse(src).unwrap().body[1].kind {
            StmtKind::Guard(g) => g.clone(),
            _ => panic!(),
        }
    }

    #[test]
    fn clamp_pair_gives_square_bound() {
        let st = fresh_clamped();
        assert_eq!(st.scalar("y"), Scalar::Interval { lo: -1.0, hi: 1.0 });
        assert_eq!(st.facts(), vec![Fact::Sq { var: "y".into(), bound: 1.0 }]);
    }

    #[test]
    fn single_guard_is_one_sided() {
        let g = guard_of("loop { input y; if (y > 1) { y := 1; } }");
        let st = transfer_input(&AbstractState::top(), "y").unwrap();
        let st = transfer_guard_join(&st, &g, 1).unwrap();
        assert_eq!(st.facts(), vec![Fact::Le { var: "y".into(), value: 1.0 }]);
        let p = parse("loop { input y; if (y > 1) { y := 1; } u := 2*y; }").unwrap();
        let mut s = AbstractState::top();
        for stmt in &p.body[..2] {
            s = transfer_stmt(&s, stmt).unwrap();
        }
        assert!(matches!(
            transfer_stmt(&s, &p.body[2]),
            Err(AnalysisError::UnboundedOperand { .. })
        ));
    }

    #[test]
    fn guard_on_point_takes_else_branch() {
        let g = guard_of("loop { y := 0; if (y > 1) { y := 1; } }");
        let mut st = AbstractState::top();
        st.scalars.insert("y".into(), Scalar::Point(0.0));
        let out = transfer_guard_join(&st, &g, 1).unwrap();
        assert_eq!(out, st);
    }

    #[test]
    fn guard_on_joint_variable_is_rejected() {
        let g = guard_of("loop { y := 0; if (y > 1) { y := 1; } }");
        let st = AbstractState::in_ellipsoid(names(&["y"]), &SymMatrix::identity(1)).unwrap();
        assert!(matches!(transfer_guard_join(&st, &g, 3), Err(AnalysisError::Unsupported { line: 3, .. })));
    }

    #[test]
    fn input_projects_out_of_joint() {
        let st = AbstractState::in_ellipsoid(names(&["a", "b"]), &SymMatrix::identity(2)).unwrap();
        let out = transfer_input(&st, "a").unwrap();
        assert_eq!(out.joint.unwrap().vars(), &names(&["b"])[..]);
        assert_eq!(out.scalars["a"], Scalar::Unconstrained);
        let fresh = transfer_input(&AbstractState::top(), "v").unwrap();
        assert_eq!(fresh.scalar("v"), Scalar::Unconstrained);
    }

    #[test]
    fn constant_assignment_is_a_point() {
        let p = parse("v := 0;\nloop { skip; }").unwrap();
        let st = transfer_stmt(&AbstractState::top(), &p.init[0]).unwrap();
        assert_eq!(st.facts(), vec![Fact::Eq { var: "v".into(), value: 0.0 }]);
    }

    #[test]
    fn doubling_then_consuming() {
        let st = AbstractState::in_ellipsoid(names(&["w"]), &SymMatrix::identity(1)).unwrap();
        let p = parse("w := 0;\nloop { v := 2*w; }").unwrap();
        let StmtKind::Assign { var, expr } = &p.body[0].kind else { panic!() };
        let st = transfer_assign(&st, var, expr, 2).unwrap();
        let st = project(&st, &names(&["v"])).unwrap();
        let j = st.joint.unwrap();
        assert_eq!(j.vars(), &names(&["v"])[..]);
        assert_eq!(j.shape.shape()[(0, 0)], 4.0);
    }

    #[test]
    fn unbounded_operand_is_reported() {
        let p = parse("loop { input y; u := 3*y; }").unwrap();
        let st = transfer_stmt(&AbstractState::top(), &p.body[0]).unwrap();
        let e = transfer_stmt(&st, &p.body[1]).unwrap_err();
        assert!(matches!(e, AnalysisError::UnboundedOperand { ref var, line: 1 } if var == "y"), "{e}");
    }

    #[test]
    fn weakening_builds_q() {
        let mut st = AbstractState::in_ellipsoid(names(&["x0", "x1"]), &lead_lag_p()).unwrap();
        st.scalars.insert("y".into(), Scalar::Interval { lo: -1.0, hi: 1.0 });
        let w = weaken_to_product(&st, &[0.01, 0.99]).unwrap();
        let j = w.joint.unwrap();
        assert_eq!(j.vars(), &names(&["x0", "x1", "y"])[..]);
        let q = j.phi.unwrap();
        let want = SymMatrix::block_diag(&[&lead_lag_p().scale(0.01), &SymMatrix::diag(&[0.99])]);
        assert_eq!(q, want);
        assert!(w.scalars.is_empty());

        let mut id = AbstractState::in_ellipsoid(names(&["a", "b"]), &SymMatrix::identity(2)).unwrap();
        id.scalars.insert("c".into(), Scalar::Interval { lo: -1.0, hi: 1.0 });
        let w = weaken_to_product(&id, &[0.5, 0.5]).unwrap();
        let r = w.joint.unwrap().shape.shape().clone();
        assert!(r.as_matrix().max_abs_diff(SymMatrix::diag(&[2.0, 2.0, 2.0]).as_matrix()).unwrap() < 1e-15);

        let bare = AbstractState::in_ellipsoid(names(&["a"]), &SymMatrix::identity(1)).unwrap();
        assert!(matches!(weaken_to_product(&bare, &[1.0]), Err(AnalysisError::NothingToMerge)));
        assert!(weaken_to_product(&st, &[0.5, 0.6]).is_err());
    }

    #[test]
    fn projection_keeping_everything_is_identity() {
        let mut st = AbstractState::in_ellipsoid(names(&["a", "b"]), &SymMatrix::identity(2)).unwrap();
        st.scalars.insert("c".into(), Scalar::Point(1.0));
        assert_eq!(project(&st, &names(&["a", "b", "c"])).unwrap(), st);
        let dropped = project(&st, &names(&["a", "b"])).unwrap();
        assert!(dropped.scalars.is_empty());
    }

    #[test]
    fn wp_examples() {
        let phi = QuadForm::new(names(&["x"]), SymMatrix::diag(&[3.0])).unwrap();
        let p = parse("x := 0;\nloop { x := x; x := 0; }").unwrap();
        assert_eq!(wp_stmt(&phi, &p.body[0]).unwrap(), phi);
        let zero = wp_stmt(&phi, &p.body[1]).unwrap();
        assert_eq!(zero.dim(), 0);
        assert_eq!(quad_fact(&zero), Fact::True);
    }

    #[test]
    fn wp_of_vector_update_is_block_form() {
        // x0 := 0.499 x0 - 0.05 x1 + y ; x1 := 0.01 x0 + x1, written with buffers
        let p = parse(LEADLAG_EXPANDED).unwrap();
        let goal = QuadForm::new(names(&["x0", "x1"]), lead_lag_p()).unwrap();
        let mut phi = goal;
        for s in p.body[5..].iter().rev() {
            phi = wp_stmt(&phi, s).unwrap();
        }
        let ab = Matrix::from_rows(&[&[0.499, -0.05, 1.0], &[0.01, 1.0, 0.0]]);
        let want = lead_lag_p().congruence_t(&ab).unwrap();
        let order: Vec<usize> = ["x0", "x1", "y"]
            .iter()
            .map(|v| phi.vars().iter().position(|w| w == v).unwrap())
            .collect();
        let got = phi.form().principal(&order);
        assert!(got.as_matrix().max_abs_diff(want.as_matrix()).unwrap() < 1e-12);
    }

    #[test]
    fn scalar_program_is_inductive() {
        let p = parse(SCALAR).unwrap();
        let cfg = AnalysisConfig::new(SymMatrix::identity(1), vec![0.5, 0.5]).unwrap();
        let f = analyze_forward(&p, &cfg).unwrap();
        assert!(f.inductive);
        assert!(f.margin.abs() < 1e-12);
        assert_eq!(f.bounds[0], ("x".to_string(), 1.0));
        let b = analyze_backward(&p, &cfg).unwrap();
        assert!(b.inductive);
        assert!(b.margin >= -1e-12);
    }

    #[test]
    fn diagonal_program_is_inductive() {
        let p = parse(DIAG).unwrap();
        let cfg = AnalysisConfig::new(SymMatrix::diag(&[0.25, 1.0]), vec![0.5, 0.5]).unwrap();
        assert!(analyze_forward(&p, &cfg).unwrap().inductive);
        assert!(analyze_backward(&p, &cfg).unwrap().inductive);
    }

    #[test]
    fn lead_lag_is_refuted_both_ways() {
        let p = parse(LEADLAG_EXPANDED).unwrap();
        let f = analyze_forward(&p, &lead_lag_cfg()).unwrap();
        assert!(!f.inductive);
        let w = f.witness.as_ref().expect("concrete witness");
        assert!(w.confirmed && w.v_after > 1.1 && w.v_before <= 1.0 + 1e-12);
        let b = analyze_backward(&p, &lead_lag_cfg()).unwrap();
        assert!(!b.inductive);
        assert!(b.witness.as_ref().unwrap().confirmed);
        assert!(b.listing.contains("sq(u) <= "));
    }

    #[test]
    fn chain_matches_closed_form() {
        let p = parse(LEADLAG).unwrap();
        let f = analyze_forward(&p, &lead_lag_cfg()).unwrap();
        let u = f.final_shape.unwrap();
        let q = SymMatrix::block_diag(&[&lead_lag_p().scale(0.01), &SymMatrix::diag(&[0.99])]);
        let ab = Matrix::from_rows(&[&[0.499, -0.05, 1.0], &[0.01, 1.0, 0.0]]);
        let want = sym_inverse(&q).unwrap().congruence(&ab).unwrap();
        assert!(u.shape().as_matrix().max_abs_diff(want.as_matrix()).unwrap() <= 1e-9);
    }

    #[test]
    fn forward_listing_shape() {
        let p = parse(LEADLAG_EXPANDED).unwrap();
        let f = analyze_forward(&p, &lead_lag_cfg()).unwrap();
        let lines: Vec<&str> = f.listing.lines().collect();
        assert_eq!(lines[0], "#[ true ]");
        assert_eq!(lines[2], "#[ x0 == 0 ]");
        assert_eq!(lines[4], "#[ inE(x0,x1; 0.03 0.2; 0.2 10) ]");
        assert!(f.listing.contains("#[ inE(x0,x1; 0.03 0.2; 0.2 10), y <= 1 ]"));
        assert!(f.listing.contains("#[ inE(x0,x1; 0.03 0.2; 0.2 10), sq(y) <= 1 ]"));
        assert!(f.listing.ends_with("}\n#[ false ]\n"));
        assert_eq!(f.check_line, p.end_line);
    }

    #[test]
    fn init_outside_is_an_error() {
        let p = parse("x := 2;\nloop { x := 0.5*x; }").unwrap();
        let cfg = AnalysisConfig::new(SymMatrix::identity(1), vec![1.0]).unwrap();
        assert!(matches!(analyze_forward(&p, &cfg), Err(AnalysisError::InitOutside { .. })));
    }

    #[test]
    fn input_free_contraction() {
        let p = parse("x := 0;\nloop { x := 0.5*x; }").unwrap();
        let cfg = AnalysisConfig::new(SymMatrix::identity(1), vec![1.0]).unwrap();
        let f = analyze_forward(&p, &cfg).unwrap();
        assert!(f.inductive);
        assert!((f.margin - 0.75).abs() < 1e-12);
        let b = analyze_backward(&p, &cfg).unwrap();
        assert!(b.inductive);
    }

    #[test]
    fn lyapunov_suggestion_for_scalar() {
        let (p, l) = suggest_lyapunov(&Matrix::from_rows(&[&[0.5]]), &Matrix::column(&[0.5])).unwrap();
        assert!(p.dim() == 1 && l.len() == 2);
    }
}
