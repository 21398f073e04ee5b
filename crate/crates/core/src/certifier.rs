//! S-procedure certificates, multiplier search, counterexample search and
//! annotation checking.
//!
//! An [`Obligation`] states that every point satisfying all antecedents
//! `zᵀΦᵢz ≤ 1` satisfies the consequent `zᵀΦz ≤ 1`. It is certified by
//! multipliers `λᵢ ≥ 0`, `Σλᵢ ≤ 1`, with `Σλᵢ Φᵢ − Φ ⪰ 0`.
//!
//! ```
//! use ctrlcert::certifier::{check_sprocedure, Obligation};
//! use ctrlcert::ellipsoid::{ProductFactor, QuadForm, ScalarBound};
//! use ctrlcert::linalg::SymMatrix;
//!
//! let ob = Obligation {
//!     antecedents: vec![
//!         ProductFactor::Quad(QuadForm::new(vec!["x".into()], SymMatrix::identity(1)).unwrap()),
//!         ProductFactor::Bound(ScalarBound::Square { var: "y".into(), bound: 1.0 }),
//!     ],
//!     consequent: QuadForm::new(vec!["x".into(), "y".into()], SymMatrix::diag(&[0.5, 0.5])).unwrap(),
//!     location: 1,
//! };
//! assert!(check_sprocedure(&ob, &[0.5, 0.5], 1e-9).unwrap().certified);
//! ```

use std::fmt;

use thiserror::Error;

use crate::analyzer::{needs_weakening, transfer_stmt, weaken_to_product, wp_assign, AbstractState};
use crate::ellipsoid::{contains, from_quadform, EllipsoidError, ProductFactor, QuadForm, ScalarBound, ShapeEllipsoid};
use crate::lang::fact::Fact;
use crate::lang::{execute, AnnotatedProgram, Env, Item, Stmt, StmtKind};
use crate::linalg::{is_psd, psd_factor, sym_eigen, LinalgError, Matrix, SymMatrix};
use crate::rng::Lcg;

#[derive(Debug, Error)]
pub enum CertError {
    #[error(transparent)]
    Ellipsoid(#[from] EllipsoidError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("expected {expected} multipliers, got {got}")]
    MultiplierCount { expected: usize, got: usize },
    #[error("multipliers must be nonnegative and sum to at most 1 (got {0:?})")]
    MultiplierDomain(Vec<f64>),
    #[error("the consequent mentions '{0}', which no antecedent constrains")]
    Unconstrained(String),
    #[error("'{0}' is pinned to zero; substitute it before building the obligation")]
    ZeroPoint(String),
}

/// `∧ antecedents ⇒ consequent`, all over one variable tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Obligation {
    pub antecedents: Vec<ProductFactor>,
    pub consequent: QuadForm,
    /// Source line the obligation belongs to.
    pub location: usize,
}

fn factor_vars(f: &ProductFactor) -> Vec<String> {
    match f {
        ProductFactor::Quad(q) => q.vars().to_vec(),
        ProductFactor::Bound(b) => vec![b.var().to_string()],
    }
}

impl Obligation {
    /// Antecedent variables in first-occurrence order.
    pub fn vars(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for a in &self.antecedents {
            for v in factor_vars(a) {
                if !out.contains(&v) {
                    out.push(v);
                }
            }
        }
        out
    }

    /// Each antecedent as a form over [`Obligation::vars`].
    pub fn antecedent_forms(&self) -> Result<Vec<SymMatrix>, CertError> {
        let vars = self.vars();
        self.antecedents
            .iter()
            .map(|a| match a {
                ProductFactor::Quad(q) => Ok(q.embed(&vars)?),
                ProductFactor::Bound(b) => {
                    let c = b.square_bound();
                    if !(c > 0.0) {
                        return Err(CertError::ZeroPoint(b.var().to_string()));
                    }
                    let i = vars.iter().position(|v| v == b.var()).expect("collected");
                    let mut m = Matrix::zeros(vars.len(), vars.len());
                    m[(i, i)] = 1.0 / c;
                    Ok(SymMatrix::from_matrix(&m)?)
                }
            })
            .collect()
    }

    pub fn consequent_form(&self) -> Result<SymMatrix, CertError> {
        let vars = self.vars();
        if let Some(v) = self.consequent.vars().iter().find(|v| !vars.contains(v)) {
            return Err(CertError::Unconstrained(v.clone()));
        }
        Ok(self.consequent.embed(&vars)?)
    }

    /// Antecedents evaluated at `z` (scalar facts as squared bounds).
    pub fn antecedents_hold(&self, z: &[f64], tol: f64) -> bool {
        match self.antecedent_forms() {
            Ok(forms) => forms.iter().all(|f| f.quad(z) <= 1.0 + tol),
            Err(_) => false,
        }
    }

    pub fn consequent_value(&self, z: &[f64]) -> f64 {
        self.consequent_form().map_or(f64::NAN, |f| f.quad(z))
    }
}

/// Multipliers with the slack matrix `Σλᵢ Φᵢ − Φ` they produce.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub lambdas: Vec<f64>,
    pub slack: SymMatrix,
    /// `λ_min(slack)`.
    pub margin: f64,
    pub certified: bool,
}

fn slack_for(forms: &[SymMatrix], phi: &SymMatrix, lambdas: &[f64]) -> Result<SymMatrix, CertError> {
    let mut acc = phi.scale(-1.0);
    for (f, l) in forms.iter().zip(lambdas) {
        acc = acc.add(&f.scale(*l))?;
    }
    Ok(acc)
}

/// Checks the S-procedure slack for fixed multipliers.
pub fn check_sprocedure(ob: &Obligation, lambdas: &[f64], tol: f64) -> Result<Certificate, CertError> {
    if lambdas.len() != ob.antecedents.len() {
        return Err(CertError::MultiplierCount {
            expected: ob.antecedents.len(),
            got: lambdas.len(),
        });
    }
    if lambdas.iter().any(|l| !(*l >= 0.0)) || lambdas.iter().sum::<f64>() > 1.0 + 1e-12 {
        return Err(CertError::MultiplierDomain(lambdas.to_vec()));
    }
    let forms = ob.antecedent_forms()?;
    let phi = ob.consequent_form()?;
    let slack = slack_for(&forms, &phi, lambdas)?;
    let chk = is_psd(&slack, tol)?;
    Ok(Certificate {
        lambdas: lambdas.to_vec(),
        slack,
        margin: chk.min_eigenvalue,
        certified: chk.psd,
    })
}

/// Compositions of `steps` into `k` nonnegative parts, as fractions.
fn simplex_face(k: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(k: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if k == 1 {
            cur.push(left);
            out.push(cur.iter().map(|&c| c as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for i in 0..=left {
            cur.push(i);
            rec(k - 1, left - i, steps, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k > 0 {
        rec(k, steps, steps, &mut Vec::new(), &mut out);
    }
    out
}

fn grid_steps(k: usize, requested: usize) -> usize {
    let mut steps = requested.max(1);
    // keep the grid near 2·10⁴ points
    while k > 2 && binomial(steps + k - 1, k - 1) > 20_000 && steps > 1 {
        steps -= 1;
    }
    steps
}

fn binomial(n: usize, k: usize) -> usize {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return usize::MAX;
        }
    }
    acc as usize
}

/// Best margin over the grid on the face `Σλ = 1`, certified or not.
pub fn best_multipliers(ob: &Obligation, grid_steps_requested: usize, tol: f64) -> Result<Certificate, CertError> {
    let k = ob.antecedents.len();
    let forms = ob.antecedent_forms()?;
    let phi = ob.consequent_form()?;
    let steps = grid_steps(k, grid_steps_requested);
    let mut best: Option<Certificate> = None;
    for lambdas in simplex_face(k, steps) {
        let slack = slack_for(&forms, &phi, &lambdas)?;
        let chk = is_psd(&slack, tol)?;
        if best.as_ref().is_none_or(|b| chk.min_eigenvalue > b.margin) {
            best = Some(Certificate {
                lambdas,
                slack,
                margin: chk.min_eigenvalue,
                certified: chk.psd,
            });
        }
    }
    best.ok_or(CertError::MultiplierCount { expected: 1, got: 0 })
}

/// Grid search for multipliers. The slack is monotone in each `λᵢ`, so only
/// the face `Σλ = 1` is scanned. Returns the largest-margin certificate.
pub fn search_multipliers(ob: &Obligation, grid_steps: usize, tol: f64) -> Option<Certificate> {
    best_multipliers(ob, grid_steps, tol).ok().filter(|c| c.certified)
}

/// Largest `t` keeping `t·d` inside every antecedent; `None` when `d` is
/// unconstrained.
fn boundary_scale(forms: &[SymMatrix], d: &[f64]) -> Option<f64> {
    forms
        .iter()
        .map(|f| f.quad(d))
        .filter(|q| *q > 0.0)
        .map(|q| 1.0 / q.sqrt())
        .min_by(f64::total_cmp)
}

/// Linear maximization over a product of antecedents on disjoint variables.
struct ProductLmo {
    /// (indices, shape) for ellipsoid blocks; scalar blocks have a 1×1 shape.
    blocks: Vec<(Vec<usize>, SymMatrix)>,
}

impl ProductLmo {
    fn new(ob: &Obligation) -> Option<ProductLmo> {
        let vars = ob.vars();
        let mut seen = vec![false; vars.len()];
        let mut blocks = Vec::new();
        for a in &ob.antecedents {
            let vs = factor_vars(a);
            let idx: Vec<usize> = vs.iter().map(|v| vars.iter().position(|w| w == v).expect("collected")).collect();
            for &i in &idx {
                if seen[i] {
                    return None;
                }
                seen[i] = true;
            }
            let shape = match a {
                ProductFactor::Quad(q) => from_quadform(q).ok()?.shape().clone(),
                ProductFactor::Bound(b) => SymMatrix::diag(&[b.square_bound()]),
            };
            blocks.push((idx, shape));
        }
        Some(ProductLmo { blocks })
    }

    fn argmax(&self, g: &[f64], current: &[f64]) -> Vec<f64> {
        let mut s = current.to_vec();
        for (idx, r) in &self.blocks {
            let gi: Vec<f64> = idx.iter().map(|&i| g[i]).collect();
            let rg = r.as_matrix().mul_vec(&gi);
            let h: f64 = gi.iter().zip(&rg).map(|(a, b)| a * b).sum();
            if h > 0.0 {
                for (k, &i) in idx.iter().enumerate() {
                    s[i] = rg[k] / h.sqrt();
                }
            }
        }
        s
    }
}

/// Searches for a point satisfying every antecedent and violating the
/// consequent: eigen-directions first, then 10⁴ seeded boundary samples,
/// then conditional-gradient ascent of the consequent.
pub fn find_witness(ob: &Obligation, tol: f64) -> Option<Vec<f64>> {
    let forms = ob.antecedent_forms().ok()?;
    let phi = ob.consequent_form().ok()?;
    let n = phi.dim();
    if n == 0 {
        return None;
    }
    let value = |z: &[f64]| phi.quad(z);
    let place = |d: &[f64]| -> Option<Vec<f64>> {
        match boundary_scale(&forms, d) {
            Some(t) => Some(d.iter().map(|x| x * t).collect()),
            None => {
                let q = phi.quad(d);
                (q > 0.0).then(|| d.iter().map(|x| x * 2.0 / q.sqrt()).collect())
            }
        }
    };

    let mut directions: Vec<Vec<f64>> = Vec::new();
    let uniform = vec![1.0 / forms.len().max(1) as f64; forms.len()];
    if let Ok(s) = slack_for(&forms, &phi, &uniform) {
        if let Ok(e) = sym_eigen(&s) {
            directions.push(e.vector(0));
        }
    }
    if let Ok(c) = best_multipliers(ob, 50, tol) {
        if let Ok(e) = sym_eigen(&c.slack) {
            directions.push(e.vector(0));
        }
    }
    if let Ok(e) = sym_eigen(&phi) {
        directions.extend((0..n).map(|k| e.vector(k)));
    }
    directions.extend((0..n).map(|k| {
        let mut d = vec![0.0; n];
        d[k] = 1.0;
        d
    }));
    let mut rng = Lcg::new(0x5eed_1e55);
    directions.extend((0..10_000).map(|_| rng.unit_vector(n)));

    let mut scored: Vec<(f64, Vec<f64>)> = directions
        .iter()
        .filter_map(|d| place(d))
        .map(|z| (value(&z), z))
        .filter(|(v, _)| v.is_finite())
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(8);

    if let Some(lmo) = ProductLmo::new(ob) {
        for (v, z) in scored.iter_mut() {
            for _ in 0..200 {
                let g = phi.as_matrix().mul_vec(z);
                let s = lmo.argmax(&g, z);
                let vs = value(&s);
                if !(vs > *v * (1.0 + 1e-15)) {
                    break;
                }
                *v = vs;
                *z = s;
            }
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    }

    scored.into_iter().find_map(|(_, z)| {
        let z: Vec<f64> = z.iter().map(|x| x * (1.0 - 1e-12)).collect();
        (ob.antecedents_hold(&z, 0.0) && value(&z) > 1.0 + tol.max(1e-9)).then_some(z)
    })
}

/// `AᵀPA − P ≺ 0`, with margin `−λ_max(AᵀPA − P)`.
pub fn check_lyapunov_decrease(a: &Matrix, p: &SymMatrix, tol: f64) -> Result<(bool, f64), CertError> {
    let m = p.congruence_t(a)?.sub(p)?;
    let lmax = sym_eigen(&m)?.max();
    let scale = m.as_matrix().norm_inf().max(1.0);
    Ok((lmax < -tol * scale, -lmax))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Status {
    Pass,
    Unknown,
    Fail,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Unknown => "UNKNOWN",
            Status::Fail => "FAIL",
        })
    }
}

/// How an implication was decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Trivial,
    Syntactic,
    Points,
    Range,
    Containment,
    SProcedure,
    Search,
}

/// One checked implication `∧ pre ⇒ post`.
#[derive(Debug, Clone)]
pub struct Implication {
    pub pre: Vec<Fact>,
    pub post: Fact,
    pub status: Status,
    pub margin: f64,
    pub route: Route,
    /// Satisfies every fact of `pre` and violates `post`.
    pub witness: Option<Env>,
    /// Present when the S-procedure certified the implication.
    pub certificate: Option<(Obligation, Certificate)>,
}

impl Implication {
    fn new(pre: &[Fact], post: &Fact, status: Status, margin: f64, route: Route) -> Self {
        Implication {
            pre: pre.to_vec(),
            post: post.clone(),
            status,
            margin,
            route,
            witness: None,
            certificate: None,
        }
    }
}

fn all_vars(pre: &[Fact], post: &Fact) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for f in pre.iter().chain([post]) {
        for v in f.vars() {
            if !out.contains(&v) {
                out.push(v);
            }
        }
    }
    out.sort();
    out
}

/// Outer bound on the range of `var` under `pre`.
fn var_range(pre: &[Fact], var: &str) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut clip = |a: f64, b: f64| {
        lo = lo.max(a);
        hi = hi.min(b);
    };
    for f in pre {
        match f {
            Fact::Eq { var: v, value } if v == var => clip(*value, *value),
            Fact::Le { var: v, value } if v == var => clip(f64::NEG_INFINITY, *value),
            Fact::Ge { var: v, value } if v == var => clip(*value, f64::INFINITY),
            Fact::Sq { var: v, bound } if v == var => {
                let r = bound.max(0.0).sqrt();
                clip(-r, r)
            }
            Fact::InG(g) => {
                if let Some(i) = g.index_of(var) {
                    let r = g.shape()[(i, i)].max(0.0).sqrt();
                    clip(-r, r);
                }
            }
            Fact::InE(q) | Fact::Quad(q) => {
                if let Some(i) = q.vars().iter().position(|v| v == var) {
                    if let Ok(g) = from_quadform(q) {
                        let r = g.shape()[(i, i)].max(0.0).sqrt();
                        clip(-r, r);
                    }
                }
            }
            _ => {}
        }
    }
    (lo, hi)
}

/// A valuation satisfying the scalar facts of `pre` where possible.
fn default_env(pre: &[Fact], post: &Fact) -> Env {
    let mut env = Env::new();
    for v in all_vars(pre, post) {
        let (lo, hi) = var_range(
            &pre.iter()
                .filter(|f| matches!(f, Fact::Eq { .. } | Fact::Le { .. } | Fact::Ge { .. } | Fact::Sq { .. }))
                .cloned()
                .collect::<Vec<_>>(),
            &v,
        );
        let x = if lo <= 0.0 && 0.0 <= hi {
            0.0
        } else if lo > 0.0 {
            lo
        } else {
            hi
        };
        env.insert(v, if x.is_finite() { x } else { 0.0 });
    }
    env
}

fn holds_all(pre: &[Fact], env: &Env) -> bool {
    pre.iter().all(|f| f.holds(env, 1e-9).unwrap_or(false))
}

fn violates(post: &Fact, env: &Env, tol: f64) -> bool {
    matches!(post.holds(env, tol), Ok(false))
}

fn accept_witness(imp: &mut Implication, env: Env, tol: f64) -> bool {
    if holds_all(&imp.pre, &env) && violates(&imp.post, &env, tol) {
        imp.status = Status::Fail;
        imp.witness = Some(env);
        true
    } else {
        false
    }
}

/// Consequent of an ellipsoid-type post fact as a quadratic form.
fn post_quadform(post: &Fact) -> Option<QuadForm> {
    match post {
        Fact::InE(q) | Fact::Quad(q) => Some(q.clone()),
        Fact::InG(g) => g.to_quadform().ok(),
        Fact::Sq { var, bound } if *bound > 0.0 => {
            QuadForm::new(vec![var.clone()], SymMatrix::diag(&[1.0 / bound])).ok()
        }
        _ => None,
    }
}

/// Shape of a pre fact that covers every variable in `vars`, projected onto
/// `vars`, together with the full shape.
fn covering_shape(f: &Fact, vars: &[String]) -> Option<(ShapeEllipsoid, ShapeEllipsoid)> {
    let full = match f {
        Fact::InG(g) => g.clone(),
        Fact::InE(q) | Fact::Quad(q) => from_quadform(q).ok()?,
        _ => return None,
    };
    if !vars.iter().all(|v| full.index_of(v).is_some()) {
        return None;
    }
    Some((full.project(vars).ok()?, full))
}

/// Containment of a single pre ellipsoid in the post ellipsoid.
fn containment_route(pre: &[Fact], post: &Fact, tol: f64) -> Option<Implication> {
    let post_vars = post.vars();
    for f in pre {
        let Some((inner, full)) = covering_shape(f, &post_vars) else { continue };
        let (ok, margin, z) = match post {
            Fact::InG(outer) => {
                let c = contains(&inner, outer, tol).ok()?;
                (c.contained, c.margin, c.witness)
            }
            _ => {
                let q = post_quadform(post)?;
                let l = psd_factor(inner.shape()).ok()?;
                let m = q.form().congruence_t(&l).ok()?;
                let e = sym_eigen(&m).ok()?;
                let margin = 1.0 - e.max();
                let ok = margin >= -tol * e.max().abs().max(1.0);
                let z = (!ok).then(|| l.mul_vec(&e.vector(e.values.len() - 1)));
                (ok, margin, z)
            }
        };
        let mut imp = Implication::new(pre, post, if ok { Status::Pass } else { Status::Unknown }, margin, Route::Containment);
        if ok {
            return Some(imp);
        }
        if let (Some(z), Some(q)) = (z, post_quadform(post)) {
            // lift the violating point to the full pre ellipsoid through the
            // support point in the direction of the consequent's gradient
            let grad = q.form().as_matrix().mul_vec(&z);
            let mut c = vec![0.0; full.dim()];
            for (k, v) in post_vars.iter().enumerate() {
                c[full.index_of(v).expect("covering")] = grad[k];
            }
            let lifted = full.support_point(&c).unwrap_or_else(|| {
                let mut out = vec![0.0; full.dim()];
                for (k, v) in post_vars.iter().enumerate() {
                    out[full.index_of(v).expect("covering")] = z[k];
                }
                out
            });
            let mut env = default_env(pre, post);
            for (k, v) in full.vars().iter().enumerate() {
                env.insert(v.clone(), lifted[k] * (1.0 - 1e-12));
            }
            if accept_witness(&mut imp, env, tol) {
                return Some(imp);
            }
        }
        if pre.len() == 1 {
            return Some(imp);
        }
    }
    None
}

/// Builds the S-procedure obligation `pre ⇒ q`, substituting zero points.
fn build_obligation(pre: &[Fact], q: &QuadForm, location: usize) -> Result<Option<Obligation>, CertError> {
    let mut zero: Vec<String> = Vec::new();
    let mut antecedents = Vec::new();
    let mut scalar_vars: Vec<String> = Vec::new();
    for f in pre {
        match f {
            Fact::Eq { var, value } if *value == 0.0 => zero.push(var.clone()),
            Fact::Eq { var, value } => antecedents.push(ProductFactor::Bound(ScalarBound::Point {
                var: var.clone(),
                value: *value,
            })),
            Fact::Sq { var, .. } | Fact::Le { var, .. } | Fact::Ge { var, .. } => {
                if !scalar_vars.contains(var) {
                    scalar_vars.push(var.clone());
                }
            }
            _ => {}
        }
    }
    for v in &scalar_vars {
        if zero.contains(v) {
            continue;
        }
        let scalar_facts: Vec<Fact> = pre
            .iter()
            .filter(|f| matches!(f, Fact::Sq { .. } | Fact::Le { .. } | Fact::Ge { .. }))
            .cloned()
            .collect();
        let (lo, hi) = var_range(&scalar_facts, v);
        if lo.is_finite() && hi.is_finite() {
            let bound = (lo * lo).max(hi * hi);
            if bound > 0.0 {
                antecedents.push(ProductFactor::Bound(ScalarBound::Square { var: v.clone(), bound }));
            } else {
                zero.push(v.clone());
            }
        }
    }
    let restrict = |q: &QuadForm| -> Result<Option<QuadForm>, CertError> {
        let keep: Vec<usize> = (0..q.dim()).filter(|&i| !zero.contains(&q.vars()[i])).collect();
        if keep.is_empty() {
            return Ok(None);
        }
        Ok(Some(QuadForm::new(
            keep.iter().map(|&i| q.vars()[i].clone()).collect(),
            q.form().principal(&keep),
        )?))
    };
    let mut quads = Vec::new();
    for f in pre {
        let q = match f {
            Fact::InE(q) | Fact::Quad(q) => Some(q.clone()),
            Fact::InG(g) => g.to_quadform().ok(),
            _ => None,
        };
        if let Some(q) = q {
            if let Some(r) = restrict(&q)? {
                quads.push(ProductFactor::Quad(r));
            }
        }
    }
    quads.extend(antecedents);
    let Some(consequent) = restrict(q)? else { return Ok(None) };
    Ok(Some(Obligation {
        antecedents: quads,
        consequent,
        location,
    }))
}

/// Decides `∧ pre ⇒ post`. PASS is always sound; FAIL always carries a
/// checked witness; UNKNOWN means neither was found.
pub fn check_implication(pre: &[Fact], post: &Fact, lambdas: &[f64], tol: f64) -> Implication {
    if pre.contains(&Fact::False) || *post == Fact::True {
        return Implication::new(pre, post, Status::Pass, f64::INFINITY, Route::Trivial);
    }
    if pre.contains(post) {
        return Implication::new(pre, post, Status::Pass, 0.0, Route::Syntactic);
    }
    let mut imp = Implication::new(pre, post, Status::Unknown, f64::NEG_INFINITY, Route::Search);
    if *post == Fact::False {
        accept_witness(&mut imp, default_env(pre, post), tol);
        return imp;
    }

    // every variable of the post fact pinned by a point fact
    let env0 = default_env(pre, post);
    let pinned = post.vars().iter().all(|v| pre.iter().any(|f| matches!(f, Fact::Eq { var, .. } if var == v)));
    if pinned {
        let ok = post.holds(&env0, tol).unwrap_or(false);
        let mut imp = Implication::new(pre, post, if ok { Status::Pass } else { Status::Unknown }, 0.0, Route::Points);
        if let Some(q) = post_quadform(post) {
            let z: Vec<f64> = q.vars().iter().map(|v| env0[v]).collect();
            imp.margin = 1.0 - q.value(&z);
        }
        if !ok {
            accept_witness(&mut imp, env0, tol);
        }
        return imp;
    }

    if let Fact::Eq { var, .. } | Fact::Le { var, .. } | Fact::Ge { var, .. } | Fact::Sq { var, .. } = post {
        let (lo, hi) = var_range(pre, var);
        let (ok, margin, extreme) = match post {
            Fact::Eq { value, .. } => {
                let m = -(lo - value).abs().max((hi - value).abs());
                (m >= -tol * value.abs().max(1.0), m, if (lo - value).abs() > (hi - value).abs() { lo } else { hi })
            }
            Fact::Le { value, .. } => (hi <= value + tol * value.abs().max(1.0), value - hi, hi),
            Fact::Ge { value, .. } => (lo >= value - tol * value.abs().max(1.0), lo - value, lo),
            Fact::Sq { bound, .. } => {
                let m2 = (lo * lo).max(hi * hi);
                (m2 <= bound + tol * bound.abs().max(1.0), bound - m2, if lo * lo > hi * hi { lo } else { hi })
            }
            _ => unreachable!(),
        };
        if ok {
            return Implication::new(pre, post, Status::Pass, margin, Route::Range);
        }
        imp.margin = margin;
        imp.route = Route::Range;
        let mut candidates = Vec::new();
        if extreme.is_finite() {
            candidates.push(extreme);
        } else {
            let pivot = match post {
                Fact::Eq { value, .. } | Fact::Le { value, .. } | Fact::Ge { value, .. } => *value,
                Fact::Sq { bound, .. } => bound.sqrt(),
                _ => 0.0,
            };
            candidates.extend([pivot.abs() + 1.0, -(pivot.abs() + 1.0)]);
        }
        for x in candidates {
            // lift through any ellipsoid fact mentioning the variable
            let mut env = env0.clone();
            env.insert(var.clone(), x);
            for f in pre {
                if let Some((_, full)) = covering_shape(f, std::slice::from_ref(var)) {
                    let i = full.index_of(var).expect("covering");
                    let mut c = vec![0.0; full.dim()];
                    c[i] = x.signum();
                    if let Some(z) = full.support_point(&c) {
                        let k = if z[i] != 0.0 { x / z[i] } else { 0.0 };
                        for (j, v) in full.vars().iter().enumerate() {
                            env.insert(v.clone(), z[j] * k);
                        }
                    }
                }
            }
            if accept_witness(&mut imp, env, tol) {
                return imp;
            }
        }
        if !matches!(post, Fact::Sq { .. }) {
            return imp;
        }
    }

    if matches!(post, Fact::InE(_) | Fact::Quad(_) | Fact::InG(_)) {
        if let Some(c) = containment_route(pre, post, tol) {
            if c.status != Status::Unknown {
                return c;
            }
            imp.margin = c.margin;
        }
    }

    let Some(q) = post_quadform(post) else { return imp };
    let ob = match build_obligation(pre, &q, 0) {
        Ok(Some(ob)) => ob,
        Ok(None) => return Implication::new(pre, post, Status::Pass, 1.0, Route::Points),
        Err(_) => return imp,
    };
    if let Some(v) = ob.consequent.vars().iter().find(|v| !ob.vars().contains(v)) {
        // the consequent grows along a direction nothing constrains
        let i = ob.consequent.vars().iter().position(|w| w == v).expect("found");
        let d = ob.consequent.form()[(i, i)];
        if d > 0.0 {
            let mut env = env0.clone();
            for w in ob.consequent.vars() {
                if !pre.iter().any(|f| f.vars().contains(w)) {
                    env.insert(w.clone(), 0.0);
                }
            }
            env.insert(v.clone(), 2.0 / d.sqrt());
            accept_witness(&mut imp, env, tol);
        }
        return imp;
    }
    let mut cert = if lambdas.len() == ob.antecedents.len() {
        check_sprocedure(&ob, lambdas, tol).ok()
    } else {
        None
    };
    if !cert.as_ref().is_some_and(|c| c.certified) {
        if let Ok(best) = best_multipliers(&ob, 200, tol) {
            if cert.as_ref().is_none_or(|c| best.margin > c.margin) {
                cert = Some(best);
            }
        }
    }
    if let Some(c) = &cert {
        if c.certified {
            let mut pass = Implication::new(pre, post, Status::Pass, c.margin, Route::SProcedure);
            pass.certificate = Some((ob, c.clone()));
            return pass;
        }
        if imp.margin == f64::NEG_INFINITY {
            imp.margin = c.margin;
        }
        imp.route = Route::SProcedure;
    }
    if let Some(z) = find_witness(&ob, tol) {
        let mut env = env0.clone();
        for (v, x) in ob.vars().iter().zip(&z) {
            env.insert(v.clone(), *x);
        }
        accept_witness(&mut imp, env, tol);
    }
    imp
}

/// Weakest precondition of a fact through a statement, when it is a fact.
pub fn wp_fact(stmt: &Stmt, post: &Fact) -> Option<Fact> {
    let mentions = |v: &str| post.vars().iter().any(|w| w == v);
    match &stmt.kind {
        StmtKind::Skip | StmtKind::Output(_) => Some(post.clone()),
        StmtKind::Input(v) => (!mentions(v)).then(|| post.clone()),
        StmtKind::Guard(_) => None,
        StmtKind::Assign { var, expr } => {
            if !mentions(var) {
                return Some(post.clone());
            }
            let constant = expr.vars().is_empty();
            let k = expr.constant_part();
            let truth = |b: bool| Some(if b { Fact::True } else { Fact::False });
            match post {
                Fact::Eq { value, .. } if constant => truth(k == *value),
                Fact::Le { value, .. } if constant => truth(k <= *value),
                Fact::Ge { value, .. } if constant => truth(k >= *value),
                Fact::Sq { bound, .. } if constant => truth(k * k <= *bound),
                Fact::Sq { .. } | Fact::InE(_) | Fact::Quad(_) | Fact::InG(_) => {
                    if k != 0.0 {
                        return None;
                    }
                    let q = post_quadform(post)?;
                    let w = wp_assign(&q, var, expr).ok()?;
                    Some(if w.dim() == 0 || w.form().as_matrix().max_abs() == 0.0 {
                        Fact::True
                    } else {
                        Fact::Quad(w)
                    })
                }
                _ => None,
            }
        }
    }
}

/// One line of a check report.
#[derive(Debug, Clone)]
pub struct CheckEntry {
    pub line: usize,
    /// Short description of the item checked.
    pub summary: String,
    pub status: Status,
    pub margin: f64,
    /// Pre-state (variables in sorted order) leading to a violation; for an
    /// input statement the value read is appended last.
    pub witness: Option<Vec<(String, f64)>>,
    pub implications: Vec<Implication>,
}

/// Result of [`check_annotations`].
#[derive(Debug, Clone, Default)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
    /// Problems with the listing itself.
    pub diagnostics: Vec<String>,
}

impl CheckReport {
    pub fn all_pass(&self) -> bool {
        self.diagnostics.is_empty() && self.entries.iter().all(|e| e.status == Status::Pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| e.status == Status::Fail)
    }

    /// `<line>:<STATUS> margin=<g> [witness=<csv>]`, one line per item.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}:{} margin={}", e.line, e.status, crate::fmt::g(e.margin)));
            if let Some(w) = &e.witness {
                let values: Vec<f64> = w.iter().map(|(_, v)| *v).collect();
                out.push_str(&format!(" witness={}", crate::fmt::csv_full(&values)));
            }
            out.push('\n');
        }
        out
    }
}

fn summarize(item: Item<'_>) -> String {
    let mut text = String::new();
    crate::lang::render_item(&mut text, item, false);
    text.lines().next().unwrap_or("").trim().to_string()
}

/// Checks `pre ⇒ post` for each post fact, executing `stmt` on candidate
/// witnesses so that every FAIL is a real counterexample to the triple.
fn check_triple(stmt: &Stmt, pre: &[Fact], post: &[Fact], lambdas: &[f64], tol: f64) -> Vec<(Implication, Option<Env>)> {
    let mut out = Vec::new();
    for f in post {
        if let Some(w) = wp_fact(stmt, f) {
            let mut imp = check_implication(pre, &w, lambdas, tol);
            let mut shown = None;
            if let Some(env) = imp.witness.clone() {
                let mut next = env.clone();
                let confirmed = execute(stmt, &mut next, None).is_ok() && violates(f, &next, tol);
                if confirmed {
                    shown = Some(env);
                } else {
                    imp.status = Status::Unknown;
                }
            }
            out.push((imp, shown));
            continue;
        }
        // forward route
        let st = AbstractState::from_facts(pre);
        let stepped = if needs_weakening(&st, stmt) {
            weaken_to_product(&st, lambdas).and_then(|w| transfer_stmt(&w, stmt))
        } else {
            transfer_stmt(&st, stmt)
        };
        let Ok(next_state) = stepped else {
            let mut imp = Implication::new(pre, f, Status::Unknown, f64::NAN, Route::Search);
            imp.witness = None;
            out.push((imp, None));
            continue;
        };
        let mut imp = check_implication(&next_state.facts(), f, lambdas, tol);
        imp.pre = pre.to_vec();
        let mut shown = None;
        if imp.status == Status::Fail {
            let post_env = imp.witness.clone().expect("fail has witness");
            let mut candidates: Vec<(Env, Option<f64>)> = Vec::new();
            match &stmt.kind {
                StmtKind::Guard(g) => {
                    let w = post_env.get(&g.var).copied().unwrap_or(0.0);
                    for x in [w, g.value, g.value + 1.0, g.value - 1.0, 0.0] {
                        let mut e = post_env.clone();
                        e.insert(g.var.clone(), x);
                        candidates.push((e, None));
                    }
                }
                StmtKind::Input(v) => {
                    let mut e = post_env.clone();
                    let x = e.get(v).copied().unwrap_or(0.0);
                    e.insert(v.clone(), 0.0);
                    candidates.push((e, Some(x)));
                }
                _ => candidates.push((post_env.clone(), None)),
            }
            imp.status = Status::Unknown;
            for (env, input) in candidates {
                let mut next = env.clone();
                if holds_all(pre, &env) && execute(stmt, &mut next, input).is_ok() && violates(f, &next, tol) {
                    imp.status = Status::Fail;
                    let mut shown_env = env.clone();
                    if let (Some(x), StmtKind::Input(v)) = (input, &stmt.kind) {
                        shown_env.insert(format!("{v}'"), x);
                    }
                    shown = Some(shown_env);
                    break;
                }
            }
        }
        out.push((imp, shown));
    }
    out
}

fn entry_from(line: usize, summary: String, results: Vec<(Implication, Option<Env>)>) -> CheckEntry {
    let status = results.iter().map(|(i, _)| i.status).max().unwrap_or(Status::Pass);
    let margin = results
        .iter()
        .map(|(i, _)| i.margin)
        .filter(|m| !m.is_nan())
        .fold(f64::INFINITY, f64::min);
    let witness = results
        .iter()
        .find(|(i, w)| i.status == Status::Fail && w.is_some())
        .and_then(|(_, w)| w.clone())
        .map(|env| env.into_iter().collect());
    CheckEntry {
        line,
        summary,
        status,
        margin,
        witness,
        implications: results.into_iter().map(|(i, _)| i).collect(),
    }
}

/// Checks every triple of an annotated listing, the loop entry and the
/// loop-back implication. The fact after the loop must be `false`.
pub fn check_annotations(annotated: &AnnotatedProgram, lambdas: &[f64], tol: f64) -> CheckReport {
    let program = &annotated.program;
    let facts = &annotated.facts;
    let mut report = CheckReport::default();
    if facts.len() != program.point_count() {
        report.diagnostics.push(format!(
            "expected {} fact lists, got {}",
            program.point_count(),
            facts.len()
        ));
        return report;
    }
    let items = program.items();
    for (i, item) in items.iter().enumerate() {
        let pre = &facts[i];
        let summary = summarize(*item);
        let entry = match item {
            Item::Stmt(s) => entry_from(s.line, summary, check_triple(s, pre, &facts[i + 1], lambdas, tol)),
            Item::LoopHead => {
                let results = facts[i + 1]
                    .iter()
                    .map(|f| {
                        let imp = check_implication(pre, f, lambdas, tol);
                        let w = imp.witness.clone();
                        (imp, w)
                    })
                    .collect();
                entry_from(program.loop_line, summary, results)
            }
            Item::LoopEnd => {
                let results = facts[program.loop_entry_point()]
                    .iter()
                    .map(|f| {
                        let imp = check_implication(pre, f, lambdas, tol);
                        let w = imp.witness.clone();
                        (imp, w)
                    })
                    .collect();
                let last = &facts[program.point_count() - 1];
                if !last.iter().any(|f| *f == Fact::False) {
                    report
                        .diagnostics
                        .push(format!("{}: the fact after the loop must be 'false'", program.end_line));
                }
                entry_from(program.end_line, summary, results)
            }
        };
        report.entries.push(entry);
    }
    report
}
