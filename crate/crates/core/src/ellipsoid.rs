//! Origin-centred ellipsoids in two representations.
//!
//! A [`ShapeEllipsoid`] is the set `G_R = {z : [[1, zᵀ], [z, R]] ⪰ 0}`. It
//! stays meaningful when `R` is singular, which is what affine images of
//! lower-dimensional sets produce (copying a variable into a temporary makes
//! the ellipsoid flat along one axis). A [`QuadForm`] is the sublevel set
//! `{z : zᵀΦz ≤ 1}`; it stays meaningful when `Φ` is singular, which is what
//! substituting an assignment into a goal produces (a cylinder). When either
//! matrix is definite the two describe the same set with `R = Φ⁻¹`.
//!
//! Forward analysis works in shape form and backward analysis in quadratic
//! form; conversion between them is only offered for definite matrices.

use thiserror::Error;

use crate::linalg::{self, is_psd, sym_eigen, LinalgError, Matrix, SymMatrix};

/// Eigenvalue ratio below which a matrix is treated as singular for
/// conversions between the two representations.
const DEFINITE_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EllipsoidError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("variable lists differ: {left:?} vs {right:?}")]
    VarMismatch {
        left: Vec<String>,
        right: Vec<String>,
    },
    #[error("{what}: expected dimension {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("duplicate variable `{0}`")]
    DuplicateVar(String),
    #[error("matrix is not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("matrix is singular (eigenvalue ratio {0:e}); stay in the current representation")]
    Degenerate(f64),
    #[error("multipliers sum to {0}, which exceeds 1")]
    MultiplierBudget(f64),
    #[error("multiplier {0} is not positive")]
    MultiplierDomain(f64),
    #[error("expected {expected} multipliers, got {got}")]
    MultiplierCount { expected: usize, got: usize },
    #[error("variable `{0}` appears in more than one merged fact")]
    OverlappingFacts(String),
    #[error("point fact {var} == 0 has no finite quadratic weight")]
    ZeroPoint { var: String },
}

fn check_vars(vars: &[String], dim: usize) -> Result<(), EllipsoidError> {
    if vars.len() != dim {
        return Err(EllipsoidError::Dimension {
            what: "variable list",
            expected: dim,
            got: vars.len(),
        });
    }
    for (i, v) in vars.iter().enumerate() {
        if vars[..i].contains(v) {
            return Err(EllipsoidError::DuplicateVar(v.clone()));
        }
    }
    Ok(())
}

fn check_psd(m: &SymMatrix, tol: f64) -> Result<(), EllipsoidError> {
    let chk = is_psd(m, tol)?;
    if chk.psd {
        Ok(())
    } else {
        Err(EllipsoidError::NotPsd(chk.min_eigenvalue))
    }
}

/// Inverse of a symmetric matrix that is required to be strictly definite.
fn definite_inverse(m: &SymMatrix) -> Result<SymMatrix, EllipsoidError> {
    let eig = sym_eigen(m)?;
    let ratio = if eig.max() > 0.0 {
        eig.min() / eig.max()
    } else {
        0.0
    };
    if m.dim() > 0 && ratio <= DEFINITE_REL {
        return Err(EllipsoidError::Degenerate(ratio));
    }
    Ok(linalg::sym_inverse(m)?)
}

/// Index of every name in `sub` inside `all`.
pub(crate) fn positions(all: &[String], sub: &[String]) -> Option<Vec<usize>> {
    sub.iter().map(|v| all.iter().position(|a| a == v)).collect()
}

/// Shape-form ellipsoid `G_R` over named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEllipsoid {
    vars: Vec<String>,
    shape: SymMatrix,
}

impl ShapeEllipsoid {
    pub fn new(vars: Vec<String>, shape: SymMatrix) -> Result<Self, EllipsoidError> {
        Self::with_tol(vars, shape, linalg::DEFAULT_TOL)
    }

    pub fn with_tol(vars: Vec<String>, shape: SymMatrix, tol: f64) -> Result<Self, EllipsoidError> {
        check_vars(&vars, shape.dim())?;
        check_psd(&shape, tol)?;
        Ok(Self { vars, shape })
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn shape(&self) -> &SymMatrix {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn index_of(&self, var: &str) -> Option<usize> {
        self.vars.iter().position(|v| v == var)
    }

    /// `Φ = R⁻¹`; fails when `R` is singular.
    pub fn to_quadform(&self) -> Result<QuadForm, EllipsoidError> {
        Ok(QuadForm {
            vars: self.vars.clone(),
            form: definite_inverse(&self.shape)?,
        })
    }

    /// Restriction to `keep` (in the order given).
    pub fn project(&self, keep: &[String]) -> Result<ShapeEllipsoid, EllipsoidError> {
        let idx = positions(&self.vars, keep).ok_or_else(|| EllipsoidError::VarMismatch {
            left: self.vars.clone(),
            right: keep.to_vec(),
        })?;
        Ok(ShapeEllipsoid {
            vars: keep.to_vec(),
            shape: self.shape.principal(&idx),
        })
    }

    /// Point of `G_R` maximizing `c·z`, or `None` when `cᵀRc = 0`.
    pub fn support_point(&self, c: &[f64]) -> Option<Vec<f64>> {
        let rc = self.shape.as_matrix().mul_vec(c);
        let h: f64 = c.iter().zip(&rc).map(|(a, b)| a * b).sum();
        (h > 0.0).then(|| rc.iter().map(|v| v / h.sqrt()).collect())
    }
}

/// Sublevel set `{z : zᵀΦz ≤ 1}` over named variables.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadForm {
    vars: Vec<String>,
    form: SymMatrix,
}

impl QuadForm {
    pub fn new(vars: Vec<String>, form: SymMatrix) -> Result<Self, EllipsoidError> {
        Self::with_tol(vars, form, linalg::DEFAULT_TOL)
    }

    pub fn with_tol(vars: Vec<String>, form: SymMatrix, tol: f64) -> Result<Self, EllipsoidError> {
        check_vars(&vars, form.dim())?;
        check_psd(&form, tol)?;
        Ok(Self { vars, form })
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn form(&self) -> &SymMatrix {
        &self.form
    }

    pub fn dim(&self) -> usize {
        self.vars.len()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.form.quad(z)
    }

    pub fn contains_point(&self, z: &[f64], tol: f64) -> bool {
        self.value(z) <= 1.0 + tol
    }

    /// Same set over a larger variable tuple (zero rows for the new ones).
    pub fn embed(&self, vars: &[String]) -> Result<SymMatrix, EllipsoidError> {
        let idx = positions(vars, &self.vars).ok_or_else(|| EllipsoidError::VarMismatch {
            left: self.vars.clone(),
            right: vars.to_vec(),
        })?;
        let mut m = Matrix::zeros(vars.len(), vars.len());
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                m[(i, j)] += self.form[(a, b)];
            }
        }
        Ok(SymMatrix::from_matrix(&m)?)
    }
}

/// One-variable fact: `var² ≤ bound` or `var = value`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarBound {
    Square { var: String, bound: f64 },
    Point { var: String, value: f64 },
}

impl ScalarBound {
    pub fn var(&self) -> &str {
        match self {
            ScalarBound::Square { var, .. } | ScalarBound::Point { var, .. } => var,
        }
    }

    /// Bound `c` on `var²` implied by the fact.
    pub fn square_bound(&self) -> f64 {
        match self {
            ScalarBound::Square { bound, .. } => *bound,
            ScalarBound::Point { value, .. } => value * value,
        }
    }

    pub fn holds(&self, x: f64, tol: f64) -> bool {
        match self {
            ScalarBound::Square { bound, .. } => x * x <= bound + tol * bound.max(1.0),
            ScalarBound::Point { value, .. } => (x - value).abs() <= tol * value.abs().max(1.0),
        }
    }
}

/// Shape form `R = Φ⁻¹` of a quadratic form. Requires `Φ ≻ 0`.
pub fn from_quadform(q: &QuadForm) -> Result<ShapeEllipsoid, EllipsoidError> {
    Ok(ShapeEllipsoid {
        vars: q.vars.clone(),
        shape: definite_inverse(&q.form)?,
    })
}

/// Image of `G_R` under `z ↦ M z`, i.e. `G_{M R Mᵀ}` over `new_vars`.
pub fn affine_image(
    g: &ShapeEllipsoid,
    m: &Matrix,
    new_vars: Vec<String>,
) -> Result<ShapeEllipsoid, EllipsoidError> {
    if m.cols() != g.dim() {
        return Err(EllipsoidError::Dimension {
            what: "map columns",
            expected: g.dim(),
            got: m.cols(),
        });
    }
    check_vars(&new_vars, m.rows())?;
    Ok(ShapeEllipsoid {
        vars: new_vars,
        shape: g.shape.congruence(m)?,
    })
}

/// Result of a containment test between two shape-form ellipsoids.
#[derive(Debug, Clone, PartialEq)]
pub struct Containment {
    pub contained: bool,
    /// `λ_min(R_outer − R_inner)`.
    pub margin: f64,
    /// A point of the inner set outside the outer one, present when the
    /// test fails and the point was checked.
    pub witness: Option<Vec<f64>>,
}

/// `G_inner ⊆ G_outer` ⟺ `R_outer − R_inner ⪰ 0`.
pub fn contains(
    inner: &ShapeEllipsoid,
    outer: &ShapeEllipsoid,
    tol: f64,
) -> Result<Containment, EllipsoidError> {
    if inner.vars != outer.vars {
        return Err(EllipsoidError::VarMismatch {
            left: inner.vars.clone(),
            right: outer.vars.clone(),
        });
    }
    let diff = outer.shape.sub(&inner.shape)?;
    let chk = is_psd(&diff, tol)?;
    let witness = if chk.psd {
        None
    } else {
        // the inner support point in the direction of the most negative
        // eigenvector has c·z = sqrt(cᵀR_in c) > sqrt(cᵀR_out c)
        let eig = sym_eigen(&diff)?;
        inner
            .support_point(&eig.vector(0))
            .filter(|z| !membership(outer, z, tol))
    };
    Ok(Containment {
        contained: chk.psd,
        margin: chk.min_eigenvalue,
        witness,
    })
}

/// `z ∈ G_R`, tested as `[[1, zᵀ], [z, R]] ⪰ −tol`.
pub fn membership(g: &ShapeEllipsoid, z: &[f64], tol: f64) -> bool {
    if z.len() != g.dim() {
        return false;
    }
    let n = g.dim();
    let mut b = Matrix::zeros(n + 1, n + 1);
    b[(0, 0)] = 1.0;
    for i in 0..n {
        b[(0, i + 1)] = z[i];
        b[(i + 1, 0)] = z[i];
        for j in 0..n {
            b[(i + 1, j + 1)] = g.shape[(i, j)];
        }
    }
    let Ok(bordered) = SymMatrix::from_matrix(&b) else {
        return false;
    };
    is_psd(&bordered, tol).map(|c| c.psd).unwrap_or(false)
}

/// `max |z_i|` over `G_R`.
pub fn coord_bound(g: &ShapeEllipsoid, i: usize) -> f64 {
    g.shape[(i, i)].max(0.0).sqrt()
}

/// `max |c·z|` over `G_R`.
pub fn functional_bound(g: &ShapeEllipsoid, c: &[f64]) -> Result<f64, EllipsoidError> {
    if c.len() != g.dim() {
        return Err(EllipsoidError::Dimension {
            what: "functional",
            expected: g.dim(),
            got: c.len(),
        });
    }
    Ok(g.shape.quad(c).max(0.0).sqrt())
}

/// `sqrt(2·(C P⁻¹ Cᵀ + D²))`, a bound on `|Cx + Dy|` for `x ∈ E_P`, `y² ≤ 1`.
pub fn output_bound_sum(p: &SymMatrix, c: &Matrix, d: f64) -> Result<f64, EllipsoidError> {
    if c.rows() != 1 || c.cols() != p.dim() {
        return Err(EllipsoidError::Dimension {
            what: "output row",
            expected: p.dim(),
            got: c.cols(),
        });
    }
    let p_inv = definite_inverse(p)?;
    let cpc = p_inv.quad(c.row_slice(0));
    Ok((2.0 * (cpc + d * d)).sqrt())
}

/// One input to [`merge_product`].
#[derive(Debug, Clone, PartialEq)]
pub enum ProductFactor {
    Quad(QuadForm),
    Bound(ScalarBound),
}

impl ProductFactor {
    fn vars(&self) -> Vec<String> {
        match self {
            ProductFactor::Quad(q) => q.vars.clone(),
            ProductFactor::Bound(b) => vec![b.var().to_string()],
        }
    }
}

fn check_multipliers(lambdas: &[f64], expected: usize) -> Result<(), EllipsoidError> {
    if lambdas.len() != expected {
        return Err(EllipsoidError::MultiplierCount {
            expected,
            got: lambdas.len(),
        });
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0)) {
        return Err(EllipsoidError::MultiplierDomain(*bad));
    }
    let sum: f64 = lambdas.iter().sum();
    if sum > 1.0 + 1e-12 {
        return Err(EllipsoidError::MultiplierBudget(sum));
    }
    Ok(())
}

/// Weighted product of facts over disjoint variables:
/// `Φ = blkdiag(λ₁Φ₁, …, λ_kΦ_k)`, where a bound `v² ≤ c` is the block
/// `λ/c`. With `Σλ ≤ 1` the intersection of the facts lies inside the
/// result.
pub fn merge_product(facts: &[ProductFactor], lambdas: &[f64]) -> Result<QuadForm, EllipsoidError> {
    check_multipliers(lambdas, facts.len())?;
    let mut vars: Vec<String> = Vec::new();
    let mut blocks = Vec::with_capacity(facts.len());
    for (fact, lam) in facts.iter().zip(lambdas) {
        for v in fact.vars() {
            if vars.contains(&v) {
                return Err(EllipsoidError::OverlappingFacts(v));
            }
            vars.push(v);
        }
        let block = match fact {
            ProductFactor::Quad(q) => q.form.scale(*lam),
            ProductFactor::Bound(b) => {
                let c = b.square_bound();
                if c <= 0.0 {
                    return Err(EllipsoidError::ZeroPoint {
                        var: b.var().to_string(),
                    });
                }
                SymMatrix::diag(&[lam / c])
            }
        };
        blocks.push(block);
    }
    let refs: Vec<&SymMatrix> = blocks.iter().collect();
    Ok(QuadForm {
        vars,
        form: SymMatrix::block_diag(&refs),
    })
}
