//! Facts attached to program points, and their textual form.
//!
//! ```text
//! fact := "true" | "false"
//!       | "inE(" vars ";" rows ")"     x ∈ {z : zᵀΦz ≤ 1}, Φ ≻ 0
//!       | "quad(" vars ";" rows ")"    same set, Φ ⪰ 0 may be singular
//!       | "inG(" vars ";" rows ")"     shape form G_R, R ⪰ 0 may be singular
//!       | "sq(" ident ") <= " number | ident " == " number
//!       | ident " <= " number | ident " >= " number
//! ```
//!
//! Rows are `;`-separated and entries whitespace-separated.

use std::fmt;

use crate::ellipsoid::{membership, QuadForm, ShapeEllipsoid};
use crate::linalg::{Matrix, SymMatrix};

use super::Env;

#[derive(Debug, Clone, PartialEq)]
pub enum Fact {
    True,
    False,
    InE(QuadForm),
    Quad(QuadForm),
    InG(ShapeEllipsoid),
    Sq { var: String, bound: f64 },
    Eq { var: String, value: f64 },
    Le { var: String, value: f64 },
    Ge { var: String, value: f64 },
}

fn write_matrix(f: &mut fmt::Formatter<'_>, name: &str, vars: &[String], m: &SymMatrix) -> fmt::Result {
    write!(f, "{name}({}", vars.join(","))?;
    for i in 0..m.dim() {
        write!(f, ";")?;
        for j in 0..m.dim() {
            write!(f, " {}", m[(i, j)])?;
        }
    }
    write!(f, ")")
}

impl fmt::Display for Fact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fact::True => write!(f, "true"),
            Fact::False => write!(f, "false"),
            Fact::InE(q) => write_matrix(f, "inE", q.vars(), q.form()),
            Fact::Quad(q) => write_matrix(f, "quad", q.vars(), q.form()),
            Fact::InG(g) => write_matrix(f, "inG", g.vars(), g.shape()),
            Fact::Sq { var, bound } => write!(f, "sq({var}) <= {bound}"),
            Fact::Eq { var, value } => write!(f, "{var} == {value}"),
            Fact::Le { var, value } => write!(f, "{var} <= {value}"),
            Fact::Ge { var, value } => write!(f, "{var} >= {value}"),
        }
    }
}

fn is_ident(s: &str) -> bool {
    let mut c = s.chars();
    matches!(c.next(), Some(ch) if ch.is_ascii_alphabetic() || ch == '_')
        && c.all(|ch| ch.is_ascii_alphanumeric() || ch == '_')
}

fn number(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("malformed number '{}'", s.trim()))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("non-finite number '{}'", s.trim()))
    }
}

fn matrix_fact(body: &str) -> Result<(Vec<String>, SymMatrix), String> {
    let mut parts = body.split(';');
    let vars: Vec<String> = parts
        .next()
        .unwrap_or("")
        .split(',')
        .map(|v| v.trim().to_string())
        .collect();
    if let Some(bad) = vars.iter().find(|v| !is_ident(v)) {
        return Err(format!("bad variable name '{bad}'"));
    }
    let rows: Vec<Vec<f64>> = parts
        .map(|r| r.split_whitespace().map(number).collect::<Result<Vec<_>, _>>())
        .collect::<Result<_, _>>()?;
    if rows.len() != vars.len() || rows.iter().any(|r| r.len() != vars.len()) {
        return Err(format!("expected a {0}x{0} matrix", vars.len()));
    }
    let m = Matrix::try_from_rows(&rows).map_err(|e| e.to_string())?;
    if (0..m.rows()).any(|i| (0..i).any(|j| m[(i, j)] != m[(j, i)])) {
        return Err("matrix is not symmetric".into());
    }
    let s = SymMatrix::from_matrix(&m).map_err(|e| e.to_string())?;
    Ok((vars, s))
}

impl std::str::FromStr for Fact {
    type Err = String;

    fn from_str(text: &str) -> Result<Fact, String> {
        let t = text.trim();
        match t {
            "true" => return Ok(Fact::True),
            "false" => return Ok(Fact::False),
            _ => {}
        }
        for name in ["inE", "quad", "inG"] {
            if let Some(rest) = t.strip_prefix(name).and_then(|r| r.strip_prefix('(')) {
                let body = rest.strip_suffix(')').ok_or("missing ')'")?;
                let (vars, m) = matrix_fact(body)?;
                return match name {
                    "inE" => {
                        let q = QuadForm::new(vars, m).map_err(|e| e.to_string())?;
                        crate::ellipsoid::from_quadform(&q).map_err(|e| format!("inE needs a definite matrix: {e}"))?;
                        Ok(Fact::InE(q))
                    }
                    "quad" => Ok(Fact::Quad(QuadForm::new(vars, m).map_err(|e| e.to_string())?)),
                    _ => Ok(Fact::InG(ShapeEllipsoid::new(vars, m).map_err(|e| e.to_string())?)),
                };
            }
        }
        if let Some(rest) = t.strip_prefix("sq(") {
            let (var, tail) = rest.split_once(')').ok_or("missing ')'")?;
            let bound = tail.trim().strip_prefix("<=").ok_or("expected '<=' after sq(..)")?;
            let var = var.trim();
            if !is_ident(var) {
                return Err(format!("bad variable name '{var}'"));
            }
            return Ok(Fact::Sq {
                var: var.to_string(),
                bound: number(bound)?,
            });
        }
        for (op, mk) in [
            ("==", (|var, value| Fact::Eq { var, value }) as fn(String, f64) -> Fact),
            ("<=", |var, value| Fact::Le { var, value }),
            (">=", |var, value| Fact::Ge { var, value }),
        ] {
            if let Some((lhs, rhs)) = t.split_once(op) {
                let var = lhs.trim();
                if !is_ident(var) {
                    return Err(format!("bad variable name '{var}'"));
                }
                return Ok(mk(var.to_string(), number(rhs)?));
            }
        }
        Err(format!("unrecognized fact '{t}'"))
    }
}

fn lookup(env: &Env, vars: &[String]) -> Result<Vec<f64>, String> {
    vars.iter()
        .map(|v| env.get(v).copied().ok_or_else(|| v.clone()))
        .collect()
}

impl Fact {
    /// Variables mentioned.
    pub fn vars(&self) -> Vec<String> {
        match self {
            Fact::True | Fact::False => Vec::new(),
            Fact::InE(q) | Fact::Quad(q) => q.vars().to_vec(),
            Fact::InG(g) => g.vars().to_vec(),
            Fact::Sq { var, .. } | Fact::Eq { var, .. } | Fact::Le { var, .. } | Fact::Ge { var, .. } => {
                vec![var.clone()]
            }
        }
    }

    /// Evaluates the fact on a valuation; `Err` names a missing variable.
    pub fn holds(&self, env: &Env, tol: f64) -> Result<bool, String> {
        let slack = |v: f64| tol * v.abs().max(1.0);
        Ok(match self {
            Fact::True => true,
            Fact::False => false,
            Fact::InE(q) | Fact::Quad(q) => q.contains_point(&lookup(env, q.vars())?, tol),
            Fact::InG(g) => membership(g, &lookup(env, g.vars())?, tol),
            Fact::Sq { var, bound } => {
                let x = lookup(env, std::slice::from_ref(var))?[0];
                x * x <= bound + slack(*bound)
            }
            Fact::Eq { var, value } => {
                let x = lookup(env, std::slice::from_ref(var))?[0];
                (x - value).abs() <= slack(*value)
            }
            Fact::Le { var, value } => lookup(env, std::slice::from_ref(var))?[0] <= value + slack(*value),
            Fact::Ge { var, value } => lookup(env, std::slice::from_ref(var))?[0] >= value - slack(*value),
        })
    }
}

/// Splits a comma-separated fact list, ignoring commas inside parentheses.
pub fn split_facts(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in text.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => depth -= 1,
            ',' if depth == 0 => {
                out.push(text[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let last = text[start..].trim();
    if !last.is_empty() || !out.is_empty() {
        out.push(last);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> QuadForm {
        QuadForm::new(
            vec!["x0".into(), "x1".into()],
            SymMatrix::from_rows(&[&[0.03, 0.2], &[0.2, 10.0]]),
        )
        .unwrap()
    }

    #[test]
    fn render_forms() {
        assert_eq!(Fact::InE(p()).to_string(), "inE(x0,x1; 0.03 0.2; 0.2 10)");
        assert_eq!(Fact::Sq { var: "y".into(), bound: 1.0 }.to_string(), "sq(y) <= 1");
        assert_eq!(Fact::Eq { var: "x0".into(), value: 0.0 }.to_string(), "x0 == 0");
        assert_eq!(Fact::Ge { var: "y".into(), value: -1.0 }.to_string(), "y >= -1");
        assert_eq!(Fact::False.to_string(), "false");
    }

    #[test]
    fn parse_round_trip() {
        for text in [
            "true",
            "false",
            "inE(x0,x1; 0.03 0.2; 0.2 10)",
            "quad(x; 0)",
            "inG(a,b; 1 1; 1 1)",
            "sq(y) <= 1",
            "x0 == 0",
            "y <= 1",
            "y >= -1",
        ] {
            let f: Fact = text.parse().unwrap();
            assert_eq!(f.to_string(), text);
            assert_eq!(f.to_string().parse::<Fact>().unwrap(), f);
        }
    }

    #[test]
    fn parse_errors() {
        assert!("inE(x; 0)".parse::<Fact>().is_err());
        assert!("inE(x,y; 1 0)".parse::<Fact>().is_err());
        assert!("quad(x,y; 1 2; 3 1)".parse::<Fact>().unwrap_err().contains("symmetric"));
        assert!("inG(x; -1)".parse::<Fact>().is_err());
        assert!("sq(y) < 1".parse::<Fact>().is_err());
        assert!("maybe".parse::<Fact>().is_err());
    }

    #[test]
    fn evaluation() {
        let mut env = Env::new();
        env.insert("x0".into(), 0.0);
        env.insert("x1".into(), 10f64.powf(-0.5));
        assert!(Fact::InE(p()).holds(&env, 1e-12).unwrap());
        env.insert("x1".into(), 0.33);
        assert!(!Fact::InE(p()).holds(&env, 1e-12).unwrap());
        assert_eq!(Fact::InE(p()).holds(&Env::new(), 0.0).unwrap_err(), "x0");
        env.insert("y".into(), -1.0);
        assert!(Fact::Sq { var: "y".into(), bound: 1.0 }.holds(&env, 0.0).unwrap());
        assert!(!Fact::Le { var: "y".into(), value: -1.5 }.holds(&env, 0.0).unwrap());
    }

    #[test]
    fn split_respects_parentheses() {
        assert_eq!(
            split_facts("inE(x0,x1; 1 0; 0 1), sq(y) <= 1"),
            vec!["inE(x0,x1; 1 0; 0 1)", "sq(y) <= 1"]
        );
        assert!(split_facts("  ").is_empty());
    }
}
