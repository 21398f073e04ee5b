//! The controller language: a straight-line initialization followed by one
//! infinite loop whose body is made of affine assignments, `input`,
//! `output`, clamp-style guards and `skip`.
//!
//! ```text
//! program  := { stmt } "loop" "{" { stmt } "}"
//! stmt     := ident ":=" affine ";" | "input" ident ";" | "output" affine ";"
//!           | "if" "(" ident cmp number ")" "{" { stmt } "}" | "skip" ";"
//! affine   := term { ("+" | "-") term }
//! term     := number | ident | number "*" ident
//! cmp      := ">" | "<" | ">=" | "<="
//! ```
//!
//! Lines starting with `//` are comments. Lines of the form `#[ ... ]` carry
//! facts in annotated listings and are ignored by [`parse`].

mod annotate;
pub mod fact;
mod interp;
mod parse;

use std::fmt;

pub use annotate::{emit_annotated, parse_annotated, AnnotatedProgram, AnnotationError};
pub use interp::{execute, interpret, interpret_observed, run_body, run_init, Env, RuntimeError, StepRecord, Trace};
pub use parse::parse;

/// Position-tagged message produced by the parser or the semantic checks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.line, self.column, self.message)
    }
}

/// One summand of an affine expression: `coef * var`, or the constant
/// `coef` when `var` is `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub var: Option<String>,
}

/// Affine expression, terms kept in source order so evaluation order matches
/// the text.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AffineExpr {
    pub terms: Vec<Term>,
}

impl AffineExpr {
    pub fn var(name: &str) -> Self {
        AffineExpr {
            terms: vec![Term {
                coef: 1.0,
                var: Some(name.to_string()),
            }],
        }
    }

    pub fn constant(value: f64) -> Self {
        AffineExpr {
            terms: vec![Term { coef: value, var: None }],
        }
    }

    /// Variables read, in first-occurrence order.
    pub fn vars(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for t in &self.terms {
            if let Some(v) = &t.var {
                if !out.contains(&v.as_str()) {
                    out.push(v);
                }
            }
        }
        out
    }

    pub fn reads(&self, var: &str) -> bool {
        self.terms.iter().any(|t| t.var.as_deref() == Some(var))
    }

    /// Sum of the constant terms.
    pub fn constant_part(&self) -> f64 {
        self.terms.iter().filter(|t| t.var.is_none()).map(|t| t.coef).sum()
    }

    /// Total coefficient of `var` (repeated occurrences are summed).
    pub fn coefficient(&self, var: &str) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.var.as_deref() == Some(var))
            .map(|t| t.coef)
            .sum()
    }

    /// Evaluates left to right; `lookup` returns `None` for unassigned names.
    pub fn eval(&self, mut lookup: impl FnMut(&str) -> Option<f64>) -> Result<f64, String> {
        let mut acc = 0.0;
        for t in &self.terms {
            acc += match &t.var {
                None => t.coef,
                Some(v) => t.coef * lookup(v).ok_or_else(|| v.clone())?,
            };
        }
        Ok(acc)
    }
}

impl fmt::Display for AffineExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (i, t) in self.terms.iter().enumerate() {
            let neg = t.coef.is_sign_negative();
            let mag = t.coef.abs();
            match (i, neg) {
                (0, true) => write!(f, "-")?,
                (0, false) => {}
                (_, true) => write!(f, " - ")?,
                (_, false) => write!(f, " + ")?,
            }
            match &t.var {
                None => write!(f, "{mag}")?,
                Some(v) if mag == 1.0 => write!(f, "{v}")?,
                Some(v) => write!(f, "{mag}*{v}")?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Gt,
    Lt,
    Ge,
    Le,
}

impl Cmp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Gt => lhs > rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Le => lhs <= rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Gt => ">",
            Cmp::Lt => "<",
            Cmp::Ge => ">=",
            Cmp::Le => "<=",
        }
    }

    /// True when the guard region is `var ≥ value` (or `>`).
    pub fn is_upper(self) -> bool {
        matches!(self, Cmp::Gt | Cmp::Ge)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Guard {
    pub var: String,
    pub cmp: Cmp,
    pub value: f64,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Assign { var: String, expr: AffineExpr },
    Input(String),
    Output(AffineExpr),
    Guard(Guard),
    Skip,
}

/// A statement and the source line it starts on.
#[derive(Debug, Clone)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: usize,
}

impl Stmt {
    pub fn new(kind: StmtKind) -> Self {
        Stmt { kind, line: 0 }
    }

    /// Variables whose value the statement reads.
    pub fn reads(&self) -> Vec<&str> {
        match &self.kind {
            StmtKind::Assign { expr, .. } | StmtKind::Output(expr) => expr.vars(),
            StmtKind::Guard(g) => {
                let mut v = vec![g.var.as_str()];
                for s in &g.body {
                    for r in s.reads() {
                        if !v.contains(&r) {
                            v.push(r);
                        }
                    }
                }
                v
            }
            StmtKind::Input(_) | StmtKind::Skip => Vec::new(),
        }
    }

    /// Variable written, for assignments and inputs.
    pub fn writes(&self) -> Option<&str> {
        match &self.kind {
            StmtKind::Assign { var, .. } | StmtKind::Input(var) => Some(var),
            _ => None,
        }
    }
}

/// Statements compare by structure; source lines are ignored.
impl PartialEq for Stmt {
    fn eq(&self, other: &Stmt) -> bool {
        self.kind == other.kind
    }
}

/// A parsed controller program.
#[derive(Debug, Clone)]
pub struct Program {
    pub init: Vec<Stmt>,
    pub body: Vec<Stmt>,
    /// Line of the `loop {` header.
    pub loop_line: usize,
    /// Line of the closing `}` of the loop.
    pub end_line: usize,
}

/// Top-level element of a program listing; facts attach between items.
#[derive(Debug, Clone, Copy)]
pub enum Item<'a> {
    Stmt(&'a Stmt),
    LoopHead,
    LoopEnd,
}

impl Program {
    /// Equality of everything except source positions.
    pub fn same_structure(&self, other: &Program) -> bool {
        self.init == other.init && self.body == other.body
    }

    pub fn items(&self) -> Vec<Item<'_>> {
        let mut items: Vec<Item<'_>> = self.init.iter().map(Item::Stmt).collect();
        items.push(Item::LoopHead);
        items.extend(self.body.iter().map(Item::Stmt));
        items.push(Item::LoopEnd);
        items
    }

    /// Number of program points: one before every item and one after the last.
    pub fn point_count(&self) -> usize {
        self.init.len() + self.body.len() + 3
    }

    /// Point just before the `loop {` header.
    pub fn loop_head_point(&self) -> usize {
        self.init.len()
    }

    /// Point at the top of the loop body (the loop invariant).
    pub fn loop_entry_point(&self) -> usize {
        self.init.len() + 1
    }

    /// Point before the body statement with index `k`.
    pub fn body_point(&self, k: usize) -> usize {
        self.loop_entry_point() + k
    }

    /// Point just before the closing brace.
    pub fn loop_exit_point(&self) -> usize {
        self.loop_entry_point() + self.body.len()
    }

    /// Variables assigned during initialization, in first-assignment order.
    pub fn state_vars(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for s in &self.init {
            if let Some(v) = s.writes() {
                if !out.iter().any(|o| o == v) {
                    out.push(v.to_string());
                }
            }
        }
        out
    }

    /// Variables that appear anywhere in the program.
    pub fn all_vars(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        fn walk(stmts: &[Stmt], out: &mut Vec<String>) {
            for s in stmts {
                for v in s.reads().into_iter().chain(s.writes()) {
                    if !out.iter().any(|o| o == v) {
                        out.push(v.to_string());
                    }
                }
                if let StmtKind::Guard(g) = &s.kind {
                    walk(&g.body, out);
                }
            }
        }
        walk(&self.init, &mut out);
        walk(&self.body, &mut out);
        out
    }
}

fn write_stmt(out: &mut String, s: &Stmt, indent: usize) {
    let pad = "  ".repeat(indent);
    match &s.kind {
        StmtKind::Assign { var, expr } => out.push_str(&format!("{pad}{var} := {expr};\n")),
        StmtKind::Input(v) => out.push_str(&format!("{pad}input {v};\n")),
        StmtKind::Output(e) => out.push_str(&format!("{pad}output {e};\n")),
        StmtKind::Skip => out.push_str(&format!("{pad}skip;\n")),
        StmtKind::Guard(g) => {
            out.push_str(&format!("{pad}if ({} {} {}) {{\n", g.var, g.cmp.symbol(), g.value));
            for inner in &g.body {
                write_stmt(out, inner, indent + 1);
            }
            out.push_str(&format!("{pad}}}\n"));
        }
    }
}

pub(crate) fn render_item(out: &mut String, item: Item<'_>, in_loop: bool) {
    match item {
        Item::Stmt(s) => write_stmt(out, s, usize::from(in_loop)),
        Item::LoopHead => out.push_str("loop {\n"),
        Item::LoopEnd => out.push_str("}\n"),
    }
}

/// Canonical text of a program; `parse` of the result has the same structure.
pub fn pretty_print(program: &Program) -> String {
    let mut out = String::new();
    let mut in_loop = false;
    for item in program.items() {
        if matches!(item, Item::LoopEnd) {
            in_loop = false;
        }
        render_item(&mut out, item, in_loop);
        if matches!(item, Item::LoopHead) {
            in_loop = true;
        }
    }
    out
}
