use super::{AffineExpr, Cmp, Diagnostic, Guard, Program, Stmt, StmtKind, Term};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Loop,
    Input,
    Output,
    If,
    Skip,
    Assign,
    Semi,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Plus,
    Minus,
    Star,
    Cmp(Cmp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier '{s}'"),
            Tok::Num(v) => format!("number {v}"),
            Tok::Loop => "'loop'".into(),
            Tok::Input => "'input'".into(),
            Tok::Output => "'output'".into(),
            Tok::If => "'if'".into(),
            Tok::Skip => "'skip'".into(),
            Tok::Assign => "':='".into(),
            Tok::Semi => "';'".into(),
            Tok::LBrace => "'{'".into(),
            Tok::RBrace => "'}'".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Plus => "'+'".into(),
            Tok::Minus => "'-'".into(),
            Tok::Star => "'*'".into(),
            Tok::Cmp(c) => format!("'{}'", c.symbol()),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn diag(line: usize, column: usize, message: impl Into<String>) -> Diagnostic {
    Diagnostic {
        line,
        column,
        message: message.into(),
    }
}

/// Annotation lines start with `#[` after optional indentation.
pub(crate) fn is_annotation_line(line: &str) -> bool {
    line.trim_start().starts_with("#[")
}

fn lex(text: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        let line_no = li + 1;
        if is_annotation_line(line) {
            continue;
        }
        let chars: Vec<char> = line.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let column = i + 1;
            let push = |out: &mut Vec<Token>, tok| out.push(Token { tok, line: line_no, column });
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if c == '/' && chars.get(i + 1) == Some(&'/') {
                break;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let tok = match word.as_str() {
                    "loop" => Tok::Loop,
                    "input" => Tok::Input,
                    "output" => Tok::Output,
                    "if" => Tok::If,
                    "skip" => Tok::Skip,
                    _ => Tok::Ident(word),
                };
                push(&mut out, tok);
                continue;
            }
            if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit: String = chars[start..i].iter().collect();
                let v: f64 = lit
                    .parse()
                    .map_err(|_| diag(line_no, column, format!("malformed number '{lit}'")))?;
                push(&mut out, Tok::Num(v));
                continue;
            }
            let next = chars.get(i + 1).copied();
            let (tok, len) = match (c, next) {
                (':', Some('=')) => (Tok::Assign, 2),
                ('>', Some('=')) => (Tok::Cmp(Cmp::Ge), 2),
                ('<', Some('=')) => (Tok::Cmp(Cmp::Le), 2),
                ('>', _) => (Tok::Cmp(Cmp::Gt), 1),
                ('<', _) => (Tok::Cmp(Cmp::Lt), 1),
                (';', _) => (Tok::Semi, 1),
                ('{', _) => (Tok::LBrace, 1),
                ('}', _) => (Tok::RBrace, 1),
                ('(', _) => (Tok::LParen, 1),
                (')', _) => (Tok::RParen, 1),
                ('+', _) => (Tok::Plus, 1),
                ('-', _) => (Tok::Minus, 1),
                ('*', _) => (Tok::Star, 1),
                _ => return Err(diag(line_no, column, format!("unexpected character '{c}'"))),
            };
            push(&mut out, tok);
            i += len;
        }
    }
    let (line, column) = match text.lines().enumerate().last() {
        Some((li, l)) => (li + 1, l.chars().count() + 1),
        None => (1, 1),
    };
    out.push(Token { tok: Tok::Eof, line, column });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<Token, Diagnostic> {
        let t = self.peek();
        if t.tok == want {
            Ok(self.bump())
        } else {
            Err(diag(t.line, t.column, format!("expected {what}, found {}", t.tok.describe())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, Diagnostic> {
        let t = self.peek().clone();
        match t.tok {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(diag(t.line, t.column, format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn number(&mut self) -> Result<f64, Diagnostic> {
        let t = self.peek().clone();
        let neg = match t.tok {
            Tok::Minus => {
                self.bump();
                true
            }
            Tok::Plus => {
                self.bump();
                false
            }
            _ => false,
        };
        let n = self.peek().clone();
        match n.tok {
            Tok::Num(v) => {
                self.bump();
                Ok(if neg { -v } else { v })
            }
            other => Err(diag(n.line, n.column, format!("expected number, found {}", other.describe()))),
        }
    }

    /// `[sign] (number ["*" ident] | ident)`; `op` is the binary operator
    /// that introduced the term, used to position errors.
    fn term(&mut self, sign: f64, op: Option<&Token>) -> Result<Term, Diagnostic> {
        let mut sign = sign;
        let mut unary: Option<Token> = None;
        while matches!(self.peek().tok, Tok::Plus | Tok::Minus) {
            let t = self.bump();
            if t.tok == Tok::Minus {
                sign = -sign;
            }
            unary = Some(t);
        }
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) => {
                self.bump();
                if self.peek().tok == Tok::Star {
                    self.bump();
                    let var = self.ident("variable after '*'")?;
                    Ok(Term { coef: sign * v, var: Some(var) })
                } else {
                    Ok(Term { coef: sign * v, var: None })
                }
            }
            Tok::Ident(s) => {
                self.bump();
                Ok(Term { coef: sign, var: Some(s) })
            }
            other => {
                let anchor = unary.as_ref().or(op);
                match anchor {
                    Some(o) => Err(diag(
                        o.line,
                        o.column,
                        format!("dangling operator {}: expected a term, found {}", o.tok.describe(), other.describe()),
                    )),
                    None => Err(diag(t.line, t.column, format!("expected expression, found {}", other.describe()))),
                }
            }
        }
    }

    fn affine(&mut self) -> Result<AffineExpr, Diagnostic> {
        let mut terms = vec![self.term(1.0, None)?];
        loop {
            let t = self.peek().clone();
            let sign = match t.tok {
                Tok::Plus => 1.0,
                Tok::Minus => -1.0,
                Tok::Star => return Err(diag(t.line, t.column, "products are limited to number * variable")),
                Tok::Num(_) | Tok::Ident(_) | Tok::LParen => {
                    return Err(diag(t.line, t.column, format!("expected operator or ';', found {}", t.tok.describe())))
                }
                _ => break,
            };
            self.bump();
            terms.push(self.term(sign, Some(&t))?);
        }
        Ok(AffineExpr { terms })
    }

    fn stmt(&mut self, in_guard: bool) -> Result<Stmt, Diagnostic> {
        let t = self.peek().clone();
        let line = t.line;
        let restricted = |what: &str| diag(t.line, t.column, format!("{what} is not allowed inside a guard"));
        let kind = match t.tok {
            Tok::Ident(var) => {
                self.bump();
                self.expect(Tok::Assign, "':='")?;
                let expr = self.affine()?;
                self.expect(Tok::Semi, "';'")?;
                StmtKind::Assign { var, expr }
            }
            Tok::Input => {
                if in_guard {
                    return Err(restricted("'input'"));
                }
                self.bump();
                let v = self.ident("variable after 'input'")?;
                self.expect(Tok::Semi, "';'")?;
                StmtKind::Input(v)
            }
            Tok::Output => {
                if in_guard {
                    return Err(restricted("'output'"));
                }
                self.bump();
                let e = self.affine()?;
                self.expect(Tok::Semi, "';'")?;
                StmtKind::Output(e)
            }
            Tok::Skip => {
                self.bump();
                self.expect(Tok::Semi, "';'")?;
                StmtKind::Skip
            }
            Tok::If => {
                if in_guard {
                    return Err(restricted("a nested 'if'"));
                }
                self.bump();
                self.expect(Tok::LParen, "'('")?;
                let var = self.ident("guard variable")?;
                let c = self.peek().clone();
                let cmp = match c.tok {
                    Tok::Cmp(cmp) => {
                        self.bump();
                        cmp
                    }
                    other => return Err(diag(c.line, c.column, format!("expected comparator, found {}", other.describe()))),
                };
                let value = self.number()?;
                self.expect(Tok::RParen, "')'")?;
                self.expect(Tok::LBrace, "'{'")?;
                let mut body = Vec::new();
                while self.peek().tok != Tok::RBrace {
                    if self.peek().tok == Tok::Eof {
                        let e = self.peek();
                        return Err(diag(e.line, e.column, "unterminated guard block"));
                    }
                    body.push(self.stmt(true)?);
                }
                self.bump();
                StmtKind::Guard(Guard { var, cmp, value, body })
            }
            Tok::Loop if in_guard => return Err(restricted("'loop'")),
            other => return Err(diag(t.line, t.column, format!("expected statement, found {}", other.describe()))),
        };
        Ok(Stmt { kind, line })
    }

    fn program(&mut self) -> Result<Program, Diagnostic> {
        if self.peek().tok == Tok::Eof {
            return Err(diag(1, 1, "expected program"));
        }
        let mut init = Vec::new();
        while self.peek().tok != Tok::Loop {
            if self.peek().tok == Tok::Eof {
                let e = self.peek();
                return Err(diag(e.line, e.column, "expected 'loop'"));
            }
            init.push(self.stmt(false)?);
        }
        let loop_line = self.bump().line;
        self.expect(Tok::LBrace, "'{' after 'loop'")?;
        let mut body = Vec::new();
        loop {
            match self.peek().tok {
                Tok::RBrace => break,
                Tok::Eof => {
                    let e = self.peek();
                    return Err(diag(e.line, e.column, "unterminated loop body"));
                }
                Tok::Loop => {
                    let e = self.peek();
                    return Err(diag(e.line, e.column, "a program has exactly one loop"));
                }
                _ => body.push(self.stmt(false)?),
            }
        }
        let end_line = self.bump().line;
        let t = self.peek();
        if t.tok != Tok::Eof {
            return Err(diag(t.line, t.column, format!("unexpected {} after the loop", t.tok.describe())));
        }
        Ok(Program { init, body, loop_line, end_line })
    }
}

fn check_assigned(program: &Program) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut known: Vec<String> = Vec::new();
    fn visit(s: &Stmt, known: &mut Vec<String>, out: &mut Vec<Diagnostic>, in_guard: bool) {
        let use_var = |v: &str, out: &mut Vec<Diagnostic>, known: &Vec<String>| {
            if !known.iter().any(|k| k == v) {
                out.push(diag(s.line, 1, format!("variable '{v}' is used before it is assigned")));
            }
        };
        match &s.kind {
            StmtKind::Assign { var, expr } => {
                for v in expr.vars() {
                    use_var(v, out, known);
                }
                if !in_guard && !known.contains(var) {
                    known.push(var.clone());
                }
            }
            StmtKind::Input(v) => {
                if !known.contains(v) {
                    known.push(v.clone());
                }
            }
            StmtKind::Output(e) => {
                for v in e.vars() {
                    use_var(v, out, known);
                }
            }
            StmtKind::Guard(g) => {
                use_var(&g.var, out, known);
                for inner in &g.body {
                    visit(inner, known, out, true);
                }
            }
            StmtKind::Skip => {}
        }
    }
    for s in program.init.iter().chain(&program.body) {
        visit(s, &mut known, &mut out, false);
    }
    out
}

/// Parses a program. Syntax errors stop at the first problem; semantic
/// checks (use before assignment) report every occurrence.
pub fn parse(text: &str) -> Result<Program, Vec<Diagnostic>> {
    let toks = lex(text).map_err(|d| vec![d])?;
    let program = Parser { toks, pos: 0 }.program().map_err(|d| vec![d])?;
    let sem = check_assigned(&program);
    if sem.is_empty() {
        Ok(program)
    } else {
        Err(sem)
    }
}
