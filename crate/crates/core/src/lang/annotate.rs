use thiserror::Error;

use super::fact::{split_facts, Fact};
use super::parse::is_annotation_line;
use super::{parse, render_item, Diagnostic, Item, Program, StmtKind};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotationError {
    #[error("expected {expected} fact lists (one per program point), got {got}")]
    PointCount { expected: usize, got: usize },
    #[error("{}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n"))]
    Syntax(Vec<Diagnostic>),
    #[error("{line}: {message}")]
    Fact { line: usize, message: String },
}

/// A program with one fact list per program point. An empty list reads
/// as `true`.
#[derive(Debug, Clone)]
pub struct AnnotatedProgram {
    pub program: Program,
    pub facts: Vec<Vec<Fact>>,
    /// Source line of the first annotation at each point, when known.
    pub fact_lines: Vec<Option<usize>>,
}

fn fact_line(facts: &[Fact]) -> String {
    if facts.is_empty() {
        return "#[ true ]".to_string();
    }
    let parts: Vec<String> = facts.iter().map(|f| f.to_string()).collect();
    format!("#[ {} ]", parts.join(", "))
}

/// Interleaves fact lines with the pretty-printed program.
pub fn emit_annotated(program: &Program, facts: &[Vec<Fact>]) -> Result<String, AnnotationError> {
    if facts.len() != program.point_count() {
        return Err(AnnotationError::PointCount {
            expected: program.point_count(),
            got: facts.len(),
        });
    }
    let mut out = String::new();
    let mut in_loop = false;
    for (item, pre) in program.items().into_iter().zip(facts) {
        let pad = if in_loop && !matches!(item, Item::LoopEnd) { "  " } else { "" };
        out.push_str(pad);
        out.push_str(&fact_line(pre));
        out.push('\n');
        if matches!(item, Item::LoopEnd) {
            in_loop = false;
        }
        render_item(&mut out, item, in_loop);
        if matches!(item, Item::LoopHead) {
            in_loop = true;
        }
    }
    out.push_str(&fact_line(&facts[facts.len() - 1]));
    out.push('\n');
    Ok(out)
}

/// Parses an annotated listing. Each `#[ … ]` line attaches to the point
/// before the next top-level item; several lines at one point accumulate.
pub fn parse_annotated(text: &str) -> Result<AnnotatedProgram, AnnotationError> {
    let program = parse(text).map_err(AnnotationError::Syntax)?;
    let starts: Vec<usize> = program
        .init
        .iter()
        .map(|s| s.line)
        .chain([program.loop_line])
        .chain(program.body.iter().map(|s| s.line))
        .chain([program.end_line])
        .collect();
    let n = program.point_count();
    let items = program.items();
    let mut facts: Vec<Vec<Fact>> = vec![Vec::new(); n];
    let mut fact_lines = vec![None; n];
    for (li, line) in text.lines().enumerate() {
        if !is_annotation_line(line) {
            continue;
        }
        let line_no = li + 1;
        let err = |message: String| AnnotationError::Fact { line: line_no, message };
        let inner = line
            .trim()
            .strip_prefix("#[")
            .and_then(|r| r.strip_suffix(']'))
            .ok_or_else(|| err("annotation must end with ']'".into()))?;
        let point = starts.iter().filter(|&&s| s < line_no).count();
        if point > 0 {
            if let Item::Stmt(s) = items[point - 1] {
                if let StmtKind::Guard(g) = &s.kind {
                    let last = g.body.last().map_or(s.line, |b| b.line);
                    if line_no <= last {
                        return Err(err("annotations inside a guard are not supported".into()));
                    }
                }
            }
        }
        for part in split_facts(inner) {
            let f: Fact = part.parse().map_err(err)?;
            if f != Fact::True {
                facts[point].push(f);
            }
        }
        fact_lines[point].get_or_insert(line_no);
    }
    Ok(AnnotatedProgram {
        program,
        facts,
        fact_lines,
    })
}
