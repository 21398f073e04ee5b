use std::collections::BTreeMap;

use thiserror::Error;

use super::{Program, Stmt, StmtKind};

/// Variable valuation.
pub type Env = BTreeMap<String, f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("line {line}: variable '{var}' read before assignment")]
    Unassigned { var: String, line: usize },
    #[error("line {line}: input stream exhausted")]
    InputExhausted { line: usize },
}

/// One loop iteration: values read, values written, valuation at the end.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub inputs: Vec<f64>,
    pub outputs: Vec<f64>,
    pub env: Env,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Valuation after initialization.
    pub initial: Env,
    pub steps: Vec<StepRecord>,
}

impl Trace {
    /// Output sequence, flattened across iterations.
    pub fn outputs(&self) -> Vec<f64> {
        self.steps.iter().flat_map(|s| s.outputs.iter().copied()).collect()
    }
}

struct Io<'a, I: Iterator<Item = f64>> {
    inputs: &'a mut I,
    read: Vec<f64>,
    written: Vec<f64>,
}

fn exec<I: Iterator<Item = f64>>(s: &Stmt, env: &mut Env, io: &mut Io<'_, I>) -> Result<(), RuntimeError> {
    let lookup_err = |var: String| RuntimeError::Unassigned { var, line: s.line };
    match &s.kind {
        StmtKind::Assign { var, expr } => {
            let v = expr.eval(|n| env.get(n).copied()).map_err(lookup_err)?;
            env.insert(var.clone(), v);
        }
        StmtKind::Input(var) => {
            let v = io.inputs.next().ok_or(RuntimeError::InputExhausted { line: s.line })?;
            io.read.push(v);
            env.insert(var.clone(), v);
        }
        StmtKind::Output(expr) => {
            let v = expr.eval(|n| env.get(n).copied()).map_err(lookup_err)?;
            io.written.push(v);
        }
        StmtKind::Guard(g) => {
            let v = *env.get(&g.var).ok_or_else(|| lookup_err(g.var.clone()))?;
            if g.cmp.holds(v, g.value) {
                for inner in &g.body {
                    exec(inner, env, io)?;
                }
            }
        }
        StmtKind::Skip => {}
    }
    Ok(())
}

/// Executes a single statement; `input` supplies the value an input
/// statement reads.
pub fn execute(stmt: &Stmt, env: &mut Env, input: Option<f64>) -> Result<(), RuntimeError> {
    let mut src = input.into_iter();
    let mut io = Io {
        inputs: &mut src,
        read: Vec::new(),
        written: Vec::new(),
    };
    exec(stmt, env, &mut io)
}

/// Runs the initialization statements from an empty valuation.
pub fn run_init(program: &Program) -> Result<Env, RuntimeError> {
    let mut env = Env::new();
    let mut none = std::iter::empty();
    let mut io = Io {
        inputs: &mut none,
        read: Vec::new(),
        written: Vec::new(),
    };
    for s in &program.init {
        exec(s, &mut env, &mut io)?;
    }
    Ok(env)
}

/// Executes one pass through the loop body starting from `env`.
pub fn run_body<I: Iterator<Item = f64>>(
    program: &Program,
    env: &mut Env,
    inputs: &mut I,
) -> Result<StepRecord, RuntimeError> {
    run_body_observed(program, env, inputs, &mut |_, _| {})
}

fn run_body_observed<I: Iterator<Item = f64>>(
    program: &Program,
    env: &mut Env,
    inputs: &mut I,
    observer: &mut dyn FnMut(usize, &Env),
) -> Result<StepRecord, RuntimeError> {
    let mut io = Io {
        inputs,
        read: Vec::new(),
        written: Vec::new(),
    };
    for (k, s) in program.body.iter().enumerate() {
        observer(program.body_point(k), env);
        exec(s, env, &mut io)?;
    }
    observer(program.loop_exit_point(), env);
    Ok(StepRecord {
        inputs: io.read,
        outputs: io.written,
        env: env.clone(),
    })
}

/// Runs initialization and `steps` loop iterations.
pub fn interpret<I: Iterator<Item = f64>>(program: &Program, inputs: I, steps: usize) -> Result<Trace, RuntimeError> {
    interpret_observed(program, inputs, steps, |_, _| {})
}

/// Like [`interpret`], calling `observer(point, env)` each time control
/// reaches a program point (numbered as in [`Program::items`]).
pub fn interpret_observed<I, F>(program: &Program, mut inputs: I, steps: usize, mut observer: F) -> Result<Trace, RuntimeError>
where
    I: Iterator<Item = f64>,
    F: FnMut(usize, &Env),
{
    let mut env = Env::new();
    {
        let mut io = Io {
            inputs: &mut inputs,
            read: Vec::new(),
            written: Vec::new(),
        };
        for (k, s) in program.init.iter().enumerate() {
            observer(k, &env);
            exec(s, &mut env, &mut io)?;
        }
    }
    observer(program.loop_head_point(), &env);
    let initial = env.clone();
    let mut records = Vec::with_capacity(steps);
    for _ in 0..steps {
        records.push(run_body_observed(program, &mut env, &mut inputs, &mut observer)?);
    }
    Ok(Trace { initial, steps: records })
}
