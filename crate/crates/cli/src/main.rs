//! `ctrlcert`: parse, analyze, check, simulate and discretize controller code.
//!
//! Exit codes: 0 success, 1 error, 2 a property does not hold (not
//! inductive, or a FAIL in a check report).

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ctrlcert::analyzer::{analyze, AnalysisConfig, Direction};
use ctrlcert::certifier::{check_annotations, Status};
use ctrlcert::config::{format_block, RunConfig};
use ctrlcert::fmt::{csv_full, full, g};
use ctrlcert::lang::{parse, parse_annotated, Program, Stmt, StmtKind};
use ctrlcert::rng::Lcg;
use ctrlcert::sim::{
    euler_continuous, euler_discretize, freq_csv, freq_response, log_grid, phase_margin, simulate_closed_loop,
    simulate_controller, zoh_discretize, StateSpace, PM_GRID,
};

#[derive(Parser)]
#[command(name = "ctrlcert", version, about = "Ellipsoid invariants for linear controller code")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the syntax tree of a program, or its diagnostics.
    Parse { file: PathBuf },
    /// Annotate a program with ellipsoid facts and decide inductiveness of `lyapunov.P`.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Dir::Forward)]
        direction: Dir,
        /// Replace `analysis.lambdas` by the best certifying grid multipliers.
        #[arg(long)]
        search_lambdas: bool,
        /// Write the bounds table (CSV) here.
        #[arg(long)]
        bounds_out: Option<PathBuf>,
        file: PathBuf,
    },
    /// Check every triple of an annotated listing.
    Check {
        #[arg(long)]
        config: PathBuf,
        file: PathBuf,
    },
    /// Simulate the controller (or the sampled-data loop) and print a trace CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        steps: usize,
        /// const:<v>, random:<seed> or file:<path>.
        #[arg(long, default_value = "const:0")]
        input: String,
        #[arg(long)]
        closed_loop: bool,
        /// Initial plant state for --closed-loop, comma-separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        plant_x0: Option<Vec<f64>>,
    },
    /// Bode data of the loop gain −C(s)G(s), or its phase margin.
    Freq {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = PM_GRID.0)]
        wmin: f64,
        #[arg(long, default_value_t = PM_GRID.1)]
        wmax: f64,
        #[arg(long, default_value_t = PM_GRID.2)]
        points: usize,
        #[arg(long)]
        margin: bool,
        /// The controller block is already continuous (default: it is the
        /// Euler discretization at `sim.h`).
        #[arg(long)]
        continuous: bool,
    },
    /// Discretize a continuous block of the config.
    Discretize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        /// Sample period; defaults to `sim.h`.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long, value_enum, default_value_t = Block::Controller)]
        system: Block,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dir {
    Forward,
    Backward,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Euler,
    Zoh,
}

#[derive(Clone, Copy, ValueEnum)]
enum Block {
    Controller,
    Plant,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_config(path: &Path) -> Result<RunConfig> {
    RunConfig::parse(&read(path)?).map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn load_program(path: &Path) -> Result<Program> {
    let text = read(path)?;
    parse(&text).map_err(|diags| {
        let lines: Vec<String> = diags.iter().map(|d| format!("{}:{d}", path.display())).collect();
        anyhow!(lines.join("\n"))
    })
}

fn dump_stmt(out: &mut String, s: &Stmt, depth: usize) {
    let pad = "  ".repeat(depth);
    let _ = match &s.kind {
        StmtKind::Assign { var, expr } => writeln!(out, "{pad}Assign {var} := {expr}  @{}", s.line),
        StmtKind::Input(v) => writeln!(out, "{pad}Input {v}  @{}", s.line),
        StmtKind::Output(e) => writeln!(out, "{pad}Output {e}  @{}", s.line),
        StmtKind::Skip => writeln!(out, "{pad}Skip  @{}", s.line),
        StmtKind::Guard(gd) => {
            let _ = writeln!(out, "{pad}Guard {} {} {}  @{}", gd.var, gd.cmp.symbol(), gd.value, s.line);
            for inner in &gd.body {
                dump_stmt(out, inner, depth + 1);
            }
            Ok(())
        }
    };
}

fn dump(p: &Program) -> String {
    let mut out = String::from("Init\n");
    for s in &p.init {
        dump_stmt(&mut out, s, 1);
    }
    let _ = writeln!(out, "Loop  @{}..{}", p.loop_line, p.end_line);
    for s in &p.body {
        dump_stmt(&mut out, s, 1);
    }
    out
}

fn analysis_config(cfg: &RunConfig, search: bool) -> Result<AnalysisConfig> {
    let p = cfg.p.clone().ok_or_else(|| anyhow!("the config has no lyapunov.P"))?;
    let lambdas = cfg.lambdas.clone().ok_or_else(|| anyhow!("the config has no analysis.lambdas"))?;
    Ok(AnalysisConfig::new(p, lambdas)?.with_tol(cfg.tol).with_search(search))
}

fn inputs_from(spec: &str) -> Result<Box<dyn Iterator<Item = f64>>> {
    let (kind, arg) = spec
        .split_once(':')
        .ok_or_else(|| anyhow!("--input must be const:<v>, random:<seed> or file:<path>"))?;
    Ok(match kind {
        "const" => {
            let v: f64 = arg.parse().with_context(|| format!("bad constant '{arg}'"))?;
            Box::new(std::iter::repeat(v))
        }
        "random" => {
            let seed: u64 = arg.parse().with_context(|| format!("bad seed '{arg}'"))?;
            let mut rng = Lcg::new(seed);
            Box::new(std::iter::from_fn(move || Some(rng.uniform(-2.0, 2.0))))
        }
        "file" => {
            let text = read(Path::new(arg))?;
            let values: Vec<f64> = text
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().with_context(|| format!("{arg}: bad number '{t}'")))
                .collect::<Result<_>>()?;
            Box::new(values.into_iter())
        }
        other => bail!("unknown input kind '{other}'"),
    })
}

fn controller(cfg: &RunConfig) -> Result<StateSpace> {
    cfg.controller.clone().ok_or_else(|| anyhow!("the config has no controller block"))
}

fn plant(cfg: &RunConfig) -> Result<StateSpace> {
    cfg.plant.clone().ok_or_else(|| anyhow!("the config has no plant block"))
}

/// Runs one subcommand, writing to `out`; returns the exit code.
fn run(cli: Cli, out: &mut String, err: &mut String) -> Result<u8> {
    match cli.command {
        Command::Parse { file } => {
            out.push_str(&dump(&load_program(&file)?));
            Ok(0)
        }
        Command::Analyze {
            config,
            direction,
            search_lambdas,
            bounds_out,
            file,
        } => {
            let cfg = load_config(&config)?;
            let acfg = analysis_config(&cfg, search_lambdas)?;
            let program = load_program(&file)?;
            let direction = match direction {
                Dir::Forward => Direction::Forward,
                Dir::Backward => Direction::Backward,
            };
            let res = analyze(&program, &acfg, direction)?;
            out.push_str(&res.listing);
            if let Some(path) = bounds_out {
                fs::write(&path, res.bounds_csv()).with_context(|| format!("cannot write {}", path.display()))?;
            }
            let lambdas: Vec<String> = res.lambdas.iter().map(|l| g(*l)).collect();
            if res.inductive {
                let _ = writeln!(
                    err,
                    "{direction}: inductive, margin={} at line {}, lambdas=[{}]",
                    g(res.margin),
                    res.check_line,
                    lambdas.join(" ")
                );
                return Ok(0);
            }
            let _ = writeln!(
                err,
                "{direction}: NOT inductive, margin={} at line {}, lambdas=[{}]",
                g(res.margin),
                res.check_line,
                lambdas.join(" ")
            );
            let _ = writeln!(out, "// not inductive: margin={} at line {}", g(res.margin), res.check_line);
            match (&res.witness, &res.relaxation_witness) {
                (Some(w), _) => {
                    let names: Vec<String> = w.state.iter().map(|(n, _)| n.clone()).collect();
                    let _ = writeln!(
                        out,
                        "// witness state ({})={} inputs={} V_before={} V_after={}{}",
                        names.join(","),
                        csv_full(&w.state.iter().map(|(_, v)| *v).collect::<Vec<_>>()),
                        csv_full(&w.inputs),
                        full(w.v_before),
                        full(w.v_after),
                        if w.confirmed { "" } else { " (not confirmed by execution)" }
                    );
                }
                (None, Some(z)) => {
                    let _ = writeln!(out, "// relaxation witness (outside E_P, not confirmed)={}", csv_full(z));
                }
                (None, None) => {
                    let _ = writeln!(out, "// no witness found");
                }
            }
            Ok(2)
        }
        Command::Check { config, file } => {
            let cfg = load_config(&config)?;
            let text = read(&file)?;
            let ann = parse_annotated(&text).map_err(|e| anyhow!("{}: {e}", file.display()))?;
            let lambdas = cfg.lambdas.clone().unwrap_or_default();
            let report = check_annotations(&ann, &lambdas, cfg.tol);
            out.push_str(&report.render());
            if !report.diagnostics.is_empty() {
                bail!(report.diagnostics.join("\n"));
            }
            Ok(if report.entries.iter().any(|e| e.status == Status::Fail) {
                2
            } else {
                0
            })
        }
        Command::Simulate {
            config,
            steps,
            input,
            closed_loop,
            plant_x0,
        } => {
            let cfg = load_config(&config)?;
            let ctrl = controller(&cfg)?.with_dt(Some(cfg.h));
            let trace = if closed_loop {
                let pl = plant(&cfg)?;
                let x0 = plant_x0.unwrap_or_else(|| vec![0.0; pl.states()]);
                simulate_closed_loop(&pl, &ctrl, cfg.h, steps, &x0, cfg.p.as_ref())?
            } else {
                simulate_controller(&ctrl, inputs_from(&input)?, steps, cfg.p.as_ref(), None)?
            };
            out.push_str(&trace.to_csv());
            let _ = writeln!(
                err,
                "max|u|={} maxV={}",
                g(trace.max_abs_u()),
                trace.max_v().map_or_else(|| "n/a".to_string(), g)
            );
            Ok(0)
        }
        Command::Freq {
            config,
            wmin,
            wmax,
            points,
            margin,
            continuous,
        } => {
            let cfg = load_config(&config)?;
            if !(wmin > 0.0 && wmax > wmin && points >= 2) {
                bail!("need 0 < wmin < wmax and at least 2 points");
            }
            let ctrl = controller(&cfg)?;
            let comp = if continuous { ctrl } else { euler_continuous(&ctrl, cfg.h)? };
            let loop_gain = comp.series(&plant(&cfg)?)?.negated();
            let grid = log_grid(wmin, wmax, points);
            if margin {
                let pm = phase_margin(&loop_gain, &grid)?;
                let _ = writeln!(out, "PM={} at w={}", g(pm.pm_deg), g(pm.crossover));
            } else {
                out.push_str(&freq_csv(&freq_response(&loop_gain, &grid)?));
            }
            Ok(0)
        }
        Command::Discretize {
            config,
            method,
            h,
            system,
        } => {
            let cfg = load_config(&config)?;
            let (name, sys) = match system {
                Block::Controller => ("controller", controller(&cfg)?),
                Block::Plant => ("plant", plant(&cfg)?),
            };
            let h = h.unwrap_or(cfg.h);
            let disc = match method {
                Method::Euler => euler_discretize(&sys, h)?,
                Method::Zoh => zoh_discretize(&sys, h)?,
            };
            out.push_str(&format_block(name, &disc));
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (mut out, mut err) = (String::new(), String::new());
    let code = match run(cli, &mut out, &mut err) {
        Ok(code) => code,
        Err(e) => {
            err.push_str(&format!("error: {e:#}\n"));
            1
        }
    };
    let _ = std::io::stdout().write_all(out.as_bytes());
    let _ = std::io::stderr().write_all(err.as_bytes());
    ExitCode::from(code)
}
