use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctrlcert")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &PathBuf) -> &str {
    path.to_str().unwrap()
}

#[test]
fn parse_dumps_or_reports() {
    let o = run(&["parse", p(&corpus("leadlag.ctl"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("Input y  @5"));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.ctl");
    fs::write(&bad, "x := 0;\nloop {\n  y := ;\n}\n").unwrap();
    let o = run(&["parse", p(&bad)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":3"), "{}", stderr(&o));
}

#[test]
fn lead_lag_is_refuted_both_ways() {
    for dir in ["forward", "backward"] {
        let o = run(&[
            "analyze",
            "--config",
            p(&corpus("leadlag.cfg")),
            "--direction",
            dir,
            p(&corpus("leadlag-expanded.ctl")),
        ]);
        assert_eq!(o.status.code(), Some(2), "{dir}");
        let out = stdout(&o);
        assert!(out.contains("// witness state (x0,x1)="), "{out}");
        assert!(stderr(&o).contains("NOT inductive"));
    }
}

#[test]
fn search_lambdas_does_not_rescue_lead_lag() {
    let o = run(&[
        "analyze",
        "--config",
        p(&corpus("leadlag.cfg")),
        "--direction",
        "backward",
        "--search-lambdas",
        p(&corpus("leadlag-expanded.ctl")),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn scalar_listing_round_trips_through_check() {
    let dir = tempfile::tempdir().unwrap();
    let listing = dir.path().join("scalar.ann");
    let bounds = dir.path().join("bounds.csv");
    let o = run(&[
        "analyze",
        "--config",
        p(&corpus("scalar.cfg")),
        "--bounds-out",
        p(&bounds),
        p(&corpus("scalar.ctl")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    fs::write(&listing, o.stdout).unwrap();
    assert!(fs::read_to_string(&bounds).unwrap().starts_with("variable,bound\n"));

    let o = run(&["check", "--config", p(&corpus("scalar.cfg")), p(&listing)]);
    assert_eq!(o.status.code(), Some(0));
    let report = stdout(&o);
    assert!(!report.is_empty());
    assert!(report.lines().all(|l| l.contains(":PASS margin=")), "{report}");
}

#[test]
fn check_reports_the_failing_line() {
    let dir = tempfile::tempdir().unwrap();
    let listing = dir.path().join("lead-lag.ann");
    let o = run(&[
        "analyze",
        "--config",
        p(&corpus("leadlag.cfg")),
        "--direction",
        "backward",
        p(&corpus("leadlag-expanded.ctl")),
    ]);
    fs::write(&listing, o.stdout).unwrap();
    let o = run(&["check", "--config", p(&corpus("leadlag.cfg")), p(&listing)]);
    assert_eq!(o.status.code(), Some(2));
    let fails: Vec<String> = stdout(&o).lines().filter(|l| l.contains("FAIL")).map(String::from).collect();
    assert_eq!(fails.len(), 1, "{fails:?}");
    assert!(fails[0].contains("witness="));
}

#[test]
fn simulate_writes_a_trace() {
    let o = run(&[
        "simulate",
        "--config",
        p(&corpus("leadlag.cfg")),
        "--steps",
        "4",
        "--input",
        "const:0.5",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("k,t,y,u,x1,x2,V\n"));
    assert_eq!(out.lines().count(), 6);
    assert!(stderr(&o).contains("max|u|="));

    let dir = tempfile::tempdir().unwrap();
    let inputs = dir.path().join("in.txt");
    fs::write(&inputs, "1\n-1\n").unwrap();
    let spec = format!("file:{}", p(&inputs));
    let o = run(&["simulate", "--config", p(&corpus("leadlag.cfg")), "--steps", "2", "--input", &spec]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().count(), 4);
    let o = run(&["simulate", "--config", p(&corpus("leadlag.cfg")), "--steps", "3", "--input", &spec]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("exhausted"));

    let o = run(&[
        "simulate",
        "--config",
        p(&corpus("leadlag.cfg")),
        "--steps",
        "3",
        "--closed-loop",
        "--plant-x0",
        "1,0",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("k,t,y,u,x1,x2,x3,x4,V\n"));
}

#[test]
fn freq_margin_line() {
    let o = run(&["freq", "--config", p(&corpus("leadlag.cfg")), "--margin"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let line = stdout(&o);
    let pm: f64 = line.trim().strip_prefix("PM=").unwrap().split(' ').next().unwrap().parse().unwrap();
    assert!(pm > 50.0, "{line}");

    let o = run(&["freq", "--config", p(&corpus("compensator-ct.cfg")), "--continuous", "--margin"]);
    assert_eq!(stdout(&o), line);

    let o = run(&["freq", "--config", p(&corpus("leadlag.cfg")), "--points", "3"]);
    assert_eq!(stdout(&o).lines().count(), 4);
    assert!(stdout(&o).starts_with("omega,mag_db,phase_deg\n"));
}

#[test]
fn discretize_recovers_listing_constants() {
    let o = run(&[
        "discretize",
        "--config",
        p(&corpus("compensator-ct.cfg")),
        "--method",
        "euler",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("controller.A = [0.499 -0.05; 0.01 1]"), "{out}");
    assert!(out.contains("controller.B = [1; 0]"), "{out}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "--config", "/nonexistent.cfg", "x.ctl"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn runs_are_byte_identical() {
    let cases: [&[&str]; 3] = [
        &["analyze", "--config", "leadlag.cfg", "--direction", "backward", "leadlag-expanded.ctl"],
        &["simulate", "--config", "leadlag.cfg", "--steps", "200", "--input", "random:5"],
        &["freq", "--config", "leadlag.cfg", "--points", "50"],
    ];
    for case in cases {
        let args: Vec<String> = case
            .iter()
            .map(|a| if a.contains('.') { p(&corpus(a)).to_string() } else { a.to_string() })
            .collect();
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let (a, b) = (run(&args), run(&args));
        assert_eq!(a.stdout, b.stdout, "{case:?}");
        assert_eq!(a.stderr, b.stderr, "{case:?}");
    }
}

#[test]
fn exit_codes_across_the_corpus() {
    let analyses = [
        ("scalar.ctl", "scalar.cfg", 0),
        ("diag.ctl", "diag.cfg", 0),
        ("leadlag.ctl", "leadlag.cfg", 2),
        ("leadlag-expanded.ctl", "leadlag.cfg", 2),
        ("leadlag-skips.ctl", "leadlag.cfg", 2),
    ];
    for (src, cfg, code) in analyses {
        for dir in ["forward", "backward"] {
            let o = run(&["analyze", "--config", p(&corpus(cfg)), "--direction", dir, p(&corpus(src))]);
            assert_eq!(o.status.code(), Some(code), "{src} {dir}: {}", stderr(&o));
        }
    }
    let checks = [
        ("scalar-forward.ann", "scalar.cfg", 0),
        ("diag-backward.ann", "diag.cfg", 0),
        ("leadlag-expanded-backward.ann", "leadlag.cfg", 2),
    ];
    for (ann, cfg, code) in checks {
        let o = run(&["check", "--config", p(&corpus(cfg)), p(&corpus(ann))]);
        assert_eq!(o.status.code(), Some(code), "{ann}");
    }
    for src in ["leadlag.ctl", "leadlag-expanded.ctl", "leadlag-skips.ctl", "scalar.ctl", "diag.ctl"] {
        assert_eq!(run(&["parse", p(&corpus(src))]).status.code(), Some(0), "{src}");
    }
    let o = run(&["analyze", "--config", p(&corpus("compensator-ct.cfg")), p(&corpus("leadlag-expanded.ctl"))]);
    assert_eq!(o.status.code(), Some(1));
}
