mod common;

use proptest::prelude::*;

use ctrlcert::analyzer::{analyze_backward, analyze_forward, wp_assign, AnalysisConfig};
use ctrlcert::ellipsoid::QuadForm;
use ctrlcert::lang::{interpret_observed, parse, run_body, AffineExpr, Env, Term};
use ctrlcert::linalg::{Matrix, SymMatrix};
use ctrlcert::rng::Lcg;

use common::{random_instance, Instance};

fn instance(seed: u64) -> (Instance, ctrlcert::lang::Program, AnalysisConfig) {
    let inst = random_instance(&mut Lcg::new(seed));
    let program = parse(&inst.source()).unwrap();
    let cfg = AnalysisConfig::new(inst.p.clone(), inst.lambdas.clone()).unwrap();
    (inst, program, cfg)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn inductive_facts_hold_on_runs(seed in any::<u64>()) {
        let (_, program, cfg) = instance(seed);
        let res = analyze_forward(&program, &cfg).unwrap();
        prop_assume!(res.inductive);
        let facts = &res.annotated.facts;
        let mut rng = Lcg::new(seed ^ 0xa5a5);
        let inputs: Vec<f64> = (0..2_000).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let mut violations = Vec::new();
        interpret_observed(&program, inputs.iter().copied(), inputs.len(), |point, env| {
            for f in &facts[point] {
                if f.holds(env, 1e-8) != Ok(true) {
                    violations.push((point, f.to_string()));
                }
            }
        })
        .unwrap();
        prop_assert!(violations.is_empty(), "{:?}", &violations[..violations.len().min(3)]);
    }

    #[test]
    fn refutations_escape_in_one_step(seed in any::<u64>()) {
        let (inst, program, cfg) = instance(seed);
        let mut exact = None;
        for res in [analyze_forward(&program, &cfg).unwrap(), analyze_backward(&program, &cfg).unwrap()] {
            if res.inductive {
                continue;
            }
            let peak = *exact.get_or_insert_with(|| common::exact_step_max(&inst));
            let Some(w) = res.witness.as_ref() else {
                // the multipliers are too weak but no state actually escapes
                prop_assert!(peak <= 1.0 + 1e-6, "escape missed: peak {}", peak);
                prop_assert!(res.relaxation_witness.is_some());
                continue;
            };
            prop_assert!(w.confirmed);
            let mut env: Env = w.state.iter().cloned().collect();
            let before: Vec<f64> = w.state.iter().map(|(_, v)| *v).collect();
            run_body(&program, &mut env, &mut w.inputs.iter().copied()).unwrap();
            let after: Vec<f64> = w.state.iter().map(|(n, _)| env[n]).collect();
            prop_assert!(inst.p.quad(&before) <= 1.0 + 1e-12);
            prop_assert!(inst.p.quad(&after) > 1.0);
        }
    }

    #[test]
    fn directions_agree(seed in any::<u64>()) {
        let (_, program, cfg) = instance(seed);
        let f = analyze_forward(&program, &cfg).unwrap();
        let b = analyze_backward(&program, &cfg).unwrap();
        prop_assert_eq!(f.inductive, b.inductive);
    }

    #[test]
    fn wp_is_exact_substitution(
        form in prop::collection::vec(-2.0..2.0f64, 4),
        a in -2.0..2.0f64,
        b in -2.0..2.0f64,
        x in -3.0..3.0f64,
        y in -3.0..3.0f64,
    ) {
        let m = Matrix::new(2, 2, form).unwrap();
        let phi = SymMatrix::from_matrix(&(&m.transpose() * &m)).unwrap();
        let post = QuadForm::new(vec!["x".into(), "y".into()], phi).unwrap();
        let expr = AffineExpr {
            terms: vec![
                Term { coef: a, var: Some("x".into()) },
                Term { coef: b, var: Some("y".into()) },
            ],
        };
        let pre = wp_assign(&post, "x", &expr).unwrap();
        let env: Env = [("x".to_string(), x), ("y".to_string(), y)].into_iter().collect();
        let z_pre: Vec<f64> = pre.vars().iter().map(|v| env[v]).collect();
        let next = [a * x + b * y, y];
        let want = post.value(&next);
        prop_assert!((pre.value(&z_pre) - want).abs() <= 1e-9 * want.abs().max(1.0));
    }
}
