mod common;

use proptest::prelude::*;

use ctrlcert::config::RunConfig;
use ctrlcert::lang::{interpret, interpret_observed, parse, pretty_print};
use ctrlcert::linalg::Matrix;
use ctrlcert::sim::simulate_controller;

use common::{controller_source, corpus};

const PROGRAMS: [&str; 4] = ["leadlag.ctl", "leadlag-expanded.ctl", "scalar.ctl", "diag.ctl"];

#[test]
fn corpus_round_trips() {
    for name in PROGRAMS {
        let p = parse(&corpus(name)).unwrap();
        let printed = pretty_print(&p);
        let again = parse(&printed).unwrap();
        assert!(p.same_structure(&again), "{name}");
        assert_eq!(pretty_print(&again), printed, "{name}");
    }
}

fn coefficient() -> impl Strategy<Value = f64> {
    prop_oneof![-1e3..1e3f64, -1.0..1.0f64, Just(0.0), Just(-1.0), (-300i32..300).prop_map(|e| 1.7 * 10f64.powi(e))]
}

proptest! {
    #[test]
    fn generated_programs_round_trip(
        a in prop::collection::vec(coefficient(), 4),
        b in prop::collection::vec(coefficient(), 2),
        c in prop::collection::vec(coefficient(), 2),
        d in coefficient(),
    ) {
        let src = controller_source(&Matrix::new(2, 2, a).unwrap(), &b, &c, d);
        let p = parse(&src).unwrap();
        let again = parse(&pretty_print(&p)).unwrap();
        prop_assert!(p.same_structure(&again));
    }

    #[test]
    fn clamp_bounds_the_input(inputs in prop::collection::vec(prop_oneof![-1e6..1e6f64, -2.0..2.0f64], 1..50)) {
        for name in PROGRAMS {
            let p = parse(&corpus(name)).unwrap();
            // the statement after the two guards
            let after_clamp = p.body_point(3);
            let mut seen = 0;
            interpret_observed(&p, inputs.iter().copied(), inputs.len(), |point, env| {
                if point == after_clamp {
                    seen += 1;
                    assert!(env["y"] * env["y"] <= 1.0);
                }
            })
            .unwrap();
            prop_assert_eq!(seen, inputs.len());
        }
    }

    #[test]
    fn transcriptions_match_the_recursion(inputs in prop::collection::vec(-3.0..3.0f64, 1..200)) {
        let cfg = RunConfig::parse(&corpus("leadlag.cfg")).unwrap();
        let n = inputs.len();
        let u3 = interpret(&parse(&corpus("leadlag.ctl")).unwrap(), inputs.iter().copied(), n).unwrap().outputs();
        let u4 = interpret(&parse(&corpus("leadlag-expanded.ctl")).unwrap(), inputs.iter().copied(), n).unwrap().outputs();
        let sim = simulate_controller(cfg.controller.as_ref().unwrap(), inputs.iter().copied(), n, None, None).unwrap();
        for k in 0..n {
            prop_assert!((u3[k] - u4[k]).abs() <= 1e-12);
            prop_assert!((u3[k] - sim.records[k].u[0]).abs() <= 1e-12);
        }
    }
}
