mod common;

use proptest::prelude::*;

use ctrlcert::certifier::{best_multipliers, check_implication, check_sprocedure, find_witness, Obligation};
use ctrlcert::ellipsoid::{ProductFactor, QuadForm, ScalarBound};
use ctrlcert::lang::fact::Fact;
use ctrlcert::linalg::{Matrix, SymMatrix};
use ctrlcert::rng::Lcg;

use common::sample_antecedents;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// `x ∈ E_P, y² ≤ c ⊢ [A b](x, y) ∈ E_{αP}`, the one-step obligation.
fn obligation() -> impl Strategy<Value = Obligation> {
    (
        prop::collection::vec(-1.0..1.0f64, 4),
        prop::collection::vec(-0.7..0.7f64, 6),
        0.2..2.0f64,
        0.02..1.5f64,
    )
        .prop_map(|(l, ab, c, alpha)| {
            let l = Matrix::new(2, 2, l).unwrap();
            let p = SymMatrix::from_matrix(&(&(&l * &l.transpose()) + &Matrix::identity(2).scale(0.1))).unwrap();
            let ab = Matrix::new(2, 3, ab).unwrap();
            let phi = p.scale(alpha).congruence_t(&ab).unwrap();
            Obligation {
                antecedents: vec![
                    ProductFactor::Quad(QuadForm::new(names(&["x0", "x1"]), p).unwrap()),
                    ProductFactor::Bound(ScalarBound::Square { var: "y".into(), bound: c }),
                ],
                consequent: QuadForm::new(names(&["x0", "x1", "y"]), phi).unwrap(),
                location: 0,
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certificates_are_sound(ob in obligation(), seed in any::<u64>()) {
        let cert = best_multipliers(&ob, 200, 1e-9).unwrap();
        prop_assert_eq!(&check_sprocedure(&ob, &cert.lambdas, 1e-9).unwrap(), &cert);
        prop_assume!(cert.certified);
        let mut rng = Lcg::new(seed);
        for z in sample_antecedents(&ob, &mut rng, 2_000) {
            prop_assert!(ob.consequent_value(&z) <= 1.0 + 1e-8);
        }
    }

    #[test]
    fn witnesses_are_genuine(ob in obligation()) {
        if let Some(z) = find_witness(&ob, 1e-9) {
            prop_assert!(ob.antecedents_hold(&z, 1e-9));
            prop_assert!(ob.consequent_value(&z) > 1.0);
        }
    }

    #[test]
    fn larger_tolerance_never_fails_more(ob in obligation(), l1 in 0.0..1.0f64, k in 1.0..1e6f64) {
        let lam = [l1, 1.0 - l1];
        let (tight, loose) = (1e-12, 1e-12 * k);
        if check_sprocedure(&ob, &lam, tight).unwrap().certified {
            prop_assert!(check_sprocedure(&ob, &lam, loose).unwrap().certified);
        }
        let pre: Vec<Fact> = ob
            .antecedents
            .iter()
            .map(|f| match f {
                ProductFactor::Quad(q) => Fact::InE(q.clone()),
                ProductFactor::Bound(b) => Fact::Sq { var: b.var().to_string(), bound: b.square_bound() },
            })
            .collect();
        let post = Fact::Quad(ob.consequent.clone());
        let a = check_implication(&pre, &post, &lam, tight);
        let b = check_implication(&pre, &post, &lam, loose);
        prop_assert!(b.status <= a.status, "{:?} -> {:?}", a.status, b.status);
    }
}
