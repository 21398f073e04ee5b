#![allow(dead_code)]

use std::path::PathBuf;

use ctrlcert::linalg::{Matrix, SymMatrix};
use ctrlcert::rng::Lcg;

pub fn corpus_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

pub fn corpus(name: &str) -> String {
    std::fs::read_to_string(corpus_path(name)).unwrap()
}

/// Controller listing in the matrix style: clamp, output, copies of the old
/// state, then one affine update per state variable.
pub fn controller_source(a: &Matrix, b: &[f64], c: &[f64], d: f64) -> String {
    let n = a.rows();
    let mut s = String::new();
    for i in 0..n {
        s.push_str(&format!("x{i} := 0;\n"));
    }
    s.push_str("loop {\n  input y;\n  if (y > 1) {\n    y := 1;\n  }\n  if (y < -1) {\n    y := -1;\n  }\n");
    let terms = |row: &[f64], prefix: &str| -> String {
        row.iter()
            .enumerate()
            .map(|(j, v)| format!("{v:?}*{prefix}{j}"))
            .collect::<Vec<_>>()
            .join(" + ")
    };
    s.push_str(&format!("  u := {} + {d:?}*y;\n  output u;\n", terms(c, "x")));
    for i in 0..n {
        s.push_str(&format!("  xb{i} := x{i};\n"));
    }
    for i in 0..n {
        s.push_str(&format!("  x{i} := {} + {:?}*y;\n", terms(a.row_slice(i), "xb"), b[i]));
    }
    s.push_str("}\n");
    s.replace("+ -", "- ")
}

pub fn spectral_radius_2x2(a: &Matrix) -> f64 {
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let disc = tr * tr / 4.0 - det;
    if disc >= 0.0 {
        (tr / 2.0).abs() + disc.sqrt()
    } else {
        det.sqrt()
    }
}

/// Solution of `AᵀPA − P = −I` by fixed-point iteration (A Schur stable).
pub fn discrete_lyapunov(a: &Matrix) -> SymMatrix {
    let n = a.rows();
    let mut p = SymMatrix::identity(n);
    for _ in 0..5000 {
        p = p.congruence_t(a).unwrap().add(&SymMatrix::identity(n)).unwrap();
    }
    p
}

/// A random stable controller instance.
pub struct Instance {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub p: SymMatrix,
    pub lambdas: Vec<f64>,
}

pub fn random_instance(rng: &mut Lcg) -> Instance {
    let mut a = Matrix::zeros(2, 2);
    for i in 0..2 {
        for j in 0..2 {
            a[(i, j)] = rng.uniform(-1.0, 1.0);
        }
    }
    let rho = spectral_radius_2x2(&a);
    let target = rng.uniform(0.05, 0.94);
    let a = a.scale(target / rho);
    let b = vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
    let alpha = 10f64.powf(rng.uniform(-3.0, 1.0));
    let p = discrete_lyapunov(&a).scale(alpha);
    let l1 = rng.uniform(0.02, 0.98);
    Instance {
        a,
        b,
        p,
        lambdas: vec![l1, 1.0 - l1],
    }
}

impl Instance {
    pub fn source(&self) -> String {
        controller_source(&self.a, &self.b, &[1.0, 0.0], 0.0)
    }
}

use ctrlcert::certifier::Obligation;
use ctrlcert::ellipsoid::ProductFactor;
use ctrlcert::linalg::sym_eigen;

/// Point of `{z : zᵀΦz ≤ 1}`, half of them on the boundary. Directions
/// along which `Φ` vanishes are drawn from `[-span, span]`.
pub fn sample_form(phi: &SymMatrix, rng: &mut Lcg, span: f64) -> Vec<f64> {
    let n = phi.dim();
    let eig = sym_eigen(phi).unwrap();
    let scale = eig.max().abs().max(1e-300);
    let live: Vec<usize> = (0..n).filter(|k| eig.values[*k] > 1e-12 * scale).collect();
    let mut u = if rng.next_f64() < 0.5 {
        rng.unit_vector(live.len().max(1))
    } else {
        rng.in_ball(live.len().max(1))
    };
    u.truncate(live.len());
    let mut z = vec![0.0; n];
    for k in 0..n {
        let coef = match live.iter().position(|l| *l == k) {
            Some(pos) => u[pos] / eig.values[k].sqrt(),
            None => rng.uniform(-span, span),
        };
        for (i, zi) in z.iter_mut().enumerate() {
            *zi += coef * eig.vectors[(i, k)];
        }
    }
    z
}

fn factor_vars(f: &ProductFactor) -> Vec<String> {
    match f {
        ProductFactor::Quad(q) => q.vars().to_vec(),
        ProductFactor::Bound(b) => vec![b.var().to_string()],
    }
}

/// Samples `count` points satisfying every antecedent of `ob` (over
/// `ob.vars()`). Disjoint antecedents are sampled factor by factor; others
/// by rejection from samples of the first antecedent.
pub fn sample_antecedents(ob: &Obligation, rng: &mut Lcg, count: usize) -> Vec<Vec<f64>> {
    let vars = ob.vars();
    let total: usize = ob.antecedents.iter().map(|f| factor_vars(f).len()).sum();
    let disjoint = total == vars.len();
    let forms = ob.antecedent_forms().unwrap();
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < 200 * count {
        attempts += 1;
        let z = if disjoint {
            let mut z = vec![0.0; vars.len()];
            for f in &ob.antecedents {
                let fv = factor_vars(f);
                let part = match f {
                    ProductFactor::Quad(q) => sample_form(q.form(), rng, 10.0),
                    ProductFactor::Bound(b) => {
                        let r = b.square_bound().sqrt();
                        vec![if rng.next_f64() < 0.25 { r * if rng.next_f64() < 0.5 { 1.0 } else { -1.0 } } else { rng.uniform(-r, r) }]
                    }
                };
                for (name, v) in fv.iter().zip(part) {
                    z[vars.iter().position(|x| x == name).unwrap()] = v;
                }
            }
            z
        } else {
            sample_form(&forms[0], rng, 10.0)
        };
        if ob.antecedents_hold(&z, 1e-12) {
            out.push(z);
        }
    }
    out
}

/// `max V(Ax + by)` over `xᵀPx = 1`, `y = ±1` for a 2-state instance, by a
/// dense sweep of the boundary. The maximum over the whole box is attained
/// there because `V` is convex.
pub fn exact_step_max(inst: &Instance) -> f64 {
    let f = ctrlcert::linalg::psd_factor(&ctrlcert::linalg::sym_inverse(&inst.p).unwrap()).unwrap();
    let mut best = f64::NEG_INFINITY;
    let n = 20_000;
    for k in 0..n {
        let t = std::f64::consts::TAU * k as f64 / n as f64;
        let x = f.mul_vec(&[t.cos(), t.sin()]);
        for y in [-1.0, 1.0] {
            let ax = inst.a.mul_vec(&x);
            let next = [ax[0] + inst.b[0] * y, ax[1] + inst.b[1] * y];
            best = best.max(inst.p.quad(&next));
        }
    }
    best
}
