use nalgebra::DMatrix;
use proptest::prelude::*;

use ctrlcert::linalg::{inverse, is_psd, sym_eigen, Matrix, SymMatrix};

fn square(max_dim: usize, range: f64) -> impl Strategy<Value = Matrix> {
    (1..=max_dim).prop_flat_map(move |n| {
        prop::collection::vec(-range..range, n * n).prop_map(move |v| Matrix::new(n, n, v).unwrap())
    })
}

fn symmetric(max_dim: usize) -> impl Strategy<Value = SymMatrix> {
    square(max_dim, 10.0).prop_map(|m| SymMatrix::from_matrix(&(&m + &m.transpose()).scale(0.5)).unwrap())
}

proptest! {
    #[test]
    fn eigen_reconstructs(s in symmetric(6)) {
        let eig = sym_eigen(&s).unwrap();
        let n = s.dim();
        let lam = Matrix::diag(&eig.values);
        let back = &(&eig.vectors * &lam) * &eig.vectors.transpose();
        prop_assert!(back.max_abs_diff(s.as_matrix()).unwrap() <= 1e-9);
        let vtv = &eig.vectors.transpose() * &eig.vectors;
        prop_assert!(vtv.max_abs_diff(&Matrix::identity(n)).unwrap() <= 1e-9);
        prop_assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn eigenvalues_match_nalgebra(s in symmetric(6)) {
        let n = s.dim();
        let oracle = DMatrix::from_fn(n, n, |i, j| s[(i, j)]).symmetric_eigen();
        let mut want: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
        want.sort_by(f64::total_cmp);
        let got = sym_eigen(&s).unwrap().values;
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
    }

    #[test]
    fn gram_matrices_are_psd(m in (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0..10.0f64, r * c).prop_map(move |v| Matrix::new(r, c, v).unwrap())
    })) {
        let g = SymMatrix::from_matrix(&(&m.transpose() * &m)).unwrap();
        prop_assert!(is_psd(&g, 1e-9).unwrap().psd);
    }

    #[test]
    fn inverse_of_inverse(m in square(5, 1.0)) {
        let n = m.rows();
        let m = &m + &Matrix::identity(n).scale(2.0 * n as f64);
        let back = inverse(&inverse(&m).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&m).unwrap() <= 1e-8);
    }
}
