use nalgebra::{dmatrix, DMatrix, DVector};
use proptest::prelude::*;
use stable_bilevel::projection::min_eigenvalue;
use stable_bilevel::{project_box, project_frobenius_ball, project_psd_floor, BoxSet};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-10.0..10.0f64, rows * cols)
        .prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    matrix(n, n).prop_map(|m| (&m + m.transpose()) * 0.5)
}

fn boxed(n: usize) -> impl Strategy<Value = (BoxSet<f64>, DVector<f64>)> {
    (
        prop::collection::vec((-5.0..5.0f64, 0.0..5.0f64), n),
        prop::collection::vec(-20.0..20.0f64, n),
    )
        .prop_map(|(bounds, x)| {
            let lo = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.0));
            let hi = DVector::from_iterator(bounds.len(), bounds.iter().map(|b| b.0 + b.1));
            (BoxSet::new(lo, hi).unwrap(), DVector::from_vec(x))
        })
}

/// Eigen-clamp of a symmetric 2x2 matrix from the closed-form spectrum.
fn clamp_2x2(m: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
    let (a, b, d) = (m[(0, 0)], m[(0, 1)], m[(1, 1)]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d).powi(2) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    // eigenvector of l1
    let v = if b.abs() > 1e-300 {
        let v = [l1 - d, b];
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        [v[0] / n, v[1] / n]
    } else if a >= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let w = [-v[1], v[0]];
    let (c1, c2) = (l1.max(mu), l2.max(mu));
    DMatrix::from_fn(2, 2, |i, j| c1 * v[i] * v[j] + c2 * w[i] * w[j])
}

#[test]
fn psd_floor_matches_closed_form_clamp() {
    let m = dmatrix![0.0, 2.0; 2.0, 0.0];
    let got = project_psd_floor(&m, 0.5).unwrap();
    assert!((&got - clamp_2x2(&m, 0.5)).amax() < 1e-14);
    assert!((got - dmatrix![1.25, 0.75; 0.75, 1.25]).amax() < 1e-14);
}

#[test]
fn ball_example_matches_direct_scaling() {
    let m = dmatrix![3.0, 0.0; 0.0, 4.0];
    let got: DMatrix<f64> = project_frobenius_ball(&m, 2.5).unwrap();
    assert!((got.norm() - 2.5).abs() < 1e-14);
    assert!((got - dmatrix![1.5, 0.0; 0.0, 2.0]).amax() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn ball_is_idempotent_and_bounded(m in matrix(3, 4), r in 0.1..20.0f64) {
        let p = project_frobenius_ball(&m, r).unwrap();
        prop_assert!(p.norm() <= r + 1e-10);
        let pp = project_frobenius_ball(&p, r).unwrap();
        prop_assert!((&pp - &p).amax() <= 1e-12);
    }

    #[test]
    fn psd_floor_is_idempotent_symmetric_and_floored(m in symmetric(4), mu in 0.01..3.0f64) {
        let p = project_psd_floor(&m, mu).unwrap();
        prop_assert_eq!(&p, &p.transpose());
        prop_assert!(min_eigenvalue(&p).unwrap() >= mu - 1e-10);
        let pp = project_psd_floor(&p, mu).unwrap();
        prop_assert!((&pp - &p).amax() <= 1e-12);
    }

    #[test]
    fn psd_floor_agrees_with_closed_form_on_2x2(m in symmetric(2), mu in 0.01..3.0f64) {
        let p = project_psd_floor(&m, mu).unwrap();
        prop_assert!((&p - clamp_2x2(&m, mu)).amax() <= 1e-10);
    }

    #[test]
    fn psd_floor_output_is_solvable(m in symmetric(5), mu in 0.01..1.0f64, rhs in prop::collection::vec(-10.0..10.0f64, 5)) {
        let p = project_psd_floor(&m, mu).unwrap();
        let chol = p.clone().cholesky();
        prop_assert!(chol.is_some());
        let b = DVector::from_vec(rhs);
        let sol = chol.unwrap().solve(&b);
        prop_assert!((&p * sol - &b).amax() <= 1e-8 * (1.0 + b.amax()));
    }

    #[test]
    fn box_is_idempotent_and_contains((set, x) in boxed(6)) {
        let p = project_box(&x, &set).unwrap();
        prop_assert!(set.contains(&p, 1e-10));
        prop_assert_eq!(project_box(&p, &set).unwrap(), p);
    }

    #[test]
    fn ball_is_nonexpansive(a in matrix(3, 3), b in matrix(3, 3), r in 0.1..20.0f64) {
        let pa = project_frobenius_ball(&a, r).unwrap();
        let pb = project_frobenius_ball(&b, r).unwrap();
        prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-10);
    }

    #[test]
    fn psd_floor_is_nonexpansive(a in symmetric(3), b in symmetric(3), mu in 0.01..3.0f64) {
        let pa = project_psd_floor(&a, mu).unwrap();
        let pb = project_psd_floor(&b, mu).unwrap();
        prop_assert!((pa - pb).norm() <= (a - b).norm() + 1e-10);
    }

    #[test]
    fn box_is_nonexpansive((set, x) in boxed(4), z in prop::collection::vec(-20.0..20.0f64, 4)) {
        let z = DVector::from_vec(z);
        let px = project_box(&x, &set).unwrap();
        let pz = project_box(&z, &set).unwrap();
        prop_assert!((px - pz).norm() <= (x - z).norm() + 1e-10);
    }

    #[test]
    fn unbounded_box_is_identity(x in prop::collection::vec(-1e6..1e6f64, 3)) {
        let x = DVector::from_vec(x);
        prop_assert_eq!(project_box(&x, &BoxSet::unbounded(3)).unwrap(), x);
    }
}
