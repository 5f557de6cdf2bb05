use nalgebra::{dvector, DMatrix, DVector};
use rand::Rng;
use stable_bilevel::metrics::{solve_lower_from, tracker_errors};
use stable_bilevel::{
    finite_diff_gradient, hypergradient, lipschitz_constants, make_hyperopt_logistic,
    make_quadratic, moreau_stationarity, random_start, solve_lower, stream, surrogate_gradient,
    synthetic_logistic, Bilevel, BoxSet, DeterministicChannels, DoubleWell, Error, HyperoptSpec,
    MoreauOptions, ProblemConstants, QuadraticSpec, RandomQuadratic,
};

const TOL: f64 = 1e-12;

fn quadratic(seed: u64, d: usize) -> stable_bilevel::Quadratic {
    let knobs = RandomQuadratic {
        mu_g: 1.0,
        condition: 10.0,
        coupling: 1.0,
        ridge: 0.5,
    };
    make_quadratic(QuadraticSpec::random(d, d, knobs, &mut stream(seed))).unwrap()
}

fn hyperopt() -> stable_bilevel::Hyperopt {
    let data = synthetic_logistic(40, 4, 9).unwrap();
    let (train, val) = stable_bilevel::split(&data, 0.5, 9).unwrap();
    let mut spec = HyperoptSpec::new(train, val).unwrap();
    spec.set = BoxSet::uniform(4, 0.05, 1.0).unwrap();
    make_hyperopt_logistic(spec).unwrap()
}

/// `f = a x^2 / 2 + c x + w y`, `g = y^2 / 2 - x y`, so `y*(x) = x` and
/// `F(x) = a x^2 / 2 + (c + w) x`.
struct Toy {
    a: f64,
    c: f64,
    w: f64,
    set: BoxSet<f64>,
}

impl Toy {
    fn new(a: f64, c: f64, w: f64) -> Self {
        Self {
            a,
            c,
            w,
            set: BoxSet::unbounded(1),
        }
    }
}

impl Bilevel<f64> for Toy {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_y(&self) -> usize {
        1
    }
    fn upper_set(&self) -> &BoxSet<f64> {
        &self.set
    }
    fn constants(&self) -> stable_bilevel::Result<ProblemConstants<f64>> {
        let mut c = ProblemConstants::unit(1.0, 1.0);
        c.lbar_fx = self.a;
        c.lbar_fy = 0.0;
        c.l_fx = 0.0;
        c.l_fy = 0.0;
        c.l_gxy = 0.0;
        c.l_gyy = 0.0;
        c.lbar_gxy = 0.0;
        c.lbar_gyy = 0.0;
        Ok(c)
    }
}

impl DeterministicChannels<f64> for Toy {
    fn upper_value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        0.5 * self.a * x[0] * x[0] + self.c * x[0] + self.w * y[0]
    }
    fn upper_grad(&self, x: &DVector<f64>, _y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (dvector![self.a * x[0] + self.c], dvector![self.w])
    }
    fn lower_grad(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        dvector![y[0] - x[0]]
    }
    fn lower_hessians(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::from_element(1, 1, -1.0), DMatrix::identity(1, 1))
    }
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

#[test]
fn hypergradient_matches_finite_differences_on_quadratics() {
    for seed in 0..3 {
        let p = quadratic(seed, 6);
        let mut rng = stream(50 + seed);
        for _ in 0..10 {
            let x = random_start(&p, &mut rng).x * 3.0;
            let exact = hypergradient(&p, &x, TOL).unwrap();
            let fd = finite_diff_gradient(&p, &x, 1e-5, TOL).unwrap();
            assert!(
                rel_err(&fd, &exact) <= 1e-5,
                "seed {seed}: {}",
                rel_err(&fd, &exact)
            );
        }
    }
}

#[test]
fn hypergradient_matches_finite_differences_on_hyperopt() {
    let p = hyperopt();
    let mut rng = stream(3);
    for _ in 0..10 {
        let x = random_start(&p, &mut rng).x;
        let exact = hypergradient(&p, &x, TOL).unwrap();
        let fd = finite_diff_gradient(&p, &x, 1e-5, TOL).unwrap();
        assert!(rel_err(&fd, &exact) <= 1e-5, "{}", rel_err(&fd, &exact));
    }
}

#[test]
fn surrogate_at_lower_solution_is_the_hypergradient() {
    let q = quadratic(4, 5);
    let h = hyperopt();
    let mut rng = stream(4);
    for _ in 0..10 {
        let x = random_start(&q, &mut rng).x;
        let y = solve_lower(&q, &x, TOL, 10).unwrap();
        let gap =
            (surrogate_gradient(&q, &x, &y).unwrap() - hypergradient(&q, &x, TOL).unwrap()).norm();
        assert!(gap <= 10.0 * TOL);

        let x = random_start(&h, &mut rng).x;
        let y = solve_lower(&h, &x, TOL, 100_000).unwrap();
        let gap =
            (surrogate_gradient(&h, &x, &y).unwrap() - hypergradient(&h, &x, TOL).unwrap()).norm();
        assert!(gap <= 10.0 * TOL);
    }
}

#[test]
fn surrogate_error_is_bounded_by_lower_error() {
    let q = quadratic(5, 4);
    let h = hyperopt();
    let lq = lipschitz_constants(&q.constants().unwrap()).l_f;
    let lh = lipschitz_constants(&h.constants().unwrap()).l_f;
    let mut rng = stream(5);
    for _ in 0..100 {
        let start = random_start(&q, &mut rng);
        let y_star = solve_lower(&q, &start.x, TOL, 10).unwrap();
        let lhs = (surrogate_gradient(&q, &start.x, &start.y).unwrap()
            - hypergradient(&q, &start.x, TOL).unwrap())
        .norm();
        assert!(lhs <= lq * (&start.y - y_star).norm() + 1e-8);

        let start = random_start(&h, &mut rng);
        let y_star = solve_lower(&h, &start.x, TOL, 100_000).unwrap();
        let lhs = (surrogate_gradient(&h, &start.x, &start.y).unwrap()
            - hypergradient(&h, &start.x, TOL).unwrap())
        .norm();
        assert!(lhs <= lh * (&start.y - y_star).norm() + 1e-8);
    }
}

#[test]
fn lipschitz_constants_are_sound() {
    let q = quadratic(6, 4);
    let h = hyperopt();
    let dq = lipschitz_constants(&q.constants().unwrap());
    let dh = lipschitz_constants(&h.constants().unwrap());
    let mut rng = stream(6);
    for _ in 0..100 {
        for (p, d) in [(&q as &dyn DeterministicChannels<f64>, dq), (&h, dh)] {
            let x1 = random_start(p, &mut rng).x;
            let x2 = random_start(p, &mut rng).x;
            let dx = (&x1 - &x2).norm();
            let g =
                (hypergradient(p, &x1, TOL).unwrap() - hypergradient(p, &x2, TOL).unwrap()).norm();
            assert!(g <= d.l_upper * dx * (1.0 + 1e-6));
            let y1 = solve_lower(p, &x1, TOL, 100_000).unwrap();
            let y2 = solve_lower(p, &x2, TOL, 100_000).unwrap();
            assert!((y1 - y2).norm() <= d.l_y * dx * (1.0 + 1e-6));
        }
    }
}

#[test]
fn lower_solve_meets_tolerance_and_reports_failure() {
    let h = hyperopt();
    let mut rng = stream(7);
    for _ in 0..5 {
        let x = random_start(&h, &mut rng).x;
        let y = solve_lower(&h, &x, 1e-10, 100_000).unwrap();
        assert!(h.lower_grad(&x, &y).norm() <= 1e-10);
    }
    let x = DVector::from_element(4, 0.05);
    assert!(matches!(
        solve_lower(&h, &x, 1e-14, 3),
        Err(Error::Convergence { iterations: 3, .. })
    ));
    let warm = solve_lower(&h, &x, 1e-12, 100_000).unwrap();
    assert_eq!(solve_lower_from(&h, &x, &warm, 1e-12, 0).unwrap(), warm);
}

#[test]
fn heavier_regularization_shrinks_lower_solution() {
    let data = synthetic_logistic(40, 4, 2).unwrap();
    let p = make_hyperopt_logistic(HyperoptSpec::new(data.clone(), data).unwrap()).unwrap();
    let mut x = DVector::from_element(4, 0.1);
    let mut last = solve_lower(&p, &x, TOL, 100_000).unwrap().norm();
    for i in 0..4 {
        x[i] = 5.0;
        let now = solve_lower(&p, &x, TOL, 100_000).unwrap().norm();
        assert!(now < last);
        last = now;
    }
    let big = DVector::from_element(4, 10.0);
    assert!(solve_lower(&p, &big, TOL, 100_000).unwrap().norm() < 0.05);
}

#[test]
fn finite_differences_are_exact_on_linear_objectives() {
    let p = Toy::new(0.0, 1.5, -0.5);
    for h in [1e-1, 1e-3, 1.0] {
        let g = finite_diff_gradient(&p, &dvector![0.3], h, TOL).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn finite_difference_error_is_smallest_at_moderate_step() {
    let spec = QuadraticSpec::<f64>::scalar_example().with_well(DoubleWell {
        curvature: 1.0,
        quartic: 1.0,
    });
    let p = make_quadratic(spec).unwrap();
    let x = dvector![1.3];
    let exact = hypergradient(&p, &x, TOL).unwrap();
    let errs: Vec<f64> = [1e-3, 1e-5, 1e-7]
        .iter()
        .map(|&h| (finite_diff_gradient(&p, &x, h, TOL).unwrap() - &exact).norm())
        .collect();
    assert!(errs[1] < errs[0] && errs[1] < errs[2], "{errs:?}");
}

#[test]
fn hypergradient_ignores_lower_level_when_upper_does() {
    let p = Toy::new(2.0, 0.5, 0.0);
    let x = dvector![0.7];
    let g = hypergradient(&p, &x, TOL).unwrap();
    assert_eq!(g, p.upper_grad(&x, &x).0);
}

#[test]
fn moreau_stationarity_examples() {
    // f = y^2 / 2 and y*(x) = x give F(u) = u^2 / 2
    let mut spec = QuadraticSpec::<f64>::scalar_example();
    spec.a = DMatrix::identity(1, 1);
    spec.target = dvector![0.0];
    let p = make_quadratic(spec).unwrap();
    let opts = MoreauOptions::new(1.0);
    assert!(moreau_stationarity(&p, &dvector![0.0], &opts).unwrap() < 1e-20);
    let m = moreau_stationarity(&p, &dvector![1.0], &opts).unwrap();
    assert!((m - 0.25).abs() < 1e-9);
}

#[test]
fn moreau_vanishes_at_minimizers() {
    let q = quadratic(8, 5);
    let opts = MoreauOptions::new(1.0);
    let x_star = q.solution().unwrap();
    assert!(moreau_stationarity(&q, x_star, &opts).unwrap() <= opts.tol * opts.tol);

    // scalar F(x) = (x/2 - 1)^2 / 2 on [3, 5] is minimized at the lower face
    let set = BoxSet::uniform(1, 3.0, 5.0).unwrap();
    let p = make_quadratic(QuadraticSpec::<f64>::scalar_example().with_set(set)).unwrap();
    let opts = MoreauOptions::new(1.0);
    assert!(moreau_stationarity(&p, &dvector![3.0], &opts).unwrap() <= opts.tol * opts.tol);
    assert!(moreau_stationarity(&p, &dvector![4.0], &opts).unwrap() > 1e-3);
}

#[test]
fn moreau_rejects_small_rho() {
    let q = quadratic(9, 2);
    let mut opts = MoreauOptions::new(0.5);
    opts.weak_convexity = Some(-1.0);
    assert!(matches!(
        moreau_stationarity(&q, &dvector![0.0, 0.0], &opts),
        Err(Error::Configuration(_))
    ));
    assert!(moreau_stationarity(&q, &dvector![0.0, 0.0], &MoreauOptions::new(0.0)).is_err());
}

#[test]
fn tracker_errors_are_squared_frobenius_gaps() {
    let q = quadratic(10, 3);
    let mut rng = stream(10);
    let pt = random_start(&q, &mut rng);
    let (exy, eyy) = q.lower_hessians(&pt.x, &pt.y);
    let bump = DMatrix::from_fn(3, 3, |_, _| rng.random::<f64>());
    let (a, b) = tracker_errors(&q, &pt.x, &pt.y, &(&exy + &bump), &eyy);
    assert!((a - bump.norm_squared()).abs() < 1e-12);
    assert_eq!(b, 0.0);
}
