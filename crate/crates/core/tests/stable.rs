use nalgebra::{dvector, DMatrix, DVector};
use stable_bilevel::projection::min_eigenvalue;
use stable_bilevel::{
    make_hyperopt_logistic, make_quadratic, parse_libsvm, random_start, stream, Bilevel, BoxSet,
    DeterministicChannels, Error, HyperoptSpec, NoRecorder, NoiseLevels, Point, QuadraticSpec,
    RandomQuadratic, RecordRow, Snapshot, Stable, StepsizeSchedule,
};

fn random_quadratic(seed: u64, dx: usize, dy: usize) -> QuadraticSpec<f64> {
    let knobs = RandomQuadratic {
        mu_g: 1.0,
        condition: 4.0,
        coupling: 1.0,
        ridge: 1.0,
    };
    QuadraticSpec::random(dx, dy, knobs, &mut stream(seed))
}

#[test]
fn hand_simulated_first_step() {
    let p = make_quadratic(QuadraticSpec::<f64>::scalar_example()).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::constant(0.1, 0.1, 0.5).unwrap()).unwrap();
    let mut rng = stream(0);
    let mut state = opt
        .init_state(&dvector![4.0], &dvector![2.0], &mut rng)
        .unwrap();
    assert_eq!(state.h_xy[(0, 0)], -1.0);
    assert_eq!(state.h_yy[(0, 0)], 2.0);
    opt.step(&mut state, &mut rng).unwrap();
    assert!((state.point.x[0] - 3.95).abs() < 1e-15);
    assert!((state.point.y[0] - 1.975).abs() < 1e-15);
    assert!((state.point.y[0] - p.lower_solution_of(&state.point.x)[0]).abs() < 1e-15);
}

#[test]
fn zero_steps_with_full_refresh_keep_point_and_reset_trackers() {
    let spec = random_quadratic(1, 3, 2);
    let p = make_quadratic(spec).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::constant(0.0, 0.0, 1.0).unwrap()).unwrap();
    let mut rng = stream(1);
    let start = random_start(&p, &mut rng);
    let mut state = opt.init_state(&start.x, &start.y, &mut rng).unwrap();
    state.h_xy = DMatrix::zeros(3, 2);
    state.h_yy = DMatrix::identity(2, 2) * 7.0;
    opt.step(&mut state, &mut rng).unwrap();
    assert_eq!(state.point, start);
    let (exy, eyy) = p.lower_hessians(&start.x, &start.y);
    assert!((&state.h_xy - exy).amax() < 1e-14);
    assert!((&state.h_yy - eyy).amax() < 1e-14);
}

#[test]
fn fixed_point_is_preserved() {
    let p = make_quadratic(random_quadratic(2, 3, 3)).unwrap();
    let x_star = p.solution().unwrap().clone();
    let y_star = p.lower_solution_of(&x_star);
    let opt = Stable::new(&p, StepsizeSchedule::constant(0.05, 0.1, 0.3).unwrap()).unwrap();
    let mut rng = stream(2);
    let mut state = opt.init_state(&x_star, &y_star, &mut rng).unwrap();
    for _ in 0..10 {
        opt.step(&mut state, &mut rng).unwrap();
    }
    assert_eq!(state.k, 10);
    assert!((&state.point.x - &x_star).amax() < 1e-12);
    assert!((&state.point.y - &y_star).amax() < 1e-12);
}

#[test]
fn noise_free_init_reads_exact_hessians() {
    let spec = random_quadratic(3, 4, 3);
    let (a, b) = (spec.a.clone(), spec.coupling.clone());
    let p = make_quadratic(spec).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::nonconvex(10).unwrap()).unwrap();
    let start = random_start(&p, &mut stream(3));
    let state = opt.init_state(&start.x, &start.y, &mut stream(4)).unwrap();
    assert!((&state.h_xy + b.transpose()).amax() < 1e-15);
    assert!((&state.h_yy - a).amax() < 1e-12);
}

#[test]
fn large_hessian_noise_still_respects_floor() {
    let spec = random_quadratic(5, 3, 4).with_noise(NoiseLevels {
        gyy: 50.0,
        ..NoiseLevels::zero()
    });
    let p = make_quadratic(spec).unwrap();
    let mu = p.constants().unwrap().mu_g;
    let opt = Stable::new(&p, StepsizeSchedule::nonconvex(10).unwrap()).unwrap();
    let mut rng = stream(5);
    for _ in 0..50 {
        let start = random_start(&p, &mut rng);
        let state = opt.init_state(&start.x, &start.y, &mut rng).unwrap();
        assert!(min_eigenvalue(&state.h_yy).unwrap() >= mu - 1e-10);
    }
}

#[test]
fn state_stays_feasible_under_noise() {
    let set = BoxSet::uniform(3, -0.5, 0.5).unwrap();
    let spec = random_quadratic(6, 3, 3)
        .with_noise(NoiseLevels::uniform(3.0))
        .with_set(set.clone());
    let p = make_quadratic(spec).unwrap();
    let c = p.constants().unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::nonconvex(300).unwrap()).unwrap();
    let mut rng = stream(6);
    let start = random_start(&p, &mut rng);
    let mut state = opt.init_state(&start.x, &start.y, &mut rng).unwrap();
    for _ in 0..300 {
        opt.step(&mut state, &mut rng).unwrap();
        assert!(state.h_xy.norm() <= c.c_gxy + 1e-10);
        assert!(min_eigenvalue(&state.h_yy).unwrap() >= c.mu_g - 1e-10);
        assert_eq!(state.h_yy, state.h_yy.transpose());
        assert!(set.contains(&state.point.x, 0.0));
    }
}

#[test]
fn trackers_are_exact_without_noise() {
    // one training example makes every hyperopt channel deterministic while
    // the Hessians still move with (x, y)
    let data = parse_libsvm("+1 1:0.8 2:-0.3 3:0.5\n".as_bytes()).unwrap();
    let mut spec = HyperoptSpec::<f64>::new(data.clone(), data).unwrap();
    spec.set = BoxSet::uniform(3, 0.5, 2.0).unwrap();
    let p = make_hyperopt_logistic(spec).unwrap();
    let c = p.constants().unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::constant(0.05, 0.1, 0.3).unwrap()).unwrap();
    let mut rng = stream(7);
    let mut state = opt
        .init_state(
            &dvector![1.0, 1.5, 0.7],
            &dvector![0.1, -0.2, 0.05],
            &mut rng,
        )
        .unwrap();
    for _ in 0..200 {
        opt.step(&mut state, &mut rng).unwrap();
        let at = &state.prev_point;
        let (exy, eyy) = p.lower_hessians(&at.x, &at.y);
        assert!(exy.norm() < c.c_gxy, "true cross derivative left the ball");
        assert!((&state.h_xy - exy).amax() < 1e-10, "k = {}", state.k);
        assert!(
            (&state.h_yy - &eyy).amax() < 1e-10,
            "k = {}: {} vs {}",
            state.k,
            state.h_yy,
            eyy
        );
    }
    assert!(
        (&state.point.x - dvector![1.0, 1.5, 0.7]).norm() > 1e-3,
        "x should have moved"
    );
}

#[test]
fn lower_iterate_follows_affine_solution_map() {
    let p = make_quadratic(random_quadratic(8, 4, 3)).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::constant(0.05, 0.1, 0.5).unwrap()).unwrap();
    let mut rng = stream(8);
    let x0 = dvector![1.0, -2.0, 0.5, 3.0];
    let y0 = p.lower_solution_of(&x0);
    let mut state = opt.init_state(&x0, &y0, &mut rng).unwrap();
    for _ in 0..200 {
        opt.step(&mut state, &mut rng).unwrap();
        let gap = (&state.point.y - p.lower_solution_of(&state.point.x)).norm();
        assert!(gap < 1e-10, "k = {}: gap {gap}", state.k);
    }
}

#[test]
fn sample_accounting_counts_one_extra_lower_draw() {
    let p =
        make_quadratic(random_quadratic(9, 2, 2).with_noise(NoiseLevels::uniform(0.1))).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::nonconvex(37).unwrap()).unwrap();
    let run = opt.run(37, 9, &mut NoRecorder).unwrap();
    assert_eq!((run.samples.xi, run.samples.phi), (37, 38));
    assert_eq!(run.iterations, 37);
}

#[test]
fn zero_iterations_is_a_configuration_error() {
    let p = make_quadratic(QuadraticSpec::<f64>::scalar_example()).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::constant(0.1, 0.1, 0.5).unwrap()).unwrap();
    assert!(matches!(
        opt.run(0, 0, &mut NoRecorder),
        Err(Error::Configuration(_))
    ));
}

#[test]
fn runs_replay_under_a_fixed_seed() {
    let p =
        make_quadratic(random_quadratic(10, 3, 2).with_noise(NoiseLevels::uniform(0.5))).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::nonconvex(500).unwrap()).unwrap();
    let mut rec = |s: &Snapshot<'_, f64>| -> stable_bilevel::Result<Option<RecordRow>> {
        let mut row = RecordRow::empty(s.k, s.samples);
        row.upper_error = s.point.x.norm();
        row.lower_error = s.point.y.norm();
        Ok(Some(row))
    };
    let a = opt.run(500, 42, &mut rec).unwrap();
    let b = opt.run(500, 42, &mut rec).unwrap();
    let c = opt.run(500, 43, &mut rec).unwrap();
    assert_eq!(a.rows.len(), 501);
    assert_eq!(a.final_point, b.final_point);
    assert_eq!(
        a.rows
            .iter()
            .map(|r| r.upper_error.to_bits())
            .collect::<Vec<_>>(),
        b.rows
            .iter()
            .map(|r| r.upper_error.to_bits())
            .collect::<Vec<_>>()
    );
    assert_ne!(a.final_point, c.final_point);
}

#[test]
fn noise_free_constant_steps_reach_closed_form_solution() {
    for seed in 0..3 {
        let p = make_quadratic(random_quadratic(20 + seed, 5, 4)).unwrap();
        let opt = Stable::new(&p, StepsizeSchedule::constant(0.05, 0.1, 0.5).unwrap()).unwrap();
        let run = opt.run(5000, seed, &mut NoRecorder).unwrap();
        let err = (&run.final_point.x - p.solution().unwrap()).norm();
        assert!(err <= 1e-6, "seed {seed}: ||x - x*|| = {err}");
    }
}

#[test]
fn single_precision_run_converges() {
    let spec = QuadraticSpec::<f32>::scalar_example();
    let p = make_quadratic(spec).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::constant(0.05f32, 0.1, 0.5).unwrap()).unwrap();
    let run = opt.run(3000, 1, &mut NoRecorder).unwrap();
    assert!((run.final_point.x[0] - 2.0).abs() < 1e-3);
}

#[test]
fn step_failure_leaves_state_untouched() {
    let p = make_quadratic(QuadraticSpec::<f64>::scalar_example()).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::nonconvex(1).unwrap()).unwrap();
    let mut rng = stream(0);
    let mut state = opt
        .init_state(&dvector![1.0], &dvector![0.0], &mut rng)
        .unwrap();
    opt.step(&mut state, &mut rng).unwrap();
    let before = state.clone();
    assert!(opt.step(&mut state, &mut rng).is_err());
    assert_eq!(state, before);
}

#[test]
fn initial_point_is_projected() {
    let set = BoxSet::uniform(1, 0.0, 1.0).unwrap();
    let p = make_quadratic(QuadraticSpec::<f64>::scalar_example().with_set(set)).unwrap();
    let opt = Stable::new(&p, StepsizeSchedule::constant(0.1, 0.1, 0.5).unwrap()).unwrap();
    let state = opt
        .init_state(&dvector![4.0], &dvector![2.0], &mut stream(0))
        .unwrap();
    assert_eq!(state.point.x, dvector![1.0]);
    let start = Point::new(DVector::from_element(2, 0.0), dvector![0.0]);
    assert!(opt.init_state(&start.x, &start.y, &mut stream(0)).is_err());
}
