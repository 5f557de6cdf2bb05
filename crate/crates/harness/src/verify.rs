//! Self-checks run by `stable-bench verify`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use stable_bilevel::projection::min_eigenvalue;
use stable_bilevel::{
    finite_diff_gradient, hypergradient, project_box, project_frobenius_ball, project_psd_floor,
    random_start, stream, DeterministicChannels, Result,
};

use crate::config::ExperimentConfig;
use crate::experiment::{build_problem, BuiltProblem};

pub const GRADIENT_POINTS: usize = 10;
pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 1e-5;
pub const PROJECTION_TRIALS: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

/// Checks for the configured problem, seeded by its first seed.
pub fn verify_config(cfg: &ExperimentConfig) -> Result<Vec<Check>> {
    cfg.validate()?;
    let seed = cfg.run.seeds[0];
    match build_problem(&cfg.problem)? {
        BuiltProblem::Quadratic(p) => verify_problem(&p, seed, cfg.run.solve_tol),
        BuiltProblem::Hyperopt(p) => verify_problem(&p, seed, cfg.run.solve_tol),
    }
}

/// Largest `||grad F - fd|| / ||grad F||` over random feasible points
/// (absolute error where the gradient vanishes).
pub fn max_gradient_error<P>(problem: &P, points: usize, seed: u64, tol: f64) -> Result<f64>
where
    P: DeterministicChannels<f64>,
{
    let mut rng = stream(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let x = random_start(problem, &mut rng).x;
        let exact = hypergradient(problem, &x, tol)?;
        let fd = finite_diff_gradient(problem, &x, FD_STEP, tol)?;
        let scale = if exact.norm() > 0.0 {
            exact.norm()
        } else {
            1.0
        };
        worst = worst.max((&exact - &fd).norm() / scale);
    }
    Ok(worst)
}

pub fn verify_problem<P>(problem: &P, seed: u64, tol: f64) -> Result<Vec<Check>>
where
    P: DeterministicChannels<f64>,
{
    let c = problem.constants()?;
    let grad = max_gradient_error(problem, GRADIENT_POINTS, seed, tol)?;
    let mut checks = vec![Check {
        name: "hypergradient",
        passed: grad <= GRADIENT_TOL,
        detail: format!(
            "max relative error vs finite differences {grad:.3e} (limit {GRADIENT_TOL:e})"
        ),
    }];

    let (d, dy) = (problem.dim_x(), problem.dim_y());
    let mut rng = stream(seed ^ 0x5eed);
    let mut ball_worst = 0.0f64;
    let mut floor_worst = f64::INFINITY;
    let mut idem_worst = 0.0f64;
    let mut box_ok = true;
    let radius = if c.c_gxy.is_finite() { c.c_gxy } else { 1.0 };
    for _ in 0..PROJECTION_TRIALS {
        let scale = 10f64.powf(rng.random_range(-2.0..2.0)) * radius;
        let m = DMatrix::from_fn(d, dy, |_, _| rng.random_range(-1.0..1.0)) * scale;
        let p = project_frobenius_ball(&m, radius)?;
        ball_worst = ball_worst.max(p.norm() - radius);
        idem_worst = idem_worst.max((&project_frobenius_ball(&p, radius)? - &p).norm());

        let s = DMatrix::from_fn(dy, dy, |_, _| rng.random_range(-1.0..1.0)) * (scale + c.mu_g);
        let s = (&s + s.transpose()) * 0.5;
        let q = project_psd_floor(&s, c.mu_g)?;
        floor_worst = floor_worst.min(min_eigenvalue(&q)? - c.mu_g);
        idem_worst = idem_worst.max((&project_psd_floor(&q, c.mu_g)? - &q).norm() / q.norm());

        let set = problem.upper_set();
        let x = DVector::from_fn(d, |_, _| rng.random_range(-20.0..20.0));
        let px = project_box(&x, set)?;
        box_ok &= set.contains(&px, 0.0) && project_box(&px, set)? == px;
    }
    let floor_slack = 1e-10 * (1.0 + c.mu_g);
    checks.push(Check {
        name: "projections",
        passed: ball_worst <= 1e-12 * radius && floor_worst >= -floor_slack && idem_worst <= 1e-10 && box_ok,
        detail: format!(
            "{PROJECTION_TRIALS} trials: ball excess {ball_worst:.1e}, eigenvalue floor slack {floor_worst:.1e}, \
             idempotence {idem_worst:.1e}, box {}",
            if box_ok { "ok" } else { "violated" }
        ),
    });
    Ok(checks)
}
