//! The single-timescale optimizer.
//!
//! Each iteration draws one lower datum `phi` and one upper datum `xi`:
//!
//! 1. `H_xy`, `H_yy` are refreshed by the recursive estimator
//!    `H^k = P((1 - tau)(H^{k-1} - h^{k-1}(phi)) + h^k(phi))`, where both
//!    `h` terms share `phi` and are evaluated at the previous and current
//!    iterate. `P` is the Frobenius-ball projection for `H_xy` and the
//!    eigenvalue floor at `mu_g` for `H_yy`.
//! 2. `x` takes a projected step along
//!    `grad_x f(xi) - H_xy H_yy^{-1} grad_y f(xi)`.
//! 3. `y` takes a gradient step on `g` plus the correction
//!    `-H_yy^{-1} H_xy^T (x^{k+1} - x^k)` that follows the drift of `y*(x)`.

mod schedule;

pub use schedule::{
    ScheduleKind, StepsizeSchedule, Stepsizes, DEFAULT_ALPHA_RATIO, DEFAULT_ALPHA_SCALE,
    DEFAULT_BETA_CAP,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{dim_check, Error, Result};
use crate::oracle::{random_start, BilevelOracle, Point, SampleCount};
use crate::projection::{min_eigenvalue, project_box, project_frobenius_ball, project_psd_floor};
use crate::record::{Recorder, RunRecord, Snapshot, Trackers};
use crate::scalar::Scalar;
use crate::stream;

/// Full optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T: Scalar> {
    pub point: Point<T>,
    /// Iterate the trackers were last refreshed at.
    pub prev_point: Point<T>,
    /// Cross-derivative tracker, `d x d_y`.
    pub h_xy: DMatrix<T>,
    /// Lower-Hessian tracker, `d_y x d_y`, eigenvalues `>= mu_g`.
    pub h_yy: DMatrix<T>,
    pub k: usize,
    pub samples: SampleCount,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn snapshot(&self) -> Snapshot<'_, T> {
        Snapshot {
            k: self.k,
            point: &self.point,
            trackers: Some(Trackers {
                h_xy: &self.h_xy,
                h_yy: &self.h_yy,
                at: &self.prev_point,
            }),
            samples: self.samples,
        }
    }
}

/// Solves `H v = rhs` for symmetric positive-definite `H`.
pub(crate) fn spd_solve<T: Scalar>(chol: &Cholesky<T, Dyn>, rhs: &DVector<T>) -> DVector<T> {
    chol.solve(rhs)
}

pub(crate) fn spd_factor<T: Scalar>(h: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>> {
    Cholesky::new(h.clone()).ok_or_else(|| {
        let min_eig = min_eigenvalue(h)
            .map(|v| format!("{v}"))
            .unwrap_or_else(|_| "unavailable".into());
        Error::Numerical(format!(
            "{what}: Cholesky factorization failed (min eigenvalue {min_eig}, dim {})",
            h.nrows()
        ))
    })
}

/// Single-timescale stochastic bilevel optimizer bound to a problem and schedule.
#[derive(Debug, Clone)]
pub struct Stable<'p, T: Scalar, P> {
    problem: &'p P,
    schedule: StepsizeSchedule<T>,
    mu_g: T,
    radius: T,
}

impl<'p, T, P> Stable<'p, T, P>
where
    T: Scalar,
    P: BilevelOracle<T>,
{
    /// Uses the problem's `mu_g` as eigenvalue floor and `C_gxy` as ball radius.
    pub fn new(problem: &'p P, schedule: StepsizeSchedule<T>) -> Result<Self> {
        let c = problem.constants()?;
        c.validate()?;
        Ok(Self {
            problem,
            schedule,
            mu_g: c.mu_g,
            radius: c.c_gxy,
        })
    }

    pub fn schedule(&self) -> &StepsizeSchedule<T> {
        &self.schedule
    }

    /// Projects `x0` onto the upper set and seeds both trackers from one
    /// projected stochastic sample at `(x0, y0)`.
    pub fn init_state<R: Rng + ?Sized>(
        &self,
        x0: &DVector<T>,
        y0: &DVector<T>,
        rng: &mut R,
    ) -> Result<OptimizerState<T>> {
        dim_check("initial x", self.problem.dim_x(), x0.len())?;
        dim_check("initial y", self.problem.dim_y(), y0.len())?;
        let point = Point::new(project_box(x0, self.problem.upper_set())?, y0.clone());
        let mut samples = self
            .problem
            .sample_lower_multi(std::slice::from_ref(&point), rng)?;
        let sample = samples.pop().expect("one point in, one sample out");
        let h_xy = project_frobenius_ball(&sample.h_xy, self.radius)?;
        let h_yy = project_psd_floor(&sample.h_yy, self.mu_g)?;
        Ok(OptimizerState {
            prev_point: point.clone(),
            point,
            h_xy,
            h_yy,
            k: 0,
            samples: SampleCount {
                xi: 0,
                phi: self.problem.lower_batch() as u64,
            },
        })
    }

    /// Advances `state` by one iteration and returns the stepsizes used.
    ///
    /// On error `state` is left untouched.
    pub fn step<R: Rng + ?Sized>(
        &self,
        state: &mut OptimizerState<T>,
        rng: &mut R,
    ) -> Result<Stepsizes<T>> {
        let steps = self.schedule.emit(state.k)?;
        let one = T::one();

        let pair = [state.prev_point.clone(), state.point.clone()];
        let lower = self.problem.sample_lower_multi(&pair, rng)?;
        let (prev, cur) = (&lower[0], &lower[1]);

        let keep = one - steps.tau;
        let h_xy = project_frobenius_ball(
            &((&state.h_xy - &prev.h_xy) * keep + &cur.h_xy),
            self.radius,
        )?;
        let h_yy = project_psd_floor(&((&state.h_yy - &prev.h_yy) * keep + &cur.h_yy), self.mu_g)?;

        let upper = self.problem.sample_upper(&state.point, rng)?;
        let chol = spd_factor(&h_yy, "lower-Hessian tracker")?;

        let x = &state.point.x;
        let y = &state.point.y;
        let direction = &upper.g_x - &h_xy * spd_solve(&chol, &upper.g_y);
        let x_next = project_box(&(x - direction * steps.alpha), self.problem.upper_set())?;
        let dx = &x_next - x;
        let correction = spd_solve(&chol, &(h_xy.transpose() * dx));
        let y_next = y - &cur.h_g * steps.beta - correction;

        if x_next.iter().chain(y_next.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite iterate at k = {} (alpha {}, beta {})",
                state.k, steps.alpha, steps.beta
            )));
        }

        let next = Point::new(x_next, y_next);
        state.prev_point = std::mem::replace(&mut state.point, next);
        state.h_xy = h_xy;
        state.h_yy = h_yy;
        state.k += 1;
        state.samples.xi += self.problem.upper_batch() as u64;
        state.samples.phi += self.problem.lower_batch() as u64;
        Ok(steps)
    }

    /// Runs `iterations` steps from `start`, observing after init and after each step.
    pub fn run_from<R, Rec>(
        &self,
        start: &Point<T>,
        iterations: usize,
        rng: &mut R,
        recorder: &mut Rec,
    ) -> Result<RunRecord<T>>
    where
        R: Rng + ?Sized,
        Rec: Recorder<T> + ?Sized,
    {
        if iterations == 0 {
            return Err(Error::Configuration("iteration count must be >= 1".into()));
        }
        let mut state = self.init_state(&start.x, &start.y, rng)?;
        let mut rows = Vec::new();
        rows.extend(recorder.observe(&state.snapshot())?);
        for _ in 0..iterations {
            self.step(&mut state, rng)?;
            rows.extend(recorder.observe(&state.snapshot())?);
        }
        Ok(RunRecord {
            rows,
            final_point: state.point,
            samples: state.samples,
            iterations,
        })
    }

    /// Seeds a fresh stream, draws a random start from it and runs.
    pub fn run<Rec>(&self, iterations: usize, seed: u64, recorder: &mut Rec) -> Result<RunRecord<T>>
    where
        Rec: Recorder<T> + ?Sized,
    {
        let mut rng = stream(seed);
        let start = random_start(self.problem, &mut rng);
        self.run_from(&start, iterations, &mut rng, recorder)
    }
}
