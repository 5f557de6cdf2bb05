//! Reference optimizers: two-timescale TTSA and double-loop BSA.
//!
//! Both estimate `[d2_yy g]^{-1} grad_y f` with a truncated Neumann series
//! over fresh lower samples instead of tracking the Hessian.

use nalgebra::DVector;
use rand::Rng;

use crate::error::{dim_check, Error, Result};
use crate::oracle::{random_start, BilevelOracle, Point, ProblemConstants, SampleCount};
use crate::projection::project_box;
use crate::record::{Recorder, RunRecord, Snapshot};
use crate::scalar::Scalar;
use crate::stream;

pub const DEFAULT_NEUMANN_TERMS: usize = 10;
pub const DEFAULT_ALPHA_EXPONENT: f64 = 0.6;
pub const DEFAULT_BETA_EXPONENT: f64 = 0.4;

/// Accumulated terms larger than this multiple of `||v||` count as divergence.
const DIVERGENCE_FACTOR: f64 = 1e12;

/// Truncation of `eta * sum_{i<N} (I - eta H)^i v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeumannParams<T: Scalar> {
    pub terms: usize,
    pub scale: T,
    pub samples_per_term: usize,
}

impl<T: Scalar> NeumannParams<T> {
    pub fn new(terms: usize, scale: T, samples_per_term: usize) -> Result<Self> {
        if terms == 0 {
            return Err(Error::Configuration("Neumann terms must be >= 1".into()));
        }
        if samples_per_term == 0 {
            return Err(Error::Configuration(
                "Neumann samples_per_term must be >= 1".into(),
            ));
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::Configuration(format!(
                "Neumann scale must be positive, got {scale}"
            )));
        }
        Ok(Self {
            terms,
            scale,
            samples_per_term,
        })
    }

    /// `eta = 1 / L_g` with one sample per term.
    pub fn for_constants(terms: usize, c: &ProblemConstants<T>) -> Result<Self> {
        Self::new(terms, T::one() / c.l_g, 1)
    }

    /// Requires `eta < 2 / L_g` when `L_g` is finite.
    pub fn check_against(&self, c: &ProblemConstants<T>) -> Result<()> {
        if c.l_g.is_finite() && self.scale * c.l_g >= T::lit(2.0) {
            return Err(Error::Configuration(format!(
                "Neumann scale {} must be below 2 / L_g = {}",
                self.scale,
                T::lit(2.0) / c.l_g
            )));
        }
        Ok(())
    }

    /// Lower draws consumed by one call of [`neumann_inv_hvp`].
    pub fn draws(&self) -> usize {
        (self.terms - 1) * self.samples_per_term
    }
}

/// Stochastic approximation of `[d2_yy g(x, y)]^{-1} v`.
///
/// Term `i` is `(I - eta H_i) ... (I - eta H_1) v` with each `H_j` the mean of
/// `samples_per_term` fresh lower samples; term 0 is `v` itself.
pub fn neumann_inv_hvp<T, P, R>(
    problem: &P,
    point: &Point<T>,
    v: &DVector<T>,
    params: &NeumannParams<T>,
    rng: &mut R,
) -> Result<DVector<T>>
where
    T: Scalar,
    P: BilevelOracle<T> + ?Sized,
    R: Rng + ?Sized,
{
    dim_check("v", problem.dim_y(), v.len())?;
    let eta = params.scale;
    let limit = T::lit(DIVERGENCE_FACTOR) * v.norm();
    let inv_count = T::one() / T::lit(params.samples_per_term as f64);
    let mut term = v.clone();
    let mut sum = v.clone();
    for i in 1..params.terms {
        let mut h_term = DVector::zeros(v.len());
        for _ in 0..params.samples_per_term {
            let draw = problem.draw_lower(rng);
            let sample = problem.eval_lower(&draw, point)?;
            h_term += sample.h_yy * &term;
        }
        term -= h_term * (eta * inv_count);
        if !(term.norm() <= limit) {
            return Err(Error::Numerical(format!(
                "Neumann series diverged at term {i} (norm {}); scale {eta} is too large",
                term.norm()
            )));
        }
        sum += &term;
    }
    Ok(sum * eta)
}

/// `alpha_k = alpha0 (k+1)^{-a}`, `beta_k = beta0 (k+1)^{-b}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoTimescaleSchedule<T: Scalar> {
    pub alpha0: T,
    pub beta0: T,
    pub alpha_exponent: T,
    pub beta_exponent: T,
}

impl<T: Scalar> TwoTimescaleSchedule<T> {
    pub fn new(alpha0: T, beta0: T, alpha_exponent: T, beta_exponent: T) -> Result<Self> {
        for (name, v) in [("alpha0", alpha0), ("beta0", beta0)] {
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Configuration(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("alpha exponent", alpha_exponent),
            ("beta exponent", beta_exponent),
        ] {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::Configuration(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(Self {
            alpha0,
            beta0,
            alpha_exponent,
            beta_exponent,
        })
    }

    /// Exponents 3/5 and 2/5.
    pub fn standard(alpha0: T, beta0: T) -> Result<Self> {
        Self::new(
            alpha0,
            beta0,
            T::lit(DEFAULT_ALPHA_EXPONENT),
            T::lit(DEFAULT_BETA_EXPONENT),
        )
    }

    /// `(alpha_k, beta_k)`.
    pub fn emit(&self, k: usize) -> (T, T) {
        let base = T::lit((k + 1) as f64);
        (
            self.alpha0 * base.powf(-self.alpha_exponent),
            self.beta0 * base.powf(-self.beta_exponent),
        )
    }
}

/// Iterate and counters of a baseline run.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState<T: Scalar> {
    pub point: Point<T>,
    pub k: usize,
    pub samples: SampleCount,
}

impl<T: Scalar> BaselineState<T> {
    pub fn new(point: Point<T>) -> Self {
        Self {
            point,
            k: 0,
            samples: SampleCount::default(),
        }
    }

    pub fn snapshot(&self) -> Snapshot<'_, T> {
        Snapshot {
            k: self.k,
            point: &self.point,
            trackers: None,
            samples: self.samples,
        }
    }
}

fn check_finite<T: Scalar>(p: &Point<T>, k: usize) -> Result<()> {
    if p.x.iter().chain(p.y.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite iterate at k = {k}")))
    }
}

/// One TTSA iteration with explicit stepsizes. All stochastic quantities are
/// evaluated at the current `(x, y)`; `k` is not advanced.
pub fn ttsa_step<T, P, R>(
    problem: &P,
    state: &mut BaselineState<T>,
    alpha: T,
    beta: T,
    params: &NeumannParams<T>,
    rng: &mut R,
) -> Result<()>
where
    T: Scalar,
    P: BilevelOracle<T> + ?Sized,
    R: Rng + ?Sized,
{
    if alpha < T::zero() || beta < T::zero() {
        return Err(Error::RejectedInput(format!(
            "stepsizes must be nonnegative, got alpha {alpha}, beta {beta}"
        )));
    }
    let point = &state.point;
    let lower = problem
        .sample_lower_multi(std::slice::from_ref(point), rng)?
        .pop()
        .expect("one point in, one sample out");
    let upper = problem.sample_upper(point, rng)?;
    let inv = neumann_inv_hvp(problem, point, &upper.g_y, params, rng)?;
    let direction = &upper.g_x - &lower.h_xy * inv;
    let x = project_box(&(&point.x - direction * alpha), problem.upper_set())?;
    let y = &point.y - lower.h_g * beta;
    let next = Point::new(x, y);
    check_finite(&next, state.k)?;
    state.point = next;
    state.samples.xi += problem.upper_batch() as u64;
    state.samples.phi += ((1 + params.draws()) * problem.lower_batch()) as u64;
    Ok(())
}

fn initial_state<T, P>(problem: &P, start: &Point<T>) -> Result<BaselineState<T>>
where
    T: Scalar,
    P: BilevelOracle<T> + ?Sized,
{
    dim_check("initial x", problem.dim_x(), start.x.len())?;
    dim_check("initial y", problem.dim_y(), start.y.len())?;
    let x = project_box(&start.x, problem.upper_set())?;
    Ok(BaselineState::new(Point::new(x, start.y.clone())))
}

/// Two-timescale stochastic approximation with Neumann inverse-Hessian estimates.
#[derive(Debug, Clone)]
pub struct Ttsa<'p, T: Scalar, P> {
    problem: &'p P,
    schedule: TwoTimescaleSchedule<T>,
    neumann: NeumannParams<T>,
}

impl<'p, T, P> Ttsa<'p, T, P>
where
    T: Scalar,
    P: BilevelOracle<T>,
{
    pub fn new(
        problem: &'p P,
        schedule: TwoTimescaleSchedule<T>,
        neumann: NeumannParams<T>,
    ) -> Result<Self> {
        let c = problem.constants()?;
        c.validate()?;
        neumann.check_against(&c)?;
        Ok(Self {
            problem,
            schedule,
            neumann,
        })
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &mut BaselineState<T>, rng: &mut R) -> Result<()> {
        let (alpha, beta) = self.schedule.emit(state.k);
        ttsa_step(self.problem, state, alpha, beta, &self.neumann, rng)?;
        state.k += 1;
        Ok(())
    }

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
        let mut state = initial_state(self.problem, start)?;
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

    pub fn run<Rec>(&self, iterations: usize, seed: u64, recorder: &mut Rec) -> Result<RunRecord<T>>
    where
        Rec: Recorder<T> + ?Sized,
    {
        let mut rng = stream(seed);
        let start = random_start(self.problem, &mut rng);
        self.run_from(&start, iterations, &mut rng, recorder)
    }
}

/// Number of lower SGD steps before outer step `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerSteps {
    Constant(usize),
    /// `ceil(sqrt(k + 1))`.
    Sqrt,
}

impl InnerSteps {
    pub fn at(&self, k: usize) -> usize {
        match *self {
            InnerSteps::Constant(n) => n,
            InnerSteps::Sqrt => {
                let target = k + 1;
                let mut r = (target as f64).sqrt() as usize;
                while r * r < target {
                    r += 1;
                }
                while r > 1 && (r - 1) * (r - 1) >= target {
                    r -= 1;
                }
                r
            }
        }
    }
}

/// Double-loop stochastic bilevel approximation: `inner.at(k)` lower SGD
/// steps, then one projected upper step at the refreshed `y`.
///
/// The last inner step and the cross-derivative share one lower draw, so
/// with one inner step the per-iteration draws match TTSA.
#[derive(Debug, Clone)]
pub struct Bsa<'p, T: Scalar, P> {
    problem: &'p P,
    schedule: TwoTimescaleSchedule<T>,
    inner: InnerSteps,
    neumann: NeumannParams<T>,
}

impl<'p, T, P> Bsa<'p, T, P>
where
    T: Scalar,
    P: BilevelOracle<T>,
{
    pub fn new(
        problem: &'p P,
        schedule: TwoTimescaleSchedule<T>,
        inner: InnerSteps,
        neumann: NeumannParams<T>,
    ) -> Result<Self> {
        if inner == InnerSteps::Constant(0) {
            return Err(Error::Configuration("inner steps must be >= 1".into()));
        }
        let c = problem.constants()?;
        c.validate()?;
        neumann.check_against(&c)?;
        Ok(Self {
            problem,
            schedule,
            inner,
            neumann,
        })
    }

    pub fn step<R: Rng + ?Sized>(&self, state: &mut BaselineState<T>, rng: &mut R) -> Result<()> {
        let p = self.problem;
        let (alpha, beta) = self.schedule.emit(state.k);
        let inner = self.inner.at(state.k);
        let x = state.point.x.clone();
        let mut y = state.point.y.clone();
        for _ in 0..inner - 1 {
            let draw = p.draw_lower(rng);
            let s = p.eval_lower(&draw, &Point::new(x.clone(), y.clone()))?;
            y -= s.h_g * beta;
        }
        let draw = p.draw_lower(rng);
        let s = p.eval_lower(&draw, &Point::new(x.clone(), y.clone()))?;
        y -= s.h_g * beta;
        let point = Point::new(x, y);
        check_finite(&point, state.k)?;
        let h_xy = p.eval_lower(&draw, &point)?.h_xy;

        let upper = p.sample_upper(&point, rng)?;
        let inv = neumann_inv_hvp(p, &point, &upper.g_y, &self.neumann, rng)?;
        let direction = &upper.g_x - h_xy * inv;
        let x_next = project_box(&(&point.x - direction * alpha), p.upper_set())?;
        let next = Point::new(x_next, point.y);
        check_finite(&next, state.k)?;

        state.point = next;
        state.k += 1;
        state.samples.xi += p.upper_batch() as u64;
        state.samples.phi += ((inner + self.neumann.draws()) * p.lower_batch()) as u64;
        Ok(())
    }

    pub fn run_from<R, Rec>(
        &self,
        start: &Point<T>,
        outer_steps: usize,
        rng: &mut R,
        recorder: &mut Rec,
    ) -> Result<RunRecord<T>>
    where
        R: Rng + ?Sized,
        Rec: Recorder<T> + ?Sized,
    {
        if outer_steps == 0 {
            return Err(Error::Configuration("iteration count must be >= 1".into()));
        }
        let mut state = initial_state(self.problem, start)?;
        let mut rows = Vec::new();
        rows.extend(recorder.observe(&state.snapshot())?);
        for _ in 0..outer_steps {
            self.step(&mut state, rng)?;
            rows.extend(recorder.observe(&state.snapshot())?);
        }
        Ok(RunRecord {
            rows,
            final_point: state.point,
            samples: state.samples,
            iterations: outer_steps,
        })
    }

    pub fn run<Rec>(
        &self,
        outer_steps: usize,
        seed: u64,
        recorder: &mut Rec,
    ) -> Result<RunRecord<T>>
    where
        Rec: Recorder<T> + ?Sized,
    {
        let mut rng = stream(seed);
        let start = random_start(self.problem, &mut rng);
        self.run_from(&start, outer_steps, &mut rng, recorder)
    }
}
