//! Single-timescale stochastic bilevel optimization.
//!
//! The library solves `min_{x in X} F(x) = f(x, y*(x))` with
//! `y*(x) = argmin_y g(x, y)` for strongly convex `g(x, .)`, given only
//! stochastic derivatives of `f` and `g`. [`Stable`] tracks the lower
//! Hessian and cross derivative with recursive estimators so that `x` and
//! `y` move on the same timescale; [`Ttsa`] and [`Bsa`] are the
//! Neumann-series baselines.
//!
//! Everything is generic over the scalar type ([`Scalar`], implemented for
//! `f32` and `f64`); the aliases at the crate root fix `f64`.
//!
//! ```
//! use stable_bilevel::{make_quadratic, QuadraticSpec, Stable, StepsizeSchedule, NoRecorder};
//!
//! let problem = make_quadratic(QuadraticSpec::<f64>::scalar_example()).unwrap();
//! let schedule = StepsizeSchedule::constant(0.05, 0.1, 0.5).unwrap();
//! let run = Stable::new(&problem, schedule).unwrap()
//!     .run(2000, 7, &mut NoRecorder).unwrap();
//! let x_star = problem.solution().unwrap();
//! assert!((run.final_point.x[0] - x_star[0]).abs() < 1e-6);
//! ```

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod problems;
pub mod projection;
pub mod record;
pub mod scalar;
pub mod stable;

use rand::SeedableRng;

pub use baselines::{
    neumann_inv_hvp, ttsa_step, BaselineState, Bsa, InnerSteps, NeumannParams, Ttsa,
    TwoTimescaleSchedule,
};
pub use data::{load_libsvm, parse_libsvm, serialize_libsvm, split, Dataset, SparseRow};
pub use error::{Error, Result};
pub use metrics::{
    finite_diff_gradient, hypergradient, lipschitz_constants, lower_error, moreau_stationarity,
    solve_lower, surrogate_gradient, upper_objective, DerivedConstants, MetricRecorder,
    MoreauOptions, UpperReference,
};
pub use oracle::{
    random_start, Bilevel, BilevelOracle, DeterministicChannels, LowerDerivSample, Point,
    ProblemConstants, SampleCount, UpperGradSample,
};
pub use problems::{
    make_hyperopt_logistic, make_quadratic, synthetic_logistic, DoubleWell, HyperoptProblem,
    HyperoptSpec, NoiseLevels, QuadraticProblem, QuadraticSpec, RandomQuadratic,
};
pub use projection::{project_box, project_frobenius_ball, project_psd_floor, BoxSet};
pub use record::{NoRecorder, RecordRow, Recorder, RunRecord, Snapshot, Trackers};
pub use scalar::Scalar;
pub use stable::{OptimizerState, ScheduleKind, Stable, StepsizeSchedule, Stepsizes};

/// Random stream driving one run.
pub type Stream = rand_chacha::ChaCha8Rng;

/// The stream for `seed`. Runs with equal seeds replay identically.
pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

pub type Quadratic = QuadraticProblem<f64>;
pub type Quadratic32 = QuadraticProblem<f32>;
pub type Hyperopt = HyperoptProblem<f64>;
pub type Hyperopt32 = HyperoptProblem<f32>;
pub type PointF64 = Point<f64>;
pub type StateF64 = OptimizerState<f64>;
pub type ConstantsF64 = ProblemConstants<f64>;
pub type ScheduleF64 = StepsizeSchedule<f64>;
pub type BoxSetF64 = BoxSet<f64>;
