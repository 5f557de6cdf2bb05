//! Benchmark problems.

mod hyperopt;
mod quadratic;

pub use hyperopt::{
    make_hyperopt_logistic, synthetic_logistic, HyperoptProblem, HyperoptSpec, DEFAULT_X_HI,
    DEFAULT_X_LO,
};
pub use quadratic::{
    make_quadratic, DoubleWell, NoiseLevels, QuadraticLowerDraw, QuadraticProblem, QuadraticSpec,
    QuadraticUpperDraw, RandomQuadratic,
};
