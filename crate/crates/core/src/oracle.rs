//! Sampling interface every bilevel problem implements.
//!
//! A problem exposes its upper-level (`f`, datum `xi`) and lower-level
//! (`g`, datum `phi`) stochastic derivatives. Drawing a datum and evaluating
//! derivatives at a point are separate steps, so one draw can be evaluated
//! at several points. The optimizer relies on this to compare
//! `h(x^{k-1}, y^{k-1}; phi^k)` with `h(x^k, y^k; phi^k)` under the same datum.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{dim_check, Error, Result};
use crate::projection::BoxSet;
use crate::scalar::Scalar;

/// An (upper, lower) variable pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Point<T: Scalar> {
    pub x: DVector<T>,
    pub y: DVector<T>,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: DVector<T>, y: DVector<T>) -> Self {
        Self { x, y }
    }
}

/// Stochastic gradients of the upper objective under one datum.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperGradSample<T: Scalar> {
    /// `grad_x f(x, y; xi)`, length `d`.
    pub g_x: DVector<T>,
    /// `grad_y f(x, y; xi)`, length `d_y`.
    pub g_y: DVector<T>,
}

/// Stochastic first and second derivatives of the lower objective under one datum.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerDerivSample<T: Scalar> {
    /// `grad_y g`, length `d_y`.
    pub h_g: DVector<T>,
    /// Cross derivative `d^2 g / dx dy`, shape `d x d_y`.
    pub h_xy: DMatrix<T>,
    /// Lower Hessian, shape `d_y x d_y`, always symmetric.
    pub h_yy: DMatrix<T>,
}

impl<T: Scalar> LowerDerivSample<T> {
    /// Builds a sample, symmetrizing `h_yy` as `(h + h^T) / 2`.
    pub fn new(h_g: DVector<T>, h_xy: DMatrix<T>, h_yy: DMatrix<T>) -> Self {
        let h_yy = symmetrize(&h_yy);
        Self { h_g, h_xy, h_yy }
    }
}

pub(crate) fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Regularity constants of a bilevel problem.
///
/// `c_*` are second-moment bounds (`E||.||^2 <= c^2`), `sigma_*` are
/// standard-deviation bounds of the stochastic channels, `l_*` are Lipschitz
/// moduli in `y` and `lbar_*` Lipschitz moduli in `x`. Moment bounds may be
/// `+inf` when the problem has no bounded region to certify them on.
///
/// The fourth-moment bounds on the `f` gradients are an analysis device only;
/// `c_fx` and `c_fy` hold the second-moment bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConstants<T: Scalar> {
    pub mu_g: T,
    pub l_g: T,
    pub c_gxy: T,
    pub c_fx: T,
    pub c_fy: T,
    pub c_gyy: T,
    pub sigma_fx: T,
    pub sigma_fy: T,
    pub sigma_gy: T,
    pub sigma_gxy: T,
    pub sigma_gyy: T,
    pub l_fx: T,
    pub l_fy: T,
    pub l_gxy: T,
    pub l_gyy: T,
    pub lbar_fx: T,
    pub lbar_fy: T,
    pub lbar_gxy: T,
    pub lbar_gyy: T,
}

impl<T: Scalar> ProblemConstants<T> {
    /// Bundle with the given curvature pair and every other bound set to 1.
    pub fn unit(mu_g: T, l_g: T) -> Self {
        let one = T::one();
        Self {
            mu_g,
            l_g,
            c_gxy: one,
            c_fx: one,
            c_fy: one,
            c_gyy: one,
            sigma_fx: one,
            sigma_fy: one,
            sigma_gy: one,
            sigma_gxy: one,
            sigma_gyy: one,
            l_fx: one,
            l_fy: one,
            l_gxy: one,
            l_gyy: one,
            lbar_fx: one,
            lbar_fy: one,
            lbar_gxy: one,
            lbar_gyy: one,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_g > T::zero()) || !self.mu_g.is_finite() {
            return Err(Error::Configuration(format!(
                "lower-level strong convexity modulus must be positive and finite, got {}",
                self.mu_g
            )));
        }
        if !self.l_g.is_finite() || self.l_g < self.mu_g {
            return Err(Error::Configuration(format!(
                "lower-level smoothness {} must be finite and at least mu_g = {}",
                self.l_g, self.mu_g
            )));
        }
        if !(self.c_gxy > T::zero()) || !self.c_gxy.is_finite() {
            return Err(Error::Configuration(format!(
                "cross-derivative bound (projection radius) must be positive and finite, got {}",
                self.c_gxy
            )));
        }
        let rest = [
            ("c_fx", self.c_fx),
            ("c_fy", self.c_fy),
            ("c_gyy", self.c_gyy),
            ("sigma_fx", self.sigma_fx),
            ("sigma_fy", self.sigma_fy),
            ("sigma_gy", self.sigma_gy),
            ("sigma_gxy", self.sigma_gxy),
            ("sigma_gyy", self.sigma_gyy),
            ("l_fx", self.l_fx),
            ("l_fy", self.l_fy),
            ("l_gxy", self.l_gxy),
            ("l_gyy", self.l_gyy),
            ("lbar_fx", self.lbar_fx),
            ("lbar_fy", self.lbar_fy),
            ("lbar_gxy", self.lbar_gxy),
            ("lbar_gyy", self.lbar_gyy),
        ];
        for (name, v) in rest {
            if !(v >= T::zero()) {
                return Err(Error::Configuration(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Oracle draws consumed by a run, split by channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SampleCount {
    /// Upper-level data `xi`.
    pub xi: u64,
    /// Lower-level data `phi`.
    pub phi: u64,
}

impl SampleCount {
    pub fn total(&self) -> u64 {
        self.xi + self.phi
    }
}

/// Shape, feasible set and constants shared by the stochastic and exact views.
pub trait Bilevel<T: Scalar>: Sync {
    fn dim_x(&self) -> usize;

    fn dim_y(&self) -> usize;

    /// The upper-level feasible set.
    fn upper_set(&self) -> &BoxSet<T>;

    /// Declared regularity constants. Fails if `mu_g > 0` cannot be certified.
    fn constants(&self) -> Result<ProblemConstants<T>>;

    fn check_point(&self, p: &Point<T>) -> Result<()> {
        dim_check("upper variable", self.dim_x(), p.x.len())?;
        dim_check("lower variable", self.dim_y(), p.y.len())
    }
}

/// Stochastic first/second-order access to `f` and `g`.
///
/// Implementations must be unbiased per channel, deterministic given the
/// stream state, and must draw a datum once per `draw_*` call.
pub trait BilevelOracle<T: Scalar>: Bilevel<T> {
    type UpperDraw;
    type LowerDraw;

    fn draw_upper<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::UpperDraw;

    fn draw_lower<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::LowerDraw;

    fn eval_upper(&self, draw: &Self::UpperDraw, point: &Point<T>) -> Result<UpperGradSample<T>>;

    fn eval_lower(&self, draw: &Self::LowerDraw, point: &Point<T>) -> Result<LowerDerivSample<T>>;

    /// Data points consumed by one upper draw.
    fn upper_batch(&self) -> usize {
        1
    }

    /// Data points consumed by one lower draw.
    fn lower_batch(&self) -> usize {
        1
    }

    fn sample_upper<R: Rng + ?Sized>(
        &self,
        point: &Point<T>,
        rng: &mut R,
    ) -> Result<UpperGradSample<T>> {
        self.check_point(point)?;
        let draw = self.draw_upper(rng);
        self.eval_upper(&draw, point)
    }

    /// Evaluates one or two points under a single shared lower datum.
    fn sample_lower_multi<R: Rng + ?Sized>(
        &self,
        points: &[Point<T>],
        rng: &mut R,
    ) -> Result<Vec<LowerDerivSample<T>>> {
        if points.is_empty() || points.len() > 2 {
            return Err(Error::RejectedInput(format!(
                "sample_lower_multi takes one or two points, got {}",
                points.len()
            )));
        }
        for p in points {
            self.check_point(p)?;
        }
        let draw = self.draw_lower(rng);
        points.iter().map(|p| self.eval_lower(&draw, p)).collect()
    }
}

/// Exact (noise-free) derivatives, used for ground-truth diagnostics.
pub trait DeterministicChannels<T: Scalar>: Bilevel<T> {
    /// `f(x, y)`.
    fn upper_value(&self, x: &DVector<T>, y: &DVector<T>) -> T;

    /// `(grad_x f, grad_y f)`.
    fn upper_grad(&self, x: &DVector<T>, y: &DVector<T>) -> (DVector<T>, DVector<T>);

    /// `grad_y g`.
    fn lower_grad(&self, x: &DVector<T>, y: &DVector<T>) -> DVector<T>;

    /// `(d^2 g / dx dy, d^2 g / dy^2)` with shapes `d x d_y` and `d_y x d_y`.
    fn lower_hessians(&self, x: &DVector<T>, y: &DVector<T>) -> (DMatrix<T>, DMatrix<T>);

    /// `y*(x)` when the problem has a closed form.
    fn lower_solution(&self, _x: &DVector<T>) -> Option<DVector<T>> {
        None
    }

    /// Strong convexity and smoothness of `g(x, .)` at this `x`.
    fn lower_curvature(&self, _x: &DVector<T>) -> Result<(T, T)> {
        let c = self.constants()?;
        Ok((c.mu_g, c.l_g))
    }

    /// A Lipschitz constant of `grad F` tighter than the generic bound, if known.
    fn hypergradient_lipschitz(&self) -> Option<T> {
        None
    }
}

/// Random initialization: `x` uniform in the bounded coordinates of the
/// upper set (standard normal, then projected, elsewhere), `y` standard normal.
pub fn random_start<T, P, R>(problem: &P, rng: &mut R) -> Point<T>
where
    T: Scalar,
    P: Bilevel<T> + ?Sized,
    R: Rng + ?Sized,
{
    let set = problem.upper_set();
    let x = DVector::from_iterator(
        problem.dim_x(),
        set.lo().iter().zip(set.hi().iter()).map(|(&l, &h)| {
            if l.is_finite() && h.is_finite() {
                l + (h - l) * T::unit_uniform(rng)
            } else {
                T::standard_normal(rng).max(l).min(h)
            }
        }),
    );
    let y = DVector::from_iterator(
        problem.dim_y(),
        (0..problem.dim_y()).map(|_| T::standard_normal(rng)),
    );
    Point::new(x, y)
}
