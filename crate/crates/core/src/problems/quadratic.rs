//! Strongly convex quadratic bilevel family with closed forms.
//!
//! Lower level `g(x, y) = 1/2 y^T A y - y^T (B x + b)`, upper level
//! `f(x, y) = 1/2 ||y - y_t||^2 + lambda/2 ||x||^2 + sum_i w(x_i)` where the
//! optional double well `w(u) = delta/4 u^4 - gamma/2 u^2` makes `F`
//! nonconvex but weakly convex.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;

use crate::error::{dim_check, Error, Result};
use crate::oracle::{
    Bilevel, BilevelOracle, DeterministicChannels, LowerDerivSample, Point, ProblemConstants,
    UpperGradSample,
};
use crate::projection::BoxSet;
use crate::scalar::Scalar;

/// Per-entry standard deviations of the Gaussian noise.
///
/// Upper gradients get additive noise. A lower draw perturbs the lower
/// objective itself, `g(x, y; phi) = 1/2 y^T (A + E) y - y^T ((B + F) x + b + e)`,
/// so every lower channel is an exact derivative of the same sampled
/// function: `gyy` scales `E = (G + G^T) / 2` (off-diagonal entries get
/// `gyy / sqrt(2)`), `gxy` scales `F` and `gy` scales `e`. The noise on
/// `grad_y g` therefore grows with `|x|` and `|y|`; see
/// [`QuadraticProblem::lower_grad_noise_std`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevels<T: Scalar> {
    pub fx: T,
    pub fy: T,
    pub gy: T,
    pub gxy: T,
    pub gyy: T,
}

impl<T: Scalar> NoiseLevels<T> {
    pub fn zero() -> Self {
        Self::uniform(T::zero())
    }

    pub fn uniform(sigma: T) -> Self {
        Self {
            fx: sigma,
            fy: sigma,
            gy: sigma,
            gxy: sigma,
            gyy: sigma,
        }
    }

    fn validate(&self) -> Result<()> {
        for v in [self.fx, self.fy, self.gy, self.gxy, self.gyy] {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Configuration(format!(
                    "noise level must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Upper-level perturbation `w(u) = quartic/4 u^4 - curvature/2 u^2`, per coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleWell<T: Scalar> {
    pub curvature: T,
    pub quartic: T,
}

impl<T: Scalar> DoubleWell<T> {
    fn value(&self, u: T) -> T {
        let u2 = u * u;
        self.quartic * u2 * u2 / T::lit(4.0) - self.curvature * u2 / T::lit(2.0)
    }

    fn grad(&self, u: T) -> T {
        self.quartic * u * u * u - self.curvature * u
    }

    /// `max |w''|` over `[-r, r]`.
    fn max_second_derivative(&self, r: T) -> T {
        let edge = (T::lit(3.0) * self.quartic * r * r - self.curvature).abs();
        edge.max(self.curvature.abs())
    }
}

/// Parameters of a quadratic instance.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec<T: Scalar> {
    /// Symmetric positive-definite lower Hessian, `d_y x d_y`.
    pub a: DMatrix<T>,
    /// Coupling `B`, `d_y x d`.
    pub coupling: DMatrix<T>,
    /// Lower linear term `b`.
    pub offset: DVector<T>,
    /// Upper target `y_t`.
    pub target: DVector<T>,
    /// Upper ridge weight `lambda`.
    pub ridge: T,
    pub noise: NoiseLevels<T>,
    pub set: BoxSet<T>,
    pub well: Option<DoubleWell<T>>,
}

/// Knobs for [`QuadraticSpec::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomQuadratic<T: Scalar> {
    /// Smallest eigenvalue of `A`.
    pub mu_g: T,
    /// `lambda_max(A) / lambda_min(A)`.
    pub condition: T,
    /// Scale of `B` (entries `coupling * N(0, 1) / sqrt(d)`).
    pub coupling: T,
    pub ridge: T,
}

impl<T: Scalar> Default for RandomQuadratic<T> {
    fn default() -> Self {
        Self {
            mu_g: T::one(),
            condition: T::lit(10.0),
            coupling: T::one(),
            ridge: T::one(),
        }
    }
}

fn gaussian_matrix<T: Scalar, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> DMatrix<T> {
    DMatrix::from_fn(rows, cols, |_, _| T::standard_normal(rng))
}

fn gaussian_vector<T: Scalar, R: Rng + ?Sized>(len: usize, rng: &mut R) -> DVector<T> {
    DVector::from_fn(len, |_, _| T::standard_normal(rng))
}

impl<T: Scalar> QuadraticSpec<T> {
    /// Random instance with `A = Q diag(l) Q^T`, eigenvalues log-spaced from
    /// `mu_g` to `mu_g * condition`, zero noise and an unbounded upper set.
    pub fn random<R: Rng + ?Sized>(
        dim_x: usize,
        dim_y: usize,
        knobs: RandomQuadratic<T>,
        rng: &mut R,
    ) -> Self {
        let q = gaussian_matrix::<T, _>(dim_y, dim_y, rng).qr().q();
        let eig = DVector::from_fn(dim_y, |i, _| {
            let frac = if dim_y > 1 {
                T::lit(i as f64 / (dim_y - 1) as f64)
            } else {
                T::zero()
            };
            knobs.mu_g * knobs.condition.powf(frac)
        });
        let a = crate::oracle::symmetrize(&(&q * DMatrix::from_diagonal(&eig) * q.transpose()));
        let scale = knobs.coupling / T::lit(dim_x as f64).sqrt();
        let coupling = gaussian_matrix::<T, _>(dim_y, dim_x, rng) * scale;
        let offset = gaussian_vector(dim_y, rng);
        let target = gaussian_vector(dim_y, rng);
        Self {
            a,
            coupling,
            offset,
            target,
            ridge: knobs.ridge,
            noise: NoiseLevels::zero(),
            set: BoxSet::unbounded(dim_x),
            well: None,
        }
    }

    /// The scalar instance `g = y^2 - x y`, `f = 1/2 (y - 1)^2`: `y*(x) = x/2`, `x* = 2`.
    pub fn scalar_example() -> Self {
        Self {
            a: DMatrix::from_element(1, 1, T::lit(2.0)),
            coupling: DMatrix::from_element(1, 1, T::one()),
            offset: DVector::zeros(1),
            target: DVector::from_element(1, T::one()),
            ridge: T::zero(),
            noise: NoiseLevels::zero(),
            set: BoxSet::unbounded(1),
            well: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseLevels<T>) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_set(mut self, set: BoxSet<T>) -> Self {
        self.set = set;
        self
    }

    pub fn with_well(mut self, well: DoubleWell<T>) -> Self {
        self.well = Some(well);
        self
    }
}

/// Noise for one upper draw.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticUpperDraw<T: Scalar> {
    dx: DVector<T>,
    dy: DVector<T>,
}

/// Noise for one lower draw, shared by every point it is evaluated at.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticLowerDraw<T: Scalar> {
    dg: DVector<T>,
    dxy: DMatrix<T>,
    dyy: DMatrix<T>,
}

/// A validated quadratic instance.
#[derive(Debug, Clone)]
pub struct QuadraticProblem<T: Scalar> {
    spec: QuadraticSpec<T>,
    a_chol: Cholesky<T, Dyn>,
    mu_g: T,
    l_g: T,
    /// `A^{-1} B`, the Jacobian of `y*(x)`.
    sensitivity: DMatrix<T>,
    solution: Option<DVector<T>>,
}

/// Validates `spec` and precomputes closed forms.
pub fn make_quadratic<T: Scalar>(spec: QuadraticSpec<T>) -> Result<QuadraticProblem<T>> {
    QuadraticProblem::new(spec)
}

impl<T: Scalar> QuadraticProblem<T> {
    pub fn new(spec: QuadraticSpec<T>) -> Result<Self> {
        let dy = spec.a.nrows();
        let dx = spec.coupling.ncols();
        if dx == 0 || dy == 0 {
            return Err(Error::Configuration("dimensions must be >= 1".into()));
        }
        dim_check("A columns", dy, spec.a.ncols())?;
        dim_check("B rows", dy, spec.coupling.nrows())?;
        dim_check("b", dy, spec.offset.len())?;
        dim_check("y_t", dy, spec.target.len())?;
        dim_check("upper set", dx, spec.set.dim())?;
        spec.noise.validate()?;
        if !(spec.ridge >= T::zero()) {
            return Err(Error::Configuration(format!(
                "ridge must be >= 0, got {}",
                spec.ridge
            )));
        }
        if let Some(w) = spec.well {
            if !(w.curvature >= T::zero()) || !(w.quartic >= T::zero()) {
                return Err(Error::Configuration(
                    "double-well coefficients must be >= 0".into(),
                ));
            }
        }
        let asym = (&spec.a - spec.a.transpose()).amax();
        if asym > T::lit(1e-12) * spec.a.amax().max(T::one()) {
            return Err(Error::Configuration(format!(
                "A is not symmetric (gap {asym})"
            )));
        }
        let eig = SymmetricEigen::new(spec.a.clone());
        let mu_g = eig.eigenvalues.min();
        let l_g = eig.eigenvalues.max();
        if !(mu_g > T::zero()) {
            return Err(Error::Configuration(format!(
                "A must be positive definite, smallest eigenvalue {mu_g}"
            )));
        }
        let a_chol = Cholesky::new(spec.a.clone())
            .ok_or_else(|| Error::Configuration("A is not positive definite".into()))?;
        let sensitivity = a_chol.solve(&spec.coupling);
        let shifted_target = &spec.target - a_chol.solve(&spec.offset);

        let solution = if spec.well.is_none() && is_free(&spec.set) {
            let normal =
                sensitivity.transpose() * &sensitivity + DMatrix::identity(dx, dx) * spec.ridge;
            let rhs = sensitivity.transpose() * &shifted_target;
            let spectrum = SymmetricEigen::new(normal.clone()).eigenvalues;
            let singular = Error::Configuration(
                "normal equations are singular (zero ridge with rank-deficient coupling)".into(),
            );
            if spectrum.min() <= T::lit(1e-12) * spectrum.max() {
                return Err(singular);
            }
            let chol = Cholesky::new(normal).ok_or(singular)?;
            Some(chol.solve(&rhs))
        } else {
            None
        };

        Ok(Self {
            spec,
            a_chol,
            mu_g,
            l_g,
            sensitivity,
            solution,
        })
    }

    pub fn spec(&self) -> &QuadraticSpec<T> {
        &self.spec
    }

    /// `argmin_x F(x)` when the upper set is the whole space and there is no
    /// double well.
    pub fn solution(&self) -> Option<&DVector<T>> {
        self.solution.as_ref()
    }

    /// `y*(x) = A^{-1}(B x + b)`.
    pub fn lower_solution_of(&self, x: &DVector<T>) -> DVector<T> {
        self.a_chol
            .solve(&(&self.spec.coupling * x + &self.spec.offset))
    }

    /// `F(x) = f(x, y*(x))`.
    pub fn objective(&self, x: &DVector<T>) -> T {
        let y = self.lower_solution_of(x);
        self.upper_value(x, &y)
    }

    /// `d^2 F / dx^2` without the double-well term.
    /// Bound on the per-entry standard deviation of the sampled `grad_y g`
    /// at `(x, y)`: `sqrt(gy^2 + gyy^2 |y|^2 + gxy^2 |x|^2)`.
    pub fn lower_grad_noise_std(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        let n = &self.spec.noise;
        (n.gy * n.gy + n.gyy * n.gyy * y.norm_squared() + n.gxy * n.gxy * x.norm_squared()).sqrt()
    }

    pub fn quadratic_curvature(&self) -> DMatrix<T> {
        let dx = self.dim_x();
        self.sensitivity.transpose() * &self.sensitivity
            + DMatrix::identity(dx, dx) * self.spec.ridge
    }

    fn upper_x_grad(&self, x: &DVector<T>) -> DVector<T> {
        let mut g = x * self.spec.ridge;
        if let Some(w) = self.spec.well {
            for (gi, &xi) in g.iter_mut().zip(x.iter()) {
                *gi += w.grad(xi);
            }
        }
        g
    }

    /// `max |d^2 w|` over the upper set, `inf` if unbounded with a quartic term.
    fn well_curvature_bound(&self) -> T {
        match self.spec.well {
            None => T::zero(),
            Some(w) if w.quartic == T::zero() => w.curvature,
            Some(w) => w.max_second_derivative(self.spec.set.max_abs()),
        }
    }

    /// `sup_x ||grad_x f||` over the upper set.
    fn upper_x_grad_bound(&self) -> T {
        let set = &self.spec.set;
        let ridge = self.spec.ridge;
        let mut total = T::zero();
        for (&lo, &hi) in set.lo().iter().zip(set.hi().iter()) {
            let phi = |u: T| {
                let w = self.spec.well.map(|w| w.grad(u)).unwrap_or_else(T::zero);
                (ridge * u + w).abs()
            };
            let unbounded = !lo.is_finite() || !hi.is_finite();
            if unbounded {
                if ridge > T::zero()
                    || self
                        .spec
                        .well
                        .is_some_and(|w| w.quartic > T::zero() || w.curvature > T::zero())
                {
                    return T::lit(f64::INFINITY);
                }
                continue;
            }
            let mut best = phi(lo).max(phi(hi));
            if let Some(w) = self.spec.well {
                if w.quartic > T::zero() && w.curvature > ridge {
                    let c = ((w.curvature - ridge) / (T::lit(3.0) * w.quartic)).sqrt();
                    for u in [c, -c] {
                        if u > lo && u < hi {
                            best = best.max(phi(u));
                        }
                    }
                }
            }
            total += best * best;
        }
        total.sqrt()
    }
}

fn is_free<T: Scalar>(set: &BoxSet<T>) -> bool {
    set.lo()
        .iter()
        .chain(set.hi().iter())
        .all(|v| !v.is_finite())
}

impl<T: Scalar> Bilevel<T> for QuadraticProblem<T> {
    fn dim_x(&self) -> usize {
        self.spec.coupling.ncols()
    }

    fn dim_y(&self) -> usize {
        self.spec.a.nrows()
    }

    fn upper_set(&self) -> &BoxSet<T> {
        &self.spec.set
    }

    fn constants(&self) -> Result<ProblemConstants<T>> {
        let dx = T::lit(self.dim_x() as f64);
        let dy = T::lit(self.dim_y() as f64);
        let n = &self.spec.noise;
        let sym_entries = dy * (dy + T::one()) / T::lit(2.0);
        let sigma_fx = n.fx * dx.sqrt();
        let sigma_fy = n.fy * dy.sqrt();
        let sigma_gxy = n.gxy * (dx * dy).sqrt();
        let sigma_gyy = n.gyy * sym_entries.sqrt();
        let cross = self.spec.coupling.norm();
        let fx_bound = self.upper_x_grad_bound();
        let c = ProblemConstants {
            mu_g: self.mu_g,
            l_g: self.l_g,
            c_gxy: (cross * cross + sigma_gxy * sigma_gxy).sqrt(),
            c_fx: (fx_bound * fx_bound + sigma_fx * sigma_fx).sqrt(),
            // grad_y f = y - y_t is unbounded over y.
            c_fy: T::lit(f64::INFINITY),
            c_gyy: (self.spec.a.norm_squared() + sigma_gyy * sigma_gyy).sqrt(),
            sigma_fx,
            sigma_fy,
            // only the point-independent part; the rest scales with |x|, |y|
            sigma_gy: n.gy * dy.sqrt(),
            sigma_gxy,
            sigma_gyy,
            l_fx: T::zero(),
            l_fy: T::one(),
            l_gxy: T::zero(),
            l_gyy: T::zero(),
            lbar_fx: self.spec.ridge + self.well_curvature_bound(),
            lbar_fy: T::zero(),
            lbar_gxy: T::zero(),
            lbar_gyy: T::zero(),
        };
        c.validate()?;
        Ok(c)
    }
}

impl<T: Scalar> BilevelOracle<T> for QuadraticProblem<T> {
    type UpperDraw = QuadraticUpperDraw<T>;
    type LowerDraw = QuadraticLowerDraw<T>;

    fn draw_upper<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::UpperDraw {
        let n = &self.spec.noise;
        QuadraticUpperDraw {
            dx: noise_vector(self.dim_x(), n.fx, rng),
            dy: noise_vector(self.dim_y(), n.fy, rng),
        }
    }

    fn draw_lower<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::LowerDraw {
        let n = &self.spec.noise;
        let (dx, dy) = (self.dim_x(), self.dim_y());
        let dg = noise_vector(dy, n.gy, rng);
        let dxy = if n.gxy > T::zero() {
            gaussian_matrix::<T, _>(dx, dy, rng) * n.gxy
        } else {
            DMatrix::zeros(dx, dy)
        };
        let dyy = if n.gyy > T::zero() {
            let g = gaussian_matrix::<T, _>(dy, dy, rng);
            (&g + g.transpose()) * (n.gyy * T::lit(0.5))
        } else {
            DMatrix::zeros(dy, dy)
        };
        QuadraticLowerDraw { dg, dxy, dyy }
    }

    fn eval_upper(&self, draw: &Self::UpperDraw, point: &Point<T>) -> Result<UpperGradSample<T>> {
        self.check_point(point)?;
        let (gx, gy) = self.upper_grad(&point.x, &point.y);
        Ok(UpperGradSample {
            g_x: gx + &draw.dx,
            g_y: gy + &draw.dy,
        })
    }

    fn eval_lower(&self, draw: &Self::LowerDraw, point: &Point<T>) -> Result<LowerDerivSample<T>> {
        self.check_point(point)?;
        // dxy is the noise on d2_xy g = -(B + F)^T, so -F x = dxy^T x
        let h_g = self.lower_grad(&point.x, &point.y)
            + &draw.dg
            + &draw.dyy * &point.y
            + draw.dxy.tr_mul(&point.x);
        let h_xy = -self.spec.coupling.transpose() + &draw.dxy;
        let h_yy = &self.spec.a + &draw.dyy;
        Ok(LowerDerivSample::new(h_g, h_xy, h_yy))
    }
}

fn noise_vector<T: Scalar, R: Rng + ?Sized>(len: usize, sigma: T, rng: &mut R) -> DVector<T> {
    if sigma > T::zero() {
        gaussian_vector::<T, _>(len, rng) * sigma
    } else {
        DVector::zeros(len)
    }
}

impl<T: Scalar> DeterministicChannels<T> for QuadraticProblem<T> {
    fn upper_value(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        let half = T::lit(0.5);
        let mut v = (y - &self.spec.target).norm_squared() * half
            + x.norm_squared() * self.spec.ridge * half;
        if let Some(w) = self.spec.well {
            v += x.iter().fold(T::zero(), |acc, &u| acc + w.value(u));
        }
        v
    }

    fn upper_grad(&self, x: &DVector<T>, y: &DVector<T>) -> (DVector<T>, DVector<T>) {
        (self.upper_x_grad(x), y - &self.spec.target)
    }

    fn lower_grad(&self, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        &self.spec.a * y - (&self.spec.coupling * x + &self.spec.offset)
    }

    fn lower_hessians(&self, _x: &DVector<T>, _y: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        (-self.spec.coupling.transpose(), self.spec.a.clone())
    }

    fn lower_solution(&self, x: &DVector<T>) -> Option<DVector<T>> {
        Some(self.lower_solution_of(x))
    }

    fn lower_curvature(&self, _x: &DVector<T>) -> Result<(T, T)> {
        Ok((self.mu_g, self.l_g))
    }

    fn hypergradient_lipschitz(&self) -> Option<T> {
        let top = SymmetricEigen::new(self.sensitivity.transpose() * &self.sensitivity)
            .eigenvalues
            .max();
        let bound = top + self.spec.ridge + self.well_curvature_bound();
        bound.is_finite().then_some(bound)
    }
}
