//! Ground-truth diagnostics computed from the exact channels.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_check, Error, Result};
use crate::oracle::{DeterministicChannels, ProblemConstants};
use crate::projection::project_box;
use crate::record::{RecordRow, Recorder, Snapshot};
use crate::scalar::Scalar;
use crate::stable::spd_factor;

pub const DEFAULT_SOLVE_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 200_000;

/// Lipschitz constants of the surrogate gradient in `y` (`l_f`), of `y*(x)`
/// (`l_y`) and of `grad F` (`l_upper`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants<T: Scalar> {
    pub l_f: T,
    pub l_y: T,
    pub l_upper: T,
}

/// `a * b` where a zero factor wins over an infinite one.
fn bound_product<T: Scalar>(a: T, b: T) -> T {
    if a == T::zero() || b == T::zero() {
        T::zero()
    } else {
        a * b
    }
}

/// Lipschitz constants implied by the regularity bounds:
///
/// ```text
/// l_y     = C_gxy / mu_g
/// l_f     = L_fx + C_gxy L_fy / mu_g + (C_fy / mu_g)(L_gxy + C_gxy L_gyy / mu_g)
/// l_upper = Lbar_fx + C_gxy (Lbar_fy + l_f) / mu_g
///           + (C_fy / mu_g)(Lbar_gxy + C_gxy Lbar_gyy / mu_g)
/// ```
pub fn lipschitz_constants<T: Scalar>(c: &ProblemConstants<T>) -> DerivedConstants<T> {
    let mu = c.mu_g;
    let l_y = c.c_gxy / mu;
    let l_f = c.l_fx
        + c.c_gxy * c.l_fy / mu
        + bound_product(c.c_fy / mu, c.l_gxy + bound_product(c.c_gxy, c.l_gyy) / mu);
    let l_upper = c.lbar_fx
        + c.c_gxy * (c.lbar_fy + l_f) / mu
        + bound_product(
            c.c_fy / mu,
            c.lbar_gxy + bound_product(c.c_gxy, c.lbar_gyy) / mu,
        );
    DerivedConstants { l_f, l_y, l_upper }
}

/// `y*(x)`, warm-started from zero.
pub fn solve_lower<T, P>(
    problem: &P,
    x: &DVector<T>,
    tol: T,
    max_iters: usize,
) -> Result<DVector<T>>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    solve_lower_from(problem, x, &DVector::zeros(problem.dim_y()), tol, max_iters)
}

/// `y*(x)` to gradient norm `tol`: the closed form when the problem has one,
/// polished or replaced by gradient descent with stepsize `2 / (mu + L)`.
pub fn solve_lower_from<T, P>(
    problem: &P,
    x: &DVector<T>,
    y0: &DVector<T>,
    tol: T,
    max_iters: usize,
) -> Result<DVector<T>>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    dim_check("x", problem.dim_x(), x.len())?;
    dim_check("y0", problem.dim_y(), y0.len())?;
    let mut y = problem.lower_solution(x).unwrap_or_else(|| y0.clone());
    let mut grad = problem.lower_grad(x, &y);
    if grad.norm() <= tol {
        return Ok(y);
    }
    let (mu, l) = problem.lower_curvature(x)?;
    let step = T::lit(2.0) / (mu + l);
    for _ in 0..max_iters {
        y -= &grad * step;
        grad = problem.lower_grad(x, &y);
        if grad.norm() <= tol {
            return Ok(y);
        }
    }
    Err(Error::Convergence {
        iterations: max_iters,
        residual: grad.norm().as_f64(),
    })
}

/// `grad_x f(x, y) - d2_xy g(x, y) [d2_yy g(x, y)]^{-1} grad_y f(x, y)` at the given `y`.
pub fn surrogate_gradient<T, P>(problem: &P, x: &DVector<T>, y: &DVector<T>) -> Result<DVector<T>>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    dim_check("x", problem.dim_x(), x.len())?;
    dim_check("y", problem.dim_y(), y.len())?;
    let (gx, gy) = problem.upper_grad(x, y);
    let (hxy, hyy) = problem.lower_hessians(x, y);
    let chol = spd_factor(&hyy, "lower Hessian")?;
    Ok(gx - hxy * chol.solve(&gy))
}

/// Exact hypergradient `grad F(x)` via implicit differentiation at `y*(x)`.
pub fn hypergradient<T, P>(problem: &P, x: &DVector<T>, tol: T) -> Result<DVector<T>>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    let y = solve_lower(problem, x, tol, DEFAULT_MAX_ITERS)?;
    surrogate_gradient(problem, x, &y)
}

/// `F(x) = f(x, y*(x))`.
pub fn upper_objective<T, P>(problem: &P, x: &DVector<T>, tol: T) -> Result<T>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    let y = solve_lower(problem, x, tol, DEFAULT_MAX_ITERS)?;
    Ok(problem.upper_value(x, &y))
}

/// Central differences of `F` with step `h` per coordinate.
pub fn finite_diff_gradient<T, P>(problem: &P, x: &DVector<T>, h: T, tol: T) -> Result<DVector<T>>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    if !(h > T::zero()) {
        return Err(Error::RejectedInput(format!(
            "step must be positive, got {h}"
        )));
    }
    dim_check("x", problem.dim_x(), x.len())?;
    let mut out = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus[i] += h;
        let mut minus = x.clone();
        minus[i] -= h;
        let fp = upper_objective(problem, &plus, tol)?;
        let fm = upper_objective(problem, &minus, tol)?;
        out[i] = (fp - fm) / (h + h);
    }
    Ok(out)
}

/// `||y - y*(x)||^2`.
pub fn lower_error<T, P>(problem: &P, x: &DVector<T>, y: &DVector<T>, tol: T) -> Result<T>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    let y_star = solve_lower(problem, x, tol, DEFAULT_MAX_ITERS)?;
    dim_check("y", y_star.len(), y.len())?;
    Ok((y - y_star).norm_squared())
}

/// `(||H_xy - d2_xy g||^2, ||H_yy - d2_yy g||^2)` at `(x, y)`.
pub fn tracker_errors<T, P>(
    problem: &P,
    x: &DVector<T>,
    y: &DVector<T>,
    h_xy: &DMatrix<T>,
    h_yy: &DMatrix<T>,
) -> (T, T)
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    let (exy, eyy) = problem.lower_hessians(x, y);
    ((h_xy - exy).norm_squared(), (h_yy - eyy).norm_squared())
}

/// Settings for the proximal-point subproblem behind the Moreau stationarity measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoreauOptions<T: Scalar> {
    pub rho: T,
    /// Stop when a projected-gradient update moves less than this.
    pub tol: T,
    pub max_iters: usize,
    /// Tolerance of the inner lower-level solves.
    pub solve_tol: T,
    /// Lipschitz constant of `grad F`; falls back to the problem's hint,
    /// then to the constant derived from its regularity bounds.
    pub lipschitz: Option<T>,
    /// Declared weak-convexity modulus `mu_F`; requires `rho > |mu_F|`.
    pub weak_convexity: Option<T>,
}

impl<T: Scalar> MoreauOptions<T> {
    pub fn new(rho: T) -> Self {
        Self {
            rho,
            tol: T::lit(1e-10),
            max_iters: 100_000,
            solve_tol: T::lit(DEFAULT_SOLVE_TOL),
            lipschitz: None,
            weak_convexity: None,
        }
    }
}

/// `x_hat(z) = argmin_{u in X} F(u) + rho/2 ||u - z||^2`, by projected
/// gradient descent with stepsize `1 / (L_F + rho)` warm-started at `z`.
pub fn moreau_prox<T, P>(problem: &P, z: &DVector<T>, opts: &MoreauOptions<T>) -> Result<DVector<T>>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    dim_check("x", problem.dim_x(), z.len())?;
    if !(opts.rho > T::zero()) {
        return Err(Error::Configuration(format!(
            "rho must be positive, got {}",
            opts.rho
        )));
    }
    if let Some(mu_f) = opts.weak_convexity {
        if opts.rho <= mu_f.abs() {
            return Err(Error::Configuration(format!(
                "rho = {} must exceed |mu_F| = {}",
                opts.rho,
                mu_f.abs()
            )));
        }
    }
    let lipschitz = match opts.lipschitz.or_else(|| problem.hypergradient_lipschitz()) {
        Some(l) => l,
        None => lipschitz_constants(&problem.constants()?).l_upper,
    };
    if !lipschitz.is_finite() {
        return Err(Error::Configuration(
            "no finite Lipschitz constant for the hypergradient".into(),
        ));
    }
    let step = T::one() / (lipschitz + opts.rho);
    let set = problem.upper_set();
    let mut u = z.clone();
    let mut y = DVector::zeros(problem.dim_y());
    let mut moved = T::zero();
    for _ in 0..opts.max_iters {
        y = solve_lower_from(problem, &u, &y, opts.solve_tol, DEFAULT_MAX_ITERS)?;
        let grad = surrogate_gradient(problem, &u, &y)? + (&u - z) * opts.rho;
        let next = project_box(&(&u - grad * step), set)?;
        moved = (&next - &u).norm();
        u = next;
        if moved <= opts.tol {
            return Ok(u);
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iters,
        residual: moved.as_f64(),
    })
}

/// `||x_hat(x) - x||^2`.
pub fn moreau_stationarity<T, P>(problem: &P, x: &DVector<T>, opts: &MoreauOptions<T>) -> Result<T>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    let prox = moreau_prox(problem, x, opts)?;
    Ok((prox - x).norm_squared())
}

/// What the upper error column measures.
#[derive(Debug, Clone, PartialEq)]
pub enum UpperReference<T: Scalar> {
    /// `||x - x*||^2`.
    Solution(DVector<T>),
    /// `F(x) - F*`.
    OptimalValue(T),
    /// `F(x)`.
    Objective,
}

/// Recorder evaluating exact diagnostics every `cadence` iterations and at
/// the final iteration.
pub struct MetricRecorder<'p, T: Scalar, P: ?Sized> {
    problem: &'p P,
    cadence: usize,
    horizon: usize,
    solve_tol: T,
    reference: UpperReference<T>,
    moreau: Option<MoreauOptions<T>>,
    started: Instant,
}

impl<'p, T, P> MetricRecorder<'p, T, P>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    pub fn new(
        problem: &'p P,
        cadence: usize,
        horizon: usize,
        reference: UpperReference<T>,
    ) -> Result<Self> {
        if cadence == 0 {
            return Err(Error::Configuration("metric cadence must be >= 1".into()));
        }
        Ok(Self {
            problem,
            cadence,
            horizon,
            solve_tol: T::lit(DEFAULT_SOLVE_TOL),
            reference,
            moreau: None,
            started: Instant::now(),
        })
    }

    pub fn with_moreau(mut self, opts: MoreauOptions<T>) -> Self {
        self.moreau = Some(opts);
        self
    }

    pub fn with_solve_tol(mut self, tol: T) -> Self {
        self.solve_tol = tol;
        self
    }

    pub fn evaluate(&self, snap: &Snapshot<'_, T>) -> Result<RecordRow> {
        let p = self.problem;
        let x = &snap.point.x;
        let y = &snap.point.y;
        let y_star = solve_lower(p, x, self.solve_tol, DEFAULT_MAX_ITERS)?;
        let upper = match &self.reference {
            UpperReference::Solution(x_star) => (x - x_star).norm_squared(),
            UpperReference::OptimalValue(f_star) => p.upper_value(x, &y_star) - *f_star,
            UpperReference::Objective => p.upper_value(x, &y_star),
        };
        let mut row = RecordRow::empty(snap.k, snap.samples);
        row.wallclock = self.started.elapsed().as_secs_f64();
        row.upper_error = upper.as_f64();
        row.lower_error = (y - &y_star).norm_squared().as_f64();
        if let Some(opts) = &self.moreau {
            row.moreau_stationarity = moreau_stationarity(p, x, opts)?.as_f64();
        }
        if let Some(t) = snap.trackers {
            let (exy, eyy) = tracker_errors(p, &t.at.x, &t.at.y, t.h_xy, t.h_yy);
            row.tracker_mse_xy = exy.as_f64();
            row.tracker_mse_yy = eyy.as_f64();
        }
        Ok(row)
    }
}

impl<T, P> Recorder<T> for MetricRecorder<'_, T, P>
where
    T: Scalar,
    P: DeterministicChannels<T> + ?Sized,
{
    fn observe(&mut self, snap: &Snapshot<'_, T>) -> Result<Option<RecordRow>> {
        if snap.k.is_multiple_of(self.cadence) || snap.k == self.horizon {
            self.evaluate(snap).map(Some)
        } else {
            Ok(None)
        }
    }
}
