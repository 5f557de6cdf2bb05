//! Euclidean projections used by the optimizer: the upper-level box, the
//! Frobenius ball holding the cross-derivative tracker and the eigenvalue
//! floor holding the lower-Hessian tracker.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{dim_check, Error, Result};
use crate::oracle::symmetrize;
use crate::scalar::Scalar;

/// Componentwise box `[lo, hi]`; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet<T: Scalar> {
    lo: DVector<T>,
    hi: DVector<T>,
}

impl<T: Scalar> BoxSet<T> {
    pub fn new(lo: DVector<T>, hi: DVector<T>) -> Result<Self> {
        dim_check("box bounds", lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::Configuration("box must have dimension >= 1".into()));
        }
        for (i, (l, h)) in lo.iter().zip(hi.iter()).enumerate() {
            if !(l <= h) {
                return Err(Error::Configuration(format!(
                    "box bound {i}: need lo <= hi, got [{l}, {h}]"
                )));
            }
        }
        Ok(Self { lo, hi })
    }

    /// `[lo, hi]^dim`.
    pub fn uniform(dim: usize, lo: T, hi: T) -> Result<Self> {
        Self::new(
            DVector::from_element(dim, lo),
            DVector::from_element(dim, hi),
        )
    }

    /// The whole space.
    pub fn unbounded(dim: usize) -> Self {
        let inf = T::lit(f64::INFINITY);
        Self {
            lo: DVector::from_element(dim, -inf),
            hi: DVector::from_element(dim, inf),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &DVector<T> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<T> {
        &self.hi
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.iter().chain(self.hi.iter()).all(|v| v.is_finite())
    }

    pub fn contains(&self, x: &DVector<T>, tol: T) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(self.hi.iter()))
                .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    /// Largest absolute coordinate over the box (`inf` when unbounded).
    pub fn max_abs(&self) -> T {
        self.lo
            .iter()
            .chain(self.hi.iter())
            .fold(T::zero(), |acc, v| acc.max(v.abs()))
    }
}

/// Componentwise clamp of `x` onto `set`.
pub fn project_box<T: Scalar>(x: &DVector<T>, set: &BoxSet<T>) -> Result<DVector<T>> {
    dim_check("project_box", set.dim(), x.len())?;
    Ok(DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(set.lo.iter().zip(set.hi.iter()))
            .map(|(&v, (&l, &h))| v.max(l).min(h)),
    ))
}

fn check_finite<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::RejectedInput(format!("{what}: non-finite entry")))
    }
}

/// Projection onto `{X : ||X||_F <= radius}`.
pub fn project_frobenius_ball<T: Scalar>(m: &DMatrix<T>, radius: T) -> Result<DMatrix<T>> {
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(Error::RejectedInput(format!(
            "ball radius must be positive and finite, got {radius}"
        )));
    }
    check_finite(m, "project_frobenius_ball")?;
    let norm = m.norm();
    if norm <= radius {
        Ok(m.clone())
    } else {
        Ok(m * (radius / norm))
    }
}

fn symmetry_tolerance<T: Scalar>(m: &DMatrix<T>) -> T {
    let scale = m.iter().fold(T::one(), |acc, v| acc.max(v.abs()));
    let base = T::lit(1e-10).max(T::default_epsilon() * T::lit(64.0));
    base * scale
}

/// Projection of a symmetric matrix onto `{X : X >= mu I}` by clamping
/// eigenvalues from below at `mu`.
///
/// Inputs asymmetric by at most `1e-10` (relative to the largest entry) are
/// symmetrized first; larger asymmetry is rejected. The output is exactly
/// symmetric.
pub fn project_psd_floor<T: Scalar>(m: &DMatrix<T>, mu: T) -> Result<DMatrix<T>> {
    if !(mu > T::zero()) || !mu.is_finite() {
        return Err(Error::RejectedInput(format!(
            "eigenvalue floor must be positive and finite, got {mu}"
        )));
    }
    if !m.is_square() {
        return Err(Error::RejectedInput(format!(
            "project_psd_floor: matrix is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    check_finite(m, "project_psd_floor")?;
    let tol = symmetry_tolerance(m);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > tol {
                return Err(Error::RejectedInput(format!(
                    "project_psd_floor: asymmetry {gap} at ({i}, {j}) exceeds tolerance {tol}"
                )));
            }
        }
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::try_new(sym, T::default_epsilon(), 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    if eig.eigenvalues.iter().all(|&l| l >= mu) {
        return Ok(symmetrize(m));
    }
    let clamped = eig.eigenvalues.map(|l| l.max(mu));
    let q = &eig.eigenvectors;
    let mut scaled = q.clone();
    for (j, &l) in clamped.iter().enumerate() {
        scaled.column_mut(j).scale_mut(l);
    }
    Ok(symmetrize(&(scaled * q.transpose())))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> Result<T> {
    let eig = SymmetricEigen::try_new(symmetrize(m), T::default_epsilon(), 0)
        .ok_or_else(|| Error::Numerical("symmetric eigendecomposition did not converge".into()))?;
    Ok(eig
        .eigenvalues
        .iter()
        .fold(T::lit(f64::INFINITY), |a, &b| a.min(b)))
}
