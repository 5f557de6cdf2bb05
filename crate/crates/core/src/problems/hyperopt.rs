//! Regularization tuning for logistic regression as a bilevel problem.
//!
//! Lower level: `g(x, y) = E_train[l(y; a, c)] + sum_i x_i y_i^2`.
//! Upper level: `f(x, y) = E_val[l(y; a, c)]`, with the logistic loss
//! `l(y; a, c) = log(1 + exp(-c a^T y))`. The upper set is a box with a
//! strictly positive lower corner, which certifies `mu_g = 2 min(lo)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::{sample_indices, Dataset, SparseRow};
use crate::error::{dim_check, Error, Result};
use crate::oracle::{
    Bilevel, BilevelOracle, DeterministicChannels, LowerDerivSample, Point, ProblemConstants,
    UpperGradSample,
};
use crate::projection::BoxSet;
use crate::scalar::Scalar;
use crate::stream;

pub const DEFAULT_X_LO: f64 = 0.05;
pub const DEFAULT_X_HI: f64 = 10.0;

/// Inputs of the hyperparameter problem.
#[derive(Debug, Clone)]
pub struct HyperoptSpec<T: Scalar> {
    pub train: Dataset,
    pub val: Dataset,
    /// Upper set; `lo > 0` componentwise.
    pub set: BoxSet<T>,
    /// Validation examples per upper draw.
    pub batch_upper: usize,
    /// Training examples per lower draw.
    pub batch_lower: usize,
}

impl<T: Scalar> HyperoptSpec<T> {
    /// Default box `[0.05, 10]^d` and unit batches; `d` is the larger of the
    /// two datasets' feature dimensions.
    pub fn new(train: Dataset, val: Dataset) -> Result<Self> {
        let d = train.dim().max(val.dim());
        Ok(Self {
            train,
            val,
            set: BoxSet::uniform(d, T::lit(DEFAULT_X_LO), T::lit(DEFAULT_X_HI))?,
            batch_upper: 1,
            batch_lower: 1,
        })
    }
}

#[derive(Debug, Clone)]
struct Rows<T: Scalar> {
    indices: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
    labels: Vec<T>,
    max_norm: T,
}

impl<T: Scalar> Rows<T> {
    fn from_dataset(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Configuration("dataset is empty".into()));
        }
        let mut max_norm = 0.0f64;
        let mut indices = Vec::with_capacity(data.len());
        let mut values = Vec::with_capacity(data.len());
        for row in data.rows() {
            max_norm = max_norm.max(row.norm());
            indices.push(row.indices.clone());
            values.push(row.values.iter().map(|&v| T::lit(v)).collect());
        }
        let labels = data
            .labels()
            .iter()
            .map(|&c| {
                if c == 1.0 || c == -1.0 {
                    Ok(T::lit(c))
                } else {
                    Err(Error::Data(format!("label {c} outside {{-1, +1}}")))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            indices,
            values,
            labels,
            max_norm: T::lit(max_norm),
        })
    }

    fn len(&self) -> usize {
        self.labels.len()
    }

    fn dot(&self, i: usize, y: &DVector<T>) -> T {
        self.indices[i]
            .iter()
            .zip(&self.values[i])
            .fold(T::zero(), |acc, (&j, &v)| acc + v * y[j])
    }

    /// Margin `c a^T y`.
    fn margin(&self, i: usize, y: &DVector<T>) -> T {
        self.labels[i] * self.dot(i, y)
    }

    fn loss(&self, i: usize, y: &DVector<T>) -> T {
        softplus(-self.margin(i, y))
    }

    /// Adds `scale * grad l_i(y)` into `out`.
    fn add_grad(&self, i: usize, y: &DVector<T>, scale: T, out: &mut DVector<T>) {
        let z = self.margin(i, y);
        let coef = -self.labels[i] * sigmoid(-z) * scale;
        for (&j, &v) in self.indices[i].iter().zip(&self.values[i]) {
            out[j] += coef * v;
        }
    }

    /// Adds `scale * hess l_i(y)` into `out`.
    fn add_hessian(&self, i: usize, y: &DVector<T>, scale: T, out: &mut DMatrix<T>) {
        let z = self.margin(i, y);
        let s = sigmoid(z);
        let w = s * (T::one() - s) * scale;
        let idx = &self.indices[i];
        let val = &self.values[i];
        for (p, &jp) in idx.iter().enumerate() {
            for (q, &jq) in idx.iter().enumerate() {
                out[(jp, jq)] += w * val[p] * val[q];
            }
        }
    }
}

fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `log(1 + exp(u))` without overflow.
fn softplus<T: Scalar>(u: T) -> T {
    if u > T::zero() {
        u + (-u).exp().ln_1p()
    } else {
        u.exp().ln_1p()
    }
}

/// Validated hyperparameter problem.
#[derive(Debug, Clone)]
pub struct HyperoptProblem<T: Scalar> {
    train: Rows<T>,
    val: Rows<T>,
    set: BoxSet<T>,
    dim: usize,
    batch_upper: usize,
    batch_lower: usize,
}

/// Validates `spec` and converts the data to the working precision.
pub fn make_hyperopt_logistic<T: Scalar>(spec: HyperoptSpec<T>) -> Result<HyperoptProblem<T>> {
    HyperoptProblem::new(spec)
}

impl<T: Scalar> HyperoptProblem<T> {
    pub fn new(spec: HyperoptSpec<T>) -> Result<Self> {
        let dim = spec.set.dim();
        if spec.train.dim() > dim || spec.val.dim() > dim {
            return Err(Error::Configuration(format!(
                "box dimension {dim} is smaller than the feature dimension {}",
                spec.train.dim().max(spec.val.dim())
            )));
        }
        if spec.set.lo().iter().any(|&l| !(l > T::zero())) {
            return Err(Error::Configuration(
                "upper set must have a strictly positive lower corner".into(),
            ));
        }
        if spec.set.hi().iter().any(|h| !h.is_finite()) {
            return Err(Error::Configuration(
                "upper set must be bounded above".into(),
            ));
        }
        if spec.batch_upper == 0 || spec.batch_lower == 0 {
            return Err(Error::Configuration("batch sizes must be >= 1".into()));
        }
        Ok(Self {
            train: Rows::from_dataset(&spec.train)?,
            val: Rows::from_dataset(&spec.val)?,
            set: spec.set,
            dim,
            batch_upper: spec.batch_upper,
            batch_lower: spec.batch_lower,
        })
    }

    /// Validation loss of the model `y`.
    pub fn validation_loss(&self, y: &DVector<T>) -> T {
        mean(self.val.len(), |i| self.val.loss(i, y))
    }

    /// Regularized training objective `g(x, y)`.
    pub fn training_objective(&self, x: &DVector<T>, y: &DVector<T>) -> T {
        let reg = x
            .iter()
            .zip(y.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b * b);
        mean(self.train.len(), |i| self.train.loss(i, y)) + reg
    }

    fn lo_min(&self) -> T {
        self.set.lo().min()
    }

    fn hi_max(&self) -> T {
        self.set.hi().max()
    }

    fn lower_grad_over(&self, idx: &[usize], x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let scale = T::one() / T::lit(idx.len() as f64);
        let mut g = x.component_mul(y) * T::lit(2.0);
        for &i in idx {
            self.train.add_grad(i, y, scale, &mut g);
        }
        g
    }

    fn lower_hessian_over(&self, idx: &[usize], x: &DVector<T>, y: &DVector<T>) -> DMatrix<T> {
        let scale = T::one() / T::lit(idx.len() as f64);
        let mut h = DMatrix::from_diagonal(&(x * T::lit(2.0)));
        for &i in idx {
            self.train.add_hessian(i, y, scale, &mut h);
        }
        h
    }

    fn upper_grad_over(&self, idx: &[usize], y: &DVector<T>) -> DVector<T> {
        let scale = T::one() / T::lit(idx.len() as f64);
        let mut g = DVector::zeros(self.dim);
        for &i in idx {
            self.val.add_grad(i, y, scale, &mut g);
        }
        g
    }
}

fn mean<T: Scalar>(n: usize, f: impl Fn(usize) -> T) -> T {
    (0..n).fold(T::zero(), |acc, i| acc + f(i)) / T::lit(n as f64)
}

impl<T: Scalar> Bilevel<T> for HyperoptProblem<T> {
    fn dim_x(&self) -> usize {
        self.dim
    }

    fn dim_y(&self) -> usize {
        self.dim
    }

    fn upper_set(&self) -> &BoxSet<T> {
        &self.set
    }

    /// Bounds from the data: with `R` the largest training row norm,
    /// `||y*|| <= R / (2 lo)` gives the cross-derivative radius `R / lo`.
    fn constants(&self) -> Result<ProblemConstants<T>> {
        let two = T::lit(2.0);
        let quarter = T::lit(0.25);
        let r = self.train.max_norm;
        let rv = self.val.max_norm;
        let lo = self.lo_min();
        let hi = self.hi_max();
        let sqrt_d = T::lit(self.dim as f64).sqrt();
        let c_gxy = if r > T::zero() { r / lo } else { T::one() };
        let c = ProblemConstants {
            mu_g: two * lo,
            l_g: quarter * r * r + two * hi,
            c_gxy,
            c_fx: T::zero(),
            c_fy: rv,
            c_gyy: quarter * r * r + two * hi * sqrt_d,
            sigma_fx: T::zero(),
            sigma_fy: rv,
            sigma_gy: r,
            sigma_gxy: T::zero(),
            sigma_gyy: quarter * r * r,
            l_fx: T::zero(),
            l_fy: quarter * rv * rv,
            l_gxy: two,
            // |d/dz s(z)(1 - s(z))| <= 1/(6 sqrt 3)
            l_gyy: r * r * r / (T::lit(6.0) * T::lit(3.0).sqrt()),
            lbar_fx: T::zero(),
            lbar_fy: T::zero(),
            lbar_gxy: T::zero(),
            lbar_gyy: two,
        };
        c.validate()?;
        Ok(c)
    }
}

impl<T: Scalar> BilevelOracle<T> for HyperoptProblem<T> {
    type UpperDraw = Vec<usize>;
    type LowerDraw = Vec<usize>;

    fn draw_upper<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        sample_indices(self.val.len(), self.batch_upper, rng)
    }

    fn draw_lower<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        sample_indices(self.train.len(), self.batch_lower, rng)
    }

    fn eval_upper(&self, draw: &Vec<usize>, point: &Point<T>) -> Result<UpperGradSample<T>> {
        self.check_point(point)?;
        Ok(UpperGradSample {
            g_x: DVector::zeros(self.dim),
            g_y: self.upper_grad_over(draw, &point.y),
        })
    }

    fn eval_lower(&self, draw: &Vec<usize>, point: &Point<T>) -> Result<LowerDerivSample<T>> {
        self.check_point(point)?;
        let (x, y) = (&point.x, &point.y);
        Ok(LowerDerivSample::new(
            self.lower_grad_over(draw, x, y),
            DMatrix::from_diagonal(&(y * T::lit(2.0))),
            self.lower_hessian_over(draw, x, y),
        ))
    }

    fn upper_batch(&self) -> usize {
        self.batch_upper
    }

    fn lower_batch(&self) -> usize {
        self.batch_lower
    }
}

impl<T: Scalar> DeterministicChannels<T> for HyperoptProblem<T> {
    fn upper_value(&self, _x: &DVector<T>, y: &DVector<T>) -> T {
        self.validation_loss(y)
    }

    fn upper_grad(&self, _x: &DVector<T>, y: &DVector<T>) -> (DVector<T>, DVector<T>) {
        let all: Vec<usize> = (0..self.val.len()).collect();
        (DVector::zeros(self.dim), self.upper_grad_over(&all, y))
    }

    fn lower_grad(&self, x: &DVector<T>, y: &DVector<T>) -> DVector<T> {
        let all: Vec<usize> = (0..self.train.len()).collect();
        self.lower_grad_over(&all, x, y)
    }

    fn lower_hessians(&self, x: &DVector<T>, y: &DVector<T>) -> (DMatrix<T>, DMatrix<T>) {
        let all: Vec<usize> = (0..self.train.len()).collect();
        (
            DMatrix::from_diagonal(&(y * T::lit(2.0))),
            self.lower_hessian_over(&all, x, y),
        )
    }

    fn lower_curvature(&self, x: &DVector<T>) -> Result<(T, T)> {
        dim_check("x", self.dim, x.len())?;
        let two = T::lit(2.0);
        let r = self.train.max_norm;
        Ok((two * x.min(), T::lit(0.25) * r * r + two * x.max()))
    }
}

/// Synthetic logistic data: features `N(0, 1/d)`, labels drawn from a
/// logistic model whose weight vector is zero on the second half of the
/// coordinates, so strong regularization helps there.
pub fn synthetic_logistic(n: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || dim == 0 {
        return Err(Error::Configuration("need n >= 1 and dim >= 1".into()));
    }
    let mut rng = stream(seed);
    let feature_scale = 1.0 / (dim as f64).sqrt();
    let informative = dim.div_ceil(2);
    let weights: Vec<f64> = (0..dim)
        .map(|j| {
            if j < informative {
                4.0 * f64::standard_normal(&mut rng)
            } else {
                0.0
            }
        })
        .collect();
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let values: Vec<f64> = (0..dim)
            .map(|_| feature_scale * f64::standard_normal(&mut rng))
            .collect();
        let z: f64 = values.iter().zip(&weights).map(|(a, w)| a * w).sum();
        let p = 1.0 / (1.0 + (-z).exp());
        labels.push(if rng.random::<f64>() < p { 1.0 } else { -1.0 });
        rows.push(SparseRow::new((0..dim).collect(), values)?);
    }
    Dataset::new(rows, labels, dim)
}
