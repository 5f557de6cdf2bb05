//! Per-iteration observation hooks and run trajectories.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::oracle::{Point, SampleCount};
use crate::scalar::Scalar;

/// What an optimizer exposes to a recorder after initialization (`k = 0`)
/// and after every step.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a, T: Scalar> {
    pub k: usize,
    pub point: &'a Point<T>,
    /// Second-order trackers, for optimizers that keep them.
    pub trackers: Option<Trackers<'a, T>>,
    pub samples: SampleCount,
}

/// `H_xy`, `H_yy` and the iterate whose Hessians they estimate. After a
/// step this is the previous iterate: the trackers are refreshed before `x`
/// and `y` move.
#[derive(Debug, Clone, Copy)]
pub struct Trackers<'a, T: Scalar> {
    pub h_xy: &'a DMatrix<T>,
    pub h_yy: &'a DMatrix<T>,
    pub at: &'a Point<T>,
}

/// One logged row. Metrics that were not evaluated are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordRow {
    pub k: usize,
    pub samples_xi: u64,
    pub samples_phi: u64,
    /// Seconds since the recorder was created.
    pub wallclock: f64,
    /// `||x - x*||^2`, `F(x) - F*` or `F(x)`, depending on the reference available.
    pub upper_error: f64,
    /// `||y - y*(x)||^2`.
    pub lower_error: f64,
    /// `||x_hat(x) - x||^2`.
    pub moreau_stationarity: f64,
    /// `||H_xy - d^2_xy g(x, y)||_F^2`.
    pub tracker_mse_xy: f64,
    /// `||H_yy - d^2_yy g(x, y)||_F^2`.
    pub tracker_mse_yy: f64,
}

impl RecordRow {
    pub fn empty(k: usize, samples: SampleCount) -> Self {
        Self {
            k,
            samples_xi: samples.xi,
            samples_phi: samples.phi,
            wallclock: f64::NAN,
            upper_error: f64::NAN,
            lower_error: f64::NAN,
            moreau_stationarity: f64::NAN,
            tracker_mse_xy: f64::NAN,
            tracker_mse_yy: f64::NAN,
        }
    }

    pub fn samples_total(&self) -> u64 {
        self.samples_xi + self.samples_phi
    }
}

/// Receives a snapshot per iteration and optionally returns a row to log.
pub trait Recorder<T: Scalar> {
    fn observe(&mut self, snapshot: &Snapshot<'_, T>) -> Result<Option<RecordRow>>;
}

impl<T, F> Recorder<T> for F
where
    T: Scalar,
    F: FnMut(&Snapshot<'_, T>) -> Result<Option<RecordRow>>,
{
    fn observe(&mut self, snapshot: &Snapshot<'_, T>) -> Result<Option<RecordRow>> {
        self(snapshot)
    }
}

/// Logs nothing.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoRecorder;

impl<T: Scalar> Recorder<T> for NoRecorder {
    fn observe(&mut self, _snapshot: &Snapshot<'_, T>) -> Result<Option<RecordRow>> {
        Ok(None)
    }
}

/// Trajectory of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord<T: Scalar> {
    pub rows: Vec<RecordRow>,
    pub final_point: Point<T>,
    pub samples: SampleCount,
    pub iterations: usize,
}
