use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stepsizes for one iteration: upper `alpha`, lower `beta`, tracker `tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stepsizes<T: Scalar> {
    pub alpha: T,
    pub beta: T,
    pub tau: T,
}

/// Shape of a single-timescale schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind<T: Scalar> {
    /// Fixed horizon `K`: `tau = 1/sqrt(K)`, `beta = min(1/sqrt(K), beta_cap)`,
    /// `alpha = alpha_ratio * min(beta, alpha_scale/sqrt(K))`.
    Nonconvex {
        horizon: usize,
        alpha_scale: T,
        beta_cap: T,
        alpha_ratio: T,
    },
    /// Harmonic decay: `beta = tau = min(beta_cap, 1/(k0 + k))`,
    /// `alpha = alpha_ratio * beta`.
    StronglyConvex { k0: T, beta_cap: T, alpha_ratio: T },
    /// Constant stepsizes, mostly for diagnostics. Zero steps are allowed.
    Constant { alpha: T, beta: T, tau: T },
}

/// Per-iteration `(alpha_k, beta_k, tau_k)` generator.
///
/// Every kind keeps `alpha_k / beta_k` constant in `k` and `alpha_k <= beta_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeSchedule<T: Scalar> {
    kind: ScheduleKind<T>,
}

pub const DEFAULT_ALPHA_SCALE: f64 = 1.0;
pub const DEFAULT_ALPHA_RATIO: f64 = 0.5;
pub const DEFAULT_BETA_CAP: f64 = 0.1;

fn positive<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v > T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Configuration(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn nonnegative<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v >= T::zero() && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Configuration(format!(
            "{name} must be nonnegative, got {v}"
        )))
    }
}

impl<T: Scalar> StepsizeSchedule<T> {
    pub fn new(kind: ScheduleKind<T>) -> Result<Self> {
        match kind {
            ScheduleKind::Nonconvex {
                horizon,
                alpha_scale,
                beta_cap,
                alpha_ratio,
            } => {
                if horizon == 0 {
                    return Err(Error::Configuration("horizon must be >= 1".into()));
                }
                positive("alpha_scale", alpha_scale)?;
                positive("beta_cap", beta_cap)?;
                positive("alpha_ratio", alpha_ratio)?;
                if alpha_ratio > T::one() {
                    return Err(Error::Configuration(format!(
                        "alpha_ratio must be <= 1 to keep alpha <= beta, got {alpha_ratio}"
                    )));
                }
            }
            ScheduleKind::StronglyConvex {
                k0,
                beta_cap,
                alpha_ratio,
            } => {
                positive("k0", k0)?;
                positive("beta_cap", beta_cap)?;
                positive("alpha_ratio", alpha_ratio)?;
                if alpha_ratio > T::one() {
                    return Err(Error::Configuration(format!(
                        "alpha_ratio must be <= 1 to keep alpha <= beta, got {alpha_ratio}"
                    )));
                }
            }
            ScheduleKind::Constant { alpha, beta, tau } => {
                nonnegative("alpha", alpha)?;
                nonnegative("beta", beta)?;
                positive("tau", tau)?;
                if alpha > beta {
                    return Err(Error::Configuration(format!(
                        "constant schedule needs alpha <= beta, got {alpha} > {beta}"
                    )));
                }
                if tau > T::one() {
                    return Err(Error::Configuration(format!("tau must be <= 1, got {tau}")));
                }
            }
        }
        Ok(Self { kind })
    }

    /// Nonconvex schedule for horizon `K` with the default tunables.
    pub fn nonconvex(horizon: usize) -> Result<Self> {
        Self::new(ScheduleKind::Nonconvex {
            horizon,
            alpha_scale: T::lit(DEFAULT_ALPHA_SCALE),
            beta_cap: T::lit(DEFAULT_BETA_CAP),
            alpha_ratio: T::lit(DEFAULT_ALPHA_RATIO),
        })
    }

    pub fn strongly_convex(k0: T, beta_cap: T, alpha_ratio: T) -> Result<Self> {
        Self::new(ScheduleKind::StronglyConvex {
            k0,
            beta_cap,
            alpha_ratio,
        })
    }

    pub fn constant(alpha: T, beta: T, tau: T) -> Result<Self> {
        Self::new(ScheduleKind::Constant { alpha, beta, tau })
    }

    pub fn kind(&self) -> &ScheduleKind<T> {
        &self.kind
    }

    pub fn emit(&self, k: usize) -> Result<Stepsizes<T>> {
        match self.kind {
            ScheduleKind::Nonconvex {
                horizon,
                alpha_scale,
                beta_cap,
                alpha_ratio,
            } => {
                if k >= horizon {
                    return Err(Error::Configuration(format!(
                        "iteration {k} is past the schedule horizon {horizon}"
                    )));
                }
                let inv_sqrt = T::one() / T::lit(horizon as f64).sqrt();
                let beta = inv_sqrt.min(beta_cap);
                let alpha = alpha_ratio * beta.min(alpha_scale * inv_sqrt);
                Ok(Stepsizes {
                    alpha,
                    beta,
                    tau: inv_sqrt,
                })
            }
            ScheduleKind::StronglyConvex {
                k0,
                beta_cap,
                alpha_ratio,
            } => {
                let beta = beta_cap.min(T::one() / (k0 + T::lit(k as f64)));
                Ok(Stepsizes {
                    alpha: alpha_ratio * beta,
                    beta,
                    tau: beta,
                })
            }
            ScheduleKind::Constant { alpha, beta, tau } => Ok(Stepsizes { alpha, beta, tau }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nonconvex_horizon_100() {
        let s = StepsizeSchedule::<f64>::new(ScheduleKind::Nonconvex {
            horizon: 100,
            alpha_scale: 1.0,
            beta_cap: 0.5,
            alpha_ratio: 1.0,
        })
        .unwrap();
        let st = s.emit(0).unwrap();
        assert!((st.alpha - 0.1).abs() < 1e-15);
        assert!((st.beta - 0.1).abs() < 1e-15);
        assert!((st.tau - 0.1).abs() < 1e-15);
        assert_eq!(s.emit(99).unwrap(), st);
        assert!(s.emit(100).is_err());
    }

    #[test]
    fn nonconvex_defaults_respect_caps() {
        let s = StepsizeSchedule::<f64>::nonconvex(4).unwrap();
        let st = s.emit(0).unwrap();
        assert_eq!(st.tau, 0.5);
        assert_eq!(st.beta, 0.1);
        assert!((st.alpha - 0.05).abs() < 1e-15);
    }

    #[test]
    fn strongly_convex_starts_at_inverse_offset_and_decays() {
        let s = StepsizeSchedule::<f64>::strongly_convex(100.0, 1.0, 0.5).unwrap();
        let s0 = s.emit(0).unwrap();
        assert!((s0.beta - 0.01).abs() < 1e-15);
        assert_eq!(s0.tau, s0.beta);
        let mut prev = s0.beta;
        for k in 1..50 {
            let st = s.emit(k).unwrap();
            assert!(st.beta < prev);
            assert!((st.alpha / st.beta - 0.5).abs() < 1e-15);
            prev = st.beta;
        }
    }

    #[test]
    fn strongly_convex_cap_is_flat_until_harmonic_drops_below() {
        let s = StepsizeSchedule::<f64>::strongly_convex(1.0, 0.1, 1.0).unwrap();
        assert_eq!(s.emit(0).unwrap().beta, 0.1);
        assert_eq!(s.emit(9).unwrap().beta, 0.1);
        assert!(s.emit(10).unwrap().beta < 0.1);
    }

    #[test]
    fn rejects_nonpositive_tunables() {
        assert!(StepsizeSchedule::<f64>::constant(-0.1, 0.1, 0.1).is_err());
        assert!(StepsizeSchedule::<f64>::constant(0.1, 0.1, 0.0).is_err());
        assert!(StepsizeSchedule::<f64>::constant(0.0, 0.0, 1.0).is_ok());
        assert!(StepsizeSchedule::<f64>::constant(0.2, 0.1, 0.1).is_err());
        assert!(StepsizeSchedule::<f64>::strongly_convex(-1.0, 0.1, 0.5).is_err());
        assert!(StepsizeSchedule::<f64>::strongly_convex(10.0, 0.1, 1.5).is_err());
        assert!(StepsizeSchedule::<f64>::nonconvex(0).is_err());
    }
}
