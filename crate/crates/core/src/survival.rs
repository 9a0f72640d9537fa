//! Weibull proportional-hazards survival component.
//!
//! Parameterisation: shape `τ`, log-scale `λ`, so that
//! `h(t) = τ t^{τ−1} e^λ`, `Λ(t) = e^λ t^τ` and
//! `log f(t) = log τ + (τ−1) log t + λ − e^λ t^τ`.
//! When `λ` varies with time the cumulative hazard is integrated with a
//! fixed-width midpoint rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed survival outcome of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    /// `min(T, C)` in months.
    pub y: f64,
    /// Event observed.
    pub delta: bool,
    pub z_baseline: Vec<f64>,
}

impl SurvivalRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.y > 0.0) || !self.y.is_finite() {
            return Err(Error::Domain(format!(
                "survival time must be positive and finite, got {}",
                self.y
            )));
        }
        if let Some(z) = self.z_baseline.iter().find(|z| !z.is_finite()) {
            return Err(Error::Domain(format!("non-finite baseline covariate {z}")));
        }
        Ok(())
    }
}

fn check_time_shape(t: f64, tau: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("Weibull shape must be positive, got {tau}")));
    }
    Ok(())
}

pub fn weibull_logpdf(t: f64, tau: f64, lambda: f64) -> Result<f64> {
    check_time_shape(t, tau)?;
    Ok(tau.ln() + (tau - 1.0) * t.ln() + lambda - lambda.exp() * t.powf(tau))
}

pub fn hazard(t: f64, tau: f64, lambda: f64) -> Result<f64> {
    check_time_shape(t, tau)?;
    Ok(tau * t.powf(tau - 1.0) * lambda.exp())
}

/// Closed-form cumulative hazard for a time-constant linear predictor.
pub fn cum_hazard_const(t: f64, tau: f64, lambda: f64) -> f64 {
    lambda.exp() * t.powf(tau)
}

/// Midpoints `L/2 + (i−1)L`, `L = t_end/m`, of the rectangle rule on `(0, t_end)`.
pub fn midpoints(t_end: f64, m: usize) -> impl Iterator<Item = f64> {
    let width = t_end / m as f64;
    (0..m).map(move |i| width * 0.5 + i as f64 * width)
}

/// `Σ_i L·h(t_mid,i)` with the linear predictor re-evaluated at every midpoint.
pub fn cum_hazard_midpoint<F>(lp: F, tau: f64, t_end: f64, m: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    check_time_shape(t_end, tau)?;
    if m == 0 {
        return Err(Error::Domain("number of rectangles must be at least 1".into()));
    }
    let width = t_end / m as f64;
    let mut total = 0.0;
    for t in midpoints(t_end, m) {
        let h = tau * t.powf(tau - 1.0) * lp(t).exp();
        if !h.is_finite() {
            return Err(Error::Numeric(format!("hazard is not finite at t = {t}")));
        }
        total += width * h;
    }
    Ok(total)
}

/// `δ log h(y) − Λ(y)` with a midpoint-integrated cumulative hazard.
pub fn surv_logcontrib<F>(record: &SurvivalRecord, lp: F, tau: f64, m: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let cum = cum_hazard_midpoint(&lp, tau, record.y, m)?;
    let event = if record.delta {
        hazard(record.y, tau, lp(record.y))?.ln()
    } else {
        0.0
    };
    Ok(event - cum)
}

/// Exact `δ log h(y) − e^λ y^τ` for a time-constant linear predictor.
pub fn surv_logcontrib_const(record: &SurvivalRecord, lambda: f64, tau: f64) -> Result<f64> {
    check_time_shape(record.y, tau)?;
    let y = record.y;
    let event = if record.delta {
        tau.ln() + (tau - 1.0) * y.ln() + lambda
    } else {
        0.0
    };
    Ok(event - cum_hazard_const(y, tau, lambda))
}
