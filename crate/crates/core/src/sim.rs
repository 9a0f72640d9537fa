//! Synthetic joint longitudinal–survival data.
//!
//! Longitudinal measurements are taken on an equally spaced grid over
//! `[0, time_span]` months. The true trajectory that drives the hazard is the
//! noise-free process: the quadratic curve itself, or for the GP scenario the
//! interpolant of the simulated process values at the measurement times.

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::kernel::KernelCache;
use crate::longitudinal::{AucScheme, GpPredictor, LongitudinalParams};
use crate::model::{TrajectoryKind, Variant};
use crate::survival::{cum_hazard_midpoint, SurvivalRecord};

/// Rectangles used when inverting a time-varying cumulative hazard.
pub const INVERSION_RECT: usize = 2000;
const INVERSION_TOL: f64 = 1e-8;
const BRACKET_LIMIT: f64 = 1e6;
/// Relative nugget that keeps the noise-free interpolant well defined.
const INTERP_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_subjects: usize,
    pub n_datasets: usize,
    /// Per-subject measurement count is uniform on `min..=max`.
    pub min_measurements: usize,
    pub max_measurements: usize,
    pub time_span: f64,
    pub trajectory: TrajectoryKind,
    pub variant: Variant,
    /// AUC weighting used to generate Model II data.
    pub auc_scheme: AucScheme,
    pub auc_trailing_months: Option<f64>,
    pub rho2: f64,
    pub beta0_mean: f64,
    pub beta0_var: f64,
    /// κ² is uniform on `(0, kappa2_max)`.
    pub kappa2_max: f64,
    pub slope_mean: f64,
    pub slope_var: f64,
    pub quad_coef: f64,
    /// Measurement-error standard deviation.
    pub measurement_sd: f64,
    pub tau: f64,
    /// Frailty intercepts come from `½N(−m, v) + ½N(m, v)`.
    pub frailty_offset: f64,
    pub frailty_var: f64,
    /// Association coefficients; defaults depend on the variant.
    pub zeta_l: Option<Vec<f64>>,
    /// Coefficient of a standard-normal `age` covariate (Model III default 0.5).
    pub age_coef: Option<f64>,
    pub censor_target: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_subjects: 150,
            n_datasets: 20,
            min_measurements: 9,
            max_measurements: 12,
            time_span: 11.0,
            trajectory: TrajectoryKind::Gp,
            variant: Variant::III,
            auc_scheme: AucScheme::Uniform,
            auc_trailing_months: None,
            rho2: 0.1,
            beta0_mean: 5.0,
            beta0_var: 1.0,
            kappa2_max: 1.0,
            slope_mean: -0.5,
            slope_var: 0.01,
            quad_coef: -0.1,
            measurement_sd: 0.1,
            tau: 1.5,
            frailty_offset: 1.5,
            frailty_var: 1.0,
            zeta_l: None,
            age_coef: None,
            censor_target: 0.2,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn zeta_l(&self) -> Vec<f64> {
        self.zeta_l.clone().unwrap_or_else(|| default_zeta_l(self.variant).to_vec())
    }

    pub fn age_coef(&self) -> Option<f64> {
        self.age_coef.or(match self.variant {
            Variant::III => Some(0.5),
            _ => None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_measurements < 2 || self.max_measurements < self.min_measurements {
            return Err(Error::Domain(format!(
                "measurement counts must satisfy 2 <= min <= max, got {}..={}",
                self.min_measurements, self.max_measurements
            )));
        }
        if self.n_subjects == 0 {
            return Err(Error::Domain("n_subjects must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.censor_target) {
            return Err(Error::Domain(format!(
                "censor_target must lie in [0, 1), got {}",
                self.censor_target
            )));
        }
        let positive = [
            ("time_span", self.time_span),
            ("rho2", self.rho2),
            ("tau", self.tau),
            ("frailty_var", self.frailty_var),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("beta0_var", self.beta0_var),
            ("kappa2_max", self.kappa2_max),
            ("slope_var", self.slope_var),
            ("measurement_sd", self.measurement_sd),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        let expected = default_zeta_l(self.variant).len();
        if self.zeta_l().len() != expected {
            return Err(Error::Contract(format!(
                "variant {:?} takes {expected} association coefficients, got {}",
                self.variant,
                self.zeta_l().len()
            )));
        }
        if self.variant == Variant::III && self.trajectory == TrajectoryKind::Quadratic {
            return Err(Error::Contract("Model III data need the GP trajectory".into()));
        }
        Ok(())
    }
}

fn default_zeta_l(variant: Variant) -> &'static [f64] {
    match variant {
        Variant::I => &[-0.5],
        Variant::II => &[0.3, 0.5],
        Variant::III => &[-0.3, 0.7],
    }
}

/// True subject-level quantities behind one simulated subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTruth {
    pub beta0_l: f64,
    /// Volatility (GP) or subject slope (quadratic).
    pub second: f64,
    pub beta0_s: f64,
    pub event_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub data: Dataset,
    pub truth: Vec<SubjectTruth>,
    /// Upper bound of the uniform censoring distribution (infinite when uncensored).
    pub censor_max: f64,
}

/// Noise-free trajectory of one subject.
#[derive(Debug, Clone)]
pub enum TrueTrajectory {
    Gp {
        cache: KernelCache,
        process: Vec<f64>,
        params: LongitudinalParams,
    },
    Quadratic {
        b0: f64,
        b1: f64,
        b2: f64,
    },
}

impl TrueTrajectory {
    pub fn value(&self, t: f64) -> f64 {
        match self {
            Self::Gp { cache, process, params } => GpPredictor::new(cache, process, params)
                .map(|p| p.mean(t))
                .unwrap_or(f64::NAN),
            Self::Quadratic { b0, b1, b2 } => b0 + b1 * t + b2 * t * t,
        }
    }

    pub fn deriv(&self, t: f64) -> f64 {
        match self {
            Self::Gp { cache, process, params } => GpPredictor::new(cache, process, params)
                .map(|p| p.deriv(t))
                .unwrap_or(f64::NAN),
            Self::Quadratic { b1, b2, .. } => b1 + 2.0 * b2 * t,
        }
    }

    pub fn predictor(&self) -> Option<GpPredictor<'_>> {
        match self {
            Self::Gp { cache, process, params } => GpPredictor::new(cache, process, params).ok(),
            Self::Quadratic { .. } => None,
        }
    }
}

/// Measurement grid with `l` equally spaced times on `[0, span]`.
pub fn time_grid(l: usize, span: f64) -> Vec<f64> {
    (0..l).map(|j| span * j as f64 / (l - 1) as f64).collect()
}

fn draw_count<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> usize {
    rng.random_range(cfg.min_measurements..=cfg.max_measurements)
}

fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn normal<R: Rng + ?Sized>(mean: f64, var: f64, rng: &mut R) -> f64 {
    mean + var.sqrt() * std_normal(rng)
}

/// One GP subject: `X = β₀ + W + ε`, `W ~ N(0, κ²K)`.
pub fn gen_longitudinal_gp<R: Rng + ?Sized>(
    cfg: &SimConfig,
    kappa2_override: Option<f64>,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>, TrueTrajectory, f64, f64)> {
    let l = draw_count(cfg, rng);
    let times = time_grid(l, cfg.time_span);
    let beta0 = normal(cfg.beta0_mean, cfg.beta0_var, rng);
    let kappa2 = kappa2_override.unwrap_or_else(|| rng.random::<f64>() * cfg.kappa2_max);
    let cache = KernelCache::build(&times, cfg.rho2)?;
    let z: Vec<f64> = (0..l).map(|_| std_normal(rng)).collect();
    let q = cache.eigenvectors();
    let scaled: Vec<f64> = cache
        .eigenvalues()
        .iter()
        .zip(&z)
        .map(|(lambda, z)| (kappa2 * lambda).sqrt() * z)
        .collect();
    let process: Vec<f64> = (0..l)
        .map(|j| beta0 + (0..l).map(|k| q[(j, k)] * scaled[k]).sum::<f64>())
        .collect();
    let values = process
        .iter()
        .map(|w| w + cfg.measurement_sd * std_normal(rng))
        .collect::<Vec<f64>>();
    let params = LongitudinalParams {
        beta0,
        kappa2,
        sigma2: INTERP_JITTER * kappa2.max(1e-12),
        rho2: cfg.rho2,
    };
    let traj = TrueTrajectory::Gp {
        cache,
        process,
        params,
    };
    Ok((times, values, traj, beta0, kappa2))
}

/// One quadratic subject: `X = β₀ + β₁t + β₂t² + ε`.
pub fn gen_longitudinal_quadratic<R: Rng + ?Sized>(
    cfg: &SimConfig,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>, TrueTrajectory, f64, f64) {
    let l = draw_count(cfg, rng);
    let times = time_grid(l, cfg.time_span);
    let b0 = normal(cfg.beta0_mean, cfg.beta0_var, rng);
    let b1 = normal(cfg.slope_mean, cfg.slope_var, rng);
    let b2 = cfg.quad_coef;
    let values = times
        .iter()
        .map(|t| b0 + b1 * t + b2 * t * t + cfg.measurement_sd * std_normal(rng))
        .collect();
    (times, values, TrueTrajectory::Quadratic { b0, b1, b2 }, b0, b1)
}

/// Time-varying part of the true linear predictor for Models I and II.
///
/// `pred` is the trajectory's predictor, built once by the caller.
pub fn trajectory_exposures(
    traj: &TrueTrajectory,
    pred: Option<&GpPredictor<'_>>,
    variant: Variant,
    scheme: AucScheme,
    trailing: Option<f64>,
    zeta: &[f64],
    t: f64,
) -> f64 {
    let value = |s: f64| match pred {
        Some(p) => p.mean(s),
        None => traj.value(s),
    };
    let deriv = |s: f64| match pred {
        Some(p) => p.deriv(s),
        None => traj.deriv(s),
    };
    let mut lp = zeta[0] * value(t);
    if variant == Variant::II {
        let tau0 = trailing.map_or(0.0, |w| (t - w).max(0.0));
        let slope = match scheme {
            AucScheme::Uniform if t - tau0 >= 1e-7 => (value(t) - value(tau0)) / (t - tau0),
            _ => deriv(t),
        };
        lp += zeta[1] * slope;
    }
    lp
}

/// Inverse-CDF draw for a time-constant linear predictor.
pub fn weibull_time_const(u: f64, tau: f64, lambda: f64) -> f64 {
    (-u.ln() * (-lambda).exp()).powf(1.0 / tau)
}

/// Solve `Λ(T) = target` for a time-varying predictor by bisection on the
/// midpoint-integrated cumulative hazard. `None` if no bracket below 1e6.
pub fn invert_cum_hazard<F>(lp: F, tau: f64, target: f64) -> Result<Option<f64>>
where
    F: Fn(f64) -> f64,
{
    let cum = |t: f64| cum_hazard_midpoint(&lp, tau, t, INVERSION_RECT);
    let mut hi = 1.0;
    while cum(hi)? < target {
        hi *= 2.0;
        if hi > BRACKET_LIMIT {
            return Ok(None);
        }
    }
    let mut lo = 0.0;
    while hi - lo > INVERSION_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if mid <= 0.0 {
            break;
        }
        if cum(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Upper bound `c` of `C ~ U(0, c)` giving expected censoring fraction
/// `mean_i P(C < T_i) = mean_i min(T_i, c)/c` equal to `target`.
pub fn calibrate_censoring(event_times: &[f64], target: f64) -> Result<f64> {
    if event_times.is_empty() {
        return Err(Error::Domain("need at least one event time".into()));
    }
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Domain(format!("censoring target must lie in [0, 1), got {target}")));
    }
    if event_times.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Domain("event times must be positive".into()));
    }
    if target == 0.0 {
        return Ok(f64::INFINITY);
    }
    let rate = |c: f64| event_times.iter().map(|t| t.min(c) / c).sum::<f64>() / event_times.len() as f64;
    let tmin = event_times.iter().cloned().fold(f64::INFINITY, f64::min);
    // rate(c) = 1 for c <= min T and decreases monotonically to 0.
    let mut lo = tmin;
    let mut hi = tmin * 2.0;
    while rate(hi) > target {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Bound `c` such that, with `C_i = c·V_i`, exactly `round(target·n)` of the
/// subjects satisfy `C_i < T_i`.
pub fn censor_bound_exact(event_times: &[f64], uniforms: &[f64], target: f64) -> f64 {
    let n = event_times.len();
    let k = (target * n as f64).round() as usize;
    if k == 0 {
        return f64::INFINITY;
    }
    // Subject i is censored iff c < T_i / V_i.
    let mut ratios: Vec<f64> = event_times.iter().zip(uniforms).map(|(t, v)| t / v).collect();
    ratios.sort_by(f64::total_cmp);
    let upper = ratios[n - k];
    let lower = if k == n { 0.0 } else { ratios[n - k - 1] };
    0.5 * (lower + upper)
}

/// Generate one complete dataset.
pub fn simulate_dataset<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<SimDataset> {
    cfg.validate()?;
    let zeta = cfg.zeta_l();
    let age_coef = cfg.age_coef();
    let mixture = Normal::new(0.0, cfg.frailty_var.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let mut subjects = Vec::with_capacity(cfg.n_subjects);
    let mut truth = Vec::with_capacity(cfg.n_subjects);
    for i in 0..cfg.n_subjects {
        let (times, values, traj, b0, second) = match cfg.trajectory {
            TrajectoryKind::Gp => gen_longitudinal_gp(cfg, None, rng)?,
            TrajectoryKind::Quadratic => gen_longitudinal_quadratic(cfg, rng),
        };
        let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        let beta0_s = side * cfg.frailty_offset + mixture.sample(rng);
        let age = age_coef.map(|_| std_normal(rng));
        let base = beta0_s + age.zip(age_coef).map_or(0.0, |(a, c)| a * c);
        let pred = traj.predictor();
        let event_time = loop {
            let u: f64 = 1.0 - rng.random::<f64>();
            if cfg.variant == Variant::III {
                break weibull_time_const(u, cfg.tau, base + zeta[0] * b0 + zeta[1] * second);
            }
            let lp = |t: f64| {
                base + trajectory_exposures(&traj, pred.as_ref(), cfg.variant, cfg.auc_scheme, cfg.auc_trailing_months, &zeta, t)
            };
            match invert_cum_hazard(lp, cfg.tau, -u.ln()) {
                Ok(Some(t)) => break t,
                Ok(None) => warn!("subject {}: no event before {BRACKET_LIMIT} months, redrawing", i + 1),
                Err(e) => warn!("subject {}: {e}, redrawing", i + 1),
            }
        };
        subjects.push(Subject {
            id: format!("{}", i + 1),
            times,
            values,
            survival: SurvivalRecord {
                y: event_time,
                delta: true,
                z_baseline: age.into_iter().collect(),
            },
        });
        truth.push(SubjectTruth {
            beta0_l: b0,
            second,
            beta0_s,
            event_time,
        });
    }
    let event_times: Vec<f64> = truth.iter().map(|t| t.event_time).collect();
    let uniforms: Vec<f64> = (0..cfg.n_subjects).map(|_| 1.0 - rng.random::<f64>()).collect();
    let censor_max = censor_bound_exact(&event_times, &uniforms, cfg.censor_target);
    if censor_max.is_finite() {
        for (s, v) in subjects.iter_mut().zip(&uniforms) {
            let c = censor_max * v;
            if c < s.survival.y {
                s.survival.y = c;
                s.survival.delta = false;
            }
        }
    }
    let covariate_names = if age_coef.is_some() { vec!["age".to_string()] } else { Vec::new() };
    Ok(SimDataset {
        data: Dataset {
            subjects,
            covariate_names,
        },
        truth,
        censor_max,
    })
}
