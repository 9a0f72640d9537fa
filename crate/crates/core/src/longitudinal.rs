//! Gaussian-process longitudinal likelihood and posterior-predictive curves.
//!
//! A subject's measurements are modelled as `X = β₀·1 + W + ε` with
//! `W ~ N(0, κ²K)` and `ε ~ N(0, σ²I)`. The latent `W` is integrated out, so
//! the likelihood is the multivariate normal `N(β₀·1, κ²K + σ²I)` evaluated
//! through the subject's [`KernelCache`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{sq_exp_corr, KernelCache};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Subject-level GP parameters (natural scale).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LongitudinalParams {
    pub beta0: f64,
    pub kappa2: f64,
    pub sigma2: f64,
    pub rho2: f64,
}

impl LongitudinalParams {
    pub fn validate(&self) -> Result<()> {
        if !self.beta0.is_finite() {
            return Err(Error::Domain(format!("beta0 not finite: {}", self.beta0)));
        }
        if !(self.kappa2 >= 0.0) || !self.kappa2.is_finite() {
            return Err(Error::Domain(format!("kappa2 must be >= 0, got {}", self.kappa2)));
        }
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!("sigma2 must be > 0, got {}", self.sigma2)));
        }
        if !(self.rho2 > 0.0) {
            return Err(Error::Domain(format!("rho2 must be > 0, got {}", self.rho2)));
        }
        Ok(())
    }
}

/// Priors on the longitudinal block. Variances are on the stated scale:
/// `β₀ ~ N(mean, var)`, `log κ² ~ N(mean, var)`, `log σ² ~ N(mean, var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LongitudinalPriors {
    pub mu_beta0: f64,
    pub var_beta0: f64,
    pub mu_logkappa2: f64,
    pub var_logkappa2: f64,
    pub mu_logsigma2: f64,
    pub var_logsigma2: f64,
}

impl Default for LongitudinalPriors {
    fn default() -> Self {
        Self {
            mu_beta0: 5.0,
            var_beta0: 4.0,
            mu_logkappa2: -1.0,
            var_logkappa2: 2.0,
            mu_logsigma2: -1.0,
            var_logsigma2: 1.0,
        }
    }
}

impl LongitudinalPriors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("var_beta0", self.var_beta0),
            ("var_logkappa2", self.var_logkappa2),
            ("var_logsigma2", self.var_logsigma2),
        ] {
            if !(v > 0.0) {
                return Err(Error::Domain(format!("prior {name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Weight function for the area under the derivative curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AucScheme {
    /// `Q(u) = 1/(τ₁ − τ₀)`: average slope over the window.
    Uniform,
    /// Point mass at the window end: the derivative at `τ₁`.
    Pointwise,
}

/// Log-density of the marginal `N(β₀·1, κ²K + σ²I)` at the observed values.
pub fn long_loglik(values: &[f64], params: &LongitudinalParams, cache: &KernelCache) -> Result<f64> {
    if values.len() != cache.len() {
        return Err(Error::Contract(format!(
            "{} values but kernel cache has {} times",
            values.len(),
            cache.len()
        )));
    }
    let residual: Vec<f64> = values.iter().map(|x| x - params.beta0).collect();
    let logdet = cache.marg_logdet(params.kappa2, params.sigma2)?;
    let quad = cache.marg_quadform(&residual, params.kappa2, params.sigma2)?;
    Ok(-0.5 * values.len() as f64 * (2.0 * PI).ln() - 0.5 * logdet - 0.5 * quad)
}

/// Lag at which the squared-exponential correlation falls to about 0.05.
pub fn practical_range(rho2: f64) -> Result<f64> {
    if !(rho2 > 0.0) || !rho2.is_finite() {
        return Err(Error::Domain(format!("rho2 must be positive, got {rho2}")));
    }
    Ok((3.0 / rho2).sqrt())
}

/// Measurements projected onto a kernel eigenbasis, ready for repeated
/// likelihood and gradient evaluation.
#[derive(Debug, Clone)]
pub struct ProjectedSeries {
    /// `QᵀX`
    pub values: Vec<f64>,
    /// `Qᵀ1`
    pub ones: Vec<f64>,
}

/// Log-likelihood and its partial derivatives with respect to
/// `(β₀, log κ², log σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoglikGrad {
    pub value: f64,
    pub d_beta0: f64,
    pub d_log_kappa2: f64,
    pub d_log_sigma2: f64,
}

impl ProjectedSeries {
    pub fn new(cache: &KernelCache, values: &[f64]) -> Result<Self> {
        Ok(Self {
            values: cache.project(values)?,
            ones: cache.project(&vec![1.0; values.len()])?,
        })
    }

    /// Residual coordinates `Qᵀ(X − β₀·1)`.
    pub fn residual(&self, beta0: f64) -> impl Iterator<Item = f64> + '_ {
        self.values
            .iter()
            .zip(&self.ones)
            .map(move |(v, o)| v - beta0 * o)
    }

    pub fn loglik_grad(
        &self,
        eigenvalues: &[f64],
        beta0: f64,
        kappa2: f64,
        sigma2: f64,
    ) -> LoglikGrad {
        let mut logdet = 0.0;
        let mut quad = 0.0;
        let mut d_beta0 = 0.0;
        let mut tr_k = 0.0;
        let mut quad_k = 0.0;
        let mut tr_i = 0.0;
        let mut quad_i = 0.0;
        for ((s, o), &lambda) in self.residual(beta0).zip(&self.ones).zip(eigenvalues) {
            let d = kappa2 * lambda + sigma2;
            let inv = 1.0 / d;
            let s2 = s * s * inv * inv;
            logdet += d.ln();
            quad += s * s * inv;
            d_beta0 += s * o * inv;
            tr_k += lambda * inv;
            quad_k += lambda * s2;
            tr_i += inv;
            quad_i += s2;
        }
        let l = eigenvalues.len() as f64;
        LoglikGrad {
            value: -0.5 * l * LN_2PI - 0.5 * logdet - 0.5 * quad,
            d_beta0,
            d_log_kappa2: 0.5 * kappa2 * (quad_k - tr_k),
            d_log_sigma2: 0.5 * sigma2 * (quad_i - tr_i),
        }
    }
}

/// Posterior-predictive machinery for one subject under fixed parameters.
///
/// Holds `a = (κ²K + σ²I)⁻¹(X − β₀·1)` so that the predictive mean and its
/// derivative cost O(l) per query time. `σ² = 0` is accepted and handled as a
/// pseudo-inverse, which gives exact interpolation.
#[derive(Debug, Clone)]
pub struct GpPredictor<'a> {
    cache: &'a KernelCache,
    params: LongitudinalParams,
    weights: Vec<f64>,
    /// `1/(κ²λ_k + σ²)`, zero where the spectral variance vanishes.
    inv_diag: Vec<f64>,
}

impl<'a> GpPredictor<'a> {
    pub fn new(cache: &'a KernelCache, values: &[f64], params: &LongitudinalParams) -> Result<Self> {
        if values.len() != cache.len() {
            return Err(Error::Contract(format!(
                "{} values but kernel cache has {} times",
                values.len(),
                cache.len()
            )));
        }
        if !(params.kappa2 >= 0.0) || !(params.sigma2 >= 0.0) {
            return Err(Error::Domain("negative variance parameter".into()));
        }
        let residual: Vec<f64> = values.iter().map(|x| x - params.beta0).collect();
        let proj = cache.project(&residual)?;
        let inv_diag: Vec<f64> = cache
            .eigenvalues()
            .iter()
            .map(|&lambda| {
                let d = params.kappa2 * lambda + params.sigma2;
                if d > 0.0 {
                    1.0 / d
                } else {
                    0.0
                }
            })
            .collect();
        let scaled: Vec<f64> = proj.iter().zip(&inv_diag).map(|(s, i)| s * i).collect();
        let q = cache.eigenvectors();
        let l = cache.len();
        let weights = (0..l)
            .map(|j| (0..l).map(|k| q[(j, k)] * scaled[k]).sum())
            .collect();
        Ok(Self {
            cache,
            params: *params,
            weights,
            inv_diag,
        })
    }

    pub fn mean(&self, t: f64) -> f64 {
        let p = &self.params;
        let acc: f64 = self
            .cache
            .times()
            .iter()
            .zip(&self.weights)
            .map(|(&s, w)| sq_exp_corr(t, s, p.rho2) * w)
            .sum();
        p.beta0 + p.kappa2 * acc
    }

    pub fn deriv(&self, t: f64) -> f64 {
        let p = &self.params;
        let acc: f64 = self
            .cache
            .times()
            .iter()
            .zip(&self.weights)
            .map(|(&s, w)| (t - s) * sq_exp_corr(t, s, p.rho2) * w)
            .sum();
        -2.0 * p.rho2 * p.kappa2 * acc
    }

    pub fn variance(&self, t: f64) -> Result<f64> {
        let k2 = self.params.kappa2;
        let proj = self.cache.project(&self.cache.cross_corr(t))?;
        let explained: f64 = proj
            .iter()
            .zip(&self.inv_diag)
            .map(|(p, i)| p * p * i)
            .sum();
        let v = k2 - k2 * k2 * explained;
        if v < -1e-8 {
            return Err(Error::Numeric(format!("predictive variance {v:e} is negative")));
        }
        Ok(v.max(0.0))
    }

    /// Uniform-weight average slope over `[tau0, tau1]` in closed form: the
    /// derivative integrates back to the predictive mean.
    pub fn mean_slope(&self, tau0: f64, tau1: f64) -> f64 {
        (self.mean(tau1) - self.mean(tau0)) / (tau1 - tau0)
    }
}

pub fn posterior_mean_at(
    cache: &KernelCache,
    values: &[f64],
    params: &LongitudinalParams,
    t_star: f64,
) -> Result<f64> {
    Ok(GpPredictor::new(cache, values, params)?.mean(t_star))
}

pub fn posterior_var_at(
    cache: &KernelCache,
    values: &[f64],
    params: &LongitudinalParams,
    t_star: f64,
) -> Result<f64> {
    GpPredictor::new(cache, values, params)?.variance(t_star)
}

pub fn posterior_deriv_at(
    cache: &KernelCache,
    values: &[f64],
    params: &LongitudinalParams,
    t_star: f64,
) -> Result<f64> {
    Ok(GpPredictor::new(cache, values, params)?.deriv(t_star))
}

/// Weighted area under the posterior-mean derivative curve on `[tau0, tau1]`.
///
/// The uniform scheme uses an `n_quad`-point midpoint rule; the pointwise
/// scheme is the derivative at `tau1`.
pub fn deriv_auc(
    cache: &KernelCache,
    values: &[f64],
    params: &LongitudinalParams,
    tau0: f64,
    tau1: f64,
    scheme: AucScheme,
    n_quad: usize,
) -> Result<f64> {
    let pred = GpPredictor::new(cache, values, params)?;
    match scheme {
        AucScheme::Pointwise => Ok(pred.deriv(tau1)),
        AucScheme::Uniform => {
            if !(tau0 < tau1) {
                return Err(Error::Domain(format!(
                    "uniform AUC window needs tau0 < tau1, got [{tau0}, {tau1}]"
                )));
            }
            if n_quad == 0 {
                return Err(Error::Domain("n_quad must be at least 1".into()));
            }
            let h = (tau1 - tau0) / n_quad as f64;
            let sum: f64 = (0..n_quad)
                .map(|i| pred.deriv(tau0 + h * (i as f64 + 0.5)))
                .sum();
            Ok(sum * h / (tau1 - tau0))
        }
    }
}
