//! Joint longitudinal–survival posterior for the three model variants.
//!
//! * Model I: the hazard depends on the current value of the trajectory.
//! * Model II: current value plus the averaged derivative (slope) over a window.
//! * Model III: the subject's random intercept and volatility enter directly.
//!
//! Continuous parameters are laid out in one vector `q` with positive
//! quantities on the log scale. Per-subject blocks come first
//! (`β₀ᴸ`, `log κ²` or slope, `β₀ˢ`), followed by `log σ²`, the quadratic
//! coefficient when present, `log τ`, the baseline coefficients and the
//! longitudinal association coefficients.
//!
//! The quadratic trajectory is sampled in decorrelated coordinates (see
//! `QuadBasis`); `to_natural` and the draws report `b₀`, `b₁` and `b₂`.
//!
//! For the GP trajectory every quantity the hazard needs is a linear
//! functional of the posterior mean, `F = c·β₀ + κ² Σ_k a_k s_k / D_k` with
//! `s = Qᵀ(X − β₀1)` and `D_k = κ²λ_k + σ²`. The vectors `a` are projected once
//! per subject, so a log-posterior evaluation costs O(l) per hazard point.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::frailty::FrailtyLik;
use crate::kernel::KernelCache;
use crate::longitudinal::{AucScheme, GpPredictor, LongitudinalParams, LongitudinalPriors, ProjectedSeries, LN_2PI};
use crate::survival::{cum_hazard_const, midpoints};

/// Widths below this use the derivative instead of the secant slope.
const MIN_WINDOW: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    I,
    II,
    III,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    #[default]
    Gp,
    /// Subject-specific intercept and slope with a shared quadratic term.
    Quadratic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub variant: Variant,
    pub trajectory: TrajectoryKind,
    pub auc_scheme: AucScheme,
    /// Slope window `[t − w, t]` instead of `[0, t]` for Model II.
    pub auc_trailing_months: Option<f64>,
    /// Baseline covariates taken from the survival file.
    pub covariates: Vec<String>,
    pub rho2: f64,
    /// Rectangles in the cumulative-hazard midpoint rule.
    pub n_rect: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            variant: Variant::III,
            trajectory: TrajectoryKind::Gp,
            auc_scheme: AucScheme::Uniform,
            auc_trailing_months: None,
            covariates: Vec::new(),
            rho2: 0.1,
            n_rect: 50,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho2 > 0.0) || !self.rho2.is_finite() {
            return Err(Error::Domain(format!("rho2 must be positive, got {}", self.rho2)));
        }
        if self.n_rect == 0 {
            return Err(Error::Domain("n_rect must be at least 1".into()));
        }
        if let Some(w) = self.auc_trailing_months {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Domain(format!("auc_trailing_months must be positive, got {w}")));
            }
        }
        if self.variant == Variant::III && self.trajectory == TrajectoryKind::Quadratic {
            return Err(Error::Contract(
                "Model III needs the GP trajectory (it uses the subject volatility)".into(),
            ));
        }
        Ok(())
    }

    /// Names of the longitudinal association coefficients.
    pub fn association_names(&self) -> &'static [&'static str] {
        match self.variant {
            Variant::I => &["value"],
            Variant::II => &["value", "auc"],
            Variant::III => &["beta0_l", "kappa2"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Priors {
    pub longitudinal: LongitudinalPriors,
    pub mu_logtau: f64,
    pub var_logtau: f64,
    /// Variance of the Normal prior on every regression coefficient.
    pub var_coef: f64,
    /// Normal prior on subject slopes of the quadratic trajectory.
    pub mu_slope: f64,
    pub var_slope: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            longitudinal: LongitudinalPriors::default(),
            mu_logtau: 0.0,
            var_logtau: 1.0,
            var_coef: 25.0,
            mu_slope: 0.0,
            var_slope: 1.0,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        self.longitudinal.validate()?;
        if !(self.var_logtau > 0.0) || !(self.var_coef > 0.0) || !(self.var_slope > 0.0) {
            return Err(Error::Domain("prior variances must be positive".into()));
        }
        Ok(())
    }
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean) * (x - mean) / var)
}

/// Which likelihood components enter the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Components {
    Joint,
    /// Longitudinal sub-model only (first stage of the two-stage comparator).
    LongitudinalOnly,
}

/// Index map of the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n_subjects: usize,
    pub per_subject: usize,
    pub survival: bool,
    pub quadratic: bool,
    pub n_baseline: usize,
    pub n_assoc: usize,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.log_tau() + if self.survival { 1 + self.n_baseline + self.n_assoc } else { 0 }
    }

    pub fn beta0_l(&self, i: usize) -> usize {
        i * self.per_subject
    }

    /// `log κ²` for the GP trajectory, the slope for the quadratic one.
    pub fn second(&self, i: usize) -> usize {
        i * self.per_subject + 1
    }

    pub fn beta0_s(&self, i: usize) -> usize {
        debug_assert!(self.survival);
        i * self.per_subject + 2
    }

    pub fn log_sigma2(&self) -> usize {
        self.n_subjects * self.per_subject
    }

    pub fn quad_coef(&self) -> usize {
        debug_assert!(self.quadratic);
        self.log_sigma2() + 1
    }

    pub fn log_tau(&self) -> usize {
        self.log_sigma2() + 1 + self.quadratic as usize
    }

    pub fn zeta_s(&self, k: usize) -> usize {
        self.log_tau() + 1 + k
    }

    pub fn zeta_l(&self, e: usize) -> usize {
        self.log_tau() + 1 + self.n_baseline + e
    }
}

/// Linear functional of one subject's trajectory.
#[derive(Debug, Clone)]
enum Functional {
    /// `c·β₀ + κ² Σ a_k s_k/D_k`
    Gp { c: f64, a: Vec<f64> },
    /// `c · (b₀, b₁, b₂)`
    Quad { c: [f64; 3] },
}

#[derive(Debug, Clone)]
struct HazardPoint {
    log_t: f64,
    /// Rectangle width; zero for the event-time point.
    weight: f64,
    exposures: Vec<Functional>,
}

#[derive(Debug, Clone)]
enum LongTerms {
    Gp {
        eigenvalues: Vec<f64>,
        proj: ProjectedSeries,
    },
    Quad {
        times: Vec<f64>,
        values: Vec<f64>,
        basis: QuadBasis,
    },
}

/// Per-subject linear change of coordinates for the quadratic trajectory.
///
/// HMC works with the level at the mean measurement time
/// `u₀ = b₀ + α b₂ + u₁ t̄` and `u₁ = b₁ + c b₂`, where `α + c t` is the
/// least-squares fit of `t²` on the subject's times. The longitudinal
/// information is then close to diagonal in `(u₀, u₁, b₂)`. The map has unit
/// Jacobian, so the posterior is unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
struct QuadBasis {
    tbar: f64,
    c: f64,
    alpha: f64,
}

impl QuadBasis {
    fn new(times: &[f64]) -> Self {
        let n = times.len() as f64;
        let tbar = times.iter().sum::<f64>() / n;
        let t2bar = times.iter().map(|t| t * t).sum::<f64>() / n;
        let var: f64 = times.iter().map(|t| (t - tbar).powi(2)).sum();
        let cov: f64 = times.iter().map(|t| (t - tbar) * t * t).sum();
        let c = if var > 0.0 { cov / var } else { 0.0 };
        Self {
            tbar,
            c,
            alpha: t2bar - c * tbar,
        }
    }
}

#[derive(Debug, Clone)]
struct SubjectTerms {
    long: LongTerms,
    y: f64,
    delta: bool,
    z: Vec<f64>,
    rect: Vec<HazardPoint>,
    event: Option<HazardPoint>,
}

/// Log-posterior split into its three additive parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorTerms {
    pub longitudinal: f64,
    pub survival: f64,
    pub prior: f64,
}

impl PosteriorTerms {
    pub fn total(&self) -> f64 {
        self.longitudinal + self.survival + self.prior
    }
}

/// Scratch values for one subject's GP trajectory at the current parameters.
struct GpScratch {
    kappa2: f64,
    sigma2: f64,
    /// `s_k / D_k`
    w: Vec<f64>,
    /// `o_k / D_k`
    od: Vec<f64>,
    /// `s_k / D_k²`
    wd: Vec<f64>,
}

/// Value and partial derivatives of a functional with respect to the
/// subject's two longitudinal coordinates, `log σ²` and the quadratic term.
#[derive(Debug, Clone, Copy, Default)]
struct FuncGrad {
    value: f64,
    d_first: f64,
    d_second: f64,
    d_log_sigma2: f64,
    d_quad: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub struct JointPosterior {
    spec: ModelSpec,
    priors: Priors,
    var_within: f64,
    layout: Layout,
    ids: Vec<String>,
    subjects: Vec<SubjectTerms>,
    caches: Vec<Option<KernelCache>>,
    raw: Vec<Subject>,
    frailty_means: Vec<f64>,
    corrupt_gradient: bool,
}

impl JointPosterior {
    pub fn new(
        data: &Dataset,
        spec: &ModelSpec,
        priors: &Priors,
        var_within: f64,
        components: Components,
    ) -> Result<Self> {
        spec.validate()?;
        priors.validate()?;
        if data.is_empty() {
            return Err(Error::Contract("dataset has no subjects".into()));
        }
        let data = data.select_covariates(&spec.covariates)?;
        data.validate()?;
        let survival = components == Components::Joint;
        let quadratic = spec.trajectory == TrajectoryKind::Quadratic;
        let layout = Layout {
            n_subjects: data.len(),
            per_subject: if survival { 3 } else { 2 },
            survival,
            quadratic,
            n_baseline: if survival { spec.covariates.len() } else { 0 },
            n_assoc: if survival { spec.association_names().len() } else { 0 },
        };
        let mut subjects = Vec::with_capacity(data.len());
        let mut caches = Vec::with_capacity(data.len());
        for s in &data.subjects {
            let (terms, cache) = build_subject(s, spec, survival).map_err(|e| e.for_subject(&s.id))?;
            subjects.push(terms);
            caches.push(cache);
        }
        Ok(Self {
            spec: spec.clone(),
            priors: priors.clone(),
            var_within,
            ids: data.subjects.iter().map(|s| s.id.clone()).collect(),
            frailty_means: vec![0.0; data.len()],
            layout,
            subjects,
            caches,
            raw: data.subjects,
            corrupt_gradient: false,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn has_survival(&self) -> bool {
        self.layout.survival
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.ids
    }

    /// Cluster means currently assigned to each subject's `β₀ˢ`.
    pub fn set_frailty_means(&mut self, means: &[f64]) -> Result<()> {
        if means.len() != self.frailty_means.len() {
            return Err(Error::Contract(format!(
                "expected {} frailty means, got {}",
                self.frailty_means.len(),
                means.len()
            )));
        }
        self.frailty_means.copy_from_slice(means);
        Ok(())
    }

    /// Debug hook: perturb the analytic gradient so the start-up check fails.
    pub fn set_corrupt_gradient(&mut self, on: bool) {
        self.corrupt_gradient = on;
    }

    pub fn beta0_s(&self, q: &[f64]) -> Vec<f64> {
        (0..self.layout.n_subjects).map(|i| q[self.layout.beta0_s(i)]).collect()
    }

    /// Each subject's survival factor as a function of its own `β₀ˢ`, with
    /// every other parameter taken from `q`.
    pub fn frailty_likelihoods(&self, q: &[f64]) -> Result<Vec<FrailtyLik>> {
        self.check_dim(q)?;
        let l = &self.layout;
        if !l.survival {
            return Err(Error::Contract("posterior has no survival component".into()));
        }
        let q = &*self.decode(q);
        let sigma2 = q[l.log_sigma2()].exp();
        let quad = if l.quadratic { q[l.quad_coef()] } else { 0.0 };
        let tau = q[l.log_tau()].exp();
        let out = self
            .subjects
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let b0 = q[l.beta0_l(i)];
                let second = q[l.second(i)];
                let mut base = 0.0;
                for (k, z) in s.z.iter().enumerate() {
                    base += q[l.zeta_s(k)] * z;
                }
                let exposure = if self.spec.variant == Variant::III {
                    base += q[l.zeta_l(0)] * b0 + q[l.zeta_l(1)] * second.exp();
                    cum_hazard_const(s.y, tau, base)
                } else {
                    let scratch = match &s.long {
                        LongTerms::Gp { eigenvalues, proj } => Some(gp_scratch(eigenvalues, proj, b0, second.exp(), sigma2)),
                        LongTerms::Quad { .. } => None,
                    };
                    s.rect
                        .iter()
                        .map(|pt| {
                            let mut lambda = base;
                            for (e, f) in pt.exposures.iter().enumerate() {
                                lambda += q[l.zeta_l(e)] * eval_functional(f, (b0, second, quad), scratch.as_ref()).value;
                            }
                            pt.weight * tau * ((tau - 1.0) * pt.log_t + lambda).exp()
                        })
                        .sum()
                };
                FrailtyLik {
                    delta: s.delta as u8 as f64,
                    exposure,
                }
            })
            .collect();
        Ok(out)
    }

    /// Write `values` into the `β₀ˢ` coordinates of `q`.
    pub fn set_beta0_s(&self, q: &mut [f64], values: &[f64]) -> Result<()> {
        self.check_dim(q)?;
        if !self.layout.survival || values.len() != self.layout.n_subjects {
            return Err(Error::Contract("survival intercepts do not match the posterior".into()));
        }
        for (i, &v) in values.iter().enumerate() {
            q[self.layout.beta0_s(i)] = v;
        }
        Ok(())
    }

    /// Names of the continuous parameters on their natural scale.
    pub fn parameter_names(&self) -> Vec<String> {
        let l = &self.layout;
        let mut names = vec![String::new(); l.dim()];
        let second = if l.quadratic { "slope" } else { "kappa2" };
        for (i, id) in self.ids.iter().enumerate() {
            names[l.beta0_l(i)] = format!("beta0_l[{id}]");
            names[l.second(i)] = format!("{second}[{id}]");
            if l.survival {
                names[l.beta0_s(i)] = format!("beta0_s[{id}]");
            }
        }
        names[l.log_sigma2()] = "sigma2".into();
        if l.quadratic {
            names[l.quad_coef()] = "quad_coef".into();
        }
        if l.survival {
            names[l.log_tau()] = "tau".into();
            for (k, c) in self.spec.covariates.iter().enumerate() {
                names[l.zeta_s(k)] = format!("zeta_s[{c}]");
            }
            for (e, c) in self.spec.association_names().iter().enumerate() {
                names[l.zeta_l(e)] = format!("zeta_l[{c}]");
            }
        }
        names
    }

    /// Internal-scale names (log-scale coordinates carry a `log_` prefix).
    pub fn coordinate_names(&self) -> Vec<String> {
        let natural = self.parameter_names();
        let mut out = natural.clone();
        if self.layout.quadratic {
            for (i, id) in self.ids.iter().enumerate() {
                out[self.layout.beta0_l(i)] = format!("level[{id}]");
                out[self.layout.second(i)] = format!("centred_slope[{id}]");
            }
        }
        for (k, n) in natural.iter().enumerate() {
            if self.is_log_coordinate(k) {
                out[k] = format!("log_{n}");
            }
        }
        out
    }

    fn is_log_coordinate(&self, k: usize) -> bool {
        let l = &self.layout;
        if k == l.log_sigma2() || (l.survival && k == l.log_tau()) {
            return true;
        }
        !l.quadratic && k < l.log_sigma2() && k % l.per_subject == 1
    }

    /// Map `q` to natural-scale values (exponentiating log coordinates).
    pub fn to_natural(&self, q: &[f64]) -> Vec<f64> {
        self.decode(q)
            .iter()
            .enumerate()
            .map(|(k, &v)| if self.is_log_coordinate(k) { v.exp() } else { v })
            .collect()
    }

    /// Starting point derived from simple data summaries.
    pub fn initial_point(&self) -> Vec<f64> {
        let l = &self.layout;
        let mut q = vec![0.0; l.dim()];
        let mut pooled = 0.0;
        let mut pooled_n = 0usize;
        for (i, s) in self.raw.iter().enumerate() {
            let n = s.values.len() as f64;
            let mean = s.values.iter().sum::<f64>() / n;
            let var = s.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            pooled += var * (n - 1.0);
            pooled_n += s.values.len() - 1;
            q[l.beta0_l(i)] = mean;
            q[l.second(i)] = if l.quadratic { 0.0 } else { var.max(0.05).ln() };
        }
        q[l.log_sigma2()] = (0.5 * pooled / pooled_n.max(1) as f64).max(1e-3).ln();
        if l.survival {
            let events = self.subjects.iter().filter(|s| s.delta).count().max(1) as f64;
            let exposure: f64 = self.subjects.iter().map(|s| s.y).sum();
            let b0s = (events / exposure).ln();
            for i in 0..l.n_subjects {
                q[l.beta0_s(i)] = b0s;
            }
        }
        self.encode(&mut q);
        q
    }

    /// Linear predictor `λ_i(t)` computed through the dense predictive
    /// machinery; independent of the projected fast path.
    pub fn linear_predictor(&self, q: &[f64], i: usize, t: f64) -> Result<f64> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("time must be positive, got {t}")));
        }
        if !self.layout.survival {
            return Err(Error::Contract("posterior has no survival component".into()));
        }
        self.check_dim(q)?;
        let q = &*self.decode(q);
        let l = &self.layout;
        let s = &self.raw[i];
        let mut lp = q[l.beta0_s(i)];
        for (k, z) in s.survival.z_baseline.iter().enumerate() {
            lp += q[l.zeta_s(k)] * z;
        }
        let zeta = |e: usize| q[l.zeta_l(e)];
        let b0 = q[l.beta0_l(i)];
        let sigma2 = q[l.log_sigma2()].exp();
        match self.spec.trajectory {
            TrajectoryKind::Gp => {
                let kappa2 = q[l.second(i)].exp();
                if self.spec.variant == Variant::III {
                    return Ok(lp + zeta(0) * b0 + zeta(1) * kappa2);
                }
                let params = LongitudinalParams {
                    beta0: b0,
                    kappa2,
                    sigma2,
                    rho2: self.spec.rho2,
                };
                let cache = self.caches[i].as_ref().expect("GP cache");
                let pred = GpPredictor::new(cache, &s.values, &params)?;
                lp += zeta(0) * pred.mean(t);
                if self.spec.variant == Variant::II {
                    let tau0 = self.window_start(t);
                    let slope = match self.spec.auc_scheme {
                        AucScheme::Pointwise => pred.deriv(t),
                        AucScheme::Uniform if t - tau0 < MIN_WINDOW => pred.deriv(t),
                        AucScheme::Uniform => pred.mean_slope(tau0, t),
                    };
                    lp += zeta(1) * slope;
                }
                Ok(lp)
            }
            TrajectoryKind::Quadratic => {
                let b1 = q[l.second(i)];
                let b2 = q[l.quad_coef()];
                let x = |t: f64| b0 + b1 * t + b2 * t * t;
                lp += zeta(0) * x(t);
                if self.spec.variant == Variant::II {
                    let tau0 = self.window_start(t);
                    let slope = match self.spec.auc_scheme {
                        AucScheme::Uniform if t - tau0 >= MIN_WINDOW => (x(t) - x(tau0)) / (t - tau0),
                        _ => b1 + 2.0 * b2 * t,
                    };
                    lp += zeta(1) * slope;
                }
                Ok(lp)
            }
        }
    }

    fn window_start(&self, t: f64) -> f64 {
        window_start(self.spec.auc_trailing_months, t)
    }

    fn check_dim(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.layout.dim() {
            return Err(Error::Contract(format!(
                "parameter vector has length {}, expected {}",
                q.len(),
                self.layout.dim()
            )));
        }
        Ok(())
    }

    fn quad_bases(&self) -> impl Iterator<Item = (usize, &QuadBasis)> {
        self.subjects.iter().enumerate().filter_map(|(i, s)| match &s.long {
            LongTerms::Quad { basis, .. } => Some((i, basis)),
            LongTerms::Gp { .. } => None,
        })
    }

    /// Sampler coordinates to model coordinates (`b₀`, `b₁`, `b₂`).
    fn decode<'a>(&self, q: &'a [f64]) -> Cow<'a, [f64]> {
        let l = &self.layout;
        if !l.quadratic {
            return Cow::Borrowed(q);
        }
        let mut b = q.to_vec();
        let b2 = q[l.quad_coef()];
        for (i, m) in self.quad_bases() {
            let (u0, u1) = (q[l.beta0_l(i)], q[l.second(i)]);
            b[l.second(i)] = u1 - m.c * b2;
            b[l.beta0_l(i)] = u0 - u1 * m.tbar - m.alpha * b2;
        }
        Cow::Owned(b)
    }

    fn encode(&self, b: &mut [f64]) {
        let l = &self.layout;
        if !l.quadratic {
            return;
        }
        let b2 = b[l.quad_coef()];
        for (i, m) in self.quad_bases() {
            let u1 = b[l.second(i)] + m.c * b2;
            b[l.beta0_l(i)] += m.alpha * b2 + u1 * m.tbar;
            b[l.second(i)] = u1;
        }
    }

    /// Sampler-coordinate log-posterior and gradient.
    fn eval(&self, q: &[f64], grad: &mut [f64]) -> PosteriorTerms {
        let b = self.decode(q);
        let terms = self.eval_model(&b, grad);
        let l = &self.layout;
        if l.quadratic {
            let mut d_quad = grad[l.quad_coef()];
            for (i, m) in self.quad_bases() {
                let (g0, g1) = (grad[l.beta0_l(i)], grad[l.second(i)]);
                d_quad -= m.c * g1 + m.alpha * g0;
                grad[l.second(i)] = g1 - m.tbar * g0;
            }
            grad[l.quad_coef()] = d_quad;
        }
        terms
    }

    /// The three log-posterior parts at `q`.
    pub fn terms(&self, q: &[f64]) -> Result<PosteriorTerms> {
        self.check_dim(q)?;
        let mut g = vec![0.0; q.len()];
        Ok(self.eval(q, &mut g))
    }

    /// Log-posterior and gradient in model coordinates; non-finite parts
    /// propagate as NaN/inf.
    fn eval_model(&self, q: &[f64], grad: &mut [f64]) -> PosteriorTerms {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let l = &self.layout;
        let p = &self.priors;
        let lp = &p.longitudinal;
        let log_sigma2 = q[l.log_sigma2()];
        let sigma2 = log_sigma2.exp();
        let quad = if l.quadratic { q[l.quad_coef()] } else { 0.0 };
        let log_tau = if l.survival { q[l.log_tau()] } else { 0.0 };
        let tau = log_tau.exp();
        let mut long_total = 0.0;
        let mut surv_total = 0.0;
        let mut prior_total = 0.0;

        for (i, s) in self.subjects.iter().enumerate() {
            let b0 = q[l.beta0_l(i)];
            let second = q[l.second(i)];
            prior_total += normal_logpdf(b0, lp.mu_beta0, lp.var_beta0);
            grad[l.beta0_l(i)] += -(b0 - lp.mu_beta0) / lp.var_beta0;
            if l.quadratic {
                prior_total += normal_logpdf(second, p.mu_slope, p.var_slope);
                grad[l.second(i)] += -(second - p.mu_slope) / p.var_slope;
            } else {
                prior_total += normal_logpdf(second, lp.mu_logkappa2, lp.var_logkappa2);
                grad[l.second(i)] += -(second - lp.mu_logkappa2) / lp.var_logkappa2;
            }

            // Longitudinal likelihood.
            let scratch = match &s.long {
                LongTerms::Gp { eigenvalues, proj } => {
                    let kappa2 = second.exp();
                    let lg = proj.loglik_grad(eigenvalues, b0, kappa2, sigma2);
                    long_total += lg.value;
                    grad[l.beta0_l(i)] += lg.d_beta0;
                    grad[l.second(i)] += lg.d_log_kappa2;
                    grad[l.log_sigma2()] += lg.d_log_sigma2;
                    if l.survival && self.spec.variant != Variant::III {
                        Some(gp_scratch(eigenvalues, proj, b0, kappa2, sigma2))
                    } else {
                        None
                    }
                }
                LongTerms::Quad { times, values, .. } => {
                    let n = times.len() as f64;
                    let mut ss = 0.0;
                    let (mut r0, mut r1, mut r2) = (0.0, 0.0, 0.0);
                    for (&t, &x) in times.iter().zip(values) {
                        let r = x - b0 - second * t - quad * t * t;
                        ss += r * r;
                        r0 += r;
                        r1 += r * t;
                        r2 += r * t * t;
                    }
                    long_total += -0.5 * n * (LN_2PI + log_sigma2) - 0.5 * ss / sigma2;
                    grad[l.beta0_l(i)] += r0 / sigma2;
                    grad[l.second(i)] += r1 / sigma2;
                    grad[l.quad_coef()] += r2 / sigma2;
                    grad[l.log_sigma2()] += -0.5 * n + 0.5 * ss / sigma2;
                    None
                }
            };

            if !l.survival {
                continue;
            }
            let b0s = q[l.beta0_s(i)];
            prior_total += normal_logpdf(b0s, self.frailty_means[i], self.var_within);
            grad[l.beta0_s(i)] += -(b0s - self.frailty_means[i]) / self.var_within;

            let mut base = b0s;
            for (k, z) in s.z.iter().enumerate() {
                base += q[l.zeta_s(k)] * z;
            }
            let log_y = s.y.ln();
            // dℓ/dλ at each hazard point, accumulated into the parameters below.
            let push_lambda_grad = |g_lambda: f64, exposures: &[FuncGrad], grad: &mut [f64]| {
                grad[l.beta0_s(i)] += g_lambda;
                for (k, z) in s.z.iter().enumerate() {
                    grad[l.zeta_s(k)] += g_lambda * z;
                }
                for (e, f) in exposures.iter().enumerate() {
                    let zeta = q[l.zeta_l(e)];
                    grad[l.zeta_l(e)] += g_lambda * f.value;
                    grad[l.beta0_l(i)] += g_lambda * zeta * f.d_first;
                    grad[l.second(i)] += g_lambda * zeta * f.d_second;
                    grad[l.log_sigma2()] += g_lambda * zeta * f.d_log_sigma2;
                    if l.quadratic {
                        grad[l.quad_coef()] += g_lambda * zeta * f.d_quad;
                    }
                }
            };

            if self.spec.variant == Variant::III {
                let kappa2 = second.exp();
                let (z1, z2) = (q[l.zeta_l(0)], q[l.zeta_l(1)]);
                let lambda = base + z1 * b0 + z2 * kappa2;
                let cum = cum_hazard_const(s.y, tau, lambda);
                let delta = s.delta as u8 as f64;
                surv_total += delta * (log_tau + (tau - 1.0) * log_y + lambda) - cum;
                let g_lambda = delta - cum;
                let exposures = [
                    FuncGrad {
                        value: b0,
                        d_first: 1.0,
                        ..FuncGrad::default()
                    },
                    FuncGrad {
                        value: kappa2,
                        d_second: kappa2,
                        ..FuncGrad::default()
                    },
                ];
                push_lambda_grad(g_lambda, &exposures, grad);
                grad[l.log_tau()] += delta * (1.0 + tau * log_y) - cum * tau * log_y;
                continue;
            }

            let coords = (b0, second, quad);
            let mut fg = Vec::with_capacity(2);
            let eval_point = |pt: &HazardPoint, fg: &mut Vec<FuncGrad>| -> f64 {
                fg.clear();
                let mut lambda = base;
                for (e, f) in pt.exposures.iter().enumerate() {
                    let v = eval_functional(f, coords, scratch.as_ref());
                    lambda += q[l.zeta_l(e)] * v.value;
                    fg.push(v);
                }
                lambda
            };
            if let Some(pt) = &s.event {
                let lambda = eval_point(pt, &mut fg);
                surv_total += log_tau + (tau - 1.0) * pt.log_t + lambda;
                push_lambda_grad(1.0, &fg, grad);
                grad[l.log_tau()] += 1.0 + tau * pt.log_t;
            }
            let mut d_log_tau = 0.0;
            for pt in &s.rect {
                let lambda = eval_point(pt, &mut fg);
                let h = pt.weight * tau * ((tau - 1.0) * pt.log_t + lambda).exp();
                surv_total -= h;
                push_lambda_grad(-h, &fg, grad);
                d_log_tau -= h * (1.0 + tau * pt.log_t);
            }
            grad[l.log_tau()] += d_log_tau;
        }

        prior_total += normal_logpdf(log_sigma2, lp.mu_logsigma2, lp.var_logsigma2);
        grad[l.log_sigma2()] += -(log_sigma2 - lp.mu_logsigma2) / lp.var_logsigma2;
        if l.quadratic {
            prior_total += normal_logpdf(quad, 0.0, p.var_coef);
            grad[l.quad_coef()] += -quad / p.var_coef;
        }
        if l.survival {
            prior_total += normal_logpdf(log_tau, p.mu_logtau, p.var_logtau);
            grad[l.log_tau()] += -(log_tau - p.mu_logtau) / p.var_logtau;
            for k in (l.log_tau() + 1)..l.dim() {
                prior_total += normal_logpdf(q[k], 0.0, p.var_coef);
                grad[k] += -q[k] / p.var_coef;
            }
        }
        if self.corrupt_gradient {
            grad[l.log_sigma2()] *= 1.5;
            grad[l.log_sigma2()] += 1.0;
        }
        PosteriorTerms {
            longitudinal: long_total,
            survival: surv_total,
            prior: prior_total,
        }
    }
}

impl crate::hmc::LogDensity for JointPosterior {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        let t = self.eval(q, grad);
        let total = t.total();
        if total.is_nan() {
            f64::NEG_INFINITY
        } else {
            total
        }
    }
}

fn window_start(trailing: Option<f64>, t: f64) -> f64 {
    match trailing {
        Some(w) => (t - w).max(0.0),
        None => 0.0,
    }
}

fn gp_scratch(eigenvalues: &[f64], proj: &ProjectedSeries, b0: f64, kappa2: f64, sigma2: f64) -> GpScratch {
    let n = eigenvalues.len();
    let mut w = Vec::with_capacity(n);
    let mut od = Vec::with_capacity(n);
    let mut wd = Vec::with_capacity(n);
    for ((s, o), &lambda) in proj.residual(b0).zip(&proj.ones).zip(eigenvalues) {
        let inv = 1.0 / (kappa2 * lambda + sigma2);
        w.push(s * inv);
        od.push(o * inv);
        wd.push(s * inv * inv);
    }
    GpScratch {
        kappa2,
        sigma2,
        w,
        od,
        wd,
    }
}

fn eval_functional(f: &Functional, (b0, b1, b2): (f64, f64, f64), scratch: Option<&GpScratch>) -> FuncGrad {
    match f {
        Functional::Gp { c, a } => {
            let sc = scratch.expect("GP scratch");
            let cross = sc.kappa2 * sc.sigma2 * dot(a, &sc.wd);
            FuncGrad {
                value: c * b0 + sc.kappa2 * dot(a, &sc.w),
                d_first: c - sc.kappa2 * dot(a, &sc.od),
                d_second: cross,
                d_log_sigma2: -cross,
                d_quad: 0.0,
            }
        }
        Functional::Quad { c } => FuncGrad {
            value: c[0] * b0 + c[1] * b1 + c[2] * b2,
            d_first: c[0],
            d_second: c[1],
            d_log_sigma2: 0.0,
            d_quad: c[2],
        },
    }
}

fn build_subject(s: &Subject, spec: &ModelSpec, survival: bool) -> Result<(SubjectTerms, Option<KernelCache>)> {
    let (long, cache) = match spec.trajectory {
        TrajectoryKind::Gp => {
            let cache = KernelCache::build(&s.times, spec.rho2)?;
            let proj = ProjectedSeries::new(&cache, &s.values)?;
            (
                LongTerms::Gp {
                    eigenvalues: cache.eigenvalues().to_vec(),
                    proj,
                },
                Some(cache),
            )
        }
        TrajectoryKind::Quadratic => (
            LongTerms::Quad {
                times: s.times.clone(),
                values: s.values.clone(),
                basis: QuadBasis::new(&s.times),
            },
            None,
        ),
    };
    let mut terms = SubjectTerms {
        long,
        y: s.survival.y,
        delta: s.survival.delta,
        z: s.survival.z_baseline.clone(),
        rect: Vec::new(),
        event: None,
    };
    if !survival || spec.variant == Variant::III {
        return Ok((terms, cache));
    }
    let point = |t: f64, weight: f64| HazardPoint {
        log_t: t.ln(),
        weight,
        exposures: exposures_at(spec, cache.as_ref(), t),
    };
    let width = s.survival.y / spec.n_rect as f64;
    terms.rect = midpoints(s.survival.y, spec.n_rect).map(|t| point(t, width)).collect();
    if s.survival.delta {
        terms.event = Some(point(s.survival.y, 0.0));
    }
    Ok((terms, cache))
}

fn exposures_at(spec: &ModelSpec, cache: Option<&KernelCache>, t: f64) -> Vec<Functional> {
    let tau0 = window_start(spec.auc_trailing_months, t);
    let secant = spec.auc_scheme == AucScheme::Uniform && t - tau0 >= MIN_WINDOW;
    match cache {
        Some(cache) => {
            let project = |v: Vec<f64>| cache.project(&v).expect("projection length");
            let mut out = vec![Functional::Gp {
                c: 1.0,
                a: project(cache.cross_corr(t)),
            }];
            if spec.variant == Variant::II {
                let a = if secant {
                    let g1 = cache.cross_corr(t);
                    let g0 = cache.cross_corr(tau0);
                    project(g1.iter().zip(&g0).map(|(a, b)| (a - b) / (t - tau0)).collect())
                } else {
                    project(cache.cross_corr_deriv(t))
                };
                out.push(Functional::Gp { c: 0.0, a });
            }
            out
        }
        None => {
            let mut out = vec![Functional::Quad { c: [1.0, t, t * t] }];
            if spec.variant == Variant::II {
                let c = if secant {
                    [0.0, 1.0, t + tau0]
                } else {
                    [0.0, 1.0, 2.0 * t]
                };
                out.push(Functional::Quad { c });
            }
            out
        }
    }
}
