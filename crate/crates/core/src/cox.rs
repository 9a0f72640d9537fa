//! Cox proportional-hazards fit by Newton–Raphson on the Breslow partial
//! likelihood, with covariates that may change over time.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAX_ITER: usize = 50;
pub const SCORE_TOL: f64 = 1e-8;
/// Coefficients drifting past this magnitude indicate a monotone likelihood.
const DIVERGENCE_BOUND: f64 = 30.0;

/// Covariates of the events and of the risk set at one distinct event time.
#[derive(Debug, Clone)]
struct EventGroup {
    events: Vec<Vec<f64>>,
    risk: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct CoxProblem {
    p: usize,
    groups: Vec<EventGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoxFit {
    pub coef: Vec<f64>,
    /// Infinite for coefficients without information.
    pub se: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub monotone: bool,
    pub no_information: Vec<bool>,
}

impl CoxFit {
    pub fn flagged(&self) -> bool {
        !self.converged || self.monotone || self.no_information.iter().any(|&b| b)
    }
}

impl CoxProblem {
    /// `covariates(i, t)` gives subject `i`'s covariate vector at time `t`.
    pub fn new<F>(y: &[f64], delta: &[bool], p: usize, covariates: F) -> Result<Self>
    where
        F: Fn(usize, f64) -> Vec<f64>,
    {
        if y.len() != delta.len() {
            return Err(Error::Contract("y and delta lengths differ".into()));
        }
        let mut event_times: Vec<f64> = y.iter().zip(delta).filter(|(_, d)| **d).map(|(t, _)| *t).collect();
        event_times.sort_by(f64::total_cmp);
        event_times.dedup();
        let mut groups = Vec::with_capacity(event_times.len());
        for &t in &event_times {
            let mut events = Vec::new();
            let mut risk = Vec::new();
            for i in 0..y.len() {
                if y[i] >= t {
                    let z = covariates(i, t);
                    if z.len() != p || z.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!(
                            "subject {i}: covariates at t = {t} are malformed or not finite"
                        )));
                    }
                    if delta[i] && y[i] == t {
                        events.push(z.clone());
                    }
                    risk.push(z);
                }
            }
            groups.push(EventGroup { events, risk });
        }
        Ok(Self { p, groups })
    }

    /// Time-constant covariates, one row per subject.
    pub fn from_rows(y: &[f64], delta: &[bool], z: &[Vec<f64>]) -> Result<Self> {
        let p = z.first().map_or(0, Vec::len);
        if z.len() != y.len() {
            return Err(Error::Contract("one covariate row per subject is required".into()));
        }
        Self::new(y, delta, p, |i, _| z[i].clone())
    }

    pub fn n_covariates(&self) -> usize {
        self.p
    }

    pub fn loglik(&self, beta: &[f64]) -> f64 {
        self.evaluate(beta, false).0
    }

    pub fn score(&self, beta: &[f64]) -> Vec<f64> {
        self.evaluate(beta, false).1.as_slice().to_vec()
    }

    pub fn information(&self, beta: &[f64]) -> DMatrix<f64> {
        self.evaluate(beta, true).2
    }

    fn evaluate(&self, beta: &[f64], want_info: bool) -> (f64, DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let mut ll = 0.0;
        let mut score = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let eta = |z: &[f64]| z.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
        for g in &self.groups {
            let d = g.events.len() as f64;
            let etas: Vec<f64> = g.risk.iter().map(|z| eta(z)).collect();
            let shift = etas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s0 = 0.0;
            let mut s1 = DVector::zeros(p);
            let mut s2 = DMatrix::zeros(p, p);
            for (z, e) in g.risk.iter().zip(&etas) {
                let w = (e - shift).exp();
                s0 += w;
                for a in 0..p {
                    s1[a] += w * z[a];
                    if want_info {
                        for b in 0..p {
                            s2[(a, b)] += w * z[a] * z[b];
                        }
                    }
                }
            }
            for z in &g.events {
                ll += eta(z);
                for a in 0..p {
                    score[a] += z[a];
                }
            }
            ll -= d * (s0.ln() + shift);
            let mean = &s1 / s0;
            score -= d * &mean;
            if want_info {
                info += d * (&s2 / s0 - &mean * mean.transpose());
            }
        }
        (ll, score, info)
    }

    /// Newton–Raphson with step halving. Coefficients whose covariate never
    /// varies within a risk set are held at zero with infinite SE.
    pub fn fit(&self) -> CoxFit {
        let p = self.p;
        let info0 = self.information(&vec![0.0; p]);
        let no_information: Vec<bool> = (0..p).map(|k| !(info0[(k, k)] > 1e-12)).collect();
        let active: Vec<usize> = (0..p).filter(|&k| !no_information[k]).collect();
        let mut beta = vec![0.0; p];
        let mut ll = self.loglik(&beta);
        let mut converged = active.is_empty();
        let mut monotone = false;
        let mut iterations = 0;
        while !converged && iterations < MAX_ITER {
            let (_, score, info) = self.evaluate(&beta, true);
            let u = DVector::from_iterator(active.len(), active.iter().map(|&k| score[k]));
            if u.norm() < SCORE_TOL {
                converged = true;
                break;
            }
            iterations += 1;
            let sub = DMatrix::from_fn(active.len(), active.len(), |a, b| info[(active[a], active[b])]);
            let step = match sub.clone().cholesky() {
                Some(ch) => ch.solve(&u),
                None => match sub.pseudo_inverse(1e-12) {
                    Ok(pinv) => pinv * &u,
                    Err(_) => break,
                },
            };
            let mut scale = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let mut trial = beta.clone();
                for (a, &k) in active.iter().enumerate() {
                    trial[k] += scale * step[a];
                }
                let tl = self.loglik(&trial);
                if tl.is_finite() && tl >= ll - 1e-12 * ll.abs().max(1.0) {
                    beta = trial;
                    ll = tl;
                    improved = true;
                    break;
                }
                scale *= 0.5;
            }
            if !improved {
                break;
            }
            if beta.iter().any(|b| b.abs() > DIVERGENCE_BOUND) {
                monotone = true;
                break;
            }
        }
        if !converged {
            let u = self.score(&beta);
            converged = active.iter().map(|&k| u[k] * u[k]).sum::<f64>().sqrt() < SCORE_TOL;
        }
        let mut se = vec![f64::INFINITY; p];
        if !active.is_empty() {
            let info = self.information(&beta);
            // The score also vanishes along a diverging ray, but the information
            // collapses with it.
            if active.iter().any(|&k| info[(k, k)] < 1e-6 * info0[(k, k)]) {
                monotone = true;
            }
            let sub = DMatrix::from_fn(active.len(), active.len(), |a, b| info[(active[a], active[b])]);
            if let Some(inv) = sub.try_inverse() {
                for (a, &k) in active.iter().enumerate() {
                    let v = inv[(a, a)];
                    se[k] = if v > 0.0 { v.sqrt() } else { f64::INFINITY };
                }
            }
        }
        if monotone || !converged {
            log::warn!(
                "Cox fit flagged: converged = {converged}, monotone likelihood = {monotone}, {iterations} iterations"
            );
        }
        CoxFit {
            coef: beta,
            se,
            loglik: ll,
            iterations,
            converged,
            monotone,
            no_information,
        }
    }
}
