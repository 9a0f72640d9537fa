//! Hamiltonian Monte Carlo with a diagonal metric.
//!
//! The integrator, the Metropolis correction and the warm-up adaptation are
//! kept independent of the joint model so they can be exercised on simple
//! targets. Step size is tuned by dual averaging; the diagonal inverse metric
//! is estimated from windowed warm-up draws.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Energy error beyond which a trajectory counts as divergent.
pub const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Relative half-width of the uniform step-size jitter applied per transition.
pub const STEP_JITTER: f64 = 0.1;

/// A differentiable log-density on `R^dim`.
pub trait LogDensity {
    fn dim(&self) -> usize;

    /// Log density at `q`; writes the gradient into `grad`. Non-finite
    /// return values are treated as divergences by the sampler.
    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64;

    fn log_density(&self, q: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.log_density_grad(q, &mut g)
    }
}

/// Adapter from a log-density closure and a separate gradient closure.
pub struct FnDensity<F, G> {
    pub dim: usize,
    pub logp: F,
    pub grad: G,
}

impl<F, G> LogDensity for FnDensity<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density_grad(&self, q: &[f64], grad: &mut [f64]) -> f64 {
        (self.grad)(q, grad);
        (self.logp)(q)
    }

    fn log_density(&self, q: &[f64]) -> f64 {
        (self.logp)(q)
    }
}

/// Result of integrating Hamilton's equations.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
    pub divergent: bool,
}

/// `n_steps` leapfrog steps of size `eps` under kinetic energy `½ Σ m⁻¹ p²`.
///
/// `grad` must be the gradient at `q`. Integration stops early, flagging a
/// divergence, as soon as the log density or its gradient stops being finite.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    q: &[f64],
    p: &[f64],
    grad: &[f64],
    inv_mass: &[f64],
    eps: f64,
    n_steps: usize,
) -> Trajectory {
    let mut q = q.to_vec();
    let mut p = p.to_vec();
    let mut g = grad.to_vec();
    let mut logp = f64::NAN;
    if n_steps == 0 {
        return Trajectory {
            logp: target.log_density(&q),
            q,
            p,
            grad: g,
            divergent: false,
        };
    }
    for step in 0..n_steps {
        for i in 0..q.len() {
            p[i] += 0.5 * eps * g[i];
            q[i] += eps * inv_mass[i] * p[i];
        }
        logp = target.log_density_grad(&q, &mut g);
        if !logp.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Trajectory {
                q,
                p,
                logp,
                grad: g,
                divergent: true,
            };
        }
        for i in 0..q.len() {
            p[i] += 0.5 * eps * g[i];
        }
        let _ = step;
    }
    Trajectory {
        q,
        p,
        logp,
        grad: g,
        divergent: false,
    }
}

pub fn kinetic_energy(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(p, m)| p * p * m).sum::<f64>()
}

/// Current position of a chain with cached density and gradient.
#[derive(Debug, Clone)]
pub struct ChainPoint {
    pub q: Vec<f64>,
    pub logp: f64,
    pub grad: Vec<f64>,
}

impl ChainPoint {
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let mut grad = vec![0.0; q.len()];
        let logp = target.log_density_grad(&q, &mut grad);
        Self { q, logp, grad }
    }

    /// Re-evaluate after the target itself changed (e.g. after a Gibbs step).
    pub fn refresh<T: LogDensity + ?Sized>(&mut self, target: &T) {
        self.logp = target.log_density_grad(&self.q, &mut self.grad);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub accepted: bool,
    pub accept_prob: f64,
    pub divergent: bool,
    pub energy_error: f64,
}

/// One HMC transition: fresh momentum, leapfrog, Metropolis accept/reject.
///
/// The step size is used as given; see [`jittered`] for breaking up
/// periodic trajectories.
pub fn hmc_step<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    point: &mut ChainPoint,
    inv_mass: &[f64],
    eps: f64,
    n_leapfrog: usize,
    rng: &mut R,
) -> StepInfo {
    let p0: Vec<f64> = inv_mass
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            z / m.sqrt()
        })
        .collect();
    let h0 = -point.logp + kinetic_energy(&p0, inv_mass);
    let traj = leapfrog(target, &point.q, &p0, &point.grad, inv_mass, eps, n_leapfrog);
    let h1 = -traj.logp + kinetic_energy(&traj.p, inv_mass);
    let energy_error = h1 - h0;
    let divergent = traj.divergent || !energy_error.is_finite() || energy_error > MAX_ENERGY_ERROR;
    let accept_prob = if divergent {
        0.0
    } else {
        (-energy_error).exp().min(1.0)
    };
    let accepted = !divergent && rng.random::<f64>() < accept_prob;
    if accepted {
        point.q = traj.q;
        point.logp = traj.logp;
        point.grad = traj.grad;
    }
    StepInfo {
        accepted,
        accept_prob,
        divergent,
        energy_error,
    }
}

/// `eps` scaled by a uniform factor in `[1 − STEP_JITTER, 1 + STEP_JITTER]`.
pub fn jittered<R: Rng + ?Sized>(eps: f64, rng: &mut R) -> f64 {
    eps * (1.0 + STEP_JITTER * (2.0 * rng.random::<f64>() - 1.0))
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Per-coordinate `|g − g_fd| / max(|g|, |g_fd|, 1)`, maximised over coordinates.
pub fn grad_check<T: LogDensity + ?Sized>(target: &T, point: &[f64], h: f64) -> Result<GradCheck> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("finite-difference step must be positive, got {h}")));
    }
    let mut analytic = vec![0.0; point.len()];
    let f0 = target.log_density_grad(point, &mut analytic);
    if !f0.is_finite() {
        return Err(Error::Numeric("log density not finite at gradient-check point".into()));
    }
    let mut x = point.to_vec();
    let mut numeric = Vec::with_capacity(point.len());
    let mut max_rel_error = 0.0;
    let mut worst_index = 0;
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = target.log_density(&x);
        x[i] = orig - h;
        let fm = target.log_density(&x);
        x[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(fd.abs()).max(1.0);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > max_rel_error {
            max_rel_error = err;
            worst_index = i;
        }
        numeric.push(fd);
    }
    Ok(GradCheck {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

/// Nesterov dual averaging of `log ε` towards a target acceptance rate.
#[derive(Debug, Clone)]
pub struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_eps: f64,
    log_eps_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    pub fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            target,
            h_bar: 0.0,
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            count: 0.0,
        }
    }

    pub fn update(&mut self, accept_prob: f64) -> f64 {
        self.count += 1.0;
        let t = self.count;
        let w = 1.0 / (t + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_prob);
        self.log_eps = self.mu - t.sqrt() / Self::GAMMA * self.h_bar;
        let eta = t.powf(-Self::KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
        self.log_eps.exp()
    }

    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    pub fn final_step(&self) -> f64 {
        if self.count == 0.0 {
            self.current()
        } else {
            self.log_eps_bar.exp()
        }
    }
}

/// Streaming mean/variance per coordinate.
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Variance shrunk towards 1e-3, as in Stan's windowed adaptation.
    fn regularized_variance(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.m2
            .iter()
            .map(|m2| {
                let var = m2 / (n - 1.0);
                (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
            })
            .collect()
    }
}

/// Warm-up controller: dual averaging throughout, plus doubling windows for
/// the diagonal metric between a fast initial and a fast terminal phase.
#[derive(Debug, Clone)]
pub struct Adaptation {
    adapt_iters: usize,
    target_accept: f64,
    adapt_mass: bool,
    window_ends: Vec<usize>,
    welford: Welford,
    da: DualAveraging,
    iter: usize,
    pub inv_mass: Vec<f64>,
    pub step_size: f64,
}

impl Adaptation {
    pub fn new(dim: usize, eps0: f64, target_accept: f64, adapt_iters: usize, adapt_mass: bool) -> Self {
        Self {
            adapt_iters,
            target_accept,
            adapt_mass,
            window_ends: window_ends(adapt_iters),
            welford: Welford::new(dim),
            da: DualAveraging::new(eps0, target_accept),
            iter: 0,
            inv_mass: vec![1.0; dim],
            step_size: eps0,
        }
    }

    pub fn is_adapting(&self) -> bool {
        self.iter < self.adapt_iters
    }

    /// Feed one warm-up transition. Returns `true` when the metric changed,
    /// in which case the caller should re-initialise the step size.
    pub fn observe(&mut self, q: &[f64], accept_prob: f64) -> bool {
        if !self.is_adapting() {
            return false;
        }
        let it = self.iter;
        self.iter += 1;
        self.step_size = self.da.update(accept_prob);
        let mut metric_changed = false;
        if self.adapt_mass && !self.window_ends.is_empty() {
            let start = self.window_start();
            if it >= start && it < *self.window_ends.last().unwrap() {
                self.welford.push(q);
            }
            if self.window_ends.contains(&(it + 1)) && self.welford.n >= 10 {
                self.inv_mass = self.welford.regularized_variance();
                self.welford = Welford::new(q.len());
                metric_changed = true;
            }
        }
        if !self.is_adapting() {
            self.step_size = self.da.final_step();
        }
        metric_changed
    }

    /// Restart dual averaging around a new initial step size.
    pub fn restart_step(&mut self, eps0: f64) {
        self.da = DualAveraging::new(eps0, self.target_accept);
        self.step_size = eps0;
    }

    fn window_start(&self) -> usize {
        if self.adapt_iters < 150 {
            self.adapt_iters
        } else {
            75
        }
    }
}

/// Ends of the slow metric-adaptation windows (75-iteration initial buffer,
/// windows of 25, 50, 100, ..., 50-iteration terminal buffer).
fn window_ends(adapt_iters: usize) -> Vec<usize> {
    if adapt_iters < 150 {
        return Vec::new();
    }
    let start = 75;
    let end = adapt_iters - 50;
    let mut ends = Vec::new();
    let mut width = 25;
    let mut pos = start;
    while pos + width <= end {
        let next = pos + width;
        // Stretch the last window rather than leave a short remainder.
        if next + 2 * width > end {
            ends.push(end);
            break;
        }
        ends.push(next);
        pos = next;
        width *= 2;
    }
    ends
}

/// Double or halve `eps` until a single leapfrog step has acceptance near ½.
pub fn find_reasonable_step<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    point: &ChainPoint,
    inv_mass: &[f64],
    eps0: f64,
    rng: &mut R,
) -> f64 {
    let mut eps = eps0;
    let p0: Vec<f64> = inv_mass
        .iter()
        .map(|m| {
            let z: f64 = StandardNormal.sample(rng);
            z / m.sqrt()
        })
        .collect();
    let h0 = -point.logp + kinetic_energy(&p0, inv_mass);
    let log_accept = |eps: f64| {
        let t = leapfrog(target, &point.q, &p0, &point.grad, inv_mass, eps, 1);
        let h = -t.logp + kinetic_energy(&t.p, inv_mass);
        if t.divergent || !h.is_finite() {
            f64::NEG_INFINITY
        } else {
            h0 - h
        }
    };
    let first = log_accept(eps);
    let direction = if first > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..60 {
        let la = log_accept(eps);
        if direction * la <= direction * (0.5f64).ln() {
            break;
        }
        eps *= 2f64.powf(direction);
        if !(1e-10..=1e3).contains(&eps) {
            break;
        }
    }
    eps.clamp(1e-10, 1e3)
}

/// Sampler settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HmcConfig {
    /// Initial step size; adapted during burn-in.
    pub step_size: f64,
    pub n_leapfrog: usize,
    pub target_accept: f64,
    /// Warm-up iterations spent adapting; must not exceed `burn_in`.
    pub adapt_iters: usize,
    pub total_iters: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Estimate a diagonal metric during warm-up.
    pub adapt_mass: bool,
    /// Auxiliary atoms per Neal-8 update.
    pub m_aux: usize,
    /// Reject fits whose gradient disagrees with finite differences at the start.
    pub grad_check_tol: f64,
    /// Add the non-centred frailty moves to every iteration.
    pub noncentred_frailty: bool,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl HmcConfig {
    /// 2,000 iterations with 1,000 burn-in.
    pub fn desk() -> Self {
        Self {
            step_size: 0.05,
            n_leapfrog: 20,
            target_accept: 0.8,
            adapt_iters: 1000,
            total_iters: 2000,
            burn_in: 1000,
            seed: 1,
            adapt_mass: true,
            m_aux: 3,
            grad_check_tol: 1e-4,
            noncentred_frailty: true,
        }
    }

    /// 10,000 iterations with 5,000 burn-in.
    pub fn paper() -> Self {
        Self {
            adapt_iters: 5000,
            total_iters: 10_000,
            burn_in: 5000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Domain(format!(
                "target_accept must lie in (0, 1), got {}",
                self.target_accept
            )));
        }
        if self.burn_in >= self.total_iters {
            return Err(Error::Domain(format!(
                "burn_in ({}) must be smaller than total_iters ({})",
                self.burn_in, self.total_iters
            )));
        }
        if self.adapt_iters > self.burn_in {
            return Err(Error::Domain("adapt_iters cannot exceed burn_in".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::Domain("initial step_size must be positive".into()));
        }
        if self.n_leapfrog == 0 || self.m_aux == 0 {
            return Err(Error::Domain("n_leapfrog and m_aux must be at least 1".into()));
        }
        Ok(())
    }
}

/// Plain HMC run on a fixed target (no Gibbs blocks).
pub fn sample<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    init: Vec<f64>,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<(Vec<Vec<f64>>, f64)> {
    cfg.validate()?;
    let mut point = ChainPoint::new(target, init);
    if !point.logp.is_finite() {
        return Err(Error::Numeric("initial log density is not finite".into()));
    }
    let mut adapt = Adaptation::new(target.dim(), cfg.step_size, cfg.target_accept, cfg.adapt_iters, cfg.adapt_mass);
    let eps = find_reasonable_step(target, &point, &adapt.inv_mass, cfg.step_size, rng);
    adapt.restart_step(eps);
    let mut draws = Vec::with_capacity(cfg.total_iters - cfg.burn_in);
    let mut accepted = 0usize;
    for it in 0..cfg.total_iters {
        let eps = jittered(adapt.step_size, rng);
        let info = hmc_step(target, &mut point, &adapt.inv_mass.clone(), eps, cfg.n_leapfrog, rng);
        if adapt.observe(&point.q, info.accept_prob) {
            let eps = find_reasonable_step(target, &point, &adapt.inv_mass, adapt.step_size, rng);
            adapt.restart_step(eps);
        }
        if it >= cfg.burn_in {
            draws.push(point.q.clone());
            accepted += info.accepted as usize;
        }
    }
    Ok((draws, accepted as f64 / (cfg.total_iters - cfg.burn_in) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn std_normal(dim: usize) -> FnDensity<impl Fn(&[f64]) -> f64, impl Fn(&[f64], &mut [f64])> {
        FnDensity {
            dim,
            logp: |q: &[f64]| -0.5 * q.iter().map(|x| x * x).sum::<f64>(),
            grad: |q: &[f64], g: &mut [f64]| {
                for (g, x) in g.iter_mut().zip(q) {
                    *g = -x;
                }
            },
        }
    }

    #[test]
    fn zero_steps_is_identity() {
        let t = std_normal(2);
        let q = [0.3, -1.2];
        let p = [1.0, 0.5];
        let tr = leapfrog(&t, &q, &p, &[-0.3, 1.2], &[1.0, 1.0], 0.1, 0);
        assert_eq!(tr.q, q);
        assert_eq!(tr.p, p);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let t = FnDensity {
            dim: 2,
            logp: |q: &[f64]| -(q[0].powi(4) + q[1].powi(2) + 0.3 * q[0] * q[1]),
            grad: |q: &[f64], g: &mut [f64]| {
                g[0] = -(4.0 * q[0].powi(3) + 0.3 * q[1]);
                g[1] = -(2.0 * q[1] + 0.3 * q[0]);
            },
        };
        let q = vec![0.4, -0.7];
        let p = vec![0.9, 0.2];
        let mut g = vec![0.0; 2];
        t.log_density_grad(&q, &mut g);
        let m = [1.0, 0.5];
        let fwd = leapfrog(&t, &q, &p, &g, &m, 0.05, 25);
        let back_p: Vec<f64> = fwd.p.iter().map(|v| -v).collect();
        let back = leapfrog(&t, &fwd.q, &back_p, &fwd.grad, &m, 0.05, 25);
        for i in 0..2 {
            assert!((back.q[i] - q[i]).abs() < 1e-10);
            assert!((back.p[i] + p[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_error_is_second_order() {
        let t = std_normal(1);
        let q = [1.0];
        let p = [0.5];
        let h0 = 0.5 + 0.125;
        let err = |eps: f64| {
            // Integrate to a fixed time so only the per-unit-time error matters.
            let steps = (1.0 / eps).round() as usize;
            let tr = leapfrog(&t, &q, &p, &[-1.0], &[1.0], eps, steps);
            (0.5 * tr.q[0] * tr.q[0] + 0.5 * tr.p[0] * tr.p[0] - h0).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn tiny_steps_always_accept() {
        let t = std_normal(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pt = ChainPoint::new(&t, vec![0.5, -0.2, 1.0]);
        for _ in 0..100 {
            let info = hmc_step(&t, &mut pt, &[1.0; 3], 1e-6, 1, &mut rng);
            assert!(info.accept_prob > 0.999_999);
        }
    }

    #[test]
    fn divergence_is_rejected() {
        let t = FnDensity {
            dim: 1,
            logp: |q: &[f64]| if q[0] > 0.5 { f64::NAN } else { -0.5 * q[0] * q[0] },
            grad: |q: &[f64], g: &mut [f64]| g[0] = -q[0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pt = ChainPoint::new(&t, vec![0.49]);
        let mut saw_divergence = false;
        for _ in 0..50 {
            let info = hmc_step(&t, &mut pt, &[1.0], 0.5, 10, &mut rng);
            if info.divergent {
                saw_divergence = true;
                assert!(!info.accepted);
            }
            assert!(pt.logp.is_finite());
        }
        assert!(saw_divergence);
    }

    #[test]
    fn standard_normal_moments() {
        let t = std_normal(2);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cfg = HmcConfig {
            total_iters: 21_000,
            burn_in: 1000,
            adapt_iters: 1000,
            n_leapfrog: 10,
            ..HmcConfig::desk()
        };
        let (draws, acc) = sample(&t, vec![2.0, -2.0], &cfg, &mut rng).unwrap();
        assert_eq!(draws.len(), 20_000);
        for d in 0..2 {
            let m = draws.iter().map(|x| x[d]).sum::<f64>() / draws.len() as f64;
            let v = draws.iter().map(|x| (x[d] - m).powi(2)).sum::<f64>() / draws.len() as f64;
            assert!(m.abs() < 0.05, "mean {m}");
            assert!((v - 1.0).abs() < 0.1, "var {v}");
        }
        assert!(acc > 0.6 && acc < 0.99, "acceptance {acc}");
    }

    #[test]
    fn grad_check_quadratic_and_mismatch() {
        let t = FnDensity {
            dim: 3,
            logp: |q: &[f64]| -(q[0] * q[0] + 2.0 * q[1] * q[1] + 0.5 * q[0] * q[2] + q[2]),
            grad: |q: &[f64], g: &mut [f64]| {
                g[0] = -(2.0 * q[0] + 0.5 * q[2]);
                g[1] = -4.0 * q[1];
                g[2] = -(0.5 * q[0] + 1.0);
            },
        };
        let r = grad_check(&t, &[0.3, -1.1, 2.0], 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);

        let bad = FnDensity {
            dim: 2,
            logp: |q: &[f64]| -(q[0] * q[0] + q[1] * q[1]),
            grad: |q: &[f64], g: &mut [f64]| {
                g[0] = -2.0 * q[0];
                g[1] = -q[1];
            },
        };
        let r = grad_check(&bad, &[0.5, 1.5], 1e-5).unwrap();
        assert!(r.max_rel_error > 0.1);
        assert_eq!(r.worst_index, 1);
        assert!(matches!(grad_check(&bad, &[0.0, 0.0], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn adaptation_windows_cover_warmup() {
        let ends = window_ends(1000);
        assert_eq!(ends.first(), Some(&100));
        assert_eq!(ends.last(), Some(&950));
        assert!(ends.windows(2).all(|w| w[0] < w[1]));
        assert!(window_ends(100).is_empty());
    }

    #[test]
    fn diagonal_metric_learns_scales() {
        let t = FnDensity {
            dim: 2,
            logp: |q: &[f64]| -0.5 * (q[0] * q[0] / 100.0 + q[1] * q[1] / 0.01),
            grad: |q: &[f64], g: &mut [f64]| {
                g[0] = -q[0] / 100.0;
                g[1] = -q[1] / 0.01;
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = HmcConfig {
            total_iters: 3000,
            burn_in: 1000,
            adapt_iters: 1000,
            ..HmcConfig::desk()
        };
        let (draws, _) = sample(&t, vec![0.0, 0.0], &cfg, &mut rng).unwrap();
        let v0 = draws.iter().map(|x| x[0] * x[0]).sum::<f64>() / draws.len() as f64;
        let v1 = draws.iter().map(|x| x[1] * x[1]).sum::<f64>() / draws.len() as f64;
        assert!((v0 / 100.0 - 1.0).abs() < 0.25, "{v0}");
        assert!((v1 / 0.01 - 1.0).abs() < 0.25, "{v1}");
    }

    #[test]
    fn config_validation() {
        assert!(HmcConfig::desk().validate().is_ok());
        let bad = HmcConfig {
            burn_in: 2000,
            ..HmcConfig::desk()
        };
        assert!(bad.validate().is_err());
        let bad = HmcConfig {
            target_accept: 1.0,
            ..HmcConfig::desk()
        };
        assert!(bad.validate().is_err());
    }
}
