//! Dirichlet-process mixture over the frailty means.
//!
//! Each subject's survival intercept `β₀ᵢ⁽ˢ⁾` is normal around its cluster
//! mean `μ_c` with a fixed within-cluster variance; the cluster means come
//! from a DP with base measure `N(base_mean, base_var)` and concentration
//! `α ~ Gamma(shape, rate)`. The intercepts are mostly moved by the HMC block.
//! Besides the centred label and mean updates, the non-centred moves here
//! shift intercepts together with their cluster, using each subject's
//! survival factor [`FrailtyLik`].

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed hyperparameters of the frailty mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrailtyHyper {
    /// Within-cluster variance of the subject intercepts.
    pub var_within: f64,
    pub base_mean: f64,
    pub base_var: f64,
    /// Gamma prior on α, shape–rate convention.
    pub alpha_shape: f64,
    pub alpha_rate: f64,
    /// Keep α at its initial value instead of resampling it.
    pub fix_alpha: bool,
}

impl Default for FrailtyHyper {
    fn default() -> Self {
        Self {
            var_within: 0.1,
            base_mean: 0.0,
            base_var: 25.0,
            alpha_shape: 3.0,
            alpha_rate: 3.0,
            fix_alpha: false,
        }
    }
}

impl FrailtyHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.var_within > 0.0) || !(self.base_var > 0.0) {
            return Err(Error::Domain("frailty variances must be positive".into()));
        }
        if !(self.alpha_shape > 0.0) || !(self.alpha_rate > 0.0) {
            return Err(Error::Domain("alpha prior shape and rate must be positive".into()));
        }
        Ok(())
    }
}

/// Partition of subjects into clusters plus the cluster means.
#[derive(Debug, Clone, PartialEq)]
pub struct FrailtyState {
    pub assignments: Vec<usize>,
    pub cluster_means: Vec<f64>,
    pub alpha: f64,
    pub hyper: FrailtyHyper,
}

/// Survival factor of one subject as a function of its intercept `b`:
/// `δ b − e^b A`, where `A` is the cumulative hazard at `b = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrailtyLik {
    pub delta: f64,
    pub exposure: f64,
}

impl FrailtyLik {
    pub fn log_lik(&self, b: f64) -> f64 {
        self.delta * b - b.exp() * self.exposure
    }
}

fn log_normal_kernel(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / var
}

impl FrailtyState {
    /// Everyone in one cluster centred at `mean`.
    pub fn single_cluster(n: usize, mean: f64, alpha: f64, hyper: FrailtyHyper) -> Self {
        Self {
            assignments: vec![0; n],
            cluster_means: if n > 0 { vec![mean] } else { vec![] },
            alpha,
            hyper,
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.assignments.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_means.len()
    }

    /// `μ_{c_i}` for subject `i`.
    pub fn mean_of(&self, i: usize) -> f64 {
        self.cluster_means[self.assignments[i]]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_clusters()];
        for &c in &self.assignments {
            counts[c] += 1;
        }
        counts
    }

    /// Labels compact, every cluster occupied, α positive.
    pub fn check_invariants(&self) -> Result<()> {
        if self.assignments.iter().any(|&c| c >= self.n_clusters()) {
            return Err(Error::Contract("assignment points past the cluster list".into()));
        }
        if self.counts().contains(&0) {
            return Err(Error::Contract("empty cluster present".into()));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::Contract(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    fn draw_base<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.hyper.base_mean + self.hyper.base_var.sqrt() * z
    }

    /// Drop cluster `c` (which must be empty) by moving the last cluster into its slot.
    fn remove_cluster(&mut self, c: usize, counts: &mut Vec<usize>) {
        let last = self.cluster_means.len() - 1;
        if c != last {
            self.cluster_means[c] = self.cluster_means[last];
            counts[c] = counts[last];
            for a in self.assignments.iter_mut() {
                if *a == last {
                    *a = c;
                }
            }
        }
        self.cluster_means.pop();
        counts.pop();
    }

    /// One Gibbs sweep over the cluster labels using auxiliary atoms
    /// (Neal's Algorithm 8).
    pub fn neal8_sweep<R: Rng + ?Sized>(
        &mut self,
        beta0_s: &[f64],
        m_aux: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.check_len(beta0_s.len())?;
        let var = self.hyper.var_within;
        self.sweep_with(m_aux, rng, |i, mu| log_normal_kernel(beta0_s[i], mu, var))
    }

    /// Label sweep with each residual `β₀ᵢ − μ_{c_i}` held fixed, so a subject
    /// carries its offset into the cluster it joins and the choice is
    /// weighted by its survival likelihood. `beta0_s` is updated in place.
    pub fn neal8_sweep_noncentred<R: Rng + ?Sized>(
        &mut self,
        beta0_s: &mut [f64],
        lik: &[FrailtyLik],
        m_aux: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.check_len(beta0_s.len())?;
        self.check_len(lik.len())?;
        let resid: Vec<f64> = (0..beta0_s.len()).map(|i| beta0_s[i] - self.mean_of(i)).collect();
        self.sweep_with(m_aux, rng, |i, mu| lik[i].log_lik(resid[i] + mu))?;
        for (i, b) in beta0_s.iter_mut().enumerate() {
            *b = resid[i] + self.mean_of(i);
        }
        Ok(())
    }

    fn check_len(&self, n: usize) -> Result<()> {
        if n != self.n_subjects() {
            return Err(Error::Contract(format!("{n} intercepts for {} subjects", self.n_subjects())));
        }
        Ok(())
    }

    /// Neal-8 over all subjects; `log_kernel(i, μ)` is subject `i`'s
    /// log-likelihood under an atom at `μ`.
    fn sweep_with<R: Rng + ?Sized>(
        &mut self,
        m_aux: usize,
        rng: &mut R,
        log_kernel: impl Fn(usize, f64) -> f64,
    ) -> Result<()> {
        if m_aux == 0 {
            return Err(Error::Contract("m_aux must be at least 1".into()));
        }
        let log_aux_weight = (self.alpha / m_aux as f64).ln();
        let mut counts = self.counts();
        let mut aux = vec![0.0; m_aux];
        let mut logw: Vec<f64> = Vec::new();

        for i in 0..self.n_subjects() {
            let c = self.assignments[i];
            counts[c] -= 1;
            if counts[c] == 0 {
                // A singleton's own atom becomes the first auxiliary.
                aux[0] = self.cluster_means[c];
                for a in aux.iter_mut().skip(1) {
                    *a = self.draw_base(rng);
                }
                self.remove_cluster(c, &mut counts);
            } else {
                for a in aux.iter_mut() {
                    *a = self.draw_base(rng);
                }
            }

            let k = self.n_clusters();
            logw.clear();
            logw.extend((0..k).map(|j| (counts[j] as f64).ln() + log_kernel(i, self.cluster_means[j])));
            logw.extend(aux.iter().map(|&mu| log_aux_weight + log_kernel(i, mu)));
            let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Numeric(format!("no finite label weight for subject {}", i + 1)));
            }
            let total: f64 = logw.iter().map(|w| (w - max).exp()).sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = logw.len() - 1;
            for (j, w) in logw.iter().enumerate() {
                u -= (w - max).exp();
                if u <= 0.0 {
                    pick = j;
                    break;
                }
            }

            if pick < k {
                self.assignments[i] = pick;
                counts[pick] += 1;
            } else {
                self.cluster_means.push(aux[pick - k]);
                counts.push(1);
                self.assignments[i] = k;
            }
        }
        Ok(())
    }

    /// Conjugate normal draw of every occupied cluster mean.
    pub fn update_cluster_means<R: Rng + ?Sized>(&mut self, beta0_s: &[f64], rng: &mut R) -> Result<()> {
        if beta0_s.len() != self.n_subjects() {
            return Err(Error::Contract("intercept vector length mismatch".into()));
        }
        let k = self.n_clusters();
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&c, &x) in self.assignments.iter().zip(beta0_s) {
            sums[c] += x;
            counts[c] += 1;
        }
        let h = self.hyper;
        for c in 0..k {
            let (mean, var) = cluster_mean_posterior(sums[c], counts[c], &h);
            let z: f64 = StandardNormal.sample(rng);
            self.cluster_means[c] = mean + var.sqrt() * z;
        }
        Ok(())
    }

    /// Slice-sample each cluster mean with its members' residuals held fixed,
    /// moving the whole cluster's intercepts along with it.
    pub fn shift_cluster_means<R: Rng + ?Sized>(
        &mut self,
        beta0_s: &mut [f64],
        lik: &[FrailtyLik],
        rng: &mut R,
    ) -> Result<()> {
        self.check_len(beta0_s.len())?;
        self.check_len(lik.len())?;
        let k = self.n_clusters();
        // Given the residuals r, cluster c's log-density in μ is
        // base(μ) + D μ − S e^μ with D = Σ δᵢ and S = Σ e^{rᵢ} Aᵢ.
        let mut d = vec![0.0; k];
        let mut sum_s = vec![0.0; k];
        let resid: Vec<f64> = (0..beta0_s.len()).map(|i| beta0_s[i] - self.mean_of(i)).collect();
        for (i, &c) in self.assignments.iter().enumerate() {
            d[c] += lik[i].delta;
            sum_s[c] += resid[i].exp() * lik[i].exposure;
        }
        let h = self.hyper;
        for c in 0..k {
            let f = |mu: f64| log_normal_kernel(mu, h.base_mean, h.base_var) + d[c] * mu - sum_s[c] * mu.exp();
            self.cluster_means[c] = slice_sample(self.cluster_means[c], f, 1.0, rng)?;
        }
        for (i, b) in beta0_s.iter_mut().enumerate() {
            *b = resid[i] + self.mean_of(i);
        }
        Ok(())
    }

    /// Escobar–West auxiliary-variable update of the concentration.
    pub fn update_alpha<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        if self.hyper.fix_alpha {
            return Ok(());
        }
        let n = self.n_subjects();
        let k = self.n_clusters();
        if k == 0 {
            return Err(Error::Contract("alpha update needs at least one cluster".into()));
        }
        self.alpha = sample_alpha(self.alpha, n, k, self.hyper.alpha_shape, self.hyper.alpha_rate, rng)?;
        Ok(())
    }
}

/// Posterior mean and variance of a cluster mean given `count` members summing to `sum`.
pub fn cluster_mean_posterior(sum: f64, count: usize, h: &FrailtyHyper) -> (f64, f64) {
    let precision = 1.0 / h.base_var + count as f64 / h.var_within;
    let var = 1.0 / precision;
    (var * (h.base_mean / h.base_var + sum / h.var_within), var)
}

/// Draw α from its full conditional given `k` clusters among `n` subjects.
pub fn sample_alpha<R: Rng + ?Sized>(
    alpha: f64,
    n: usize,
    k: usize,
    shape: f64,
    rate: f64,
    rng: &mut R,
) -> Result<f64> {
    let eta = Beta::new(alpha + 1.0, n as f64)
        .map_err(|e| Error::Numeric(format!("beta draw for alpha update: {e}")))?
        .sample(rng)
        .max(f64::MIN_POSITIVE);
    let post_rate = rate - eta.ln();
    let a = shape + k as f64 - 1.0;
    let odds = a / (n as f64 * post_rate);
    let post_shape = if a <= 0.0 || rng.random::<f64>() < odds / (1.0 + odds) {
        shape + k as f64
    } else {
        a
    };
    let draw = Gamma::new(post_shape, 1.0 / post_rate)
        .map_err(|e| Error::Numeric(format!("gamma draw for alpha update: {e}")))?
        .sample(rng);
    Ok(draw.max(f64::MIN_POSITIVE))
}

/// One univariate slice-sampling update with stepping out and shrinkage.
pub fn slice_sample<R: Rng + ?Sized>(x0: f64, log_f: impl Fn(f64) -> f64, width: f64, rng: &mut R) -> Result<f64> {
    const MAX_STEPS: usize = 50;
    let f0 = log_f(x0);
    if !f0.is_finite() {
        return Err(Error::Numeric(format!("slice sampler started at a point of zero density ({x0})")));
    }
    let level = f0 + rng.random::<f64>().max(f64::MIN_POSITIVE).ln();
    let mut lo = x0 - width * rng.random::<f64>();
    let mut hi = lo + width;
    let j = (MAX_STEPS as f64 * rng.random::<f64>()) as usize;
    let mut left = j;
    let mut right = MAX_STEPS - 1 - j;
    while left > 0 && log_f(lo) > level {
        lo -= width;
        left -= 1;
    }
    while right > 0 && log_f(hi) > level {
        hi += width;
        right -= 1;
    }
    loop {
        let x = lo + (hi - lo) * rng.random::<f64>();
        if log_f(x) > level {
            return Ok(x);
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-12 * (1.0 + x0.abs()) {
            return Ok(x0);
        }
    }
}

/// Draw a partition from the Chinese restaurant process.
pub fn crp_partition<R: Rng + ?Sized>(n: usize, alpha: f64, rng: &mut R) -> Vec<usize> {
    let mut labels = Vec::with_capacity(n);
    let mut counts: Vec<usize> = Vec::new();
    for i in 0..n {
        let mut u = rng.random::<f64>() * (i as f64 + alpha);
        let mut pick = counts.len();
        for (c, &cnt) in counts.iter().enumerate() {
            u -= cnt as f64;
            if u < 0.0 {
                pick = c;
                break;
            }
        }
        if pick == counts.len() {
            counts.push(0);
        }
        counts[pick] += 1;
        labels.push(pick);
    }
    labels
}
