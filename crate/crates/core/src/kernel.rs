//! Squared-exponential kernel and its precomputed spectral decomposition.
//!
//! The correlation matrix `K` of a subject depends only on the measurement
//! times and the fixed correlation-length parameter, so it is decomposed once
//! as `K = Q diag(λ) Qᵀ`. Every later evaluation of the marginal Gaussian
//! log-density with covariance `κ²K + σ²I` then reduces to O(l) work on the
//! eigenvalues plus one projection of the residual onto `Q`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues above this (negative) threshold are treated as solver noise.
pub const EIGEN_CLAMP: f64 = 1e-10;

fn check_times(times: &[f64]) -> Result<()> {
    if let Some(t) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::Domain(format!("non-finite measurement time {t}")));
    }
    Ok(())
}

/// Dense covariance matrix with entries `κ² exp(−ρ² (t_j − t_j')²)`.
pub fn sq_exp_kernel(times: &[f64], rho2: f64, kappa2: f64) -> Result<DMatrix<f64>> {
    check_times(times)?;
    if !(rho2 > 0.0) || !rho2.is_finite() {
        return Err(Error::Domain(format!("rho2 must be positive, got {rho2}")));
    }
    if !(kappa2 >= 0.0) || !kappa2.is_finite() {
        return Err(Error::Domain(format!(
            "kappa2 must be non-negative, got {kappa2}"
        )));
    }
    let l = times.len();
    Ok(DMatrix::from_fn(l, l, |j, k| {
        let d = times[j] - times[k];
        kappa2 * (-rho2 * d * d).exp()
    }))
}

/// Correlation `exp(−ρ²(t − s)²)` between two time points.
#[inline]
pub fn sq_exp_corr(t: f64, s: f64, rho2: f64) -> f64 {
    let d = t - s;
    (-rho2 * d * d).exp()
}

/// Per-subject correlation matrix together with its eigen-decomposition.
///
/// Immutable once built; safe to share across threads.
#[derive(Debug, Clone)]
pub struct KernelCache {
    times: Vec<f64>,
    corr: DMatrix<f64>,
    /// Descending, clamped at zero.
    eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector for `eigenvalues[k]`.
    eigenvectors: DMatrix<f64>,
    rho2: f64,
}

impl KernelCache {
    pub fn build(times: &[f64], rho2: f64) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Contract(
                "kernel cache needs at least one measurement time".into(),
            ));
        }
        let corr = sq_exp_kernel(times, rho2, 1.0)?;
        let eig = SymmetricEigen::try_new(corr.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;

        let l = times.len();
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut eigenvalues = Vec::with_capacity(l);
        let mut eigenvectors = DMatrix::zeros(l, l);
        for (dst, &src) in order.iter().enumerate() {
            let mut lambda = eig.eigenvalues[src];
            if lambda < 0.0 {
                if lambda < -EIGEN_CLAMP {
                    return Err(Error::Numeric(format!(
                        "correlation matrix has eigenvalue {lambda:e} below -{EIGEN_CLAMP:e}"
                    )));
                }
                lambda = 0.0;
            }
            eigenvalues.push(lambda);
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }

        Ok(Self {
            times: times.to_vec(),
            corr,
            eigenvalues,
            eigenvectors,
            rho2,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    pub fn corr_matrix(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// `Qᵀ v`: coordinates of `v` in the eigenbasis.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.len() {
            return Err(Error::Contract(format!(
                "vector of length {} does not match kernel of size {}",
                v.len(),
                self.len()
            )));
        }
        let v = DVector::from_column_slice(v);
        Ok((self.eigenvectors.tr_mul(&v)).as_slice().to_vec())
    }

    /// Correlations between `t` and every measurement time.
    pub fn cross_corr(&self, t: f64) -> Vec<f64> {
        self.times
            .iter()
            .map(|&s| sq_exp_corr(t, s, self.rho2))
            .collect()
    }

    /// Time derivative of [`cross_corr`](Self::cross_corr) with respect to `t`.
    pub fn cross_corr_deriv(&self, t: f64) -> Vec<f64> {
        self.times
            .iter()
            .map(|&s| -2.0 * self.rho2 * (t - s) * sq_exp_corr(t, s, self.rho2))
            .collect()
    }

    /// Diagonal `κ²λ_k + σ²` of the covariance in the eigenbasis.
    pub fn spectral_diag(&self, kappa2: f64, sigma2: f64) -> Result<Vec<f64>> {
        check_variances(kappa2, sigma2)?;
        self.eigenvalues
            .iter()
            .map(|&lambda| {
                let d = kappa2 * lambda + sigma2;
                if d > 0.0 {
                    Ok(d)
                } else {
                    Err(Error::Numeric(format!(
                        "non-positive spectral variance {d:e}"
                    )))
                }
            })
            .collect()
    }

    /// `log|κ²K + σ²I| = Σ_k log(κ²λ_k + σ²)`.
    pub fn marg_logdet(&self, kappa2: f64, sigma2: f64) -> Result<f64> {
        Ok(self
            .spectral_diag(kappa2, sigma2)?
            .iter()
            .map(|d| d.ln())
            .sum())
    }

    /// `rᵀ(κ²K + σ²I)⁻¹r`, evaluated in the eigenbasis.
    pub fn marg_quadform(&self, residual: &[f64], kappa2: f64, sigma2: f64) -> Result<f64> {
        let proj = self.project(residual)?;
        let diag = self.spectral_diag(kappa2, sigma2)?;
        Ok(proj.iter().zip(&diag).map(|(s, d)| s * s / d).sum())
    }
}

fn check_variances(kappa2: f64, sigma2: f64) -> Result<()> {
    if !(kappa2 >= 0.0) || !kappa2.is_finite() {
        return Err(Error::Domain(format!(
            "kappa2 must be non-negative, got {kappa2}"
        )));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("sigma2 must be positive, got {sigma2}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dense_oracle(times: &[f64], rho2: f64, kappa2: f64, sigma2: f64, r: &[f64]) -> (f64, f64) {
        let l = times.len();
        let cov = sq_exp_kernel(times, rho2, kappa2).unwrap() + DMatrix::identity(l, l) * sigma2;
        let chol = cov.cholesky().expect("covariance is SPD");
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let rv = DVector::from_column_slice(r);
        let sol = chol.solve(&rv);
        (logdet, rv.dot(&sol))
    }

    #[test]
    fn single_point_kernel_is_kappa2() {
        let k = sq_exp_kernel(&[0.0], 0.1, 0.01).unwrap();
        assert_eq!(k[(0, 0)], 0.01);
    }

    #[test]
    fn two_point_off_diagonal() {
        let k = sq_exp_kernel(&[0.0, 1.0], 0.1, 0.5).unwrap();
        assert!((k[(0, 1)] - 0.452_418_709).abs() < 1e-8);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
        assert_eq!(k[(1, 1)], 0.5);
    }

    #[test]
    fn zero_kappa_gives_zero_matrix() {
        let k = sq_exp_kernel(&[0.0, 2.0, 3.5], 0.1, 0.0).unwrap();
        assert!(k.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            sq_exp_kernel(&[0.0, f64::NAN], 0.1, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            sq_exp_kernel(&[0.0], 0.1, -1.0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(KernelCache::build(&[], 0.1), Err(Error::Contract(_))));
    }

    #[test]
    fn single_point_cache() {
        let c = KernelCache::build(&[3.0], 0.7).unwrap();
        assert_eq!(c.eigenvalues(), &[1.0]);
        assert_eq!(c.eigenvectors()[(0, 0)].abs(), 1.0);
    }

    #[test]
    fn two_point_eigenvalues_closed_form() {
        let c = KernelCache::build(&[0.0, 1.0], 0.1).unwrap();
        let a = (-0.1f64).exp();
        assert!((c.eigenvalues()[0] - (1.0 + a)).abs() < 1e-12);
        assert!((c.eigenvalues()[1] - (1.0 - a)).abs() < 1e-12);
        assert!((c.eigenvalues()[0] - 1.904_837).abs() < 1e-6);
        assert!((c.eigenvalues()[1] - 0.095_163).abs() < 1e-6);
    }

    #[test]
    fn reconstruction_on_uniform_grid() {
        let times: Vec<f64> = (0..10).map(|j| 11.0 * j as f64 / 9.0).collect();
        let c = KernelCache::build(&times, 0.1).unwrap();
        let q = c.eigenvectors();
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(c.eigenvalues()));
        let rebuilt = q * lam * q.transpose();
        let err = (&rebuilt - c.corr_matrix()).norm() / c.corr_matrix().norm();
        assert!(err < 1e-10, "relative reconstruction error {err:e}");
        let orth = (q.transpose() * q - DMatrix::identity(10, 10)).norm();
        assert!(orth < 1e-12);
    }

    #[test]
    fn logdet_two_by_two() {
        let c = KernelCache::build(&[0.0, 1.0], 0.1).unwrap();
        let expected = (2.25 - (-0.2f64).exp()).ln();
        let got = c.marg_logdet(1.0, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!((got - 0.358_561).abs() < 1e-6);
    }

    #[test]
    fn zero_kappa_logdet_and_quadform() {
        let c = KernelCache::build(&[0.0, 1.0, 4.0], 0.1).unwrap();
        assert!((c.marg_logdet(0.0, 0.3).unwrap() - 3.0 * 0.3f64.ln()).abs() < 1e-12);
        let r = [1.0, -2.0, 0.5];
        let q = c.marg_quadform(&r, 0.0, 0.3).unwrap();
        assert!((q - 5.25 / 0.3).abs() < 1e-10);
        assert_eq!(c.marg_quadform(&[0.0; 3], 1.0, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn quadform_dimension_mismatch() {
        let c = KernelCache::build(&[0.0, 1.0], 0.1).unwrap();
        assert!(matches!(
            c.marg_quadform(&[1.0], 1.0, 1.0),
            Err(Error::Contract(_))
        ));
        assert!(matches!(c.marg_logdet(1.0, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn duplicate_times_are_allowed() {
        let c = KernelCache::build(&[1.0, 1.0, 2.0], 0.1).unwrap();
        assert!(c.eigenvalues().iter().all(|&v| v >= 0.0));
        assert!(c.marg_logdet(1.0, 0.1).unwrap().is_finite());
    }

    #[test]
    fn build_is_deterministic() {
        let times = [0.0, 0.7, 2.2, 5.0, 5.1, 9.3];
        let a = KernelCache::build(&times, 0.1).unwrap();
        let b = KernelCache::build(&times, 0.1).unwrap();
        let bits = |c: &KernelCache| c.eigenvalues().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    fn case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
        (1usize..=12).prop_flat_map(|l| {
            (
                prop::collection::vec(0.0f64..11.0, l),
                prop::collection::vec(-3.0f64..3.0, l),
                0.0f64..3.0,
                0.01f64..2.0,
            )
        })
    }

    proptest! {
        #[test]
        fn spectral_matches_dense((times, r, kappa2, sigma2) in case()) {
            let c = KernelCache::build(&times, 0.1).unwrap();
            let (ld, qf) = dense_oracle(&times, 0.1, kappa2, sigma2, &r);
            let ld2 = c.marg_logdet(kappa2, sigma2).unwrap();
            let qf2 = c.marg_quadform(&r, kappa2, sigma2).unwrap();
            prop_assert!((ld - ld2).abs() <= 1e-8 * ld.abs().max(1.0));
            prop_assert!((qf - qf2).abs() <= 1e-8 * qf.abs().max(1e-300));
            prop_assert!(qf2 >= 0.0);
        }

        #[test]
        fn quadform_scaling((times, r, kappa2, sigma2) in case(), c in 0.1f64..10.0) {
            let cache = KernelCache::build(&times, 0.1).unwrap();
            let base = cache.marg_quadform(&r, kappa2, sigma2).unwrap();
            let scaled = cache.marg_quadform(&r, c * kappa2, c * sigma2).unwrap();
            prop_assert!((scaled - base / c).abs() <= 1e-9 * (base / c).max(1e-12));
        }
    }
}
