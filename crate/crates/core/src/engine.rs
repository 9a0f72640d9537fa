//! Hybrid sampler: Neal-8 Gibbs updates of the frailty clustering followed by
//! one HMC transition of the continuous block, every iteration. By default the
//! frailty block also runs non-centred label and cluster-shift moves, which
//! let the survival data split and move clusters directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::frailty::{FrailtyHyper, FrailtyState};
use crate::hmc::{find_reasonable_step, grad_check, hmc_step, jittered, Adaptation, ChainPoint, HmcConfig};
use crate::model::{Components, JointPosterior, ModelSpec, Priors};

/// Finite-difference step of the start-up gradient check.
pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// Everything needed to fit one dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub model: ModelSpec,
    pub priors: Priors,
    pub frailty: FrailtyHyper,
    pub mcmc: HmcConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainStats {
    /// Fraction of accepted post-burn-in transitions.
    pub accept_rate: f64,
    pub mean_accept_prob: f64,
    pub divergent_warmup: usize,
    pub divergent_sampling: usize,
    pub step_size: f64,
    pub grad_check_error: f64,
}

/// Post-burn-in draws on the natural parameter scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub log_posterior: Vec<f64>,
    pub stats: ChainStats,
    pub config: HmcConfig,
}

impl PosteriorDraws {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// One row per draw, parameter columns then `log_posterior`.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out += ",log_posterior\n";
        for (row, lp) in self.rows.iter().zip(&self.log_posterior) {
            for v in row {
                out += &format!("{v},");
            }
            out += &format!("{lp}\n");
        }
        out
    }

    /// Parse the output of [`to_csv`](Self::to_csv). Chain statistics are not
    /// stored in the file and come back zeroed.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = rdr
            .headers()
            .map_err(|e| Error::Parse(format!("draws file: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        let lp_col = header.iter().position(|c| c == "log_posterior");
        let mut rows = Vec::new();
        let mut log_posterior = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(format!("draws file: {e}")))?;
            let mut row = Vec::with_capacity(header.len());
            for (k, field) in rec.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Parse(format!("draws file line {}, column {}: bad number {field:?}", i + 2, header[k])))?;
                if Some(k) == lp_col {
                    log_posterior.push(v);
                } else {
                    row.push(v);
                }
            }
            rows.push(row);
        }
        let columns = header
            .into_iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != lp_col)
            .map(|(_, c)| c)
            .collect();
        Ok(Self {
            columns,
            rows,
            log_posterior,
            stats: ChainStats {
                accept_rate: 0.0,
                mean_accept_prob: 0.0,
                divergent_warmup: 0,
                divergent_sampling: 0,
                step_size: 0.0,
                grad_check_error: 0.0,
            },
            config: HmcConfig::default(),
        })
    }
}

/// Run the hybrid sampler from the posterior's default starting point.
pub fn run_chain<R: Rng + ?Sized>(
    posterior: &mut JointPosterior,
    frailty: &FrailtyHyper,
    cfg: &HmcConfig,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    frailty.validate()?;
    let layout = posterior.layout().clone();
    if layout.n_subjects == 0 {
        return Err(Error::Contract("cannot sample a posterior with no subjects".into()));
    }
    let q0 = posterior.initial_point();
    let state = if posterior.has_survival() {
        let b0s = posterior.beta0_s(&q0);
        let mean = b0s.iter().sum::<f64>() / b0s.len() as f64;
        Some(FrailtyState::single_cluster(layout.n_subjects, mean, 1.0, *frailty))
    } else {
        None
    };
    run_chain_from(posterior, cfg, q0, state, rng)
}

/// Run the hybrid sampler from an explicit unconstrained point and frailty
/// state. `state` must be given exactly when the posterior has a survival part.
pub fn run_chain_from<R: Rng + ?Sized>(
    posterior: &mut JointPosterior,
    cfg: &HmcConfig,
    q0: Vec<f64>,
    mut state: Option<FrailtyState>,
    rng: &mut R,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let layout = posterior.layout().clone();
    let survival = posterior.has_survival();
    if q0.len() != layout.dim() {
        return Err(Error::Contract(format!(
            "starting point has {} coordinates, posterior has {}",
            q0.len(),
            layout.dim()
        )));
    }
    if survival != state.is_some() {
        return Err(Error::Contract("a frailty state is required exactly when survival is modelled".into()));
    }
    if let Some(fs) = &state {
        fs.check_invariants()?;
        if fs.n_subjects() != layout.n_subjects {
            return Err(Error::Contract("frailty state and posterior disagree on subject count".into()));
        }
        let means: Vec<f64> = (0..layout.n_subjects).map(|i| fs.mean_of(i)).collect();
        posterior.set_frailty_means(&means)?;
    }

    let check = grad_check(&*posterior, &q0, GRAD_CHECK_STEP)?;
    if check.max_rel_error > cfg.grad_check_tol {
        let name = posterior.coordinate_names()[check.worst_index].clone();
        return Err(Error::Numeric(format!(
            "analytic gradient disagrees with finite differences: relative error {:.3e} at {name} (analytic {}, numeric {})",
            check.max_rel_error, check.analytic[check.worst_index], check.numeric[check.worst_index]
        )));
    }

    let mut point = ChainPoint::new(&*posterior, q0);
    if !point.logp.is_finite() {
        return Err(Error::Numeric("log posterior is not finite at the starting point".into()));
    }
    let dim = layout.dim();
    let mut adapt = Adaptation::new(dim, cfg.step_size, cfg.target_accept, cfg.adapt_iters, cfg.adapt_mass);
    let eps = find_reasonable_step(&*posterior, &point, &adapt.inv_mass, cfg.step_size, rng);
    adapt.restart_step(eps);

    let mut columns = posterior.parameter_names();
    if survival {
        columns.push("alpha".into());
        columns.push("n_clusters".into());
    }
    let n_keep = cfg.total_iters - cfg.burn_in;
    let mut rows = Vec::with_capacity(n_keep);
    let mut log_posterior = Vec::with_capacity(n_keep);
    let mut accepted = 0usize;
    let mut accept_sum = 0.0;
    let mut divergent_warmup = 0usize;
    let mut divergent_sampling = 0usize;

    for it in 0..cfg.total_iters {
        if let Some(fs) = state.as_mut() {
            let mut b0s = posterior.beta0_s(&point.q);
            fs.neal8_sweep(&b0s, cfg.m_aux, rng)?;
            if cfg.noncentred_frailty {
                let lik = posterior.frailty_likelihoods(&point.q)?;
                fs.neal8_sweep_noncentred(&mut b0s, &lik, cfg.m_aux, rng)?;
                fs.update_cluster_means(&b0s, rng)?;
                fs.shift_cluster_means(&mut b0s, &lik, rng)?;
                posterior.set_beta0_s(&mut point.q, &b0s)?;
            } else {
                fs.update_cluster_means(&b0s, rng)?;
            }
            fs.update_alpha(rng)?;
            let means: Vec<f64> = (0..layout.n_subjects).map(|i| fs.mean_of(i)).collect();
            posterior.set_frailty_means(&means)?;
            point.refresh(&*posterior);
        }
        let step = jittered(adapt.step_size, rng);
        let inv_mass = adapt.inv_mass.clone();
        let info = hmc_step(&*posterior, &mut point, &inv_mass, step, cfg.n_leapfrog, rng);
        if it < cfg.burn_in {
            divergent_warmup += info.divergent as usize;
            if adapt.observe(&point.q, info.accept_prob) {
                let eps = find_reasonable_step(&*posterior, &point, &adapt.inv_mass, adapt.step_size, rng);
                adapt.restart_step(eps);
            }
            if it + 1 == cfg.burn_in && divergent_warmup == cfg.burn_in {
                return Err(Error::Numeric(format!(
                    "every one of {} warm-up transitions diverged (final step size {:.3e})",
                    cfg.burn_in, adapt.step_size
                )));
            }
            continue;
        }
        divergent_sampling += info.divergent as usize;
        accepted += info.accepted as usize;
        accept_sum += info.accept_prob;
        let mut row = posterior.to_natural(&point.q);
        if let Some(fs) = &state {
            row.push(fs.alpha);
            row.push(fs.n_clusters() as f64);
        }
        rows.push(row);
        log_posterior.push(point.logp);
    }

    Ok(PosteriorDraws {
        columns,
        rows,
        log_posterior,
        stats: ChainStats {
            accept_rate: accepted as f64 / n_keep as f64,
            mean_accept_prob: accept_sum / n_keep as f64,
            divergent_warmup,
            divergent_sampling,
            step_size: adapt.step_size,
            grad_check_error: check.max_rel_error,
        },
        config: cfg.clone(),
    })
}

/// Fit the joint model (or only its longitudinal part) with the configured seed.
pub fn fit(data: &Dataset, cfg: &FitConfig, components: Components) -> Result<PosteriorDraws> {
    let mut posterior = JointPosterior::new(data, &cfg.model, &cfg.priors, cfg.frailty.var_within, components)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mcmc.seed);
    run_chain(&mut posterior, &cfg.frailty, &cfg.mcmc, &mut rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Coef,
    /// `exp(−ζ)`: hazard ratio for a one-unit decrease.
    RelativeRiskPerDecrement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
}

/// Linear-interpolation quantile of sorted data (`(n−1)p` convention).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64], transform: Transform) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Contract("cannot summarize an empty set of draws".into()));
    }
    let mut v: Vec<f64> = match transform {
        Transform::Coef => values.to_vec(),
        Transform::RelativeRiskPerDecrement => values.iter().map(|z| (-z).exp()).collect(),
    };
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    v.sort_by(f64::total_cmp);
    Ok(Summary {
        mean,
        median: quantile_sorted(&v, 0.5),
        sd,
        q025: quantile_sorted(&v, 0.025),
        q975: quantile_sorted(&v, 0.975),
    })
}

/// Summary table as CSV. Coefficient columns (`zeta_*`) get an extra
/// relative-risk row when `relative_risk` is set.
pub fn summary_csv(draws: &PosteriorDraws, relative_risk: bool) -> Result<String> {
    let mut out = String::from("parameter,transform,mean,median,sd,q2.5,q97.5\n");
    for (k, name) in draws.columns.iter().enumerate() {
        let col: Vec<f64> = draws.rows.iter().map(|r| r[k]).collect();
        let mut transforms = vec![Transform::Coef];
        if relative_risk && name.starts_with("zeta_") {
            transforms.push(Transform::RelativeRiskPerDecrement);
        }
        for t in transforms {
            let s = summarize(&col, t)?;
            let label = match t {
                Transform::Coef => "coef",
                Transform::RelativeRiskPerDecrement => "rr_per_decrement",
            };
            out += &format!(
                "{name},{label},{},{},{},{},{}\n",
                s.mean, s.median, s.sd, s.q025, s.q975
            );
        }
    }
    Ok(out)
}
