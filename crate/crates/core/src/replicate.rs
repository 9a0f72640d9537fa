//! Simulation-study replication: generate datasets, fit the joint model and
//! its comparators, and aggregate coefficient estimates.

use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{CoxFit, CoxProblem};
use crate::data::Dataset;
use crate::engine::{fit, quantile_sorted, FitConfig, PosteriorDraws};
use crate::error::{Error, Result};
use crate::frailty::FrailtyHyper;
use crate::hmc::HmcConfig;
use crate::kernel::KernelCache;
use crate::longitudinal::{AucScheme, LongitudinalParams};
use crate::model::{Components, ModelSpec, Priors, TrajectoryKind, Variant};
use crate::sim::{simulate_dataset, trajectory_exposures, SimConfig, TrueTrajectory};

/// Normal quantile for two-sided 95% Wald intervals.
const Z975: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableId {
    T1,
    T2,
    T3,
    T4,
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1" | "1" => Ok(Self::T1),
            "T2" | "2" => Ok(Self::T2),
            "T3" | "3" => Ok(Self::T3),
            "T4" | "4" => Ok(Self::T4),
            _ => Err(Error::Domain(format!("unknown table {s:?}; expected T1, T2, T3 or T4"))),
        }
    }
}

impl fmt::Display for TableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// 20 datasets of 150 subjects, 2,000 iterations.
    Desk,
    /// 200 datasets of 300 subjects, 10,000 iterations.
    Paper,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "paper" => Ok(Self::Paper),
            _ => Err(Error::Domain(format!("unknown scale {s:?}; expected desk or paper"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// GP longitudinal fit, then a Cox model on the plug-in summaries.
    TwoStage,
    /// Joint model with a quadratic-polynomial trajectory.
    JointPoly,
    Joint,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::TwoStage => "two_stage",
            Self::JointPoly => "joint_poly",
            Self::Joint => "joint",
        }
    }
}

/// Which stage-one posterior summary the two-stage comparator plugs in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlugIn {
    #[default]
    Median,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub label: String,
    /// Column of the joint-model draws holding this coefficient.
    pub column: String,
    pub truth: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub sim: SimConfig,
    pub methods: Vec<Method>,
    pub coefficients: Vec<Coefficient>,
}

#[derive(Debug, Clone)]
pub struct ReplicateOptions {
    pub table: TableId,
    pub scale: Scale,
    pub seed: u64,
    pub n_datasets: Option<usize>,
    pub n_subjects: Option<usize>,
    pub mcmc: Option<HmcConfig>,
    pub plug_in: PlugIn,
    pub priors: Priors,
    pub frailty: FrailtyHyper,
}

impl ReplicateOptions {
    pub fn new(table: TableId, scale: Scale, seed: u64) -> Self {
        Self {
            table,
            scale,
            seed,
            n_datasets: None,
            n_subjects: None,
            mcmc: None,
            plug_in: PlugIn::Median,
            priors: Priors::default(),
            frailty: FrailtyHyper::default(),
        }
    }

    pub fn n_datasets(&self) -> usize {
        self.n_datasets.unwrap_or(match (self.scale, self.table) {
            (Scale::Desk, TableId::T4) => 10,
            (Scale::Desk, _) => 20,
            (Scale::Paper, _) => 200,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects.unwrap_or(match self.scale {
            Scale::Desk => 150,
            Scale::Paper => 300,
        })
    }

    pub fn mcmc(&self) -> HmcConfig {
        self.mcmc.clone().unwrap_or_else(|| match self.scale {
            Scale::Desk => HmcConfig::desk(),
            Scale::Paper => HmcConfig::paper(),
        })
    }
}

fn coefficients(sim: &SimConfig) -> Vec<Coefficient> {
    let zeta = sim.zeta_l();
    let coef = |label: &str, column: &str, truth: f64| Coefficient {
        label: label.into(),
        column: column.into(),
        truth,
    };
    match sim.variant {
        Variant::I => vec![coef("value", "zeta_l[value]", zeta[0])],
        Variant::II => vec![
            coef("value", "zeta_l[value]", zeta[0]),
            coef("auc", "zeta_l[auc]", zeta[1]),
        ],
        Variant::III => {
            let mut out = Vec::new();
            if let Some(a) = sim.age_coef() {
                out.push(coef("age", "zeta_s[age]", a));
            }
            out.push(coef("beta0_l", "zeta_l[beta0_l]", zeta[0]));
            out.push(coef("kappa2", "zeta_l[kappa2]", zeta[1]));
            out
        }
    }
}

/// Simulation scenarios making up one table.
pub fn scenarios(opts: &ReplicateOptions) -> Vec<Scenario> {
    let base = SimConfig {
        n_subjects: opts.n_subjects(),
        n_datasets: opts.n_datasets(),
        seed: opts.seed,
        ..SimConfig::default()
    };
    let make = |name: &str, sim: SimConfig, methods: Vec<Method>| Scenario {
        name: name.into(),
        coefficients: coefficients(&sim),
        sim,
        methods,
    };
    let all = vec![Method::TwoStage, Method::JointPoly, Method::Joint];
    let pair = vec![Method::TwoStage, Method::Joint];
    match opts.table {
        TableId::T1 => {
            let model1 = SimConfig {
                variant: Variant::I,
                ..base
            };
            vec![
                make(
                    "scenario1",
                    SimConfig {
                        trajectory: TrajectoryKind::Quadratic,
                        ..model1.clone()
                    },
                    all.clone(),
                ),
                make("scenario2", model1, all),
            ]
        }
        TableId::T2 => [AucScheme::Uniform, AucScheme::Pointwise]
            .into_iter()
            .map(|scheme| {
                let name = match scheme {
                    AucScheme::Uniform => "uniform",
                    AucScheme::Pointwise => "pointwise",
                };
                let sim = SimConfig {
                    variant: Variant::II,
                    auc_scheme: scheme,
                    ..base.clone()
                };
                make(name, sim, pair.clone())
            })
            .collect(),
        TableId::T3 => vec![make("model3", base, pair)],
        TableId::T4 => [12, 36, 72]
            .into_iter()
            .map(|l| {
                let sim = SimConfig {
                    min_measurements: l,
                    max_measurements: l,
                    ..base.clone()
                };
                make(&format!("l{l}"), sim, vec![Method::Joint])
            })
            .collect(),
    }
}

/// One coefficient estimate from one fitted dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub table: String,
    pub scenario: String,
    pub method: String,
    pub dataset: usize,
    pub coefficient: String,
    pub truth: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
    /// Cox fits that did not converge or hit a monotone likelihood.
    pub flagged: bool,
    pub censoring_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub table: String,
    pub scenario: String,
    pub method: String,
    pub coefficient: String,
    pub truth: f64,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub mse: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableResult {
    pub replicates: Vec<ReplicateRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl TableResult {
    pub fn find(&self, scenario: &str, method: Method, coefficient: &str) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|r| r.scenario == scenario && r.method == method.name() && r.coefficient == coefficient)
    }

    pub fn replicates_csv(&self) -> Result<String> {
        to_csv(&self.replicates)
    }

    pub fn aggregate_csv(&self) -> Result<String> {
        to_csv(&self.aggregate)
    }
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Numeric(format!("csv encoding: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Numeric(format!("csv encoding: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Numeric(e.to_string()))
}

/// Independent 64-bit seed for a (scenario, dataset, purpose) triple.
fn derived_seed(seed: u64, scenario: usize, dataset: usize, purpose: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((scenario as u64) << 40) | ((dataset as u64) << 8) | purpose);
    rng.next_u64()
}

struct Estimate {
    estimate: f64,
    std_error: f64,
    ci: (f64, f64),
    flagged: bool,
}

fn posterior_estimate(draws: &PosteriorDraws, column: &str) -> Result<Estimate> {
    let mut v = draws
        .column(column)
        .ok_or_else(|| Error::Contract(format!("draws have no column {column}")))?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    v.sort_by(f64::total_cmp);
    Ok(Estimate {
        estimate: mean,
        std_error: sd,
        ci: (quantile_sorted(&v, 0.025), quantile_sorted(&v, 0.975)),
        flagged: false,
    })
}

fn cox_estimates(fit: &CoxFit) -> Vec<Estimate> {
    fit.coef
        .iter()
        .zip(&fit.se)
        .map(|(&b, &se)| Estimate {
            estimate: b,
            std_error: se,
            ci: (b - Z975 * se, b + Z975 * se),
            flagged: fit.flagged(),
        })
        .collect()
}

/// Stage-one longitudinal fit summarised per subject as `(β₀, κ², σ²)`.
pub fn stage_one(data: &Dataset, mcmc: &HmcConfig, priors: &Priors, plug_in: PlugIn) -> Result<Vec<LongitudinalParams>> {
    let cfg = FitConfig {
        model: ModelSpec {
            trajectory: TrajectoryKind::Gp,
            covariates: Vec::new(),
            ..ModelSpec::default()
        },
        priors: priors.clone(),
        frailty: FrailtyHyper::default(),
        mcmc: mcmc.clone(),
    };
    let draws = fit(data, &cfg, Components::LongitudinalOnly)?;
    let point = |name: String| -> Result<f64> {
        let mut v = draws
            .column(&name)
            .ok_or_else(|| Error::Contract(format!("stage-one draws have no column {name}")))?;
        Ok(match plug_in {
            PlugIn::Mean => v.iter().sum::<f64>() / v.len() as f64,
            PlugIn::Median => {
                v.sort_by(f64::total_cmp);
                quantile_sorted(&v, 0.5)
            }
        })
    };
    let sigma2 = point("sigma2".into())?;
    data.subjects
        .iter()
        .map(|s| {
            Ok(LongitudinalParams {
                beta0: point(format!("beta0_l[{}]", s.id))?,
                kappa2: point(format!("kappa2[{}]", s.id))?,
                sigma2,
                rho2: cfg.model.rho2,
            })
        })
        .collect()
}

/// Second stage: Cox regression on the plug-in trajectory summaries.
pub fn two_stage_cox(data: &Dataset, plug: &[LongitudinalParams], sim: &SimConfig) -> Result<CoxFit> {
    let y: Vec<f64> = data.subjects.iter().map(|s| s.survival.y).collect();
    let delta: Vec<bool> = data.subjects.iter().map(|s| s.survival.delta).collect();
    let problem = match sim.variant {
        Variant::III => {
            let rows: Vec<Vec<f64>> = data
                .subjects
                .iter()
                .zip(plug)
                .map(|(s, p)| {
                    let mut z = s.survival.z_baseline.clone();
                    z.extend([p.beta0, p.kappa2]);
                    z
                })
                .collect();
            CoxProblem::from_rows(&y, &delta, &rows)?
        }
        variant => {
            let trajectories = data
                .subjects
                .iter()
                .zip(plug)
                .map(|(s, p)| {
                    Ok(TrueTrajectory::Gp {
                        cache: KernelCache::build(&s.times, p.rho2)?,
                        process: s.values.clone(),
                        params: *p,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let predictors: Vec<_> = trajectories.iter().map(TrueTrajectory::predictor).collect();
            let units: &[&[f64]] = match variant {
                Variant::I => &[&[1.0]],
                _ => &[&[1.0, 0.0], &[0.0, 1.0]],
            };
            CoxProblem::new(&y, &delta, units.len(), |i, t| {
                units
                    .iter()
                    .map(|u| {
                        trajectory_exposures(
                            &trajectories[i],
                            predictors[i].as_ref(),
                            variant,
                            sim.auc_scheme,
                            sim.auc_trailing_months,
                            u,
                            t,
                        )
                    })
                    .collect()
            })?
        }
    };
    Ok(problem.fit())
}

fn joint_config(sim: &SimConfig, trajectory: TrajectoryKind, opts: &ReplicateOptions, seed: u64) -> FitConfig {
    let covariates = if sim.age_coef().is_some() { vec!["age".to_string()] } else { Vec::new() };
    FitConfig {
        model: ModelSpec {
            variant: sim.variant,
            trajectory,
            auc_scheme: sim.auc_scheme,
            auc_trailing_months: sim.auc_trailing_months,
            covariates,
            rho2: sim.rho2,
            ..ModelSpec::default()
        },
        priors: opts.priors.clone(),
        frailty: opts.frailty,
        mcmc: HmcConfig { seed, ..opts.mcmc() },
    }
}

fn run_dataset(opts: &ReplicateOptions, s_idx: usize, scenario: &Scenario, dataset: usize) -> Result<Vec<ReplicateRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(opts.seed, s_idx, dataset, 0));
    let sim = simulate_dataset(&scenario.sim, &mut rng)?;
    let censoring_rate = sim.data.censoring_rate();
    let mut rows = Vec::new();
    for (m_idx, &method) in scenario.methods.iter().enumerate() {
        let seed = derived_seed(opts.seed, s_idx, dataset, 1 + m_idx as u64);
        let estimates = match method {
            Method::TwoStage => {
                let mcmc = HmcConfig { seed, ..opts.mcmc() };
                let plug = stage_one(&sim.data, &mcmc, &opts.priors, opts.plug_in)?;
                cox_estimates(&two_stage_cox(&sim.data, &plug, &scenario.sim)?)
            }
            Method::JointPoly | Method::Joint => {
                let trajectory = if method == Method::JointPoly {
                    TrajectoryKind::Quadratic
                } else {
                    TrajectoryKind::Gp
                };
                let draws = fit(&sim.data, &joint_config(&scenario.sim, trajectory, opts, seed), Components::Joint)?;
                scenario
                    .coefficients
                    .iter()
                    .map(|c| posterior_estimate(&draws, &c.column))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        for (c, e) in scenario.coefficients.iter().zip(estimates) {
            rows.push(ReplicateRow {
                table: opts.table.to_string(),
                scenario: scenario.name.clone(),
                method: method.name().into(),
                dataset,
                coefficient: c.label.clone(),
                truth: c.truth,
                estimate: e.estimate,
                std_error: e.std_error,
                ci_low: e.ci.0,
                ci_high: e.ci.1,
                covered: e.ci.0 <= c.truth && c.truth <= e.ci.1,
                flagged: e.flagged,
                censoring_rate,
            });
        }
    }
    Ok(rows)
}

/// Per-(scenario, method, coefficient) Mean, SD and MSE against the truth.
pub fn aggregate(rows: &[ReplicateRow]) -> Vec<AggregateRow> {
    let mut out: Vec<AggregateRow> = Vec::new();
    let mut keys: Vec<(&str, &str, &str)> = Vec::new();
    for r in rows {
        let key = (r.scenario.as_str(), r.method.as_str(), r.coefficient.as_str());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (scenario, method, coefficient) in keys {
        let group: Vec<&ReplicateRow> = rows
            .iter()
            .filter(|r| r.scenario == scenario && r.method == method && r.coefficient == coefficient)
            .collect();
        let n = group.len();
        let truth = group[0].truth;
        let mean = group.iter().map(|r| r.estimate).sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (group.iter().map(|r| (r.estimate - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mse = group.iter().map(|r| (r.estimate - truth).powi(2)).sum::<f64>() / n as f64;
        let coverage = group.iter().filter(|r| r.covered).count() as f64 / n as f64;
        out.push(AggregateRow {
            table: group[0].table.clone(),
            scenario: scenario.into(),
            method: method.into(),
            coefficient: coefficient.into(),
            truth,
            n,
            mean,
            sd,
            mse,
            coverage,
        });
    }
    out
}

/// Run every (scenario, dataset) replicate in parallel on the current rayon
/// pool. Results do not depend on the pool size.
pub fn replicate_table(opts: &ReplicateOptions) -> Result<TableResult> {
    let scenarios = scenarios(opts);
    let tasks: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..opts.n_datasets()).map(move |d| (s, d)))
        .collect();
    let per_task: Vec<Vec<ReplicateRow>> = tasks
        .par_iter()
        .map(|&(s, d)| run_dataset(opts, s, &scenarios[s], d))
        .collect::<Result<_>>()?;
    let replicates: Vec<ReplicateRow> = per_task.into_iter().flatten().collect();
    let aggregate = aggregate(&replicates);
    Ok(TableResult { replicates, aggregate })
}
