//! Command-line front end: `simulate`, `fit`, `summarize`, `replicate`, `gradcheck`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::data::{read_to_string, write_string, Dataset};
use crate::engine::{fit, summary_csv, PosteriorDraws, GRAD_CHECK_STEP};
use crate::error::{Error, Result};
use crate::hmc::{grad_check, HmcConfig, LogDensity};
use crate::model::{Components, JointPosterior};
use crate::replicate::{replicate_table, PlugIn, ReplicateOptions, Scale, TableId};
use crate::sim::simulate_dataset;

/// Gradient checks pass below this relative error.
pub const GRAD_CHECK_PASS: f64 = 1e-5;

pub const GIT_REVISION: &str = match option_env!("GPJOINT_GIT_REVISION") {
    Some(r) => r,
    None => "unknown",
};

#[derive(Debug, Parser)]
#[command(name = "gpjoint", version, about = "Joint GP longitudinal / DP-Weibull survival models")]
pub struct Cli {
    /// Worker threads for replicate runs (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub longitudinal: Option<PathBuf>,
    #[arg(long)]
    pub survival: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScaleArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PlugInArg {
    Median,
    Mean,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one dataset from the `[sim]` block.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the joint model and write draws and a posterior summary.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Also report coefficients as relative risk per unit decrement.
        #[arg(long)]
        relative_risk: bool,
    },
    /// Summarise an existing draws file.
    Summarize {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        relative_risk: bool,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run one of the simulation-study tables.
    Replicate {
        #[command(flatten)]
        common: Common,
        /// T1, T2, T3 or T4.
        #[arg(long)]
        table: String,
        #[arg(long, value_enum, default_value = "desk")]
        scale: ScaleArg,
        #[arg(long)]
        datasets: Option<usize>,
        #[arg(long)]
        subjects: Option<usize>,
        /// Total MCMC iterations; half are burn-in.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_enum, default_value = "median")]
        plug_in: PlugInArg,
    },
    /// Compare analytic and finite-difference gradients of the posterior.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        /// Random points checked in addition to the starting point.
        #[arg(long, default_value_t = 3)]
        points: usize,
        #[arg(long, hide = true)]
        corrupt_gradient: bool,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    Ok(cfg.with_seed(common.seed))
}

fn out_dir(common: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = common
        .out_dir
        .clone()
        .or_else(|| cfg.io.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn load_data(data: &DataArgs, cfg: &RunConfig) -> Result<Dataset> {
    let pick = |flag: &Option<PathBuf>, io: &Option<PathBuf>, what: &str| {
        flag.clone()
            .or_else(|| io.clone())
            .ok_or_else(|| Error::Validation(format!("no {what} file given (--{what} or [io] {what})")))
    };
    let long = pick(&data.longitudinal, &cfg.io.longitudinal, "longitudinal")?;
    let surv = pick(&data.survival, &cfg.io.survival, "survival")?;
    Dataset::read_csv(&long, &surv)
}

fn write_manifest(dir: &Path, command: &str, cfg: &RunConfig, extra: Value) -> Result<()> {
    let mut manifest = json!({
        "command": command,
        "seed": cfg.seed.unwrap_or(cfg.mcmc.seed),
        "config_sha256": cfg.digest()?,
        "git_revision": GIT_REVISION,
        "version": env!("CARGO_PKG_VERSION"),
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut manifest, extra) {
        m.extend(e);
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Numeric(e.to_string()))?;
    write_string(&dir.join("manifest.json"), &(text + "\n"))
}

fn cmd_simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let dir = out_dir(common, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sim.seed);
    let sim = simulate_dataset(&cfg.sim, &mut rng)?;
    sim.data.write_csv(&dir.join("longitudinal.csv"), &dir.join("survival.csv"))?;
    let mut truth = String::from("subject_id,beta0_l,second,beta0_s,event_time\n");
    for (s, t) in sim.data.subjects.iter().zip(&sim.truth) {
        truth += &format!("{},{},{},{},{}\n", s.id, t.beta0_l, t.second, t.beta0_s, t.event_time);
    }
    write_string(&dir.join("truth.csv"), &truth)?;
    let rate = sim.data.censoring_rate();
    log::info!("simulated {} subjects, censoring rate {rate:.3}", sim.data.len());
    write_manifest(
        &dir,
        "simulate",
        &cfg,
        json!({
            "n_subjects": sim.data.len(),
            "censor_target": cfg.sim.censor_target,
            "achieved_censoring_rate": rate,
            "outputs": ["longitudinal.csv", "survival.csv", "truth.csv"],
        }),
    )
}

fn cmd_fit(common: &Common, data: &DataArgs, relative_risk: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let dataset = load_data(data, &cfg)?;
    let dir = out_dir(common, &cfg)?;
    let draws = fit(&dataset, &cfg.fit_config(), Components::Joint)?;
    write_string(&dir.join("draws.csv"), &draws.to_csv())?;
    let summary = summary_csv(&draws, relative_risk || cfg.io.relative_risk)?;
    write_string(&dir.join("summary.csv"), &summary)?;
    write_manifest(
        &dir,
        "fit",
        &cfg,
        json!({
            "n_subjects": dataset.len(),
            "censoring_rate": dataset.censoring_rate(),
            "chain": draws.stats,
            "outputs": ["draws.csv", "summary.csv"],
        }),
    )
}

fn cmd_summarize(draws: &Path, relative_risk: bool, out: Option<&Path>) -> Result<()> {
    let draws = PosteriorDraws::from_csv(&read_to_string(draws)?)?;
    let summary = summary_csv(&draws, relative_risk)?;
    match out {
        Some(p) => write_string(p, &summary),
        None => {
            print!("{summary}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_replicate(
    common: &Common,
    table: &str,
    scale: ScaleArg,
    datasets: Option<usize>,
    subjects: Option<usize>,
    iters: Option<usize>,
    plug_in: PlugInArg,
) -> Result<()> {
    let cfg = load_config(common)?;
    let table: TableId = table.parse()?;
    let scale = match scale {
        ScaleArg::Desk => Scale::Desk,
        ScaleArg::Paper => Scale::Paper,
    };
    let mut opts = ReplicateOptions::new(table, scale, cfg.seed.unwrap_or(cfg.sim.seed));
    opts.n_datasets = datasets;
    opts.n_subjects = subjects;
    opts.priors = cfg.priors.clone();
    opts.frailty = cfg.frailty;
    opts.plug_in = match plug_in {
        PlugInArg::Median => PlugIn::Median,
        PlugInArg::Mean => PlugIn::Mean,
    };
    if let Some(n) = iters {
        let half = n / 2;
        opts.mcmc = Some(HmcConfig {
            total_iters: n,
            burn_in: half,
            adapt_iters: half,
            ..opts.mcmc()
        });
        opts.mcmc().validate()?;
    }
    let dir = out_dir(common, &cfg)?;
    let result = replicate_table(&opts)?;
    let stem = table.to_string();
    write_string(&dir.join(format!("{stem}_replicates.csv")), &result.replicates_csv()?)?;
    write_string(&dir.join(format!("{stem}_table.csv")), &result.aggregate_csv()?)?;
    let rates: Vec<f64> = result.replicates.iter().map(|r| r.censoring_rate).collect();
    write_manifest(
        &dir,
        "replicate",
        &RunConfig {
            seed: Some(opts.seed),
            ..cfg
        },
        json!({
            "table": stem,
            "scale": format!("{scale:?}").to_lowercase(),
            "n_datasets": opts.n_datasets(),
            "n_subjects": opts.n_subjects(),
            "mcmc": opts.mcmc(),
            "censoring_rate_min": rates.iter().cloned().fold(f64::INFINITY, f64::min),
            "censoring_rate_max": rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            "outputs": [format!("{stem}_replicates.csv"), format!("{stem}_table.csv")],
        }),
    )
}

/// Returns the worst relative error; fails with a numeric error above
/// [`GRAD_CHECK_PASS`].
fn cmd_gradcheck(common: &Common, data: &DataArgs, points: usize, corrupt: bool) -> Result<f64> {
    let cfg = load_config(common)?;
    let dataset = load_data(data, &cfg)?;
    let mut posterior = JointPosterior::new(&dataset, &cfg.model, &cfg.priors, cfg.frailty.var_within, Components::Joint)?;
    posterior.set_corrupt_gradient(corrupt);
    let names = posterior.coordinate_names();
    let q0 = posterior.initial_point();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mcmc.seed);
    let mut candidates = vec![q0.clone()];
    for _ in 0..points {
        candidates.push(q0.iter().map(|x| x + 0.2 * (rng.random::<f64>() - 0.5)).collect());
    }
    let mut worst = (0.0, 0, 0.0, 0.0, 0);
    for (k, q) in candidates.iter().enumerate() {
        if !posterior.log_density(q).is_finite() {
            continue;
        }
        let check = grad_check(&posterior, q, GRAD_CHECK_STEP)?;
        if k == 0 || check.max_rel_error > worst.0 {
            worst = (check.max_rel_error, check.worst_index, check.analytic[check.worst_index], check.numeric[check.worst_index], k);
        }
    }
    let (err, idx, analytic, numeric, point) = worst;
    let pass = err < GRAD_CHECK_PASS;
    let report = format!(
        "coordinates: {}\npoints: {}\nmax_relative_error: {err:.3e}\nworst_coordinate: {}\nanalytic: {analytic:.10e}\nfinite_difference: {numeric:.10e}\nworst_point: {point}\nthreshold: {GRAD_CHECK_PASS:e}\nresult: {}\n",
        names.len(),
        candidates.len(),
        names[idx],
        if pass { "PASS" } else { "FAIL" }
    );
    print!("{report}");
    if let Some(dir) = common.out_dir.clone().or_else(|| cfg.io.out_dir.clone()) {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_string(&dir.join("gradcheck.txt"), &report)?;
    }
    if pass {
        Ok(err)
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed: relative error {err:.3e} at {}",
            names[idx]
        )))
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let threads = cli.threads.unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    match cli.command {
        Command::Simulate { common } => cmd_simulate(&common),
        Command::Fit {
            common,
            data,
            relative_risk,
        } => cmd_fit(&common, &data, relative_risk),
        Command::Summarize { draws, relative_risk, out } => cmd_summarize(&draws, relative_risk, out.as_deref()),
        Command::Replicate {
            common,
            table,
            scale,
            datasets,
            subjects,
            iters,
            plug_in,
        } => cmd_replicate(&common, &table, scale, datasets, subjects, iters, plug_in),
        Command::Gradcheck {
            common,
            data,
            points,
            corrupt_gradient,
        } => cmd_gradcheck(&common, &data, points, corrupt_gradient).map(|_| ()),
    }
}
