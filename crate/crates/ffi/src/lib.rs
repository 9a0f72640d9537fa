//! C interface to the gpjoint engine.
//!
//! Every function returns a [`GpjStatus`]; on failure the message is available
//! from [`gpj_last_error_message`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_load`/`gpj_fit` style calls and released by
//! the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use gpjoint::config::RunConfig;
use gpjoint::data::Dataset;
use gpjoint::engine::{fit, summary_csv, PosteriorDraws};
use gpjoint::kernel::KernelCache;
use gpjoint::longitudinal::{long_loglik, LongitudinalParams};
use gpjoint::model::Components;
use gpjoint::sim::simulate_dataset;
use gpjoint::survival::weibull_logpdf;
use gpjoint::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpjStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Contract = 4,
    Validation = 5,
    Parse = 6,
    Numeric = 7,
    Io = 8,
    OutOfRange = 9,
    Panic = 10,
}

/// Observed data: longitudinal measurements plus survival outcomes.
pub struct GpjDataset {
    inner: Dataset,
}

/// Run configuration (model, priors, frailty, sampler, simulation blocks).
pub struct GpjConfig {
    inner: RunConfig,
}

/// Post-burn-in posterior draws.
pub struct GpjDraws {
    inner: PosteriorDraws,
    names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GpjStatus {
    match e {
        Error::Domain(_) => GpjStatus::Domain,
        Error::Contract(_) => GpjStatus::Contract,
        Error::Validation(_) => GpjStatus::Validation,
        Error::Parse(_) => GpjStatus::Parse,
        Error::Numeric(_) => GpjStatus::Numeric,
        Error::Io { .. } => GpjStatus::Io,
    }
}

/// Failure carried out of a guarded body.
struct Fail(GpjStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> GpjStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GpjStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GpjStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(GpjStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(GpjStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn gpj_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gpj_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gpj_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_config_default(out: *mut *mut GpjConfig) -> GpjStatus {
    guard(|| put(out, GpjConfig { inner: RunConfig::default() }))
}

/// Parse a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_config_from_toml(toml: *const c_char, out: *mut *mut GpjConfig) -> GpjStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        put(out, GpjConfig { inner: RunConfig::parse(text)? })
    })
}

/// Set the seed of the sampler and the simulator.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpj_config_set_seed(cfg: *mut GpjConfig, seed: u64) -> GpjStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("config"))?;
        c.inner = c.inner.clone().with_seed(Some(seed));
        Ok(())
    })
}

/// Set total iterations, burn-in and adaptation length of the sampler.
///
/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpj_config_set_iterations(
    cfg: *mut GpjConfig,
    total_iters: usize,
    burn_in: usize,
) -> GpjStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("config"))?;
        let mut mcmc = c.inner.mcmc.clone();
        mcmc.total_iters = total_iters;
        mcmc.burn_in = burn_in;
        mcmc.adapt_iters = burn_in;
        mcmc.validate()?;
        c.inner.mcmc = mcmc;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gpj_config_free(cfg: *mut GpjConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Load a dataset from longitudinal and survival CSV files.
///
/// # Safety
/// Paths must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_dataset_load_csv(
    longitudinal_path: *const c_char,
    survival_path: *const c_char,
    out: *mut *mut GpjDataset,
) -> GpjStatus {
    guard(|| {
        let l = str_arg(longitudinal_path, "longitudinal_path")?;
        let s = str_arg(survival_path, "survival_path")?;
        put(out, GpjDataset { inner: Dataset::read_csv(Path::new(l), Path::new(s))? })
    })
}

/// Parse a dataset from in-memory CSV text.
///
/// # Safety
/// Inputs must be NUL-terminated strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_dataset_from_csv_text(
    longitudinal_csv: *const c_char,
    survival_csv: *const c_char,
    out: *mut *mut GpjDataset,
) -> GpjStatus {
    guard(|| {
        let l = str_arg(longitudinal_csv, "longitudinal_csv")?;
        let s = str_arg(survival_csv, "survival_csv")?;
        put(out, GpjDataset { inner: Dataset::parse_csv(l, s)? })
    })
}

/// Simulate one dataset from the configuration's simulation block.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_dataset_simulate(cfg: *const GpjConfig, out: *mut *mut GpjDataset) -> GpjStatus {
    guard(|| {
        let c = ref_arg(cfg, "config")?;
        let mut rng = ChaCha8Rng::seed_from_u64(c.inner.sim.seed);
        let sim = simulate_dataset(&c.inner.sim, &mut rng)?;
        put(out, GpjDataset { inner: sim.data })
    })
}

/// Number of subjects, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpj_dataset_n_subjects(ds: *const GpjDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.len())
}

/// Fraction of censored subjects.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_dataset_censoring_rate(ds: *const GpjDataset, out: *mut f64) -> GpjStatus {
    guard(|| put_value(out, ref_arg(ds, "dataset")?.inner.censoring_rate()))
}

/// # Safety
/// `ds` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gpj_dataset_free(ds: *mut GpjDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fit the joint model.
///
/// # Safety
/// Handles must be live and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_fit(ds: *const GpjDataset, cfg: *const GpjConfig, out: *mut *mut GpjDraws) -> GpjStatus {
    guard(|| {
        let d = ref_arg(ds, "dataset")?;
        let c = ref_arg(cfg, "config")?;
        let draws = fit(&d.inner, &c.inner.fit_config(), Components::Joint)?;
        let names = draws
            .columns
            .iter()
            .map(|n| CString::new(n.as_str()).unwrap_or_default())
            .collect();
        put(out, GpjDraws { inner: draws, names })
    })
}

/// Number of retained draws, or 0 for a null handle.
///
/// # Safety
/// `draws` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpj_draws_n_draws(draws: *const GpjDraws) -> usize {
    draws.as_ref().map_or(0, |d| d.inner.rows.len())
}

/// Number of parameter columns, or 0 for a null handle.
///
/// # Safety
/// `draws` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpj_draws_n_params(draws: *const GpjDraws) -> usize {
    draws.as_ref().map_or(0, |d| d.inner.columns.len())
}

/// Name of parameter column `k`; owned by the handle. Null when out of range.
///
/// # Safety
/// `draws` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn gpj_draws_param_name(draws: *const GpjDraws, k: usize) -> *const c_char {
    draws
        .as_ref()
        .and_then(|d| d.names.get(k))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Index of the named parameter column.
///
/// # Safety
/// `draws` must be a live handle, `name` a NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gpj_draws_param_index(draws: *const GpjDraws, name: *const c_char, out: *mut usize) -> GpjStatus {
    guard(|| {
        let d = ref_arg(draws, "draws")?;
        let n = str_arg(name, "name")?;
        let k = d
            .inner
            .column_index(n)
            .ok_or_else(|| Fail(GpjStatus::OutOfRange, format!("no parameter named {n}")))?;
        put_value(out, k)
    })
}

/// Copy column `k` (one value per draw) into `buf`, which holds `len` doubles.
///
/// # Safety
/// `draws` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gpj_draws_copy_column(draws: *const GpjDraws, k: usize, buf: *mut f64, len: usize) -> GpjStatus {
    guard(|| {
        let d = ref_arg(draws, "draws")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if k >= d.inner.columns.len() {
            return Err(Fail(GpjStatus::OutOfRange, format!("column {k} out of range")));
        }
        if len < d.inner.rows.len() {
            return Err(Fail(
                GpjStatus::OutOfRange,
                format!("buffer holds {len} values, {} needed", d.inner.rows.len()),
            ));
        }
        let out = std::slice::from_raw_parts_mut(buf, len);
        for (o, row) in out.iter_mut().zip(&d.inner.rows) {
            *o = row[k];
        }
        Ok(())
    })
}

/// Posterior summary as CSV text; release with [`gpj_string_free`].
///
/// # Safety
/// `draws` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_draws_summary_csv(draws: *const GpjDraws, relative_risk: bool, out: *mut *mut c_char) -> GpjStatus {
    guard(|| {
        let d = ref_arg(draws, "draws")?;
        let text = summary_csv(&d.inner, relative_risk)?;
        put_value(out, CString::new(text).unwrap_or_default().into_raw())
    })
}

/// # Safety
/// `draws` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn gpj_draws_free(draws: *mut GpjDraws) {
    if !draws.is_null() {
        drop(Box::from_raw(draws));
    }
}

/// GP marginal log-likelihood of one subject's series.
///
/// # Safety
/// `times` and `values` must each hold `n` doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpj_gp_marginal_loglik(
    times: *const f64,
    values: *const f64,
    n: usize,
    beta0: f64,
    kappa2: f64,
    sigma2: f64,
    rho2: f64,
    out: *mut f64,
) -> GpjStatus {
    guard(|| {
        if times.is_null() || values.is_null() {
            return Err(null("times or values"));
        }
        let t = std::slice::from_raw_parts(times, n);
        let v = std::slice::from_raw_parts(values, n);
        let cache = KernelCache::build(t, rho2)?;
        let params = LongitudinalParams {
            beta0,
            kappa2,
            sigma2,
            rho2,
        };
        put_value(out, long_loglik(v, &params, &cache)?)
    })
}

/// Weibull log-density with shape `tau` and log-scale `lambda`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpj_weibull_logpdf(t: f64, tau: f64, lambda: f64, out: *mut f64) -> GpjStatus {
    guard(|| put_value(out, weibull_logpdf(t, tau, lambda)?))
}
