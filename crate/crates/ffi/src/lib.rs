//! C interface to `linktrace`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible call returns an
//! [`LtStatus`]; on failure a message for the calling thread is available
//! from [`lt_last_error`]. Strings returned by accessors are owned by their
//! handle and stay valid until it is freed.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use linktrace::bootstrap::{bootstrap_estimates, estimate_sample, BootConfig};
use linktrace::config::parse_config;
use linktrace::estimators::{EstimateKey, EstimateSet};
use linktrace::likelihood::{FitMethod, FitOptions};
use linktrace::quadrature::{cell_prob, LinkPattern, QuadratureRule};
use linktrace::sample_file::parse_sample;
use linktrace::sampling::LtsSample;
use linktrace::simulation::{render_table, run_monte_carlo, write_metrics_csv, write_replicate_csv};
use linktrace::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Config = 4,
    Io = 5,
    NonIdentifiable = 6,
    Diverged = 7,
    UndefinedEstimate = 8,
    DegenerateWorld = 9,
    Unsupported = 10,
    Utf8 = 11,
    OutOfRange = 12,
    Panic = 13,
}

/// Fit family.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtMethod {
    Unconditional = 0,
    Conditional = 1,
}

/// Options for [`lt_estimate`]. Obtain defaults from
/// [`lt_estimate_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LtEstimateOptions {
    /// An [`LtMethod`] value.
    pub method: i32,
    pub quadrature_nodes: u32,
    /// Bootstrap replicates; 0 skips the bootstrap.
    pub bootstrap_replicates: u32,
    pub seed: u64,
    /// Intervals have level `1 - alpha_level`.
    pub alpha_level: f64,
}

/// One reported parameter. Fields whose `has_*` flag is 0 are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LtEstimate {
    pub has_value: u8,
    pub value: f64,
    pub has_sd: u8,
    pub sd: f64,
    pub has_ci: u8,
    pub ci_lower: f64,
    pub ci_upper: f64,
}

/// A parsed sample.
pub struct LtSample {
    inner: LtsSample,
    seed: Option<u64>,
}

/// Estimates for every parameter of one sample.
pub struct LtEstimates {
    set: EstimateSet,
    labels: Vec<CString>,
    failures: Vec<Option<CString>>,
}

/// Output files of a Monte Carlo run, as text.
pub struct LtSimulation {
    replicates_csv: CString,
    metrics_csv: CString,
    table: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LtStatus {
    match e {
        Error::InvalidArgument(_) => LtStatus::InvalidArgument,
        Error::NonIdentifiable(_) => LtStatus::NonIdentifiable,
        Error::Diverged { .. } => LtStatus::Diverged,
        Error::UndefinedEstimate(_) => LtStatus::UndefinedEstimate,
        Error::DegenerateWorld(_) => LtStatus::DegenerateWorld,
        Error::Unsupported(_) => LtStatus::Unsupported,
        Error::Parse { .. } => LtStatus::Parse,
        Error::Config { .. } | Error::Json(_) => LtStatus::Config,
        Error::Io(_) => LtStatus::Io,
    }
}

fn fail(status: LtStatus, msg: impl Into<String>) -> LtStatus {
    set_error(msg.into());
    status
}

fn guard(f: impl FnOnce() -> LtStatus) -> LtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LtStatus::Panic, "internal panic"),
    }
}

fn from_core<T>(r: linktrace::Result<T>) -> Result<T, LtStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn text_arg<'a>(p: *const c_char) -> Result<&'a str, LtStatus> {
    if p.is_null() {
        return Err(fail(LtStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LtStatus::Utf8, "argument is not valid UTF-8"))
}

fn lift(r: Result<(), LtStatus>) -> LtStatus {
    match r {
        Ok(()) => LtStatus::Ok,
        Err(s) => s,
    }
}

/// Message describing the calling thread's last failure, or NULL. The
/// pointer is valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Probability of a link pattern under the Rasch model with `q` quadrature
/// nodes. `pattern` holds `n` bytes, nonzero meaning a link.
///
/// # Safety
/// `alpha` and `pattern` must point to `n` readable elements and `out` to a
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn lt_cell_prob(
    alpha: *const f64,
    pattern: *const u8,
    n: usize,
    sigma: f64,
    q: u32,
    out: *mut f64,
) -> LtStatus {
    guard(|| {
        lift((|| {
            if out.is_null() || (n > 0 && (alpha.is_null() || pattern.is_null())) {
                return Err(fail(LtStatus::NullPointer, "null argument"));
            }
            let (alpha, bits) = if n == 0 {
                (&[][..], &[][..])
            } else {
                (std::slice::from_raw_parts(alpha, n), std::slice::from_raw_parts(pattern, n))
            };
            let rule = from_core(QuadratureRule::new(q as usize))?;
            *out = from_core(cell_prob(alpha, sigma, &LinkPattern::from_u8(bits), &rule))?;
            Ok(())
        })())
    })
}

/// Parses a sample from text in the `lts-sample 1` format.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lt_sample_parse(text: *const c_char, out: *mut *mut LtSample) -> LtStatus {
    guard(|| {
        lift((|| {
            if out.is_null() {
                return Err(fail(LtStatus::NullPointer, "null output pointer"));
            }
            *out = ptr::null_mut();
            let f = from_core(parse_sample(text_arg(text)?))?;
            *out = Box::into_raw(Box::new(LtSample {
                inner: f.sample,
                seed: f.seed,
            }));
            Ok(())
        })())
    })
}

/// Releases a sample. NULL is ignored.
///
/// # Safety
/// `sample` must come from [`lt_sample_parse`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lt_sample_free(sample: *mut LtSample) {
    if !sample.is_null() {
        drop(Box::from_raw(sample));
    }
}

/// Sample dimensions. Any output pointer may be NULL.
///
/// # Safety
/// `sample` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lt_sample_counts(
    sample: *const LtSample,
    n_sampled: *mut usize,
    n_frame: *mut usize,
    m: *mut usize,
    r1: *mut usize,
    r2: *mut usize,
) -> LtStatus {
    let Some(s) = sample.as_ref() else {
        return fail(LtStatus::NullPointer, "null sample");
    };
    let s = &s.inner;
    for (p, v) in [(n_sampled, s.n()), (n_frame, s.n_frame), (m, s.m_total()), (r1, s.r1()), (r2, s.r2())] {
        if !p.is_null() {
            *p = v;
        }
    }
    LtStatus::Ok
}

/// Seed stored in the sample file, if any. Returns 1 and writes `seed`
/// when present, else 0.
///
/// # Safety
/// `sample` must be a live handle and `seed` writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn lt_sample_seed(sample: *const LtSample, seed: *mut u64) -> u8 {
    match sample.as_ref().and_then(|s| s.seed) {
        Some(v) => {
            if !seed.is_null() {
                *seed = v;
            }
            1
        }
        None => 0,
    }
}

#[no_mangle]
pub extern "C" fn lt_estimate_options_default() -> LtEstimateOptions {
    let boot = BootConfig::default();
    LtEstimateOptions {
        method: LtMethod::Unconditional as i32,
        quadrature_nodes: linktrace::quadrature::DEFAULT_NODES as u32,
        bootstrap_replicates: boot.b as u32,
        seed: 0,
        alpha_level: boot.alpha_level,
    }
}

/// Fits both portions and computes every estimate, with a bootstrap when
/// `bootstrap_replicates > 0`. Fails with the U1 fit's status when that fit
/// fails; U2 failures leave the affected estimates missing.
///
/// # Safety
/// `sample` must be a live handle, `options` readable or NULL (defaults), and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lt_estimate(
    sample: *const LtSample,
    options: *const LtEstimateOptions,
    out: *mut *mut LtEstimates,
) -> LtStatus {
    guard(|| {
        lift((|| {
            if out.is_null() {
                return Err(fail(LtStatus::NullPointer, "null output pointer"));
            }
            *out = ptr::null_mut();
            let s = &sample.as_ref().ok_or_else(|| fail(LtStatus::NullPointer, "null sample"))?.inner;
            let opts = options.as_ref().copied().unwrap_or_else(|| lt_estimate_options_default());
            let method = match opts.method {
                0 => FitMethod::Unconditional,
                1 => FitMethod::Conditional,
                m => return Err(fail(LtStatus::InvalidArgument, format!("unknown method {m}"))),
            };
            let rule = from_core(QuadratureRule::new(opts.quadrature_nodes as usize))?;
            let geom = from_core(s.geometry())?;
            let fit_opts = FitOptions::default();
            let (f1, f2, mut set) = estimate_sample(s, &geom, &rule, &fit_opts, method);
            let fit1 = from_core(f1)?;
            if opts.bootstrap_replicates > 0 {
                let boot = BootConfig {
                    b: opts.bootstrap_replicates as usize,
                    alpha_level: opts.alpha_level,
                    ..BootConfig::default()
                };
                set = from_core(bootstrap_estimates(
                    s,
                    &fit1,
                    f2.as_ref().ok(),
                    &set,
                    &geom,
                    &rule,
                    &fit_opts,
                    &boot,
                    opts.seed,
                ))?;
            }
            let labels = set
                .estimates
                .iter()
                .map(|e| CString::new(e.key.to_string()).unwrap_or_default())
                .collect();
            let failures = set
                .estimates
                .iter()
                .map(|e| e.failure.as_ref().and_then(|f| CString::new(f.as_str()).ok()))
                .collect();
            *out = Box::into_raw(Box::new(LtEstimates { set, labels, failures }));
            Ok(())
        })())
    })
}

/// Releases an estimate set. NULL is ignored.
///
/// # Safety
/// `est` must come from [`lt_estimate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lt_estimates_free(est: *mut LtEstimates) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Number of reported parameters (0 for NULL).
///
/// # Safety
/// `est` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lt_estimates_len(est: *const LtEstimates) -> usize {
    est.as_ref().map_or(0, |e| e.set.estimates.len())
}

/// Label of parameter `index` (e.g. `tau_1`, `Ybar_HK`), or NULL when out of
/// range.
///
/// # Safety
/// `est` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lt_estimates_label(est: *const LtEstimates, index: usize) -> *const c_char {
    est.as_ref()
        .and_then(|e| e.labels.get(index))
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Reason parameter `index` is missing, or NULL when it has a value.
///
/// # Safety
/// `est` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lt_estimates_failure(est: *const LtEstimates, index: usize) -> *const c_char {
    est.as_ref()
        .and_then(|e| e.failures.get(index))
        .and_then(|f| f.as_ref())
        .map_or(ptr::null(), |c| c.as_ptr())
}

/// Index of the parameter with the given label.
///
/// # Safety
/// `est` must be a live handle, `label` a NUL-terminated string and `index`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn lt_estimates_find(
    est: *const LtEstimates,
    label: *const c_char,
    index: *mut usize,
) -> LtStatus {
    lift((|| {
        let e = est.as_ref().ok_or_else(|| fail(LtStatus::NullPointer, "null estimates"))?;
        if index.is_null() {
            return Err(fail(LtStatus::NullPointer, "null index pointer"));
        }
        let text = text_arg(label)?;
        let key = EstimateKey::parse(text).ok_or_else(|| fail(LtStatus::InvalidArgument, format!("unknown parameter {text:?}")))?;
        let i = e
            .set
            .estimates
            .iter()
            .position(|x| x.key == key)
            .ok_or_else(|| fail(LtStatus::OutOfRange, format!("parameter {text:?} not reported")))?;
        *index = i;
        Ok(())
    })())
}

/// Copies parameter `index` into `out`.
///
/// # Safety
/// `est` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lt_estimates_get(est: *const LtEstimates, index: usize, out: *mut LtEstimate) -> LtStatus {
    let (Some(e), false) = (est.as_ref(), out.is_null()) else {
        return fail(LtStatus::NullPointer, "null argument");
    };
    let Some(x) = e.set.estimates.get(index) else {
        return fail(LtStatus::OutOfRange, format!("index {index} out of range"));
    };
    let (lo, hi) = x.ci.as_ref().map_or((f64::NAN, f64::NAN), |c| (c.lower, c.upper));
    *out = LtEstimate {
        has_value: x.value.is_some() as u8,
        value: x.value.unwrap_or(f64::NAN),
        has_sd: x.sd.is_some() as u8,
        sd: x.sd.unwrap_or(f64::NAN),
        has_ci: x.ci.is_some() as u8,
        ci_lower: lo,
        ci_upper: hi,
    };
    LtStatus::Ok
}

/// Failed bootstrap replicates, or -1 when no bootstrap ran.
///
/// # Safety
/// `est` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lt_estimates_boot_failures(est: *const LtEstimates) -> i64 {
    est.as_ref()
        .and_then(|e| e.set.boot_failures)
        .map_or(-1, |b| b as i64)
}

/// Runs a Monte Carlo experiment described by TOML configuration text.
/// Relative population file paths resolve against the working directory.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lt_simulate(config_toml: *const c_char, out: *mut *mut LtSimulation) -> LtStatus {
    guard(|| {
        lift((|| {
            if out.is_null() {
                return Err(fail(LtStatus::NullPointer, "null output pointer"));
            }
            *out = ptr::null_mut();
            let config = from_core(parse_config(text_arg(config_toml)?, &[]))?;
            let run = from_core(run_monte_carlo(&config, false))?;
            let mut rep = Vec::new();
            from_core(write_replicate_csv(&run.records, &mut rep))?;
            let mut met = Vec::new();
            from_core(write_metrics_csv(&run.report, &mut met))?;
            let cstr = |b: Vec<u8>| CString::new(b).map_err(|_| fail(LtStatus::Utf8, "embedded NUL in output"));
            *out = Box::into_raw(Box::new(LtSimulation {
                replicates_csv: cstr(rep)?,
                metrics_csv: cstr(met)?,
                table: cstr(render_table(&run.report).into_bytes())?,
            }));
            Ok(())
        })())
    })
}

/// Per-replicate CSV text of a run.
///
/// # Safety
/// `sim` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lt_simulation_replicates_csv(sim: *const LtSimulation) -> *const c_char {
    sim.as_ref().map_or(ptr::null(), |s| s.replicates_csv.as_ptr())
}

/// Metrics CSV text of a run.
///
/// # Safety
/// `sim` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lt_simulation_metrics_csv(sim: *const LtSimulation) -> *const c_char {
    sim.as_ref().map_or(ptr::null(), |s| s.metrics_csv.as_ptr())
}

/// Aligned text table of a run.
///
/// # Safety
/// `sim` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn lt_simulation_table(sim: *const LtSimulation) -> *const c_char {
    sim.as_ref().map_or(ptr::null(), |s| s.table.as_ptr())
}

/// Releases a run. NULL is ignored.
///
/// # Safety
/// `sim` must come from [`lt_simulate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lt_simulation_free(sim: *mut LtSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}
