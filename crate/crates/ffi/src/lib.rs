//! C ABI for the delaybuf simulator.
//!
//! Every function returns a [`DbsStatus`]; outputs go through pointer
//! arguments. On failure the message is available from
//! [`dbs_last_error_message`] on the same thread. Handles are opaque and must
//! be released with their matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use delaybuf::analytics::{drain_time_bound, seconds_to_time, steady_state, to_f64, QueueRef, SteadyStateInputs};
use delaybuf::config::{load_config, RunConfig};
use delaybuf::metrics::SummaryRow;
use delaybuf::policy::{delay_threshold, Fraction, PolicyContext};
use delaybuf::runner::{run_matrix, verify_steady_state, RunnerError};
use delaybuf::sim::SimTime;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DbsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    InvalidArgument = 4,
    OutOfRange = 5,
    RuntimeFailure = 6,
    Panic = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(DbsStatus, String);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DbsStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DbsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            DbsStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DbsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(DbsStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn alpha(num: u64, den: u64) -> Result<Fraction, Fail> {
    if den == 0 {
        return Err(Fail(DbsStatus::InvalidArgument, "alpha denominator is zero".into()));
    }
    Ok(Fraction::new(num, den))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn dbs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dbs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from a function of this library documented as returning an
/// owned string, and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dbs_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parsed and validated run configuration.
pub struct DbsConfig {
    inner: RunConfig,
}

/// Loads a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_config_load(path: *const c_char, out: *mut *mut DbsConfig) -> DbsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let inner = load_config(Path::new(path)).map_err(|e| Fail(DbsStatus::InvalidConfig, e.to_string()))?;
        *out = Box::into_raw(Box::new(DbsConfig { inner }));
        Ok(())
    })
}

/// Parses configuration text. Relative paths inside resolve against the
/// working directory.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_config_parse(text: *const c_char, out: *mut *mut DbsConfig) -> DbsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let text = str_arg(text, "text")?;
        let inner =
            RunConfig::parse(text, Path::new("<string>")).map_err(|e| Fail(DbsStatus::InvalidConfig, e.to_string()))?;
        *out = Box::into_raw(Box::new(DbsConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle from `dbs_config_load`/`dbs_config_parse`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn dbs_config_free(cfg: *mut DbsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Number of cells in the scenario matrix.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_config_cell_count(cfg: *const DbsConfig, out: *mut usize) -> DbsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        *out_arg(out, "out")? = cfg.inner.matrix().len();
        Ok(())
    })
}

/// Effective configuration with defaults applied, as TOML. Free the result
/// with `dbs_string_free`.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_config_to_toml(cfg: *const DbsConfig, out: *mut *mut c_char) -> DbsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let out = out_arg(out, "out")?;
        let s = CString::new(cfg.inner.to_toml()).map_err(|e| Fail(DbsStatus::RuntimeFailure, e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// Per-cell results. Missing percentiles are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbsSummary {
    pub seed: u64,
    pub incast_p50: f64,
    pub incast_p95: f64,
    pub incast_p99: f64,
    pub short_p50: f64,
    pub short_p95: f64,
    pub short_p99: f64,
    pub long_p50: f64,
    pub long_p95: f64,
    pub long_p99: f64,
    pub mean_occupancy_bytes: f64,
    pub mean_throughput_bps: f64,
    pub completed_flows: u64,
    pub incomplete_flows: u64,
}

impl From<&SummaryRow> for DbsSummary {
    fn from(r: &SummaryRow) -> Self {
        let v = |x: Option<f64>| x.unwrap_or(f64::NAN);
        DbsSummary {
            seed: r.seed,
            incast_p50: v(r.incast_p50),
            incast_p95: v(r.incast_p95),
            incast_p99: v(r.incast_p99),
            short_p50: v(r.short_p50),
            short_p95: v(r.short_p95),
            short_p99: v(r.short_p99),
            long_p50: v(r.long_p50),
            long_p95: v(r.long_p95),
            long_p99: v(r.long_p99),
            mean_occupancy_bytes: r.mean_occupancy_bytes,
            mean_throughput_bps: r.mean_throughput_bps,
            completed_flows: r.completed_flows,
            incomplete_flows: r.incomplete_flows,
        }
    }
}

struct Row {
    summary: DbsSummary,
    scheme: CString,
    scenario: CString,
}

/// Outcome of a matrix run.
pub struct DbsReport {
    rows: Vec<Row>,
    failures: Vec<CString>,
}

fn cstring(s: &str) -> CString {
    CString::new(s.replace('\0', " ")).expect("NUL bytes removed")
}

/// Runs every cell of the matrix, writing CSVs below `out_dir`. Cell
/// failures do not fail the call; count them with
/// `dbs_report_failure_count`.
///
/// # Safety
/// `cfg` must be a live handle, `out_dir` a NUL-terminated string and `out`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_run_matrix(
    cfg: *const DbsConfig,
    out_dir: *const c_char,
    jobs: u32,
    out: *mut *mut DbsReport,
) -> DbsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let dir = str_arg(out_dir, "out_dir")?;
        let out = out_arg(out, "out")?;
        let report = run_matrix(&cfg.inner, Path::new(dir), jobs.max(1) as usize, &[])
            .map_err(|e| Fail(DbsStatus::RuntimeFailure, e.to_string()))?;
        let rows = report
            .rows
            .iter()
            .map(|r| Row {
                summary: r.into(),
                scheme: cstring(&r.scheme),
                scenario: cstring(&r.scenario),
            })
            .collect();
        let failures = report
            .failures
            .iter()
            .map(|f| cstring(&format!("{}: {}", f.cell.rel_dir().display(), f.message)))
            .collect();
        *out = Box::into_raw(Box::new(DbsReport { rows, failures }));
        Ok(())
    })
}

/// # Safety
/// `report` must be NULL or a live handle from `dbs_run_matrix`.
#[no_mangle]
pub unsafe extern "C" fn dbs_report_free(report: *mut DbsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_report_row_count(report: *const DbsReport, out: *mut usize) -> DbsStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        *out_arg(out, "out")? = r.rows.len();
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_report_failure_count(report: *const DbsReport, out: *mut usize) -> DbsStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        *out_arg(out, "out")? = r.failures.len();
        Ok(())
    })
}

/// Copies row `index` into `out`. `scheme` and `scenario`, when not NULL,
/// receive strings owned by the report.
///
/// # Safety
/// `report` must be a live handle; `out` must be valid; `scheme` and
/// `scenario` must be NULL or valid.
#[no_mangle]
pub unsafe extern "C" fn dbs_report_row(
    report: *const DbsReport,
    index: usize,
    out: *mut DbsSummary,
    scheme: *mut *const c_char,
    scenario: *mut *const c_char,
) -> DbsStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let out = out_arg(out, "out")?;
        let row = r
            .rows
            .get(index)
            .ok_or_else(|| Fail(DbsStatus::OutOfRange, format!("row {index} of {}", r.rows.len())))?;
        *out = row.summary;
        if let Some(s) = scheme.as_mut() {
            *s = row.scheme.as_ptr();
        }
        if let Some(s) = scenario.as_mut() {
            *s = row.scenario.as_ptr();
        }
        Ok(())
    })
}

/// Description of failed cell `index`, owned by the report.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_report_failure(
    report: *const DbsReport,
    index: usize,
    out: *mut *const c_char,
) -> DbsStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(|| null("report"))?;
        let out = out_arg(out, "out")?;
        let f = r.failures.get(index).ok_or_else(|| {
            Fail(
                DbsStatus::OutOfRange,
                format!("failure {index} of {}", r.failures.len()),
            )
        })?;
        *out = f.as_ptr();
        Ok(())
    })
}

/// Runs the persistent-congestion checks. `passed` receives whether all
/// applicable checks held; `checked` the number of scenarios run.
///
/// # Safety
/// `cfg` must be a live handle; `passed` and `checked` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dbs_verify(cfg: *const DbsConfig, passed: *mut bool, checked: *mut usize) -> DbsStatus {
    guard(|| {
        let cfg = cfg.as_ref().ok_or_else(|| null("cfg"))?;
        let passed = out_arg(passed, "passed")?;
        let checked = out_arg(checked, "checked")?;
        let reports =
            verify_steady_state(&cfg.inner).map_err(|e: RunnerError| Fail(DbsStatus::RuntimeFailure, e.to_string()))?;
        *passed = reports.iter().all(|r| r.passed());
        *checked = reports.len();
        Ok(())
    })
}

/// Closed-form persistent-congestion operating point for `congested`
/// queues of one priority.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DbsSteadyState {
    /// Total occupied buffer in bytes.
    pub occupied_bytes: f64,
    pub remaining_bytes: f64,
    pub per_queue_bytes: f64,
    /// Drain-time bound for the priority, in nanoseconds (rounded down).
    pub drain_bound_ns: u64,
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_steady_state(
    total_bytes: u64,
    capacity_bps: u64,
    alpha_num: u64,
    alpha_den: u64,
    congested: u32,
    out: *mut DbsSteadyState,
) -> DbsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let a = alpha(alpha_num, alpha_den)?;
        if congested == 0 || capacity_bps == 0 || a.is_zero() {
            return Err(Fail(
                DbsStatus::InvalidArgument,
                "congested, capacity and alpha must be positive".into(),
            ));
        }
        let inputs = SteadyStateInputs {
            total_b: total_bytes,
            capacity_bps,
            alphas: vec![a],
            congested: (0..congested)
                .map(|i| QueueRef {
                    port: i.min(u16::MAX as u32) as u16,
                    priority: 0,
                })
                .collect(),
        };
        if congested > u16::MAX as u32 + 1 {
            return Err(Fail(DbsStatus::OutOfRange, "too many congested queues".into()));
        }
        let r = steady_state(&inputs);
        let q0 = QueueRef { port: 0, priority: 0 };
        *out = DbsSteadyState {
            occupied_bytes: to_f64(&r.q_star),
            remaining_bytes: to_f64(&r.remaining),
            per_queue_bytes: to_f64(&r.omega_bytes[&q0]),
            drain_bound_ns: seconds_to_time(&r.tau[0]).as_nanos(),
        };
        Ok(())
    })
}

/// Drain-time bound in nanoseconds (rounded down).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_drain_time_bound_ns(
    total_bytes: u64,
    alpha_num: u64,
    alpha_den: u64,
    capacity_bps: u64,
    out: *mut u64,
) -> DbsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let a = alpha(alpha_num, alpha_den)?;
        if capacity_bps == 0 {
            return Err(Fail(DbsStatus::InvalidArgument, "capacity is zero".into()));
        }
        *out = seconds_to_time(&drain_time_bound(total_bytes, a, capacity_bps)).as_nanos();
        Ok(())
    })
}

/// Sojourn-time limit in nanoseconds that the delay-based scheme applies at
/// dequeue.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dbs_delay_threshold_ns(
    total_bytes: u64,
    occupied_bytes: u64,
    capacity_bps: u64,
    alpha_num: u64,
    alpha_den: u64,
    congested: u32,
    out: *mut u64,
) -> DbsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let a = alpha(alpha_num, alpha_den)?;
        if capacity_bps == 0 {
            return Err(Fail(DbsStatus::InvalidArgument, "capacity is zero".into()));
        }
        let ctx = PolicyContext {
            total_b: total_bytes,
            occupied_q: occupied_bytes,
            port_capacity_bps: capacity_bps,
            priority: 0,
            alpha: a,
            congested: congested.max(1),
            queue_byte_len: 0,
            now: SimTime::ZERO,
        };
        *out = delay_threshold(&ctx).as_nanos();
        Ok(())
    })
}
