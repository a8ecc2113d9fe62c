use std::ffi::{CStr, CString};
use std::ptr;

use delaybuf_ffi::*;

fn last_error() -> String {
    let p = dbs_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(dbs_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn math_matches_closed_forms() {
    let mut out = 0u64;
    let st = unsafe { dbs_drain_time_bound_ns(983_040, 1, 2, 10_000_000_000, &mut out) };
    assert_eq!(st, DbsStatus::Ok);
    assert_eq!(out, 262_144);

    let mut ss = DbsSteadyState::default();
    let st = unsafe { dbs_steady_state(983_040, 10_000_000_000, 1, 2, 1, &mut ss) };
    assert_eq!(st, DbsStatus::Ok);
    assert!((ss.occupied_bytes - 327_680.0).abs() < 1e-6);
    assert!((ss.occupied_bytes + ss.remaining_bytes - 983_040.0).abs() < 1e-6);
    assert_eq!(ss.per_queue_bytes, ss.occupied_bytes);
    assert_eq!(ss.drain_bound_ns, 262_144);

    // two congested queues split alpha
    let st = unsafe { dbs_steady_state(983_040, 10_000_000_000, 1, 2, 2, &mut ss) };
    assert_eq!(st, DbsStatus::Ok);
    assert!((ss.per_queue_bytes * 2.0 - ss.occupied_bytes).abs() < 1e-6);

    // empty buffer: 0.5 * 983040 B at 1.25 GB/s
    let st = unsafe { dbs_delay_threshold_ns(983_040, 0, 10_000_000_000, 1, 2, 1, &mut out) };
    assert_eq!(st, DbsStatus::Ok);
    assert_eq!(out, 393_216);
}

#[test]
fn bad_arguments_report_status_and_message() {
    let mut out = 0u64;
    let st = unsafe { dbs_drain_time_bound_ns(1, 1, 0, 1, &mut out) };
    assert_eq!(st, DbsStatus::InvalidArgument);
    assert!(last_error().contains("denominator"));

    let st = unsafe { dbs_drain_time_bound_ns(1, 1, 1, 1, ptr::null_mut()) };
    assert_eq!(st, DbsStatus::NullPointer);

    let mut ss = DbsSteadyState::default();
    let st = unsafe { dbs_steady_state(1000, 1, 1, 2, 0, &mut ss) };
    assert_eq!(st, DbsStatus::InvalidArgument);

    // a successful call clears the message
    let st = unsafe { dbs_drain_time_bound_ns(1, 1, 1, 1, &mut out) };
    assert_eq!(st, DbsStatus::Ok);
    assert!(dbs_last_error_message().is_null());
}

#[test]
fn config_errors_surface_through_the_handle_api() {
    let mut cfg = ptr::null_mut();
    let text = CString::new("seeds = []\n").unwrap();
    let st = unsafe { dbs_config_parse(text.as_ptr(), &mut cfg) };
    assert_eq!(st, DbsStatus::InvalidConfig);
    assert!(cfg.is_null());
    assert!(last_error().contains("seeds"));

    let text = CString::new("[scheme]\nnames = [\"abm2\"]\n").unwrap();
    let st = unsafe { dbs_config_parse(text.as_ptr(), &mut cfg) };
    assert_eq!(st, DbsStatus::InvalidConfig);
    assert!(last_error().contains("abm2"));

    let path = CString::new("/nonexistent/cfg.toml").unwrap();
    let st = unsafe { dbs_config_load(path.as_ptr(), &mut cfg) };
    assert_eq!(st, DbsStatus::InvalidConfig);

    let st = unsafe { dbs_config_parse(ptr::null(), &mut cfg) };
    assert_eq!(st, DbsStatus::NullPointer);

    let bad = [0xffu8, 0];
    let st = unsafe { dbs_config_parse(bad.as_ptr().cast(), &mut cfg) };
    assert_eq!(st, DbsStatus::InvalidUtf8);

    unsafe {
        dbs_config_free(ptr::null_mut());
        dbs_report_free(ptr::null_mut());
        dbs_string_free(ptr::null_mut());
    }
}

#[test]
fn run_matrix_through_handles() {
    let text = CString::new(
        "seeds = [1]\nduration_ms = 40\ngrace_ms = 30\n[scheme]\nnames = [\"delay-bm\", \"dt\"]\n[sweep]\nloads = [0.3]\n",
    )
    .unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { dbs_config_parse(text.as_ptr(), &mut cfg) }, DbsStatus::Ok);

    let mut n = 0usize;
    assert_eq!(unsafe { dbs_config_cell_count(cfg, &mut n) }, DbsStatus::Ok);
    assert_eq!(n, 2);

    let mut toml = ptr::null_mut();
    assert_eq!(unsafe { dbs_config_to_toml(cfg, &mut toml) }, DbsStatus::Ok);
    let echoed = unsafe { CStr::from_ptr(toml) }.to_str().unwrap().to_string();
    unsafe { dbs_string_free(toml) };
    assert!(echoed.contains("delay-bm"));

    let dir = tempfile::tempdir().unwrap();
    let out_dir = CString::new(dir.path().to_str().unwrap()).unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(
        unsafe { dbs_run_matrix(cfg, out_dir.as_ptr(), 2, &mut report) },
        DbsStatus::Ok
    );
    assert!(dir.path().join("summary.csv").is_file());

    assert_eq!(unsafe { dbs_report_row_count(report, &mut n) }, DbsStatus::Ok);
    assert_eq!(n, 2);
    assert_eq!(unsafe { dbs_report_failure_count(report, &mut n) }, DbsStatus::Ok);
    assert_eq!(n, 0);

    let mut row = std::mem::MaybeUninit::<DbsSummary>::uninit();
    let mut scheme = ptr::null();
    let mut scenario = ptr::null();
    let st = unsafe { dbs_report_row(report, 0, row.as_mut_ptr(), &mut scheme, &mut scenario) };
    assert_eq!(st, DbsStatus::Ok);
    let row = unsafe { row.assume_init() };
    assert_eq!(row.seed, 1);
    assert!(row.completed_flows > 0);
    assert_eq!(unsafe { CStr::from_ptr(scheme) }.to_str().unwrap(), "delay-bm");
    assert!(unsafe { CStr::from_ptr(scenario) }
        .to_str()
        .unwrap()
        .contains("load=0.3"));

    let mut tmp = std::mem::MaybeUninit::<DbsSummary>::uninit();
    let st = unsafe { dbs_report_row(report, 5, tmp.as_mut_ptr(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, DbsStatus::OutOfRange);
    let mut f = ptr::null();
    assert_eq!(unsafe { dbs_report_failure(report, 0, &mut f) }, DbsStatus::OutOfRange);

    unsafe {
        dbs_report_free(report);
        dbs_config_free(cfg);
    }
}

#[test]
fn verify_through_handles() {
    let text =
        CString::new("[scheme]\nnames = [\"delay-bm\", \"cs\"]\n[verify]\nalphas = [0.5]\npacket = false\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { dbs_config_parse(text.as_ptr(), &mut cfg) }, DbsStatus::Ok);
    let mut passed = false;
    let mut checked = 0usize;
    assert_eq!(unsafe { dbs_verify(cfg, &mut passed, &mut checked) }, DbsStatus::Ok);
    assert!(passed);
    assert_eq!(checked, 2);
    unsafe { dbs_config_free(cfg) };
}
