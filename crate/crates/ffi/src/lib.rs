//! C interface to the simulator and security calculator.
//!
//! Every fallible function returns an [`MdiqdsStatus`]; on failure the
//! message is available from [`mdiqds_last_error`] on the same thread.
//! Scenarios and reports are opaque handles released with their `_free`
//! function. Strings returned to the caller are freed with
//! [`mdiqds_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mdiqds::entropy::{binary_entropy, binomial_tail_log2, inverse_binary_entropy, Probability};
use mdiqds::scenario::{raw_key_minutes, run, OutputFormat, Overrides, Report, Scenario};
use mdiqds::security::{choose_thresholds, repudiation_bound};
use mdiqds::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MdiqdsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad scenario or out-of-range argument.
    Invalid = 3,
    /// The run completed but missed a threshold, or the pipeline found the
    /// protocol infeasible.
    Infeasible = 4,
    /// Too little data for the estimators.
    InsufficientData = 5,
    Io = 6,
    Panic = 7,
}

/// Scenario loaded from JSON and merged onto the defaults.
pub struct MdiqdsScenario {
    inner: Scenario,
}

/// Result of running a scenario.
pub struct MdiqdsReport {
    inner: Report,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    let c = CString::new(s).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MdiqdsStatus {
    match e {
        Error::Config { .. } | Error::Domain(_) | Error::OddLength(_) | Error::MalformedDeclaration(_) => {
            MdiqdsStatus::Invalid
        }
        Error::InsufficientData(_) | Error::Degenerate(_) | Error::BudgetExhausted { .. } => {
            MdiqdsStatus::InsufficientData
        }
        Error::Infeasible(_) | Error::ProtocolInfeasible(_) => MdiqdsStatus::Infeasible,
        Error::Io(_) => MdiqdsStatus::Io,
    }
}

fn fail(e: Error) -> MdiqdsStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

/// Runs `f`, turning a panic into [`MdiqdsStatus::Panic`].
fn guard<F: FnOnce() -> MdiqdsStatus>(f: F) -> MdiqdsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            MdiqdsStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, MdiqdsStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(MdiqdsStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        MdiqdsStatus::InvalidUtf8
    })
}

fn write_out<T>(out: *mut T, v: T) -> MdiqdsStatus {
    if out.is_null() {
        set_error("output pointer is null");
        return MdiqdsStatus::NullPointer;
    }
    // SAFETY: checked non-null; the caller promises it is writable.
    unsafe { out.write(v) };
    MdiqdsStatus::Ok
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn mdiqds_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mdiqds_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a scenario from a JSON object. `preset` may be NULL; otherwise it
/// names a detector preset applied before the JSON values.
///
/// # Safety
/// `json` and a non-NULL `preset` must be NUL-terminated strings; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_scenario_from_json(
    json: *const c_char,
    preset: *const c_char,
    out: *mut *mut MdiqdsScenario,
) -> MdiqdsStatus {
    guard(|| {
        if out.is_null() {
            set_error("output pointer is null");
            return MdiqdsStatus::NullPointer;
        }
        let text = match read_str(json, "json") {
            Ok(s) => s,
            Err(s) => return s,
        };
        let preset = if preset.is_null() {
            None
        } else {
            match read_str(preset, "preset") {
                Ok(s) => Some(s.to_owned()),
                Err(s) => return s,
            }
        };
        let overrides = Overrides { preset, ..Overrides::default() };
        match Scenario::from_json_str(text, &overrides) {
            Ok(sc) => write_out(out, Box::into_raw(Box::new(MdiqdsScenario { inner: sc }))),
            Err(e) => fail(e),
        }
    })
}

/// Sets the seed of a scenario.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_scenario_set_seed(scenario: *mut MdiqdsScenario, seed: u64) -> MdiqdsStatus {
    guard(|| match scenario.as_mut() {
        Some(s) => {
            s.inner.seed = Some(seed);
            MdiqdsStatus::Ok
        }
        None => {
            set_error("scenario is null");
            MdiqdsStatus::NullPointer
        }
    })
}

/// Releases a scenario. NULL is ignored.
///
/// # Safety
/// `scenario` must come from [`mdiqds_scenario_from_json`] and not have been
/// freed.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_scenario_free(scenario: *mut MdiqdsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs a scenario. A run that misses a threshold still yields a report;
/// check [`mdiqds_report_exit_code`].
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_run(scenario: *const MdiqdsScenario, out: *mut *mut MdiqdsReport) -> MdiqdsStatus {
    guard(|| {
        let Some(sc) = scenario.as_ref() else {
            set_error("scenario is null");
            return MdiqdsStatus::NullPointer;
        };
        if out.is_null() {
            set_error("output pointer is null");
            return MdiqdsStatus::NullPointer;
        }
        match run(&sc.inner) {
            Ok(r) => write_out(out, Box::into_raw(Box::new(MdiqdsReport { inner: r }))),
            Err(e) => fail(e),
        }
    })
}

/// 0 when the run met every threshold, 2 otherwise, -1 for NULL.
///
/// # Safety
/// `report` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_report_exit_code(report: *const MdiqdsReport) -> i32 {
    report.as_ref().map_or(-1, |r| r.inner.status.exit_code())
}

unsafe fn render(report: *const MdiqdsReport, format: OutputFormat, out: *mut *mut c_char) -> MdiqdsStatus {
    guard(|| {
        let Some(r) = report.as_ref() else {
            set_error("report is null");
            return MdiqdsStatus::NullPointer;
        };
        let mut buf = Vec::new();
        if let Err(e) = r.inner.write(format, &mut buf) {
            return fail(e);
        }
        match CString::new(buf) {
            Ok(c) => write_out(out, c.into_raw()),
            Err(_) => {
                set_error("report contains a NUL byte");
                MdiqdsStatus::Io
            }
        }
    })
}

/// The report as pretty-printed JSON, freed with [`mdiqds_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_report_to_json(report: *const MdiqdsReport, out: *mut *mut c_char) -> MdiqdsStatus {
    render(report, OutputFormat::Json, out)
}

/// The report as CSV, freed with [`mdiqds_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_report_to_csv(report: *const MdiqdsReport, out: *mut *mut c_char) -> MdiqdsStatus {
    render(report, OutputFormat::Csv, out)
}

/// Releases a report. NULL is ignored.
///
/// # Safety
/// `report` must come from [`mdiqds_run`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_report_free(report: *mut MdiqdsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

fn kernel<F: FnOnce() -> Result<f64, Error>>(out: *mut f64, f: F) -> MdiqdsStatus {
    guard(|| match f() {
        Ok(v) => write_out(out, v),
        Err(e) => fail(e),
    })
}

/// Binary entropy `h(p)` in bits.
#[no_mangle]
pub extern "C" fn mdiqds_binary_entropy(p: f64, out: *mut f64) -> MdiqdsStatus {
    kernel(out, || binary_entropy(p))
}

/// Inverse of `h` on `[0, 1/2]`.
#[no_mangle]
pub extern "C" fn mdiqds_inverse_binary_entropy(y: f64, out: *mut f64) -> MdiqdsStatus {
    kernel(out, || inverse_binary_entropy(y).map(Probability::value))
}

/// `log2 sum_{m<=r} C(n, m)`, exact for small `n` and an entropy bound
/// beyond.
#[no_mangle]
pub extern "C" fn mdiqds_binomial_tail_log2(n: u64, r: u64, out: *mut f64) -> MdiqdsStatus {
    kernel(out, || binomial_tail_log2(n, r).map(|t| t.value.log2_value))
}

/// Splits `(e_bar, p_e)` into thirds.
///
/// # Safety
/// `s_a` and `s_v` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mdiqds_choose_thresholds(e_bar: f64, p_e: f64, s_a: *mut f64, s_v: *mut f64) -> MdiqdsStatus {
    guard(|| {
        if s_a.is_null() || s_v.is_null() {
            set_error("output pointer is null");
            return MdiqdsStatus::NullPointer;
        }
        let res = Probability::new(e_bar)
            .and_then(|e| Ok((e, Probability::new(p_e)?)))
            .and_then(|(e, p)| choose_thresholds(e, p));
        match res {
            Ok((a, v)) => {
                s_a.write(a.value());
                s_v.write(v.value());
                MdiqdsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// `2 exp(-(s_v - s_a)^2 n_k / 4)`, clamped to 1.
#[no_mangle]
pub extern "C" fn mdiqds_repudiation_bound(s_a: f64, s_v: f64, n_k: f64, out: *mut f64) -> MdiqdsStatus {
    kernel(out, || {
        let (a, v) = (Probability::new(s_a)?, Probability::new(s_v)?);
        Ok(repudiation_bound(a, v, n_k).0.value())
    })
}

/// Raw-key generation time in minutes for `n_sig` pulses at `pulse_rate`.
#[no_mangle]
pub extern "C" fn mdiqds_raw_key_minutes(n_sig: f64, pulse_rate: f64) -> f64 {
    raw_key_minutes(n_sig, pulse_rate)
}
