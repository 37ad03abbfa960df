//! C ABI over the eligo engine.
//!
//! Conventions:
//! - Every fallible call returns an [`EligoStatus`]; on failure the message is
//!   available from [`eligo_last_error`] on the same thread.
//! - Objects are opaque handles released with their `_free` function.
//! - Strings returned through `char **out` are owned by the caller and must
//!   be released with [`eligo_string_free`].
//! - Panics never cross the boundary; they surface as `ELIGO_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use eligo::dsl::{parse_spec, serialize_spec, CriterionSpec};
use eligo::ehr::{generate_synthetic, load_store_dir, write_store, PatientStore, SyntheticConfig};
use eligo::grid::{grid_size, DEFAULT_MAX_CANDIDATES};
use eligo::pipeline::EvalConfig;
use eligo::results::ResultsTable;
use eligo::sweep::{run_sweep, SweepError, SweepOptions};

/// Result codes; the numeric values are stable.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EligoStatus {
    Ok = 0,
    /// Null pointer, invalid UTF-8 or malformed JSON argument.
    InvalidArgument = 1,
    /// Spec, data or configuration rejected.
    Validation = 2,
    /// Failure while computing or writing.
    Runtime = 3,
    /// Candidate id or metric name does not exist.
    NotFound = 4,
    Panic = 5,
}

/// Loaded patient records.
pub struct EligoStore(PatientStore);

/// Parsed criteria specification.
pub struct EligoSpec(CriterionSpec);

/// Evaluated results table.
pub struct EligoResults(ResultsTable);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(EligoStatus, String);

fn fail(status: EligoStatus, msg: impl ToString) -> Fail {
    Fail(status, msg.to_string())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> EligoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            EligoStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            EligoStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(EligoStatus::InvalidArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(EligoStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

/// # Safety
/// `p` must be null or point to a live `T`.
unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(EligoStatus::InvalidArgument, format!("{name} is null")))
}

/// # Safety
/// `out` must be null or writable.
unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(EligoStatus::InvalidArgument, "out is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// # Safety
/// `out` must be null or writable.
unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(EligoStatus::InvalidArgument, "out is null"));
    }
    let c = CString::new(s).map_err(|_| fail(EligoStatus::Runtime, "string contains NUL"))?;
    *out = c.into_raw();
    Ok(())
}

/// Engine version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn eligo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next eligo call on the same thread.
#[no_mangle]
pub extern "C" fn eligo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eligo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads `patients.csv`, `events.csv`, `labs.csv` and `dictionary.json`
/// from `dir`.
///
/// # Safety
/// `dir` must be a valid string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_store_load(dir: *const c_char, out: *mut *mut EligoStore) -> EligoStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let (store, _) = load_store_dir(Path::new(dir)).map_err(|e| fail(EligoStatus::Validation, e))?;
        put(out, EligoStore(store))
    })
}

/// Generates a synthetic store. `config_json` may be null for defaults.
///
/// # Safety
/// `config_json` must be null or a valid string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_store_generate(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut EligoStore,
) -> EligoStatus {
    guard(|| {
        let cfg: SyntheticConfig = if config_json.is_null() {
            SyntheticConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| fail(EligoStatus::InvalidArgument, format!("config_json: {e}")))?
        };
        let store = generate_synthetic(&cfg, seed).map_err(|e| fail(EligoStatus::Validation, e))?;
        put(out, EligoStore(store))
    })
}

/// Writes the store in the format read by [`eligo_store_load`].
///
/// # Safety
/// `store` must be a live handle and `dir` a valid string.
#[no_mangle]
pub unsafe extern "C" fn eligo_store_write(store: *const EligoStore, dir: *const c_char) -> EligoStatus {
    guard(|| {
        let store = ref_arg(store, "store")?;
        let dir = str_arg(dir, "dir")?;
        write_store(&store.0, Path::new(dir)).map_err(|e| fail(EligoStatus::Runtime, e))
    })
}

/// Number of patients, 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eligo_store_patient_count(store: *const EligoStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.patients().len())
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eligo_store_free(store: *mut EligoStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Parses and validates a spec. Errors carry `line:col` in the message.
///
/// # Safety
/// `text` must be a valid string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_spec_parse(text: *const c_char, out: *mut *mut EligoSpec) -> EligoStatus {
    guard(|| {
        let spec = parse_spec(str_arg(text, "text")?).map_err(|e| fail(EligoStatus::Validation, e))?;
        put(out, EligoSpec(spec))
    })
}

/// Number of candidates in the spec's grid.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_spec_grid_size(spec: *const EligoSpec, out: *mut u64) -> EligoStatus {
    guard(|| {
        let spec = ref_arg(spec, "spec")?;
        let size = u64::try_from(grid_size(&spec.0)).map_err(|_| fail(EligoStatus::Validation, "grid size exceeds 64 bits"))?;
        let out = out.as_mut().ok_or_else(|| fail(EligoStatus::InvalidArgument, "out is null"))?;
        *out = size;
        Ok(())
    })
}

/// Hex SHA-256 of the canonical spec text.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_spec_hash(spec: *const EligoSpec, out: *mut *mut c_char) -> EligoStatus {
    guard(|| put_string(out, ref_arg(spec, "spec")?.0.hash()))
}

/// Canonical spec text.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_spec_canonical(spec: *const EligoSpec, out: *mut *mut c_char) -> EligoStatus {
    guard(|| put_string(out, serialize_spec(&ref_arg(spec, "spec")?.0)))
}

/// Spec AST as JSON.
///
/// # Safety
/// `spec` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_spec_to_json(spec: *const EligoSpec, out: *mut *mut c_char) -> EligoStatus {
    guard(|| {
        let json = serde_json::to_string(&ref_arg(spec, "spec")?.0).map_err(|e| fail(EligoStatus::Runtime, e))?;
        put_string(out, json)
    })
}

/// # Safety
/// `spec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eligo_spec_free(spec: *mut EligoSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Evaluates every candidate. `config_json` (nullable) is an evaluation
/// config object; `threads` 0 uses all cores. Results do not depend on
/// `threads`.
///
/// # Safety
/// Handles must be live, `config_json` null or a valid string, `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_evaluate(
    store: *const EligoStore,
    spec: *const EligoSpec,
    config_json: *const c_char,
    threads: u32,
    out: *mut *mut EligoResults,
) -> EligoStatus {
    guard(|| {
        let store = ref_arg(store, "store")?;
        let spec = ref_arg(spec, "spec")?;
        let config: EvalConfig = if config_json.is_null() {
            EvalConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| fail(EligoStatus::InvalidArgument, format!("config_json: {e}")))?
        };
        let options = SweepOptions { threads: threads as usize, max_candidates: DEFAULT_MAX_CANDIDATES, keep_details: false };
        let output = run_sweep(&store.0, &spec.0, &config, &options, None).map_err(|e| match e {
            SweepError::Grid(_) => fail(EligoStatus::Validation, e),
            _ => fail(EligoStatus::Runtime, e),
        })?;
        put(out, EligoResults(output.table))
    })
}

/// Parses a results document produced by [`eligo_results_to_json`] or the CLI.
///
/// # Safety
/// `json` must be a valid string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_results_from_json(json: *const c_char, out: *mut *mut EligoResults) -> EligoStatus {
    guard(|| {
        let table = ResultsTable::read_json(str_arg(json, "json")?.as_bytes()).map_err(|e| fail(EligoStatus::Validation, e))?;
        put(out, EligoResults(table))
    })
}

/// Number of candidates, 0 for a null handle.
///
/// # Safety
/// `results` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn eligo_results_len(results: *const EligoResults) -> u64 {
    results.as_ref().map_or(0, |r| r.0.records.len() as u64)
}

/// One outcome metric (`n`, `diversity`, `hr`, `hr_lo`, `hr_hi`, `p`,
/// `kidney_rr`, `liver_rr`). `*present` is false when the candidate has no
/// value for it; `*out` is then NaN.
///
/// # Safety
/// `results` must be a live handle, `metric` a valid string, `out` and
/// `present` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_results_metric(
    results: *const EligoResults,
    candidate_id: u64,
    metric: *const c_char,
    out: *mut f64,
    present: *mut bool,
) -> EligoStatus {
    guard(|| {
        let table = &ref_arg(results, "results")?.0;
        let metric = str_arg(metric, "metric")?;
        let rec = table.get(candidate_id).ok_or_else(|| fail(EligoStatus::NotFound, format!("candidate {candidate_id}")))?;
        let value = match metric {
            "hr_lo" => rec.hr_lo,
            "hr_hi" => rec.hr_hi,
            "p" => rec.p,
            m if eligo::results::METRICS.contains(&m) => rec.metric(m),
            m => return Err(fail(EligoStatus::NotFound, format!("unknown metric `{m}`"))),
        };
        if out.is_null() || present.is_null() {
            return Err(fail(EligoStatus::InvalidArgument, "out is null"));
        }
        *out = value.unwrap_or(f64::NAN);
        *present = value.is_some();
        Ok(())
    })
}

/// Candidate status: `ok` or `degenerate:<reason>`.
///
/// # Safety
/// `results` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_results_status(
    results: *const EligoResults,
    candidate_id: u64,
    out: *mut *mut c_char,
) -> EligoStatus {
    guard(|| {
        let table = &ref_arg(results, "results")?.0;
        let rec = table.get(candidate_id).ok_or_else(|| fail(EligoStatus::NotFound, format!("candidate {candidate_id}")))?;
        put_string(out, rec.status.to_string())
    })
}

/// Full results document as JSON, byte-identical to the CLI's output file.
///
/// # Safety
/// `results` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_results_to_json(results: *const EligoResults, out: *mut *mut c_char) -> EligoStatus {
    guard(|| put_string(out, ref_arg(results, "results")?.0.to_json()))
}

/// Results as CSV with a header row.
///
/// # Safety
/// `results` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn eligo_results_to_csv(results: *const EligoResults, out: *mut *mut c_char) -> EligoStatus {
    guard(|| {
        let mut buf = Vec::new();
        ref_arg(results, "results")?.0.write_csv(&mut buf).map_err(|e| fail(EligoStatus::Runtime, e))?;
        put_string(out, String::from_utf8(buf).map_err(|e| fail(EligoStatus::Runtime, e))?)
    })
}

/// # Safety
/// `results` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eligo_results_free(results: *mut EligoResults) {
    if !results.is_null() {
        drop(Box::from_raw(results));
    }
}
