//! C ABI over the pagevm engine.
//!
//! Every object crosses the boundary as an opaque pointer created by a
//! `*_new`/constructor call and released by the matching `*_free`. Fallible
//! calls return a [`PagevmStatus`]; on anything but `PAGEVM_OK` the message is
//! available from [`pagevm_last_error_message`] on the same thread. Strings
//! handed out by this library must be released with [`pagevm_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pagevm::engine::{self, Engine};
use pagevm::error::Error;
use pagevm::fault::FaultClass;
use pagevm::policy::{PolicyConfig, Preset};
use pagevm::report::ReplayReport;
use pagevm::workload::{build_adversarial, build_tier1, generate_family, load_spec, WorkloadSpec};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PagevmStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    UnknownName = 3,
    InvalidWorkload = 4,
    InvalidConfig = 5,
    Io = 6,
    Parse = 7,
    Engine = 8,
    /// `pagevm_engine_step` ran out of turns.
    Done = 9,
    Panic = 10,
}

/// A workload: page catalog plus turn script.
pub struct PagevmWorkload(WorkloadSpec);

/// A policy configuration.
pub struct PagevmPolicy(PolicyConfig);

/// A replay in progress.
pub struct PagevmEngine(Engine);

/// Counters and summary of a finished replay.
pub struct PagevmReport(ReplayReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(PagevmStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::UnknownFamily(_) | Error::UnknownScenario(_) | Error::UnknownPolicy(_) => PagevmStatus::UnknownName,
            Error::InvalidWorkload(_) => PagevmStatus::InvalidWorkload,
            Error::InvalidConfig(_) => PagevmStatus::InvalidConfig,
            Error::Io { .. } => PagevmStatus::Io,
            Error::Parse { .. } => PagevmStatus::Parse,
            _ => PagevmStatus::Engine,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PagevmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PagevmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PagevmStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PagevmStatus::NullArgument, format!("`{what}` is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(PagevmStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn obj<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn pagevm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn pagevm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Generates a synthetic family workload (`evidence_heavy`,
/// `interruption_heavy`, `lifecycle_torture`, `multi_session`).
///
/// # Safety
/// `family` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_workload_generate(
    family: *const c_char,
    seed: u64,
    turns: u32,
    out: *mut *mut PagevmWorkload,
) -> PagevmStatus {
    guard(|| {
        let family = text(family, "family")?.parse()?;
        put(out, PagevmWorkload(generate_family(family, seed, turns)?))
    })
}

/// Builds a fixed scenario: an adversarial one (`starvation`, `churn`,
/// `cascade`) or a lifecycle regression case by its name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_workload_scenario(name: *const c_char, out: *mut *mut PagevmWorkload) -> PagevmStatus {
    guard(|| {
        let name = text(name, "name")?;
        let spec = match name.parse() {
            Ok(a) => build_adversarial(a),
            Err(_) => build_tier1(name.parse()?).workload,
        };
        put(out, PagevmWorkload(spec))
    })
}

/// Parses and validates a workload from JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_workload_from_json(json: *const c_char, out: *mut *mut PagevmWorkload) -> PagevmStatus {
    guard(|| {
        let spec = WorkloadSpec::from_json(text(json, "json")?).map_err(|e| Error::parse("<json>", e))?;
        spec.validate()?;
        put(out, PagevmWorkload(spec))
    })
}

/// Loads a workload file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_workload_load(path: *const c_char, out: *mut *mut PagevmWorkload) -> PagevmStatus {
    guard(|| put(out, PagevmWorkload(load_spec(text(path, "path")?)?)))
}

/// Canonical JSON of the workload, or null if `w` is null. Free with
/// [`pagevm_string_free`].
///
/// # Safety
/// `w` must be a live workload handle or null.
#[no_mangle]
pub unsafe extern "C" fn pagevm_workload_to_json(w: *const PagevmWorkload) -> *mut c_char {
    w.as_ref().map_or(ptr::null_mut(), |w| owned_string(w.0.to_json()))
}

/// Number of scripted turns, 0 for null.
///
/// # Safety
/// `w` must be a live workload handle or null.
#[no_mangle]
pub unsafe extern "C" fn pagevm_workload_turns(w: *const PagevmWorkload) -> u32 {
    w.as_ref().map_or(0, |w| w.0.turns.len() as u32)
}

/// # Safety
/// `w` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pagevm_workload_free(w: *mut PagevmWorkload) {
    if !w.is_null() {
        drop(Box::from_raw(w));
    }
}

/// Policy preset (`full`, `retrieval`, `compaction-hybrid`, `lru`, `oracle`,
/// ...) at the given token budget.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_policy_preset(name: *const c_char, budget: u32, out: *mut *mut PagevmPolicy) -> PagevmStatus {
    guard(|| {
        let preset: Preset = text(name, "name")?.parse()?;
        put(out, PagevmPolicy(preset.config(budget)))
    })
}

/// Applies one `key=value` override, e.g. `auto_pin=false` or `w_rec=2.5`.
/// The policy is left untouched on failure.
///
/// # Safety
/// `p` must be a live policy handle; `knob` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pagevm_policy_set(p: *mut PagevmPolicy, knob: *const c_char) -> PagevmStatus {
    guard(|| {
        let p = p.as_mut().ok_or_else(|| null("policy"))?;
        let mut next = p.0.clone();
        next.apply_override(text(knob, "knob")?)?;
        next.validate()?;
        p.0 = next;
        Ok(())
    })
}

/// Token budget of the policy, 0 for null.
///
/// # Safety
/// `p` must be a live policy handle or null.
#[no_mangle]
pub unsafe extern "C" fn pagevm_policy_budget(p: *const PagevmPolicy) -> u32 {
    p.as_ref().map_or(0, |p| p.0.budget)
}

/// # Safety
/// `p` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pagevm_policy_free(p: *mut PagevmPolicy) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Replays the whole workload under the policy. Neither input is consumed.
///
/// # Safety
/// `w` and `p` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_replay(
    w: *const PagevmWorkload,
    p: *const PagevmPolicy,
    out: *mut *mut PagevmReport,
) -> PagevmStatus {
    guard(|| {
        let w = obj(w, "workload")?;
        let p = obj(p, "policy")?;
        put(out, PagevmReport(engine::replay(&w.0, p.0.clone())?))
    })
}

/// Starts a step-by-step replay.
///
/// # Safety
/// `w` and `p` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_engine_new(
    w: *const PagevmWorkload,
    p: *const PagevmPolicy,
    out: *mut *mut PagevmEngine,
) -> PagevmStatus {
    guard(|| {
        let w = obj(w, "workload")?;
        let p = obj(p, "policy")?;
        put(out, PagevmEngine(Engine::new(&w.0, p.0.clone())?))
    })
}

/// Runs the next scripted turn and writes its decision record as one JSON
/// line to `record_out` (free with [`pagevm_string_free`]; may be null to
/// discard). Returns `PAGEVM_DONE` once every turn has run.
///
/// # Safety
/// `e` must be a live engine handle; `record_out` writable or null.
#[no_mangle]
pub unsafe extern "C" fn pagevm_engine_step(e: *mut PagevmEngine, record_out: *mut *mut c_char) -> PagevmStatus {
    let mut done = false;
    let status = guard(|| {
        let e = e.as_mut().ok_or_else(|| null("engine"))?;
        match e.0.step() {
            Some(outcome) => {
                if !record_out.is_null() {
                    *record_out = owned_string(outcome.record.to_line());
                }
            }
            None => done = true,
        }
        Ok(())
    });
    if done {
        PagevmStatus::Done
    } else {
        status
    }
}

/// Report for the turns run so far.
///
/// # Safety
/// `e` must be a live engine handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_engine_report(e: *const PagevmEngine, out: *mut *mut PagevmReport) -> PagevmStatus {
    guard(|| put(out, PagevmReport(obj(e, "engine")?.0.report())))
}

/// # Safety
/// `e` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pagevm_engine_free(e: *mut PagevmEngine) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Explicit faults, pinned-invariant misses included. 0 for null.
///
/// # Safety
/// `r` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn pagevm_report_explicit_faults(r: *const PagevmReport) -> u64 {
    r.as_ref().map_or(0, |r| r.0.explicit_faults)
}

/// (explicit faults + duplicate-signature alerts) / (hits + 1). 0 for null.
///
/// # Safety
/// `r` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn pagevm_report_thrash(r: *const PagevmReport) -> f64 {
    r.as_ref().map_or(0.0, |r| r.0.thrash)
}

/// Turns replayed. 0 for null.
///
/// # Safety
/// `r` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn pagevm_report_turns(r: *const PagevmReport) -> u64 {
    r.as_ref().map_or(0, |r| r.0.turns as u64)
}

/// Count for one fault class by label (`refetch`, `flush_miss`, ...).
///
/// # Safety
/// `r` must be a live report handle, `class` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pagevm_report_fault_count(
    r: *const PagevmReport,
    class: *const c_char,
    out: *mut u64,
) -> PagevmStatus {
    guard(|| {
        let r = obj(r, "report")?;
        let label = text(class, "class")?;
        let class = FaultClass::ALL
            .into_iter()
            .find(|c| c.label() == label)
            .ok_or_else(|| Failure(PagevmStatus::UnknownName, format!("unknown fault class `{label}`")))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = r.0.count(class);
        Ok(())
    })
}

/// Full report as JSON, or null if `r` is null. Free with
/// [`pagevm_string_free`].
///
/// # Safety
/// `r` must be a live report handle or null.
#[no_mangle]
pub unsafe extern "C" fn pagevm_report_to_json(r: *const PagevmReport) -> *mut c_char {
    r.as_ref().map_or(ptr::null_mut(), |r| {
        owned_string(serde_json::to_string(&r.0).expect("report serializes"))
    })
}

/// # Safety
/// `r` must come from this library and not have been freed. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn pagevm_report_free(r: *mut PagevmReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
