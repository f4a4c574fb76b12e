//! C ABI over `bestow`.
//!
//! Every handle is an opaque pointer created by a `bst_*_new`/`parse`
//! function and released with the matching `bst_*_free`. Fallible calls
//! return a [`BstStatus`]; the message for the last failure on the calling
//! thread is available from [`bst_last_error`]. Strings handed out by the
//! library are NUL-terminated, UTF-8, and freed with [`bst_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use bestow::calc::explorer::{explore, Dedup, ExploreError, ExploreOptions};
use bestow::calc::run::{run, RunError, RunOptions, Schedule};
use bestow::calc::syntax::{parse_program, Expr, Variant};
use bestow::calc::types::{typecheck, TypeEnv};
use bestow::runtime::{BestowedRef, Config, Ctx, Runtime, RuntimeError};
use bestow::workloads::ping::{bench_ping, PingMode};
use bestow::workloads::WorkloadError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BstStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    TypeError = 4,
    InvalidArgument = 5,
    RuntimeError = 6,
    Panic = 7,
}

/// Calculus variants, as accepted by [`bst_program_parse`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BstVariant {
    /// Take the variant from the source's `#variant` pragma (default core).
    FromPragma = -1,
    Core = 0,
    Transfer = 1,
    Private = 2,
}

impl BstVariant {
    /// `Err` for values outside the enum.
    fn explicit(raw: i32) -> Result<Option<Variant>, BstStatus> {
        match raw {
            -1 => Ok(None),
            0 => Ok(Some(Variant::Core)),
            1 => Ok(Some(Variant::Transfer)),
            2 => Ok(Some(Variant::PrivateQueues)),
            _ => Err(err(BstStatus::InvalidArgument, format!("unknown variant {raw}"))),
        }
    }

    fn of(v: Variant) -> BstVariant {
        match v {
            Variant::Core => BstVariant::Core,
            Variant::Transfer => BstVariant::Transfer,
            Variant::PrivateQueues => BstVariant::Private,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BstExploreOptions {
    pub depth: usize,
    pub transfer_cap: usize,
    pub state_budget: usize,
    /// Merge states equal up to renaming.
    pub canonicalize: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BstRuntimeOptions {
    /// Run one participant at a time under a seeded scheduler.
    pub deterministic: bool,
    pub seed: u64,
}

/// A parsed program.
pub struct BstProgram {
    variant: Variant,
    expr: Expr,
}

/// The outcome of [`bst_explore`] or [`bst_run`].
pub struct BstReport {
    violations: usize,
    json: CString,
}

/// An actor runtime.
pub struct BstRuntime {
    rt: Runtime,
}

/// A counter owned by its own actor and reachable only through a bestowed
/// reference: every update is delegated to the owner.
pub struct BstCounter {
    cell: BestowedRef<i64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn err(status: BstStatus, msg: impl Into<String>) -> BstStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning a panic into [`BstStatus::Panic`].
fn guard(f: impl FnOnce() -> BstStatus) -> BstStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        err(BstStatus::Panic, msg)
    })
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, BstStatus> {
    if s.is_null() {
        return Err(err(BstStatus::NullArgument, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|e| err(BstStatus::InvalidUtf8, e.to_string()))
}

fn runtime_error(e: RuntimeError) -> BstStatus {
    err(BstStatus::RuntimeError, e.to_string())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("no interior NUL").into_raw()
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return err(BstStatus::NullArgument, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// The message of the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bst_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------------------
// Programs

/// Parses `source` in `variant`, a [`BstVariant`] value. On success `*out`
/// owns a new program.
///
/// # Safety
/// `source` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bst_program_parse(
    source: *const c_char,
    variant: i32,
    out: *mut *mut BstProgram,
) -> BstStatus {
    guard(|| {
        non_null!(out);
        let (source, variant) = match (text(source), BstVariant::explicit(variant)) {
            (Ok(s), Ok(v)) => (s, v),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match parse_program(source, variant) {
            Ok((variant, expr)) => {
                *out = Box::into_raw(Box::new(BstProgram { variant, expr }));
                BstStatus::Ok
            }
            Err(e) => err(BstStatus::ParseError, e.to_string()),
        }
    })
}

/// # Safety
/// `program` must be NULL or a live program.
#[no_mangle]
pub unsafe extern "C" fn bst_program_free(program: *mut BstProgram) {
    if !program.is_null() {
        drop(Box::from_raw(program));
    }
}

/// The variant the program was parsed in.
///
/// # Safety
/// `program` must be a live program.
#[no_mangle]
pub unsafe extern "C" fn bst_program_variant(program: *const BstProgram) -> BstVariant {
    BstVariant::of((*program).variant)
}

/// Typechecks the program; on success `*type_out` (if not NULL) receives
/// its type as a string. A rejection returns [`BstStatus::TypeError`] with
/// the error kind and location in [`bst_last_error`].
///
/// # Safety
/// `program` must be a live program; `type_out` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn bst_program_check(program: *const BstProgram, type_out: *mut *mut c_char) -> BstStatus {
    guard(|| {
        non_null!(program);
        let p = &*program;
        match typecheck(&TypeEnv::new(), &p.expr, p.variant) {
            Ok(ty) => {
                if !type_out.is_null() {
                    *type_out = into_c_string(ty.to_string());
                }
                BstStatus::Ok
            }
            Err(e) => err(BstStatus::TypeError, e.to_string()),
        }
    })
}

/// Default exploration bounds: depth 60, two transfers, two million states.
#[no_mangle]
pub extern "C" fn bst_explore_options_default() -> BstExploreOptions {
    let d = ExploreOptions::default();
    BstExploreOptions {
        depth: d.depth,
        transfer_cap: d.transfer_cap,
        state_budget: d.state_budget,
        canonicalize: false,
    }
}

/// Explores every interleaving of the program. Violations are not an
/// error: inspect them with [`bst_report_violations`] and [`bst_report_json`].
///
/// # Safety
/// `program` must be a live program, `options` NULL (defaults) or valid,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bst_explore(
    program: *const BstProgram,
    options: *const BstExploreOptions,
    out: *mut *mut BstReport,
) -> BstStatus {
    guard(|| {
        non_null!(program, out);
        let p = &*program;
        let o = if options.is_null() { bst_explore_options_default() } else { *options };
        let opts = ExploreOptions {
            depth: o.depth,
            transfer_cap: o.transfer_cap,
            state_budget: o.state_budget,
            dedup: if o.canonicalize { Dedup::Canonical } else { Dedup::Exact },
            ..ExploreOptions::default()
        };
        match explore(&p.expr, p.variant, &opts) {
            Ok(report) => {
                let json = serde_json::to_string(&report).expect("report serializes");
                *out = new_report(report.violations.len(), json);
                BstStatus::Ok
            }
            Err(ExploreError::Type(e)) => err(BstStatus::TypeError, e.to_string()),
        }
    })
}

/// Runs the program along one schedule: `fifo`, `random:SEED`, or an
/// inline script `script:` followed by labels separated by newlines or `;`.
///
/// # Safety
/// `program` must be a live program, `schedule` a NUL-terminated string,
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bst_run(
    program: *const BstProgram,
    schedule: *const c_char,
    max_steps: usize,
    out: *mut *mut BstReport,
) -> BstStatus {
    guard(|| {
        non_null!(program, out);
        let p = &*program;
        let spec = match text(schedule) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let schedule = match Schedule::parse(spec, |inline| Ok(inline.replace(';', "\n"))) {
            Ok(s) => s,
            Err(e) => return err(BstStatus::InvalidArgument, e),
        };
        let opts = RunOptions { schedule, max_steps, wf_every_step: true, ..RunOptions::default() };
        match run(&p.expr, p.variant, &opts) {
            Ok(report) => {
                let mut json = serde_json::to_value(&report).expect("report serializes");
                json["finalConfig"] = report.final_config.to_string().into();
                *out = new_report(report.violations.len(), json.to_string());
                BstStatus::Ok
            }
            Err(RunError::Type(e)) => err(BstStatus::TypeError, e.to_string()),
            Err(e @ RunError::Script { .. }) => err(BstStatus::InvalidArgument, e.to_string()),
        }
    })
}

fn new_report(violations: usize, json: String) -> *mut BstReport {
    Box::into_raw(Box::new(BstReport { violations, json: CString::new(json).expect("JSON has no NUL") }))
}

/// # Safety
/// `report` must be a live report.
#[no_mangle]
pub unsafe extern "C" fn bst_report_violations(report: *const BstReport) -> usize {
    (*report).violations
}

/// The report as JSON (`"schema": 1`). Borrowed: valid until the report is
/// freed.
///
/// # Safety
/// `report` must be a live report.
#[no_mangle]
pub unsafe extern "C" fn bst_report_json(report: *const BstReport) -> *const c_char {
    (*report).json.as_ptr()
}

/// # Safety
/// `report` must be NULL or a live report.
#[no_mangle]
pub unsafe extern "C" fn bst_report_free(report: *mut BstReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

// ---------------------------------------------------------------------------
// Runtime

fn runtime_config(options: *const BstRuntimeOptions) -> Config {
    // SAFETY: callers pass NULL or a valid pointer
    match unsafe { options.as_ref() } {
        Some(o) if o.deterministic => Config::deterministic(o.seed),
        _ => Config::default(),
    }
}

/// Starts a runtime. `options` may be NULL (parallel scheduling).
///
/// # Safety
/// `options` NULL or valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bst_runtime_new(options: *const BstRuntimeOptions, out: *mut *mut BstRuntime) -> BstStatus {
    guard(|| {
        non_null!(out);
        *out = Box::into_raw(Box::new(BstRuntime { rt: Runtime::new(runtime_config(options)) }));
        BstStatus::Ok
    })
}

/// Shuts the runtime down. Counters created from it fail afterwards.
///
/// # Safety
/// `runtime` must be NULL or a live runtime.
#[no_mangle]
pub unsafe extern "C" fn bst_runtime_free(runtime: *mut BstRuntime) {
    if !runtime.is_null() {
        drop(Box::from_raw(runtime));
    }
}

/// Runtime counters as JSON; free with [`bst_string_free`].
///
/// # Safety
/// `runtime` must be a live runtime; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bst_runtime_stats_json(runtime: *const BstRuntime, out: *mut *mut c_char) -> BstStatus {
    guard(|| {
        non_null!(runtime, out);
        *out = into_c_string((*runtime).rt.stats().to_json().to_string());
        BstStatus::Ok
    })
}

/// Spawns an actor owning a counter set to `initial` and bestows it.
///
/// # Safety
/// `runtime` must be a live runtime; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bst_counter_new(runtime: *const BstRuntime, initial: i64, out: *mut *mut BstCounter) -> BstStatus {
    guard(|| {
        non_null!(runtime, out);
        let owner = (*runtime).rt.spawn("counter", ());
        match owner.send(move |_, ctx| ctx.bestow(&ctx.alloc(initial))).get() {
            Ok(cell) => {
                *out = Box::into_raw(Box::new(BstCounter { cell }));
                BstStatus::Ok
            }
            Err(e) => runtime_error(e),
        }
    })
}

/// # Safety
/// `counter` must be NULL or a live counter.
#[no_mangle]
pub unsafe extern "C" fn bst_counter_free(counter: *mut BstCounter) {
    if !counter.is_null() {
        drop(Box::from_raw(counter));
    }
}

/// Adds `delta` through one delegated message, without waiting.
///
/// # Safety
/// `counter` must be a live counter.
#[no_mangle]
pub unsafe extern "C" fn bst_counter_add(counter: *const BstCounter, delta: i64) -> BstStatus {
    guard(|| {
        non_null!(counter);
        (*counter).cell.post(move |n, _| *n += delta).map_or_else(runtime_error, |_| BstStatus::Ok)
    })
}

/// Adds every delta in one coalesced envelope, applied in order without
/// interleaving, and waits for it.
///
/// # Safety
/// `counter` must be a live counter; `deltas` must point to `len` values
/// (or be NULL when `len` is 0).
#[no_mangle]
pub unsafe extern "C" fn bst_counter_add_batch(counter: *const BstCounter, deltas: *const i64, len: usize) -> BstStatus {
    guard(|| {
        non_null!(counter);
        if len == 0 {
            return BstStatus::Ok;
        }
        non_null!(deltas);
        let cell = &(*counter).cell;
        let ops: Vec<_> = std::slice::from_raw_parts(deltas, len)
            .iter()
            .map(|&d| move |n: &mut i64, _: &Ctx| *n += d)
            .collect();
        let futures = match cell.handle().coalesce(cell, ops) {
            Ok(f) => f,
            Err(e) => return runtime_error(e),
        };
        for f in futures {
            if let Err(e) = f.get() {
                return runtime_error(e);
            }
        }
        BstStatus::Ok
    })
}

/// Reads the counter after every update sent before this call.
///
/// # Safety
/// `counter` must be a live counter; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bst_counter_get(counter: *const BstCounter, out: *mut i64) -> BstStatus {
    guard(|| {
        non_null!(counter, out);
        match (*counter).cell.send(|n, _| *n).get() {
            Ok(v) => {
                *out = v;
                BstStatus::Ok
            }
            Err(e) => runtime_error(e),
        }
    })
}

/// Runs the ping-pong benchmark; `mode` is `direct`, `bestowed` or
/// `bestowed-atomic`. `*json_out` receives the report; free it with
/// [`bst_string_free`].
///
/// # Safety
/// `options` NULL or valid; `mode` a NUL-terminated string; `json_out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bst_bench_ping(
    options: *const BstRuntimeOptions,
    mode: *const c_char,
    messages: u64,
    runs: usize,
    batch: usize,
    json_out: *mut *mut c_char,
) -> BstStatus {
    guard(|| {
        non_null!(json_out);
        let mode: PingMode = match text(mode).map(str::parse) {
            Ok(Ok(m)) => m,
            Ok(Err(e)) => return err(BstStatus::InvalidArgument, e),
            Err(s) => return s,
        };
        match bench_ping(&runtime_config(options), messages, mode, runs, batch) {
            Ok(report) => {
                let mut json = serde_json::to_value(&report).expect("report serializes");
                json["schema"] = 1.into();
                *json_out = into_c_string(json.to_string());
                BstStatus::Ok
            }
            Err(WorkloadError::Runtime(e)) => runtime_error(e),
            Err(e) => err(BstStatus::InvalidArgument, e.to_string()),
        }
    })
}
