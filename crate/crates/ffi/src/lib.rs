//! C ABI over `lobmdp`.
//!
//! Objects cross the boundary as opaque handles released by the matching
//! `*_free` function. Every fallible call returns a [`LobmdpStatus`]; on
//! failure [`lobmdp_last_error`] describes the most recent error on the
//! calling thread. Strings returned to the caller are NUL-terminated UTF-8
//! and must be released with [`lobmdp_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lobmdp::events::{normalize_volumes, parse_stream};
use lobmdp::fixture::{flow_model, FixtureParams};
use lobmdp::flow::{estimate_flow, glrt};
use lobmdp::mdp::{build_variant, solve, MdpSpec, MdpState, PolicyFile, SolveOptions, Solution, Status, Variant};
use lobmdp::strategies::{comparison_table, run_simulation};
use lobmdp::{Error, FlowModel, OrderType};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LobmdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Parse = 4,
    UnusableModel = 5,
    NotConverged = 6,
    MissingState = 7,
    Io = 8,
    Panic = 9,
}

/// Trader actions, in tie-break order.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LobmdpAction {
    Wait = 0,
    PlaceLo = 1,
    Cancel = 2,
    Market = 3,
}

/// Action sets: all orders, no cancellations, no market orders.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LobmdpVariant {
    AllOrders = 0,
    NoCo = 1,
    NoMo = 2,
}

/// Estimated or built-in flow model.
pub struct LobmdpModel {
    model: FlowModel,
}

/// Solved placement problem for one variant, with the model it was solved on.
pub struct LobmdpPolicy {
    model: FlowModel,
    spec: MdpSpec,
    solution: Solution,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> LobmdpStatus {
    match e {
        Error::Parse { .. } | Error::UnknownEvent { .. } | Error::NonMonotoneTimestamp { .. } | Error::Json(_) => {
            LobmdpStatus::Parse
        }
        Error::UnusableRow { .. } | Error::Version(_) => LobmdpStatus::UnusableModel,
        Error::NotConverged { .. } | Error::FitNotConverged(_) => LobmdpStatus::NotConverged,
        Error::MissingState(_) => LobmdpStatus::MissingState,
        Error::Io(_) | Error::MissingFile(_) => LobmdpStatus::Io,
        _ => LobmdpStatus::InvalidArgument,
    }
}

struct Fail(LobmdpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Run `f`, record any error or panic, and return its status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LobmdpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LobmdpStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LobmdpStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(LobmdpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LobmdpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

fn c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(LobmdpStatus::InvalidArgument, "output contains a NUL byte".into()))
}

fn variant(v: LobmdpVariant) -> Variant {
    match v {
        LobmdpVariant::AllOrders => Variant::AllOrders,
        LobmdpVariant::NoCo => Variant::NoCo,
        LobmdpVariant::NoMo => Variant::NoMo,
    }
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lobmdp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn lobmdp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Built-in mirror-symmetric model with cap `k`, continuation `theta` and
/// dependence `e_effect` on the last order type.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_model_fixture(k: u32, theta: f64, e_effect: f64, out: *mut *mut LobmdpModel) -> LobmdpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if k < 1 || !(0.0..=1.0).contains(&theta) || !(e_effect >= 0.0) {
            return Err(Fail(LobmdpStatus::InvalidArgument, format!("bad fixture parameters k={k} theta={theta} e_effect={e_effect}")));
        }
        let model = flow_model(&FixtureParams { k, theta, e_effect });
        *out = Box::into_raw(Box::new(LobmdpModel { model }));
        Ok(())
    })
}

/// Load a model from its JSON form.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_model_from_json(json: *const c_char, out: *mut *mut LobmdpModel) -> LobmdpStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let model = FlowModel::from_json(text)?;
        *out = Box::into_raw(Box::new(LobmdpModel { model }));
        Ok(())
    })
}

/// Normalize a canonical event CSV to cap `k` and estimate a model.
///
/// # Safety
/// `csv` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_model_estimate(
    csv: *const c_char,
    k: u32,
    smoothing: f64,
    out: *mut *mut LobmdpModel,
) -> LobmdpStatus {
    guard(|| {
        let text = str_arg(csv, "csv")?;
        let out = out_arg(out, "out")?;
        let (events, factor) = normalize_volumes(&parse_stream(text)?, k)?;
        let mut model = estimate_flow(&events, k, smoothing)?;
        model.factor = factor;
        *out = Box::into_raw(Box::new(LobmdpModel { model }));
        Ok(())
    })
}

/// Serialize a model to JSON; free the result with `lobmdp_string_free`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_model_to_json(model: *const LobmdpModel, out: *mut *mut c_char) -> LobmdpStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let out = out_arg(out, "out")?;
        *out = c_string(m.model.to_json()?)?;
        Ok(())
    })
}

/// Continuation probability of the model.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_model_theta(model: *const LobmdpModel, out: *mut f64) -> LobmdpStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(model, "model")?.model.theta;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_model_free(model: *mut LobmdpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Likelihood ratio test of dependence on the last order type, on a raw
/// event CSV normalized to cap `k`.
///
/// # Safety
/// `csv` must be a NUL-terminated string; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_glrt(csv: *const c_char, k: u32, statistic: *mut f64, p_value: *mut f64) -> LobmdpStatus {
    guard(|| {
        let text = str_arg(csv, "csv")?;
        let statistic = out_arg(statistic, "statistic")?;
        let p_value = out_arg(p_value, "p_value")?;
        let (events, _) = normalize_volumes(&parse_stream(text)?, k)?;
        let r = glrt(&events, k);
        *statistic = r.statistic;
        *p_value = r.p_value;
        Ok(())
    })
}

/// Solve the placement problem with `horizon` periods for one variant.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_solve(
    model: *const LobmdpModel,
    horizon: u32,
    which: LobmdpVariant,
    tol: f64,
    out: *mut *mut LobmdpPolicy,
) -> LobmdpStatus {
    guard(|| {
        let m = ref_arg(model, "model")?;
        let out = out_arg(out, "out")?;
        if !(tol > 0.0) {
            return Err(Fail(LobmdpStatus::InvalidArgument, format!("tol = {tol} must be positive")));
        }
        let spec = build_variant(&m.model, m.model.k, horizon, variant(which))?;
        let solution = solve(&spec, SolveOptions::with_tol(tol))?;
        *out = Box::into_raw(Box::new(LobmdpPolicy { model: m.model.clone(), spec, solution }));
        Ok(())
    })
}

/// Optimal action and value at one state.
///
/// `last` is the order-type index (MB, MS, LB, LS, CB, CS = 0..5) and
/// `status` one of `'a'` (no order), `'b'` (resting), `'c'`, `'d'` (filled).
/// With a resting order `v_front` counts the orders ahead of and including
/// the trader's; otherwise it is 0 and `v_behind` is the whole bid.
///
/// # Safety
/// `policy` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_policy_lookup(
    policy: *const LobmdpPolicy,
    v_front: u32,
    v_behind: u32,
    v_ask: u32,
    last: u32,
    status: c_char,
    m: u32,
    locked: bool,
    action: *mut LobmdpAction,
    value: *mut f64,
) -> LobmdpStatus {
    guard(|| {
        let p = ref_arg(policy, "policy")?;
        let action = out_arg(action, "action")?;
        let value = out_arg(value, "value")?;
        if last > 5 {
            return Err(Fail(LobmdpStatus::InvalidArgument, format!("order type index {last} outside 0..=5")));
        }
        let status = Status::from_letter(status as u8 as char)
            .ok_or_else(|| Fail(LobmdpStatus::InvalidArgument, format!("unknown status {:?}", status as u8 as char)))?;
        let s = MdpState { v_front, v_behind, v_ask, e: OrderType::from_index(last as usize), status, m, locked };
        let missing = || Fail(LobmdpStatus::MissingState, format!("state {s} is not in the solved problem"));
        let a = p.solution.action(&p.spec, &s).ok_or_else(missing)?;
        *value = p.solution.value(&p.spec, &s).ok_or_else(missing)?;
        *action = match a {
            lobmdp::mdp::Action::Wait => LobmdpAction::Wait,
            lobmdp::mdp::Action::PlaceLo => LobmdpAction::PlaceLo,
            lobmdp::mdp::Action::Cancel => LobmdpAction::Cancel,
            lobmdp::mdp::Action::Market => LobmdpAction::Market,
        };
        Ok(())
    })
}

/// Expected value from a freshly refilled book with `m` periods left.
///
/// # Safety
/// `policy` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_policy_horizon_value(policy: *const LobmdpPolicy, m: u32, out: *mut f64) -> LobmdpStatus {
    guard(|| {
        let p = ref_arg(policy, "policy")?;
        let out = out_arg(out, "out")?;
        if m == 0 || m > p.spec.horizon {
            return Err(Fail(LobmdpStatus::InvalidArgument, format!("m = {m} outside 1..={}", p.spec.horizon)));
        }
        *out = p.spec.horizon_value(&p.model, &p.solution.values.u, m);
        Ok(())
    })
}

/// Serialize the solved policy to its versioned JSON form.
///
/// # Safety
/// `policy` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_policy_to_json(policy: *const LobmdpPolicy, out: *mut *mut c_char) -> LobmdpStatus {
    guard(|| {
        let p = ref_arg(policy, "policy")?;
        let out = out_arg(out, "out")?;
        *out = c_string(PolicyFile::from_solution(&p.spec, &p.solution).to_json()?)?;
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_policy_free(policy: *mut LobmdpPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Simulate `n_policies` solved strategies on common random paths and write
/// the comparison table as CSV. All policies must share the model and horizon.
///
/// # Safety
/// `policies` must point to `n_policies` live handles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn lobmdp_simulate(
    policies: *const *const LobmdpPolicy,
    n_policies: usize,
    n_paths: usize,
    seed: u64,
    out: *mut *mut c_char,
) -> LobmdpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if policies.is_null() || n_policies == 0 {
            return Err(Fail(LobmdpStatus::InvalidArgument, "need at least one policy".into()));
        }
        let handles = std::slice::from_raw_parts(policies, n_policies)
            .iter()
            .map(|&p| ref_arg(p, "policy"))
            .collect::<Result<Vec<_>, _>>()?;
        let first = handles[0];
        if handles.iter().any(|p| p.model != first.model || p.spec.horizon != first.spec.horizon) {
            return Err(Fail(LobmdpStatus::InvalidArgument, "policies differ in model or horizon".into()));
        }
        let bundle: Vec<(&MdpSpec, &Solution)> = handles.iter().map(|p| (&p.spec, &p.solution)).collect();
        let results = run_simulation(&first.model, &bundle, n_paths, first.spec.horizon, seed)?;
        *out = c_string(comparison_table(&results))?;
        Ok(())
    })
}
