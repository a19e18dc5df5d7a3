//! C ABI for the `ntd` library.
//!
//! The surface is deliberately small: load a model (from a file path or a
//! JSON string), query its dimensions, request the per-horizon stability
//! report or the horizon-bound summary as JSON documents, read the
//! fixed-point parameter vector for a horizon, and free what was allocated.
//!
//! Conventions:
//! - Every fallible function returns an [`NtdStatus`] code and writes its
//!   result through an out-pointer; `NTD_STATUS_OK` (0) means success.
//! - On failure a human-readable message is stored per thread and can be
//!   fetched with [`ntd_last_error_message`]. The pointer is valid until the
//!   next `ntd_*` call on the same thread.
//! - `NtdModel` is opaque. Free it with [`ntd_model_free`]. Strings returned
//!   through out-pointers are owned by the caller and must be released with
//!   [`ntd_string_free`]; never with `free(3)`.
//! - All functions are panic-safe: a Rust panic is caught at the boundary and
//!   reported as `NTD_STATUS_INTERNAL_PANIC` instead of unwinding into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ntd::{mdp::DerivedModel, NtdError};

/// Status codes returned by every fallible function in this library.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NtdStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The model file could not be read.
    IoError = 3,
    /// The model document was not valid JSON.
    ParseError = 4,
    /// The model failed structural or stochastic validation.
    InvalidModel = 5,
    /// An argument was outside its documented domain (for example `n == 0`).
    InvalidArgument = 6,
    /// A matrix that must be invertible was singular to working precision.
    SingularMatrix = 7,
    /// An iterative numeric routine failed to converge.
    NoConvergence = 8,
    /// A routine requiring a Hurwitz matrix was given a non-Hurwitz one.
    NotHurwitz = 9,
    /// Generic numeric precondition failure.
    NumericError = 10,
    /// A caller-provided buffer length did not match the required length.
    BufferMismatch = 11,
    /// An internal panic was caught at the boundary; this is a bug.
    InternalPanic = 12,
}

/// Opaque handle to a validated model and its derived quantities.
pub struct NtdModel {
    inner: DerivedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let owned = CString::new(msg.replace('\0', "-")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(owned));
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

fn status_of(err: &NtdError) -> NtdStatus {
    match err {
        NtdError::Io(_) => NtdStatus::IoError,
        NtdError::Parse(_) => NtdStatus::ParseError,
        NtdError::InvalidModel(_) => NtdStatus::InvalidModel,
        NtdError::Singular(_) => NtdStatus::SingularMatrix,
        NtdError::NonConvergence(_) => NtdStatus::NoConvergence,
        NtdError::NotHurwitz(_) => NtdStatus::NotHurwitz,
        NtdError::Numeric(_) => NtdStatus::NumericError,
        NtdError::InvalidConfig(_) => NtdStatus::InvalidArgument,
    }
}

fn fail(err: &NtdError) -> NtdStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

/// Run `body` with panics converted to `NTD_STATUS_INTERNAL_PANIC`.
fn guarded(body: impl FnOnce() -> NtdStatus) -> NtdStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| (*s).to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("internal panic: {msg}"));
            NtdStatus::InternalPanic
        }
    }
}

/// # Safety
/// `ptr` must be null or a pointer to a NUL-terminated string.
unsafe fn read_c_str<'a>(ptr: *const c_char) -> Result<&'a str, NtdStatus> {
    if ptr.is_null() {
        set_last_error("string argument is null");
        return Err(NtdStatus::NullPointer);
    }
    // SAFETY: non-null and NUL-terminated per this function's contract.
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_last_error("string argument is not valid UTF-8");
        NtdStatus::InvalidUtf8
    })
}

fn write_model(model: DerivedModel, out: *mut *mut NtdModel) -> NtdStatus {
    let handle = Box::new(NtdModel { inner: model });
    // SAFETY: `out` was checked non-null by the caller.
    unsafe { *out = Box::into_raw(handle) };
    NtdStatus::Ok
}

fn write_string(text: String, out: *mut *mut c_char) -> NtdStatus {
    match CString::new(text) {
        Ok(owned) => {
            // SAFETY: `out` was checked non-null by the caller.
            unsafe { *out = owned.into_raw() };
            NtdStatus::Ok
        }
        Err(_) => {
            set_last_error("result contained an interior NUL byte");
            NtdStatus::NumericError
        }
    }
}

/// Load and validate a model from a JSON file on disk.
///
/// On success writes a new handle to `*out`; the caller owns it and must
/// release it with `ntd_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ntd_model_load_path(
    path: *const c_char,
    out: *mut *mut NtdModel,
) -> NtdStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("out pointer is null");
            return NtdStatus::NullPointer;
        }
        let path = match unsafe { read_c_str(path) } {
            Ok(p) => p,
            Err(status) => return status,
        };
        match DerivedModel::from_path(path) {
            Ok(model) => write_model(model, out),
            Err(err) => fail(&err),
        }
    })
}

/// Load and validate a model from a JSON document held in memory.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ntd_model_load_json(
    json: *const c_char,
    out: *mut *mut NtdModel,
) -> NtdStatus {
    guarded(|| {
        if out.is_null() {
            set_last_error("out pointer is null");
            return NtdStatus::NullPointer;
        }
        let json = match unsafe { read_c_str(json) } {
            Ok(j) => j,
            Err(status) => return status,
        };
        let spec = match serde_json::from_str(json) {
            Ok(spec) => spec,
            Err(err) => return fail(&NtdError::Parse(err)),
        };
        match DerivedModel::new(spec) {
            Ok(model) => write_model(model, out),
            Err(err) => fail(&err),
        }
    })
}

/// Release a model handle. Passing null is a no-op.
///
/// # Safety
/// `model` must be null or a pointer previously returned by a load function
/// and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntd_model_free(model: *mut NtdModel) {
    if !model.is_null() {
        // SAFETY: ownership is transferred back per this function's contract.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Number of states in the model, or 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntd_model_num_states(model: *const NtdModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.num_states()
}

/// Number of feature dimensions in the model, or 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntd_model_feature_dim(model: *const NtdModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.inner.feature_dim()
}

/// Discount factor of the model, or NaN if `model` is null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ntd_model_gamma(model: *const NtdModel) -> f64 {
    if model.is_null() {
        return f64::NAN;
    }
    unsafe { &*model }.inner.gamma()
}

/// Compute the stability report for horizon `n` and return it as a JSON
/// document written to `*out_json` (caller frees with `ntd_string_free`).
///
/// # Safety
/// `model` must be a live handle; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ntd_stability_report_json(
    model: *const NtdModel,
    n: u32,
    out_json: *mut *mut c_char,
) -> NtdStatus {
    guarded(|| {
        if model.is_null() || out_json.is_null() {
            set_last_error("model or out pointer is null");
            return NtdStatus::NullPointer;
        }
        if n == 0 {
            set_last_error("horizon n must be at least 1");
            return NtdStatus::InvalidArgument;
        }
        let model = unsafe { &*model };
        let report = match ntd::analysis::stability_report(&model.inner, n) {
            Ok(report) => report,
            Err(err) => return fail(&err),
        };
        match serde_json::to_string(&report) {
            Ok(text) => write_string(text, out_json),
            Err(err) => fail(&NtdError::Parse(err)),
        }
    })
}

/// Compute the horizon-bound summary (sufficient upper bounds and exact
/// minimal horizons for the three stability criteria) and return it as a
/// JSON document written to `*out_json` (caller frees with
/// `ntd_string_free`).
///
/// # Safety
/// `model` must be a live handle; `out_json` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ntd_bound_set_json(
    model: *const NtdModel,
    n_max: u32,
    out_json: *mut *mut c_char,
) -> NtdStatus {
    guarded(|| {
        if model.is_null() || out_json.is_null() {
            set_last_error("model or out pointer is null");
            return NtdStatus::NullPointer;
        }
        if n_max == 0 {
            set_last_error("n_max must be at least 1");
            return NtdStatus::InvalidArgument;
        }
        let model = unsafe { &*model };
        let bounds = match ntd::analysis::bound_set(&model.inner, n_max) {
            Ok(bounds) => bounds,
            Err(err) => return fail(&err),
        };
        match serde_json::to_string(&bounds) {
            Ok(text) => write_string(text, out_json),
            Err(err) => fail(&NtdError::Parse(err)),
        }
    })
}

/// Write the fixed-point parameter vector for horizon `n` into `out`, which
/// must point to exactly `len == ntd_model_feature_dim(model)` doubles.
///
/// # Safety
/// `model` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ntd_fixed_point(
    model: *const NtdModel,
    n: u32,
    out: *mut f64,
    len: usize,
) -> NtdStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            set_last_error("model or out pointer is null");
            return NtdStatus::NullPointer;
        }
        if n == 0 {
            set_last_error("horizon n must be at least 1");
            return NtdStatus::InvalidArgument;
        }
        let model = unsafe { &*model };
        let dim = model.inner.feature_dim();
        if len != dim {
            set_last_error(&format!("buffer holds {len} doubles but the model has {dim} features"));
            return NtdStatus::BufferMismatch;
        }
        let theta = match ntd::analysis::fixed_point_theta_n(&model.inner, n) {
            Ok(theta) => theta,
            Err(err) => return fail(&err),
        };
        // SAFETY: `out` points to `len == dim == theta.len()` doubles.
        unsafe { std::ptr::copy_nonoverlapping(theta.as_ptr(), out, dim) };
        NtdStatus::Ok
    })
}

/// Release a string previously returned through an out-pointer by this
/// library. Passing null is a no-op.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ntd_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: ownership is transferred back per this function's contract.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Message describing the most recent failure on the calling thread, or null
/// if the most recent call succeeded. The pointer is valid until the next
/// `ntd_*` call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn ntd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |msg| msg.as_ptr())
    })
}
