//! C ABI for loading feature bags and checkpoints, running predictions, and
//! computing survival statistics.
//!
//! Conventions:
//! * every fallible function returns an [`XfStatus`]; `XF_OK` is zero;
//! * on failure, [`xf_last_error`] returns a message for the calling thread;
//! * handles come from `*_read` / `*_load` and are released with `*_free`;
//! * output arrays are caller-allocated with an explicit capacity.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use crossfusion::data::{read_bag, FeatureBag, Scale};
use crossfusion::model::CrossFusion;
use crossfusion::survival::{c_index, km_curve, logrank, risk_score};
use crossfusion::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XfStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A path was not valid UTF-8.
    InvalidPath = 2,
    Io = 3,
    /// Malformed bag or checkpoint bytes.
    Format = 4,
    /// Invalid values, such as a bag whose width does not match the model.
    InvalidInput = 5,
    /// An output buffer is smaller than required.
    BufferTooSmall = 6,
    /// The statistic is undefined for the given data.
    Undefined = 7,
    Internal = 8,
    Panic = 9,
}

/// Opaque feature bag.
pub struct XfBag(FeatureBag);

/// Opaque trained model.
pub struct XfModel(CrossFusion);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> XfStatus {
    match e {
        Error::Io { .. } => XfStatus::Io,
        Error::Format { .. } | Error::Parse { .. } | Error::Json(_) => XfStatus::Format,
        Error::InFile { source, .. } => status_of(source),
        Error::UndefinedMetric(_) => XfStatus::Undefined,
        Error::Config(_) | Error::Input(_) | Error::Dimension { .. } | Error::Contract(_) => XfStatus::InvalidInput,
        _ => XfStatus::Internal,
    }
}

fn fail(status: XfStatus, msg: impl Into<String>) -> XfStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, recording its error message and turning panics into `Panic`.
fn guard(f: impl FnOnce() -> Result<(), XfStatus>) -> XfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => XfStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(XfStatus::Panic, "internal panic"),
    }
}

fn lib(e: Error) -> XfStatus {
    let s = status_of(&e);
    fail(s, e.to_string())
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), XfStatus> {
    if p.is_null() {
        Err(fail(XfStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, XfStatus> {
    non_null(p, "path")?;
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(XfStatus::InvalidPath, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], XfStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_out<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], XfStatus> {
    if n == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, n))
}

fn events_arg(e: &[u8]) -> Vec<bool> {
    e.iter().map(|&v| v != 0).collect()
}

/// Message for the most recent failure on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn xf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn xf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads and validates an XFBAG1 file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xf_bag_read(path: *const c_char, out: *mut *mut XfBag) -> XfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let bag = read_bag(&path).map_err(lib)?;
        bag.validate().map_err(lib)?;
        *out = Box::into_raw(Box::new(XfBag(bag)));
        Ok(())
    })
}

/// Decodes and validates XFBAG1 bytes.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xf_bag_decode(bytes: *const u8, len: usize, out: *mut *mut XfBag) -> XfStatus {
    guard(|| {
        non_null(out, "out")?;
        let bytes = slice_arg(bytes, len, "bytes")?;
        let bag = FeatureBag::decode(bytes).map_err(lib)?;
        bag.validate().map_err(lib)?;
        *out = Box::into_raw(Box::new(XfBag(bag)));
        Ok(())
    })
}

/// Releases a bag; null is ignored.
///
/// # Safety
/// `bag` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn xf_bag_free(bag: *mut XfBag) {
    if !bag.is_null() {
        drop(Box::from_raw(bag));
    }
}

/// Feature width and patch counts (coarse, source, fine) of a bag.
///
/// # Safety
/// `bag` must be a live handle; `d_in` and `counts` (3 entries) must be writable.
#[no_mangle]
pub unsafe extern "C" fn xf_bag_shape(bag: *const XfBag, d_in: *mut usize, counts: *mut usize) -> XfStatus {
    guard(|| {
        non_null(bag, "bag")?;
        non_null(d_in, "d_in")?;
        let counts = slice_out(counts, 3, "counts")?;
        let b = &(*bag).0;
        *d_in = b.d_in;
        for s in Scale::ALL {
            counts[s.index()] = b.scale(s).len();
        }
        Ok(())
    })
}

/// Loads an XFCKPT1 checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xf_model_load(path: *const c_char, out: *mut *mut XfModel) -> XfStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = path_arg(path)?;
        let model = CrossFusion::load(&path).map_err(lib)?;
        *out = Box::into_raw(Box::new(XfModel(model)));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn xf_model_free(model: *mut XfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of hazard bins the model predicts.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xf_model_n_bins(model: *const XfModel, out: *mut usize) -> XfStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).0.config().n_bins;
        Ok(())
    })
}

/// Eval-mode prediction. Writes `n_bins` hazards and survival values and the
/// scalar risk (negative summed survival). `hazards`, `survival` or `risk`
/// may be null to skip that output.
///
/// # Safety
/// Handles must be live; non-null buffers must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn xf_model_predict(
    model: *const XfModel,
    bag: *const XfBag,
    hazards: *mut f64,
    survival: *mut f64,
    cap: usize,
    risk: *mut f64,
) -> XfStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(bag, "bag")?;
        let out = (*model).0.predict(&(*bag).0).map_err(lib)?;
        let n = out.hazards.len();
        for (p, v) in [(hazards, &out.hazards), (survival, &out.survival)] {
            if !p.is_null() {
                if cap < n {
                    return Err(fail(XfStatus::BufferTooSmall, format!("need {n} values, capacity is {cap}")));
                }
                std::slice::from_raw_parts_mut(p, n).copy_from_slice(v);
            }
        }
        if !risk.is_null() {
            *risk = risk_score(&out.survival);
        }
        Ok(())
    })
}

/// Harrell's C-index; higher risk should mean earlier events. `events` holds
/// 0 (censored) or non-zero (event).
///
/// # Safety
/// Each array must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xf_c_index(
    risk: *const f64,
    time: *const f64,
    events: *const u8,
    n: usize,
    out: *mut f64,
) -> XfStatus {
    guard(|| {
        non_null(out, "out")?;
        let (r, t, e) = (slice_arg(risk, n, "risk")?, slice_arg(time, n, "time")?, slice_arg(events, n, "events")?);
        *out = c_index(r, t, &events_arg(e)).map_err(lib)?;
        Ok(())
    })
}

/// Kaplan-Meier product-limit estimate at the distinct event times.
/// `len_out` receives the number of steps; with a too-small `cap` the call
/// fails with `BufferTooSmall` after setting `len_out`.
///
/// # Safety
/// Inputs must hold `n` values; outputs must hold `cap` doubles; `len_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xf_km(
    time: *const f64,
    events: *const u8,
    n: usize,
    times_out: *mut f64,
    survival_out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> XfStatus {
    guard(|| {
        non_null(len_out, "len_out")?;
        let (t, e) = (slice_arg(time, n, "time")?, slice_arg(events, n, "events")?);
        let curve = km_curve(t, &events_arg(e)).map_err(lib)?;
        let k = curve.times.len();
        *len_out = k;
        if cap < k {
            return Err(fail(XfStatus::BufferTooSmall, format!("need {k} steps, capacity is {cap}")));
        }
        slice_out(times_out, k, "times_out")?.copy_from_slice(&curve.times);
        slice_out(survival_out, k, "survival_out")?.copy_from_slice(&curve.survival);
        Ok(())
    })
}

/// Two-group log-rank test: chi-square statistic and its one-degree-of-freedom p.
///
/// # Safety
/// Group arrays must hold `n_a` / `n_b` values; `chi2` and `p` must be writable.
#[no_mangle]
pub unsafe extern "C" fn xf_logrank(
    time_a: *const f64,
    events_a: *const u8,
    n_a: usize,
    time_b: *const f64,
    events_b: *const u8,
    n_b: usize,
    chi2: *mut f64,
    p: *mut f64,
) -> XfStatus {
    guard(|| {
        non_null(chi2, "chi2")?;
        non_null(p, "p")?;
        let (ta, ea) = (slice_arg(time_a, n_a, "time_a")?, slice_arg(events_a, n_a, "events_a")?);
        let (tb, eb) = (slice_arg(time_b, n_b, "time_b")?, slice_arg(events_b, n_b, "events_b")?);
        let r = logrank(ta, &events_arg(ea), tb, &events_arg(eb)).map_err(lib)?;
        *chi2 = r.chi2;
        *p = r.p;
        Ok(())
    })
}
