//! C ABI for eplkit.
//!
//! Posteriors and losses are opaque heap handles created by `epl_*_new`
//! style constructors and released with the matching `_free`. Every entry
//! point returns an `EplStatus`; on failure `epl_last_error_message` holds
//! a description for the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use eplkit::calibration::{calibrate_linex, calibrate_quantile, CalibrationTarget};
use eplkit::decision::{self, Optimizer};
use eplkit::loss::{compose, LossSpec};
use eplkit::posterior::{Posterior, SamplePosterior};
use eplkit::Error;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EplStatus {
    Ok = 0,
    /// Invalid argument or input document.
    Invalid = 2,
    /// Numeric failure (overflow, divergence, unbounded loss).
    Numeric = 3,
    /// A required pointer was null.
    NullPointer = 4,
    /// An internal panic was caught.
    Panic = 5,
}

/// A posterior distribution.
pub struct EplPosterior(Posterior);

/// A loss function.
pub struct EplLoss(LossSpec);

/// The optimal action and how it was found.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EplDecision {
    pub action: f64,
    pub expected_loss: f64,
    /// 1 when a closed form was used, 0 for the numeric minimizer.
    pub closed_form: i32,
    /// Minimizer iterations; 0 for closed forms.
    pub iterations: u32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> EplStatus {
    if e.is_numeric() {
        EplStatus::Numeric
    } else {
        EplStatus::Invalid
    }
}

fn guard<F>(f: F) -> EplStatus
where
    F: FnOnce() -> Result<(), EplStatus>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EplStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            EplStatus::Panic
        }
    }
}

fn fail(e: Error) -> EplStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> EplStatus {
    set_error(format!("null pointer: {what}"));
    EplStatus::NullPointer
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), EplStatus> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, EplStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn new_posterior(out: *mut *mut EplPosterior, p: eplkit::Result<Posterior>) -> Result<(), EplStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    let p = p.map_err(fail)?;
    out.write(Box::into_raw(Box::new(EplPosterior(p))));
    Ok(())
}

unsafe fn new_loss(out: *mut *mut EplLoss, spec: eplkit::Result<LossSpec>) -> Result<(), EplStatus> {
    if out.is_null() {
        return Err(null("out"));
    }
    let spec = spec.map_err(fail)?;
    compose(&spec).map_err(fail)?;
    out.write(Box::into_raw(Box::new(EplLoss(spec))));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn epl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn epl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn epl_posterior_gaussian(mean: f64, sd: f64, out: *mut *mut EplPosterior) -> EplStatus {
    guard(|| new_posterior(out, Posterior::gaussian(mean, sd)))
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn epl_posterior_gamma(shape: f64, rate: f64, out: *mut *mut EplPosterior) -> EplStatus {
    guard(|| new_posterior(out, Posterior::gamma(shape, rate)))
}

/// Weighted draws; `weights` may be null for equal weights.
///
/// # Safety
/// `values` (and `weights` when non-null) must point to `len` readable
/// doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epl_posterior_samples(
    values: *const f64,
    weights: *const f64,
    len: usize,
    out: *mut *mut EplPosterior,
) -> EplStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        let v = std::slice::from_raw_parts(values, len);
        let p = if weights.is_null() {
            SamplePosterior::from_values(v.iter().copied())
        } else {
            let w = std::slice::from_raw_parts(weights, len);
            SamplePosterior::new(v.iter().copied().zip(w.iter().copied()))
        };
        new_posterior(out, p.map(Posterior::Samples))
    })
}

/// # Safety
/// `p` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn epl_posterior_free(p: *mut EplPosterior) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn epl_posterior_mean(p: *const EplPosterior, out: *mut f64) -> EplStatus {
    guard(|| {
        let p = deref(p, "posterior")?;
        write_out(out, p.0.mean(), "out")
    })
}

/// # Safety
/// `p` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn epl_posterior_quantile(p: *const EplPosterior, q: f64, out: *mut f64) -> EplStatus {
    guard(|| {
        let p = deref(p, "posterior")?;
        let v = p.0.quantile(q).map_err(fail)?;
        write_out(out, v, "out")
    })
}

/// Parse a loss from its TOML document form, e.g. `family = "linex"` with
/// `params = { psi = -2.0 }`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn epl_loss_from_toml(text: *const c_char, out: *mut *mut EplLoss) -> EplStatus {
    guard(|| {
        if text.is_null() {
            return Err(null("text"));
        }
        let s = CStr::from_ptr(text)
            .to_str()
            .map_err(|e| fail(Error::Invalid(format!("loss document is not UTF-8: {e}"))))?;
        new_loss(out, LossSpec::from_toml_str(s))
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epl_loss_sel(out: *mut *mut EplLoss) -> EplStatus {
    guard(|| new_loss(out, Ok(LossSpec::Sel)))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epl_loss_linex(psi: f64, out: *mut *mut EplLoss) -> EplStatus {
    guard(|| new_loss(out, Ok(LossSpec::Linex { psi })))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epl_loss_quantile(q: f64, out: *mut *mut EplLoss) -> EplStatus {
    guard(|| new_loss(out, Ok(LossSpec::Qtl { q })))
}

/// # Safety
/// `l` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn epl_loss_free(l: *mut EplLoss) {
    if !l.is_null() {
        drop(Box::from_raw(l));
    }
}

/// `L(a, y)`.
///
/// # Safety
/// `l` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn epl_loss_eval(l: *const EplLoss, a: f64, y: f64, out: *mut f64) -> EplStatus {
    guard(|| {
        let l = deref(l, "loss")?;
        let v = compose(&l.0).and_then(|f| f.eval(a, y)).map_err(fail)?;
        write_out(out, v, "out")
    })
}

/// `E(L(a, Y) | z)`.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn epl_expected_loss(
    l: *const EplLoss,
    p: *const EplPosterior,
    a: f64,
    out: *mut f64,
) -> EplStatus {
    guard(|| {
        let l = deref(l, "loss")?;
        let p = deref(p, "posterior")?;
        let v = compose(&l.0).and_then(|f| decision::epl(&f, &p.0, a)).map_err(fail)?;
        write_out(out, v, "out")
    })
}

/// The action minimizing expected posterior loss. With `force_numeric`
/// nonzero the closed forms are skipped.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn epl_optimize(
    l: *const EplLoss,
    p: *const EplPosterior,
    force_numeric: i32,
    out: *mut EplDecision,
) -> EplStatus {
    guard(|| {
        let l = deref(l, "loss")?;
        let p = deref(p, "posterior")?;
        let opt = if force_numeric != 0 {
            Optimizer::numeric()
        } else {
            Optimizer::default()
        };
        let d = opt.optimize(&l.0, &p.0).map_err(fail)?;
        let iterations = match d.method {
            decision::Method::Numeric { iterations, .. } => iterations as u32,
            decision::Method::ClosedForm(_) => 0,
        };
        write_out(
            out,
            EplDecision {
                action: d.action,
                expected_loss: d.epl,
                closed_form: d.method.is_closed_form() as i32,
                iterations,
            },
            "out",
        )
    })
}

/// LINEX `ψ` for an upper-tail mass (e.g. 0.03) and posterior sd.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epl_calibrate_linex(tail_mass: f64, sigma: f64, paper_exact: i32, out: *mut f64) -> EplStatus {
    guard(|| {
        let t = CalibrationTarget::tail_mass(tail_mass, sigma).paper_exact(paper_exact != 0);
        let psi = calibrate_linex(&t).map_err(fail)?;
        write_out(out, psi, "out")
    })
}

/// Quantile level `1 - prevention_share`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epl_calibrate_quantile(prevention_share: f64, out: *mut f64) -> EplStatus {
    guard(|| {
        let q = calibrate_quantile(prevention_share).map_err(fail)?;
        write_out(out, q, "out")
    })
}
