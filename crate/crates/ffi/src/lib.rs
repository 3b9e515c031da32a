//! C ABI over the `varsel` library.
//!
//! Objects cross the boundary as opaque handles created by `*_new` functions
//! and released by the matching `*_free`. Every fallible call returns a
//! [`VarselStatus`]; the message of the last failure on the calling thread is
//! available from [`varsel_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use varsel::api::{select_by_tag, SelectOptions};
use varsel::design::DesignMatrix;
use varsel::dists::{fisher_quantile, fisher_sf, FisherParams};
use varsel::ols::benjamini_hochberg;
use varsel::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarselStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Numeric = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// A normalized design matrix.
pub struct VarselDesign {
    inner: DesignMatrix,
}

/// Indices chosen by a selector, ascending, intercept included.
pub struct VarselSelection {
    indices: Vec<usize>,
}

/// Tuning for [`varsel_select`]. Obtain defaults from [`varsel_select_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VarselSelectOptions {
    /// Test level, or the FDR level for `fdr`/`fdr2`.
    pub alpha: f64,
    /// Known noise level; any non-positive or NaN value means unknown.
    pub sigma: f64,
    pub n_mc: usize,
    pub n_boot: usize,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: VarselStatus, msg: &str) -> VarselStatus {
    set_error(msg);
    status
}

fn from_error(e: &Error) -> VarselStatus {
    let status = match e {
        Error::Config(_) => VarselStatus::Config,
        e if e.is_config() => VarselStatus::InvalidInput,
        _ => VarselStatus::Numeric,
    };
    fail(status, &e.to_string())
}

fn guarded(f: impl FnOnce() -> VarselStatus) -> VarselStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "internal panic".into());
            fail(VarselStatus::Panic, &msg)
        }
    }
}

/// Message of the last failed call on this thread; empty after none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn varsel_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn varsel_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a design from `n × p` column-major values, rescaling every column to
/// unit `‖·‖_n`. With `prepend_intercept` an all-ones column is placed first,
/// giving `p + 1` columns.
///
/// # Safety
/// `values` must point to `n * p` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varsel_design_new(
    n: usize,
    p: usize,
    values: *const f64,
    prepend_intercept: bool,
    out: *mut *mut VarselDesign,
) -> VarselStatus {
    guarded(|| {
        if values.is_null() || out.is_null() {
            return fail(VarselStatus::NullPointer, "null argument");
        }
        let Some(len) = n.checked_mul(p) else { return fail(VarselStatus::InvalidInput, "n * p overflows") };
        // SAFETY: the caller guarantees `n * p` readable values.
        let raw = unsafe { std::slice::from_raw_parts(values, len) };
        let mut data = Vec::with_capacity(len + if prepend_intercept { n } else { 0 });
        if prepend_intercept {
            data.resize(n, 1.0);
        }
        data.extend_from_slice(raw);
        let cols = p + usize::from(prepend_intercept);
        match DesignMatrix::normalize_columns(n, cols, &data) {
            Ok(inner) => {
                // SAFETY: `out` is non-null and writable per the contract.
                unsafe { *out = Box::into_raw(Box::new(VarselDesign { inner })) };
                VarselStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `design` must come from [`varsel_design_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn varsel_design_free(design: *mut VarselDesign) {
    if !design.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(design) });
    }
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn varsel_design_n(design: *const VarselDesign) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { design.as_ref() }.map_or(0, |d| d.inner.n())
}

/// Column count including any intercept, or 0 for a null handle.
///
/// # Safety
/// `design` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn varsel_design_p(design: *const VarselDesign) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { design.as_ref() }.map_or(0, |d| d.inner.p())
}

#[no_mangle]
pub extern "C" fn varsel_select_options_default() -> VarselSelectOptions {
    let d = SelectOptions::default();
    VarselSelectOptions { alpha: d.alpha, sigma: f64::NAN, n_mc: d.n_mc, n_boot: d.n_boot, seed: d.seed }
}

/// Runs the selector named `method` (for example `"procpval"`, `"procbol"`,
/// `"proc_ordered"`, `"fdr2"`, `"lasso"`) on response `y` of length `n`.
///
/// # Safety
/// `design` must be live, `y` must hold `n` doubles, `method` must be a
/// NUL-terminated string, `opts` may be null for defaults, `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varsel_select(
    design: *const VarselDesign,
    y: *const f64,
    n: usize,
    method: *const c_char,
    opts: *const VarselSelectOptions,
    out: *mut *mut VarselSelection,
) -> VarselStatus {
    guarded(|| {
        if design.is_null() || y.is_null() || method.is_null() || out.is_null() {
            return fail(VarselStatus::NullPointer, "null argument");
        }
        // SAFETY: pointers are non-null and valid per the contract.
        let (design, y, method) = unsafe { (&(*design).inner, std::slice::from_raw_parts(y, n), CStr::from_ptr(method)) };
        let Ok(method) = method.to_str() else { return fail(VarselStatus::InvalidInput, "method is not UTF-8") };
        // SAFETY: null or readable per the contract.
        let o = unsafe { opts.as_ref() }.copied().unwrap_or_else(|| varsel_select_options_default());
        if !(o.alpha > 0.0 && o.alpha < 1.0) {
            return fail(VarselStatus::InvalidInput, "alpha must lie in (0, 1)");
        }
        let sigma = (o.sigma > 0.0).then_some(o.sigma);
        let opts =
            SelectOptions { method: method.to_string(), alpha: o.alpha, sigma, n_mc: o.n_mc, n_boot: o.n_boot, seed: o.seed };
        match select_by_tag(design, y, &opts) {
            Ok(sel) => {
                // SAFETY: `out` is non-null and writable.
                unsafe { *out = Box::into_raw(Box::new(VarselSelection { indices: sel.j_hat })) };
                VarselStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Number of selected indices, or 0 for a null handle.
///
/// # Safety
/// `sel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn varsel_selection_len(sel: *const VarselSelection) -> usize {
    // SAFETY: null or live per the contract.
    unsafe { sel.as_ref() }.map_or(0, |s| s.indices.len())
}

/// Copies the zero-based selected column indices into `buf`.
///
/// # Safety
/// `sel` must be live and `buf` must have room for `cap` values.
#[no_mangle]
pub unsafe extern "C" fn varsel_selection_indices(
    sel: *const VarselSelection,
    buf: *mut usize,
    cap: usize,
) -> VarselStatus {
    guarded(|| {
        // SAFETY: null or live per the contract.
        let Some(sel) = (unsafe { sel.as_ref() }) else { return fail(VarselStatus::NullPointer, "null selection") };
        if sel.indices.len() > cap {
            return fail(VarselStatus::BufferTooSmall, &format!("need room for {} indices", sel.indices.len()));
        }
        if buf.is_null() && !sel.indices.is_empty() {
            return fail(VarselStatus::NullPointer, "null buffer");
        }
        // SAFETY: `buf` has at least `len` writable slots.
        unsafe { ptr::copy_nonoverlapping(sel.indices.as_ptr(), buf, sel.indices.len()) };
        VarselStatus::Ok
    })
}

/// # Safety
/// `sel` must come from [`varsel_select`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn varsel_selection_free(sel: *mut VarselSelection) {
    if !sel.is_null() {
        // SAFETY: ownership returns from the caller.
        drop(unsafe { Box::from_raw(sel) });
    }
}

fn fisher(d_num: usize, d_den: usize) -> Result<FisherParams, VarselStatus> {
    if d_num == 0 || d_den == 0 {
        Err(fail(VarselStatus::InvalidInput, "degrees of freedom must be positive"))
    } else {
        Ok(FisherParams::new(d_num, d_den))
    }
}

/// `P(F > x)` for a Fisher variable with `(d_num, d_den)` degrees of freedom.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varsel_fisher_sf(d_num: usize, d_den: usize, x: f64, out: *mut f64) -> VarselStatus {
    guarded(|| {
        if out.is_null() {
            return fail(VarselStatus::NullPointer, "null output");
        }
        match fisher(d_num, d_den) {
            Ok(f) => {
                // SAFETY: non-null, writable.
                unsafe { *out = fisher_sf(f, x) };
                VarselStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Upper `alpha` quantile of the Fisher distribution.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn varsel_fisher_quantile(d_num: usize, d_den: usize, alpha: f64, out: *mut f64) -> VarselStatus {
    guarded(|| {
        if out.is_null() {
            return fail(VarselStatus::NullPointer, "null output");
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return fail(VarselStatus::InvalidInput, "alpha must lie in (0, 1)");
        }
        match fisher(d_num, d_den) {
            Ok(f) => {
                // SAFETY: non-null, writable.
                unsafe { *out = fisher_quantile(f, alpha) };
                VarselStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Benjamini–Hochberg step-up at level `q`; writes 1 for rejected hypotheses.
///
/// # Safety
/// `p_values` must hold `len` doubles and `rejected` must have `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn varsel_benjamini_hochberg(
    p_values: *const f64,
    len: usize,
    q: f64,
    rejected: *mut u8,
) -> VarselStatus {
    guarded(|| {
        if len > 0 && (p_values.is_null() || rejected.is_null()) {
            return fail(VarselStatus::NullPointer, "null argument");
        }
        if len == 0 {
            return VarselStatus::Ok;
        }
        // SAFETY: sizes and validity per the contract.
        let (pv, rej) = unsafe { (std::slice::from_raw_parts(p_values, len), std::slice::from_raw_parts_mut(rejected, len)) };
        if pv.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return fail(VarselStatus::InvalidInput, "p-values must lie in [0, 1]");
        }
        for (r, keep) in rej.iter_mut().zip(benjamini_hochberg(pv, q)) {
            *r = u8::from(keep);
        }
        VarselStatus::Ok
    })
}
