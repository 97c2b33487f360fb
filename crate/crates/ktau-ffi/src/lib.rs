//! C ABI surface for the ktau library. Results are returned through an
//! opaque handle; every function reports an error code and the last error
//! message is retrievable per thread. The committed header lives in
//! `include/ktau.h` (kept in sync with cbindgen.toml).

use std::cell::RefCell;
use std::ffi::CString;
use std::os::raw::{c_char, c_double, c_int};

use ktau::{
    flag_result_outliers, improved_ktau, ktau_fit, ClusteringResult, DataMatrix, KTauConfig,
    OutlierPolicy, RhoConfig, RhoFamily,
};

pub const KTAU_OK: c_int = 0;
pub const KTAU_ERR_NULL_POINTER: c_int = 1;
pub const KTAU_ERR_INVALID_ARGUMENT: c_int = 2;
pub const KTAU_ERR_COMPUTATION: c_int = 3;
pub const KTAU_ERR_BUFFER_TOO_SMALL: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Opaque fitted-model handle.
pub struct KtauResult {
    inner: ClusteringResult,
    p: usize,
}

/// Message describing the most recent error on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ktau_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Fits K-Tau-Centers on a row-major n x p matrix. `family` selects the
/// rho: 0 bisquare, 1 smooth hard rejection. `improve` nonzero runs the
/// Mahalanobis reassignment pass; otherwise spherical flagging is used.
/// `beta` is the flagging tail probability (pass 0 for the default 0.01).
/// On success `*out` owns the result; release it with `ktau_result_free`.
///
/// # Safety
/// `data` must point to `n * p` readable doubles and `out` to a writable
/// pointer slot.
#[no_mangle]
pub unsafe extern "C" fn ktau_fit_ktau(
    data: *const c_double,
    n: usize,
    p: usize,
    k: usize,
    family: c_int,
    n_starts: usize,
    max_iter: usize,
    tol: c_double,
    seed: u64,
    beta: c_double,
    improve: c_int,
    out: *mut *mut KtauResult,
) -> c_int {
    if data.is_null() || out.is_null() {
        set_error("null pointer argument");
        return KTAU_ERR_NULL_POINTER;
    }
    if n == 0 || p == 0 || n.checked_mul(p).is_none() {
        set_error("empty or overflowing matrix shape");
        return KTAU_ERR_INVALID_ARGUMENT;
    }
    let family = match family {
        0 => RhoFamily::Bisquare,
        1 => RhoFamily::SmoothHardRejection,
        _ => {
            set_error("family must be 0 (bisquare) or 1 (smooth hard rejection)");
            return KTAU_ERR_INVALID_ARGUMENT;
        }
    };
    let slice = std::slice::from_raw_parts(data, n * p);
    let matrix = match DataMatrix::new(n, p, slice.to_vec()) {
        Ok(m) => m,
        Err(e) => {
            set_error(&e.to_string());
            return KTAU_ERR_INVALID_ARGUMENT;
        }
    };
    let rho = match RhoConfig::for_dimension(family, p) {
        Ok(r) => r,
        Err(e) => {
            set_error(&e.to_string());
            return KTAU_ERR_INVALID_ARGUMENT;
        }
    };
    let mut cfg = KTauConfig::new(k, rho, seed);
    if n_starts > 0 {
        cfg.n_starts = n_starts;
    }
    if max_iter > 0 {
        cfg.max_iter = max_iter;
    }
    if tol > 0.0 {
        cfg.tol = tol;
    }
    let policy = OutlierPolicy {
        beta: if beta > 0.0 { beta } else { OutlierPolicy::default().beta },
    };
    let result = (|| -> ktau::Result<ClusteringResult> {
        let base = ktau_fit(&matrix, &cfg)?;
        if improve != 0 {
            improved_ktau(&matrix, &base, &rho, &policy)
        } else {
            let mut r = base;
            r.outlier_flag = flag_result_outliers(&matrix, &r, &rho, &policy)?;
            Ok(r)
        }
    })();
    match result {
        Ok(r) => {
            *out = Box::into_raw(Box::new(KtauResult { inner: r, p }));
            KTAU_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            KTAU_ERR_COMPUTATION
        }
    }
}

unsafe fn with_result<T>(
    handle: *const KtauResult,
    f: impl FnOnce(&KtauResult) -> T,
) -> Result<T, c_int> {
    if handle.is_null() {
        set_error("null result handle");
        return Err(KTAU_ERR_NULL_POINTER);
    }
    Ok(f(&*handle))
}

/// Number of clusters in a fitted result; 0 on null handle.
///
/// # Safety
/// `handle` must be a live pointer from `ktau_fit_ktau`.
#[no_mangle]
pub unsafe extern "C" fn ktau_result_k(handle: *const KtauResult) -> usize {
    with_result(handle, |r| r.inner.centers.k()).unwrap_or(0)
}

/// Number of observations; 0 on null handle.
///
/// # Safety
/// `handle` must be a live pointer from `ktau_fit_ktau`.
#[no_mangle]
pub unsafe extern "C" fn ktau_result_n(handle: *const KtauResult) -> usize {
    with_result(handle, |r| r.inner.assignment.len()).unwrap_or(0)
}

/// Feature dimension; 0 on null handle.
///
/// # Safety
/// `handle` must be a live pointer from `ktau_fit_ktau`.
#[no_mangle]
pub unsafe extern "C" fn ktau_result_dim(handle: *const KtauResult) -> usize {
    with_result(handle, |r| r.p).unwrap_or(0)
}

/// Tau-scale objective of the fit; NaN on null handle.
///
/// # Safety
/// `handle` must be a live pointer from `ktau_fit_ktau`.
#[no_mangle]
pub unsafe extern "C" fn ktau_result_tau(handle: *const KtauResult) -> c_double {
    with_result(handle, |r| r.inner.tau).unwrap_or(f64::NAN)
}

/// Copies cluster centers into `buf` (row-major k x p, `len` doubles).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ktau_result_centers(
    handle: *const KtauResult,
    buf: *mut c_double,
    len: usize,
) -> c_int {
    if buf.is_null() {
        set_error("null buffer");
        return KTAU_ERR_NULL_POINTER;
    }
    match with_result(handle, |r| {
        let need = r.inner.centers.k() * r.p;
        if len < need {
            set_error("centers buffer too small");
            return KTAU_ERR_BUFFER_TOO_SMALL;
        }
        let out = std::slice::from_raw_parts_mut(buf, need);
        for (i, c) in r.inner.centers.iter().enumerate() {
            out[i * r.p..(i + 1) * r.p].copy_from_slice(c);
        }
        KTAU_OK
    }) {
        Ok(code) => code,
        Err(code) => code,
    }
}

/// Copies per-point cluster labels into `buf` (`len` entries).
///
/// # Safety
/// `buf` must point to `len` writable usize slots.
#[no_mangle]
pub unsafe extern "C" fn ktau_result_assignment(
    handle: *const KtauResult,
    buf: *mut usize,
    len: usize,
) -> c_int {
    if buf.is_null() {
        set_error("null buffer");
        return KTAU_ERR_NULL_POINTER;
    }
    match with_result(handle, |r| {
        if len < r.inner.assignment.len() {
            set_error("assignment buffer too small");
            return KTAU_ERR_BUFFER_TOO_SMALL;
        }
        std::slice::from_raw_parts_mut(buf, r.inner.assignment.len())
            .copy_from_slice(&r.inner.assignment);
        KTAU_OK
    }) {
        Ok(code) => code,
        Err(code) => code,
    }
}

/// Copies per-point outlier flags into `buf` as 0/1 bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ktau_result_outlier_flags(
    handle: *const KtauResult,
    buf: *mut u8,
    len: usize,
) -> c_int {
    if buf.is_null() {
        set_error("null buffer");
        return KTAU_ERR_NULL_POINTER;
    }
    match with_result(handle, |r| {
        if len < r.inner.outlier_flag.len() {
            set_error("flag buffer too small");
            return KTAU_ERR_BUFFER_TOO_SMALL;
        }
        let out = std::slice::from_raw_parts_mut(buf, r.inner.outlier_flag.len());
        for (dst, &f) in out.iter_mut().zip(&r.inner.outlier_flag) {
            *dst = f as u8;
        }
        KTAU_OK
    }) {
        Ok(code) => code,
        Err(code) => code,
    }
}

/// Releases a result handle. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer from `ktau_fit_ktau`, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ktau_result_free(handle: *mut KtauResult) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}
