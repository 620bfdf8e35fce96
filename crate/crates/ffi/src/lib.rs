//! C ABI over the alloy-design library.
//!
//! Handles are opaque pointers released with their `*_free` function. Every
//! fallible call returns an [`AdStatus`]; on failure a message is available
//! from [`ad_last_error_message`] on the same thread until the next call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use alloy_design::features::{compute_features, compute_jacobian};
use alloy_design::objective::{eval_f2, grad_f2, project_onto_simplex};
use alloy_design::surrogate::SurrogateModel;
use alloy_design::{Composition, FeatureVector, Registry, Surrogate, N_FEATURES};

/// Number of features per alloy.
pub const AD_N_FEATURES: usize = 7;

const _: () = assert!(AD_N_FEATURES == N_FEATURES);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// File missing, unreadable or malformed.
    Io = 3,
    /// The model has no input gradient (tree ensembles).
    NotDifferentiable = 4,
    /// A Rust panic was caught at the boundary.
    Internal = 5,
}

/// Element data and mixing enthalpies.
pub struct AdRegistry(Registry);

/// A trained surrogate loaded from its JSON file.
pub struct AdModel(SurrogateModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Runs `f`, recording errors and turning panics into `Internal`.
fn guard(f: impl FnOnce() -> Result<(), (AdStatus, String)>) -> AdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdStatus::Internal
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> (AdStatus, String) {
    (AdStatus::InvalidArgument, e.to_string())
}

fn null(what: &str) -> (AdStatus, String) {
    (AdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (AdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], (AdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn registry<'a>(r: *const AdRegistry) -> Result<&'a Registry, (AdStatus, String)> {
    r.as_ref().map(|r| &r.0).ok_or_else(|| null("registry"))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, (AdStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn composition(reg: &Registry, x: *const f64, n: usize) -> Result<Composition, (AdStatus, String)> {
    if n != reg.len() {
        return Err(invalid(format!(
            "composition has {n} entries, registry has {}",
            reg.len()
        )));
    }
    Composition::new(slice(x, n, "composition")?.to_vec()).map_err(invalid)
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Built-in 39-element registry. Never NULL.
#[no_mangle]
pub extern "C" fn ad_registry_default() -> *mut AdRegistry {
    Box::into_raw(Box::new(AdRegistry(Registry::default_39())))
}

/// Loads a registry from an element CSV and an enthalpy matrix CSV.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ad_registry_load(
    elements_path: *const c_char,
    enthalpy_path: *const c_char,
    out: *mut *mut AdRegistry,
) -> AdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let e = path(elements_path, "elements_path")?;
        let h = path(enthalpy_path, "enthalpy_path")?;
        let reg = Registry::load(&e, &h).map_err(|e| (AdStatus::Io, e.to_string()))?;
        *out = Box::into_raw(Box::new(AdRegistry(reg)));
        Ok(())
    })
}

/// Number of elements; 0 for NULL.
///
/// # Safety
/// `reg` is NULL or a live registry handle.
#[no_mangle]
pub unsafe extern "C" fn ad_registry_len(reg: *const AdRegistry) -> usize {
    reg.as_ref().map_or(0, |r| r.0.len())
}

/// # Safety
/// `reg` is NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ad_registry_free(reg: *mut AdRegistry) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

/// Seven features of a composition in percent summing to 100.
///
/// # Safety
/// `x` holds `n` doubles; `out` has room for `AD_N_FEATURES`.
#[no_mangle]
pub unsafe extern "C" fn ad_features(reg: *const AdRegistry, x: *const f64, n: usize, out: *mut f64) -> AdStatus {
    guard(|| {
        let reg = registry(reg)?;
        let c = composition(reg, x, n)?;
        let out = slice_mut(out, N_FEATURES, "out")?;
        out.copy_from_slice(&compute_features(&c, reg).map_err(invalid)?.0);
        Ok(())
    })
}

/// Feature Jacobian, row-major `n x AD_N_FEATURES`: entry `(i, j)` is the
/// derivative of feature `j` with respect to component `i`.
///
/// # Safety
/// `x` holds `n` doubles; `out` has room for `n * AD_N_FEATURES`.
#[no_mangle]
pub unsafe extern "C" fn ad_jacobian(reg: *const AdRegistry, x: *const f64, n: usize, out: *mut f64) -> AdStatus {
    guard(|| {
        let reg = registry(reg)?;
        let c = composition(reg, x, n)?;
        let out = slice_mut(out, n * N_FEATURES, "out")?;
        let jac = compute_jacobian(&c, reg).map_err(invalid)?;
        for (dst, row) in out.chunks_exact_mut(N_FEATURES).zip(&jac.rows) {
            dst.copy_from_slice(row);
        }
        Ok(())
    })
}

/// Material cost per unit mass and, when `grad` is non-NULL, its gradient.
///
/// # Safety
/// `x` holds `n` doubles; `cost` is writable; `grad` is NULL or has room for `n`.
#[no_mangle]
pub unsafe extern "C" fn ad_cost(
    reg: *const AdRegistry,
    x: *const f64,
    n: usize,
    cost: *mut f64,
    grad: *mut f64,
) -> AdStatus {
    guard(|| {
        let reg = registry(reg)?;
        let c = composition(reg, x, n)?;
        if cost.is_null() {
            return Err(null("cost"));
        }
        *cost = eval_f2(c.as_slice(), reg);
        if !grad.is_null() {
            slice_mut(grad, n, "grad")?.copy_from_slice(&grad_f2(c.as_slice(), reg));
        }
        Ok(())
    })
}

/// Euclidean projection of `v` onto `{x >= 0, sum(x) = total}`.
///
/// # Safety
/// `v` and `out` hold `n` doubles; they may alias.
#[no_mangle]
pub unsafe extern "C" fn ad_project_simplex(v: *const f64, n: usize, total: f64, out: *mut f64) -> AdStatus {
    guard(|| {
        if n == 0 {
            return Err(invalid("empty vector"));
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(invalid(format!("total {total} must be positive")));
        }
        let input = slice(v, n, "v")?.to_vec();
        if input.iter().any(|a| !a.is_finite()) {
            return Err(invalid("input contains non-finite values"));
        }
        let p = project_onto_simplex(&input, total);
        slice_mut(out, n, "out")?.copy_from_slice(&p);
        Ok(())
    })
}

/// Loads a model saved by the command-line tool.
///
/// # Safety
/// `model_path` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ad_model_load(model_path: *const c_char, out: *mut *mut AdModel) -> AdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = path(model_path, "model_path")?;
        let m = SurrogateModel::load(&p).map_err(|e| (AdStatus::Io, format!("{}: {e}", p.display())))?;
        *out = Box::into_raw(Box::new(AdModel(m)));
        Ok(())
    })
}

/// Predicted temperature, °C, for a feature vector.
///
/// # Safety
/// `features` holds `AD_N_FEATURES` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ad_model_predict(model: *const AdModel, features: *const f64, out: *mut f64) -> AdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let y = feature_vector(features)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.0.predict(&y);
        Ok(())
    })
}

/// Gradient of the prediction with respect to the features.
///
/// # Safety
/// `features` holds `AD_N_FEATURES` doubles; `out` has room for as many.
#[no_mangle]
pub unsafe extern "C" fn ad_model_gradient(model: *const AdModel, features: *const f64, out: *mut f64) -> AdStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let y = feature_vector(features)?;
        let out = slice_mut(out, N_FEATURES, "out")?;
        let g = m.0.input_gradient(&y).ok_or_else(|| {
            (
                AdStatus::NotDifferentiable,
                format!("{} model has no input gradient", m.0.name()),
            )
        })?;
        out.copy_from_slice(&g);
        Ok(())
    })
}

/// 1 when the model has an input gradient, 0 otherwise or for NULL.
///
/// # Safety
/// `model` is NULL or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ad_model_is_differentiable(model: *const AdModel) -> i32 {
    model.as_ref().map_or(0, |m| m.0.is_differentiable() as i32)
}

/// # Safety
/// `model` is NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn ad_model_free(model: *mut AdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn feature_vector(p: *const f64) -> Result<FeatureVector, (AdStatus, String)> {
    let s = slice(p, N_FEATURES, "features")?;
    let mut y = [0.0; N_FEATURES];
    y.copy_from_slice(s);
    if y.iter().any(|v| !v.is_finite()) {
        return Err(invalid("features contain non-finite values"));
    }
    Ok(FeatureVector(y))
}
