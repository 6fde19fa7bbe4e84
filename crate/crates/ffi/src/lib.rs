//! C ABI for the gpb library: opaque handles, status codes, and a
//! thread-local last-error message. The header is generated into
//! `include/gpb.h` by cbindgen at build time.
//!
//! Conventions:
//! - every fallible call returns a [`GpbStatus`] and writes results through
//!   out-pointers;
//! - handles are created by constructors and released by the matching
//!   `gpb_*_free`; freeing null is a no-op;
//! - points are `double` buffers of the stated dimension; point lists are
//!   row-major `n × dim`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use gpb::conditioning::{
    constrain, finite_condition, posterior, sample_paths, BackendSpec, ConditionError, FormSpec,
    Gp, Surface,
};
use gpb::domain::{self, ConstraintSet};
use gpb::kernels::Kernel;

/// Status codes returned by every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpbStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    JsonError = 3,
    NumericalError = 4,
    Panic = 5,
}

/// Backend selector for `gpb_model_constrain`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GpbBackend {
    /// Gram-inverse projection on the constraint nodes.
    Interpolation = 0,
    /// Truncated Nystrom eigen-series.
    Spectral = 1,
}

/// Opaque covariance kernel handle.
pub struct GpbKernel {
    inner: Kernel,
}

/// Opaque constraint-set handle.
pub struct GpbConstraint {
    inner: ConstraintSet,
}

#[derive(Clone)]
struct SharedSurface(Arc<dyn Surface + Send + Sync>);

impl Surface for SharedSurface {
    fn dimension(&self) -> usize {
        self.0.dimension()
    }

    fn mean_at(&self, s: &[f64]) -> Result<f64, ConditionError> {
        self.0.mean_at(s)
    }

    fn cov_at(&self, s1: &[f64], s2: &[f64]) -> Result<f64, ConditionError> {
        self.0.cov_at(s1, s2)
    }
}

/// Opaque process handle carrying a mean and covariance surface.
pub struct GpbModel {
    inner: SharedSurface,
}

impl GpbModel {
    fn from_surface(surface: impl Surface + Send + Sync + 'static) -> *mut GpbModel {
        Box::into_raw(Box::new(GpbModel {
            inner: SharedSurface(Arc::new(surface)),
        }))
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message)
        .unwrap_or_else(|_| CString::new("error message contained NUL").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(message));
}

fn fail(status: GpbStatus, message: impl Into<String>) -> GpbStatus {
    set_error(message.into());
    status
}

/// Message describing the most recent failure on this thread, or null when
/// no failure has been recorded. The pointer stays valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn gpb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

fn guarded(body: impl FnOnce() -> GpbStatus) -> GpbStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(GpbStatus::Panic, "internal panic"),
    }
}

unsafe fn point_slice<'a>(data: *const f64, len: usize) -> Option<&'a [f64]> {
    if data.is_null() {
        None
    } else {
        Some(slice::from_raw_parts(data, len))
    }
}

/// Parse a kernel from its JSON form, e.g.
/// `{"family":"squared_exponential","params":{"dimension":2,"lengthscale":1.0}}`.
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpb_kernel_from_json(
    json: *const c_char,
    out: *mut *mut GpbKernel,
) -> GpbStatus {
    guarded(|| {
        if json.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        let text = match CStr::from_ptr(json).to_str() {
            Ok(t) => t,
            Err(_) => return fail(GpbStatus::InvalidArgument, "kernel JSON is not UTF-8"),
        };
        match serde_json::from_str::<Kernel>(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GpbKernel { inner }));
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::JsonError, e.to_string()),
        }
    })
}

/// Squared-exponential kernel exp(−|s−t|²/ℓ²).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpb_kernel_squared_exponential(
    dimension: usize,
    lengthscale: f64,
    out: *mut *mut GpbKernel,
) -> GpbStatus {
    guarded(|| {
        if out.is_null() {
            return fail(GpbStatus::NullArgument, "null out pointer");
        }
        match Kernel::squared_exponential(dimension, lengthscale) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GpbKernel { inner }));
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Serialize a kernel back to JSON. Release the returned string with
/// `gpb_string_free`.
///
/// # Safety
/// `kernel` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpb_kernel_to_json(
    kernel: *const GpbKernel,
    out: *mut *mut c_char,
) -> GpbStatus {
    guarded(|| {
        if kernel.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        match serde_json::to_string(&(*kernel).inner) {
            Ok(text) => match CString::new(text) {
                Ok(c) => {
                    *out = c.into_raw();
                    GpbStatus::Ok
                }
                Err(_) => fail(GpbStatus::JsonError, "JSON contained NUL"),
            },
            Err(e) => fail(GpbStatus::JsonError, e.to_string()),
        }
    })
}

/// Evaluate k(s, t) for two points of the kernel's dimension.
///
/// # Safety
/// `s` and `t` must point to `dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpb_kernel_eval(
    kernel: *const GpbKernel,
    s: *const f64,
    t: *const f64,
    dim: usize,
    out: *mut f64,
) -> GpbStatus {
    guarded(|| {
        if kernel.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        let (Some(s), Some(t)) = (point_slice(s, dim), point_slice(t, dim)) else {
            return fail(GpbStatus::NullArgument, "null point");
        };
        match (*kernel).inner.eval(s, t) {
            Ok(v) => {
                *out = v;
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `kernel` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn gpb_kernel_free(kernel: *mut GpbKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Release a string allocated by this library.
///
/// # Safety
/// `s` must come from a `gpb_*` call or be null.
#[no_mangle]
pub unsafe extern "C" fn gpb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Counterclockwise boundary of the rectangle [lo0,hi0]×[lo1,hi1].
///
/// # Safety
/// `lo` and `hi` must point to two doubles each; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpb_constraint_rect_boundary(
    lo: *const f64,
    hi: *const f64,
    out: *mut *mut GpbConstraint,
) -> GpbStatus {
    guarded(|| {
        if out.is_null() {
            return fail(GpbStatus::NullArgument, "null out pointer");
        }
        let (Some(lo), Some(hi)) = (point_slice(lo, 2), point_slice(hi, 2)) else {
            return fail(GpbStatus::NullArgument, "null corner");
        };
        match domain::rect_boundary([lo[0], lo[1]], [hi[0], hi[1]]) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GpbConstraint { inner }));
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Diagonal of the rectangle from lo to hi.
///
/// # Safety
/// As for `gpb_constraint_rect_boundary`.
#[no_mangle]
pub unsafe extern "C" fn gpb_constraint_diagonal(
    lo: *const f64,
    hi: *const f64,
    out: *mut *mut GpbConstraint,
) -> GpbStatus {
    guarded(|| {
        if out.is_null() {
            return fail(GpbStatus::NullArgument, "null out pointer");
        }
        let (Some(lo), Some(hi)) = (point_slice(lo, 2), point_slice(hi, 2)) else {
            return fail(GpbStatus::NullArgument, "null corner");
        };
        match domain::diagonal([lo[0], lo[1]], [hi[0], hi[1]]) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GpbConstraint { inner }));
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Finite constraint set from a row-major `n × dim` point buffer.
///
/// # Safety
/// `points` must hold `n * dim` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpb_constraint_finite(
    points: *const f64,
    n: usize,
    dim: usize,
    out: *mut *mut GpbConstraint,
) -> GpbStatus {
    guarded(|| {
        if out.is_null() {
            return fail(GpbStatus::NullArgument, "null out pointer");
        }
        let Some(flat) = point_slice(points, n * dim) else {
            return fail(GpbStatus::NullArgument, "null point buffer");
        };
        let pts: Vec<Vec<f64>> = flat.chunks(dim).map(|c| c.to_vec()).collect();
        match domain::finite_points(pts) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GpbConstraint { inner }));
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `constraint` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn gpb_constraint_free(constraint: *mut GpbConstraint) {
    if !constraint.is_null() {
        drop(Box::from_raw(constraint));
    }
}

/// Constraint-value callback: receives a point and its dimension plus the
/// caller's context pointer, returns g at that point.
pub type GpbConstraintFn =
    unsafe extern "C" fn(point: *const f64, dim: usize, ctx: *mut libc::c_void) -> f64;

/// Zero-mean prior with the given kernel.
///
/// # Safety
/// `kernel` must be live; `out` must be valid. The kernel is copied.
#[no_mangle]
pub unsafe extern "C" fn gpb_model_prior(
    kernel: *const GpbKernel,
    out: *mut *mut GpbModel,
) -> GpbStatus {
    guarded(|| {
        if kernel.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        *out = GpbModel::from_surface(Gp::new((*kernel).inner.clone()));
        GpbStatus::Ok
    })
}

/// Condition a zero-mean prior on g over the constraint set.
///
/// `resolution` is the node count for the interpolation backend and the
/// quadrature resolution for the spectral backend; `retained` caps the
/// number of eigenpairs for the spectral backend (0 keeps all); `nugget`
/// adds variance — to the Gram diagonal for interpolation, to the operator
/// eigenvalues for the spectral series.
///
/// # Safety
/// `kernel` and `constraint` must be live handles, `g` a valid callback for
/// the duration of the call, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gpb_model_constrain(
    kernel: *const GpbKernel,
    constraint: *const GpbConstraint,
    g: GpbConstraintFn,
    ctx: *mut libc::c_void,
    backend: GpbBackend,
    resolution: usize,
    retained: usize,
    nugget: f64,
    out: *mut *mut GpbModel,
) -> GpbStatus {
    guarded(|| {
        if kernel.is_null() || constraint.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        if nugget < 0.0 {
            return fail(GpbStatus::InvalidArgument, "nugget must be nonnegative");
        }
        let prior = Gp::new((*kernel).inner.clone());
        let retained = (retained > 0).then_some(retained);
        let mut spec = match backend {
            GpbBackend::Interpolation => FormSpec::interpolation(resolution),
            GpbBackend::Spectral if nugget > 0.0 => FormSpec::nugget(resolution, retained, nugget),
            GpbBackend::Spectral => FormSpec::spectral(resolution, retained),
        };
        if let (GpbBackend::Interpolation, true) = (backend, nugget > 0.0) {
            spec.backend = BackendSpec::Interpolation { nugget };
        }
        let target = |p: &[f64]| g(p.as_ptr(), p.len(), ctx);
        match constrain(&prior, &(*constraint).inner, target, &spec) {
            Ok(model) => {
                *out = GpbModel::from_surface(model);
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::NumericalError, e.to_string()),
        }
    })
}

/// Classical finite-point conditioning of a zero-mean prior.
///
/// # Safety
/// Buffers must match the stated sizes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gpb_model_finite_condition(
    kernel: *const GpbKernel,
    points: *const f64,
    values: *const f64,
    n: usize,
    dim: usize,
    noise_variance: f64,
    out: *mut *mut GpbModel,
) -> GpbStatus {
    guarded(|| {
        if kernel.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        let (Some(flat), Some(vals)) = (point_slice(points, n * dim), point_slice(values, n))
        else {
            return fail(GpbStatus::NullArgument, "null buffer");
        };
        let pts: Vec<Vec<f64>> = flat.chunks(dim).map(|c| c.to_vec()).collect();
        let prior = Gp::new((*kernel).inner.clone());
        match finite_condition(&prior, &pts, vals, noise_variance) {
            Ok(model) => {
                *out = GpbModel::from_surface(model);
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::NumericalError, e.to_string()),
        }
    })
}

/// Posterior mean at a point.
///
/// # Safety
/// `s` must point to `dim` doubles; `model` must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gpb_model_mean(
    model: *const GpbModel,
    s: *const f64,
    dim: usize,
    out: *mut f64,
) -> GpbStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        let Some(s) = point_slice(s, dim) else {
            return fail(GpbStatus::NullArgument, "null point");
        };
        match (*model).inner.mean_at(s) {
            Ok(v) => {
                *out = v;
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::NumericalError, e.to_string()),
        }
    })
}

/// Posterior covariance between two points.
///
/// # Safety
/// As for `gpb_model_mean`.
#[no_mangle]
pub unsafe extern "C" fn gpb_model_cov(
    model: *const GpbModel,
    s1: *const f64,
    s2: *const f64,
    dim: usize,
    out: *mut f64,
) -> GpbStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        let (Some(s1), Some(s2)) = (point_slice(s1, dim), point_slice(s2, dim)) else {
            return fail(GpbStatus::NullArgument, "null point");
        };
        match (*model).inner.cov_at(s1, s2) {
            Ok(v) => {
                *out = v;
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::NumericalError, e.to_string()),
        }
    })
}

/// Fold `m` direct observations into the model, returning a new independent
/// handle. The input handle stays valid and unchanged.
///
/// # Safety
/// `obs_points` is row-major `m × dim`; `obs_values` holds `m` doubles;
/// `model` must be live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gpb_model_posterior(
    model: *const GpbModel,
    obs_points: *const f64,
    obs_values: *const f64,
    m: usize,
    dim: usize,
    noise_variance: f64,
    out: *mut *mut GpbModel,
) -> GpbStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        let (Some(flat), Some(vals)) =
            (point_slice(obs_points, m * dim), point_slice(obs_values, m))
        else {
            return fail(GpbStatus::NullArgument, "null buffer");
        };
        let pts: Vec<Vec<f64>> = flat.chunks(dim).map(|c| c.to_vec()).collect();
        let base = (*model).inner.clone();
        match posterior(base, &pts, vals, noise_variance) {
            Ok(post) => {
                *out = GpbModel::from_surface(post);
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::NumericalError, e.to_string()),
        }
    })
}

/// Draw `count` sample paths on a `g × dim` grid into a `count × g`
/// row-major output buffer.
///
/// # Safety
/// `grid` must hold `g * dim` doubles and `out` `count * g` doubles.
#[no_mangle]
pub unsafe extern "C" fn gpb_model_sample(
    model: *const GpbModel,
    grid: *const f64,
    g: usize,
    dim: usize,
    count: usize,
    seed: u64,
    out: *mut f64,
) -> GpbStatus {
    guarded(|| {
        if model.is_null() || out.is_null() {
            return fail(GpbStatus::NullArgument, "null argument");
        }
        let Some(flat) = point_slice(grid, g * dim) else {
            return fail(GpbStatus::NullArgument, "null grid");
        };
        let pts: Vec<Vec<f64>> = flat.chunks(dim).map(|c| c.to_vec()).collect();
        match sample_paths(&(*model).inner, &pts, count, seed) {
            Ok(draws) => {
                let dst = slice::from_raw_parts_mut(out, count * g);
                for row in 0..count {
                    for col in 0..g {
                        dst[row * g + col] = draws[(row, col)];
                    }
                }
                GpbStatus::Ok
            }
            Err(e) => fail(GpbStatus::NumericalError, e.to_string()),
        }
    })
}

/// # Safety
/// `model` must be a handle from this library or null.
#[no_mangle]
pub unsafe extern "C" fn gpb_model_free(model: *mut GpbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
