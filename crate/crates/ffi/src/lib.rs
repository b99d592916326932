//! C ABI over the `baryvae` aggregators and divergences.
//!
//! Every object crosses the boundary as an opaque heap handle that the caller
//! releases with the matching `*_free`. Fallible calls return a [`BaryStatus`]
//! and write results through out-pointers; on failure the message is available
//! from [`bary_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use baryvae::barycenter::{self, BarycenterError, WeightedFamily};
use baryvae::gaussian::{self, DiagGaussian, FullGaussian, GaussianError, GaussianMixture};
use baryvae::linalg::{LinalgError, SymMatrix};

/// Result of a fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaryStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Arguments violate a precondition (shapes, weights, positivity).
    InvalidArgument = 2,
    /// The computation failed to converge or produced non-finite values.
    NumericFailure = 3,
    /// A Rust panic was caught at the boundary.
    Panic = 4,
}

/// Diagonal Gaussian handle.
pub struct BaryGaussian(DiagGaussian);

/// Full-covariance Gaussian handle.
pub struct BaryFullGaussian(FullGaussian);

/// Gaussian mixture handle.
pub struct BaryMixture(GaussianMixture);

struct FfiError {
    status: BaryStatus,
    message: String,
}

impl FfiError {
    fn null(what: &str) -> Self {
        Self {
            status: BaryStatus::NullPointer,
            message: format!("`{what}` is null"),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self {
            status: BaryStatus::InvalidArgument,
            message: message.into(),
        }
    }
}

impl From<GaussianError> for FfiError {
    fn from(e: GaussianError) -> Self {
        let status = match e {
            GaussianError::NonFinite { .. } | GaussianError::Oracle(_) => BaryStatus::NumericFailure,
            GaussianError::Linalg(LinalgError::NoConvergence { .. }) => BaryStatus::NumericFailure,
            _ => BaryStatus::InvalidArgument,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<BarycenterError> for FfiError {
    fn from(e: BarycenterError) -> Self {
        let status = match &e {
            BarycenterError::NoConvergence { .. }
            | BarycenterError::ZeroPrecision(_)
            | BarycenterError::Linalg(LinalgError::NoConvergence { .. }) => BaryStatus::NumericFailure,
            BarycenterError::Gaussian(inner) => FfiError::from(inner.clone()).status,
            _ => BaryStatus::InvalidArgument,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl From<LinalgError> for FfiError {
    fn from(e: LinalgError) -> Self {
        Self::invalid(e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), FfiError>) -> BaryStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            BaryStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(_) => {
            set_last_error("panic inside baryvae");
            BaryStatus::Panic
        }
    }
}

/// # Safety
/// `ptr` must be null or valid for `len` reads.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], FfiError> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(FfiError::null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or a live handle.
unsafe fn handle<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, FfiError> {
    ptr.as_ref().ok_or_else(|| FfiError::null(what))
}

/// # Safety
/// `out` must be null or valid for one write.
unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), FfiError> {
    if out.is_null() {
        return Err(FfiError::null(what));
    }
    out.write(value);
    Ok(())
}

/// # Safety
/// `out` must be null or valid for `len` writes.
unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), FfiError> {
    if len != src.len() {
        return Err(FfiError::invalid(format!(
            "buffer holds {len} values, {} needed",
            src.len()
        )));
    }
    if len > 0 {
        if out.is_null() {
            return Err(FfiError::null("out"));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), out, len);
    }
    Ok(())
}

/// # Safety
/// `members` must point to `count` live handles.
unsafe fn collect<T: Clone, H>(
    members: *const *const H,
    count: usize,
    inner: impl Fn(&H) -> &T,
) -> Result<Vec<T>, FfiError> {
    if count == 0 {
        return Err(FfiError::invalid("family is empty"));
    }
    let ptrs = slice(members, count, "members")?;
    ptrs.iter()
        .enumerate()
        .map(|(i, p)| Ok(inner(handle(*p, &format!("members[{i}]"))?).clone()))
        .collect()
}

/// # Safety
/// `weights` must be null or valid for `count` reads.
unsafe fn family<T: barycenter::Dimensioned + Clone>(
    members: Vec<T>,
    weights: *const f64,
    count: usize,
) -> Result<WeightedFamily<T>, FfiError> {
    let fam = if weights.is_null() {
        WeightedFamily::uniform(members)?
    } else {
        WeightedFamily::new(members, slice(weights, count, "weights")?.to_vec())?
    };
    Ok(fam)
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bary_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a success.
///
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn bary_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a diagonal Gaussian from `dim` means and standard deviations.
///
/// # Safety
/// `mean` and `sigma` must be valid for `dim` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_gaussian_new(
    mean: *const f64,
    sigma: *const f64,
    dim: usize,
    out: *mut *mut BaryGaussian,
) -> BaryStatus {
    guard(|| {
        let g = DiagGaussian::new(slice(mean, dim, "mean")?.to_vec(), slice(sigma, dim, "sigma")?.to_vec())?;
        put(out, boxed(BaryGaussian(g)), "out")
    })
}

/// Releases a handle from any `bary_gaussian_*` constructor or aggregator. Null is a no-op.
///
/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bary_gaussian_free(g: *mut BaryGaussian) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Dimension of `g`; 0 for null.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bary_gaussian_dim(g: *const BaryGaussian) -> usize {
    g.as_ref().map_or(0, |g| g.0.dim())
}

/// Copies the mean into `out` (`len` must equal the dimension).
///
/// # Safety
/// `g` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn bary_gaussian_mean(g: *const BaryGaussian, out: *mut f64, len: usize) -> BaryStatus {
    guard(|| copy_out(handle(g, "g")?.0.mean(), out, len))
}

/// Copies the standard deviations into `out` (`len` must equal the dimension).
///
/// # Safety
/// `g` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn bary_gaussian_sigma(g: *const BaryGaussian, out: *mut f64, len: usize) -> BaryStatus {
    guard(|| copy_out(handle(g, "g")?.0.sigma(), out, len))
}

/// Log density of `g` at `x`.
///
/// # Safety
/// `g` must be a live handle; `x` valid for `len` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_gaussian_log_density(
    g: *const BaryGaussian,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> BaryStatus {
    guard(|| {
        let v = handle(g, "g")?.0.log_density(slice(x, len, "x")?)?;
        put(out, v, "out")
    })
}

/// Closed-form `KL(p ‖ q)`.
///
/// # Safety
/// `p`, `q` must be live handles; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_kl_diag(p: *const BaryGaussian, q: *const BaryGaussian, out: *mut f64) -> BaryStatus {
    guard(|| put(out, gaussian::kl_diag(&handle(p, "p")?.0, &handle(q, "q")?.0)?, "out"))
}

/// Closed-form squared 2-Wasserstein distance between diagonal Gaussians.
///
/// # Safety
/// `p`, `q` must be live handles; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_w2sq_diag(p: *const BaryGaussian, q: *const BaryGaussian, out: *mut f64) -> BaryStatus {
    guard(|| put(out, gaussian::w2sq_diag(&handle(p, "p")?.0, &handle(q, "q")?.0)?, "out"))
}

/// Product of experts `∝ Π q_m^{α_m}`; `exponents` null means all ones.
///
/// # Safety
/// `members` must hold `count` live handles; `exponents` null or valid for
/// `count` reads; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_poe(
    members: *const *const BaryGaussian,
    count: usize,
    exponents: *const f64,
    out: *mut *mut BaryGaussian,
) -> BaryStatus {
    guard(|| {
        let fam = WeightedFamily::uniform(collect(members, count, |h: &BaryGaussian| &h.0)?)?;
        let alpha = if exponents.is_null() {
            vec![1.0; count]
        } else {
            slice(exponents, count, "exponents")?.to_vec()
        };
        put(out, boxed(BaryGaussian(barycenter::poe(&fam, &alpha)?)), "out")
    })
}

/// Diagonal Wasserstein barycenter; `weights` null means uniform.
///
/// # Safety
/// `members` must hold `count` live handles; `weights` null or valid for
/// `count` reads; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_wb_diag(
    members: *const *const BaryGaussian,
    weights: *const f64,
    count: usize,
    out: *mut *mut BaryGaussian,
) -> BaryStatus {
    guard(|| {
        let fam = family(collect(members, count, |h: &BaryGaussian| &h.0)?, weights, count)?;
        put(out, boxed(BaryGaussian(barycenter::wb_diag(&fam)?)), "out")
    })
}

/// Mixture of experts; `weights` null means uniform.
///
/// # Safety
/// `members` must hold `count` live handles; `weights` null or valid for
/// `count` reads; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_moe(
    members: *const *const BaryGaussian,
    weights: *const f64,
    count: usize,
    out: *mut *mut BaryMixture,
) -> BaryStatus {
    guard(|| {
        let fam = family(collect(members, count, |h: &BaryGaussian| &h.0)?, weights, count)?;
        put(out, boxed(BaryMixture(barycenter::moe(&fam)?)), "out")
    })
}

/// # Safety
/// Same contract as [`bary_mopoe`].
unsafe fn powerset(
    members: *const *const BaryGaussian,
    count: usize,
    prior: *const BaryGaussian,
    out: *mut *mut BaryMixture,
    f: fn(&WeightedFamily, &DiagGaussian) -> Result<GaussianMixture, BarycenterError>,
) -> BaryStatus {
    guard(|| {
        let fam = WeightedFamily::uniform(collect(members, count, |h: &BaryGaussian| &h.0)?)?;
        let prior = match prior.as_ref() {
            Some(p) => p.0.clone(),
            None => DiagGaussian::standard(fam.dim()),
        };
        put(out, boxed(BaryMixture(f(&fam, &prior)?)), "out")
    })
}

/// Mixture over the powerset of products; the empty subset is `prior`
/// (standard normal when null). `2^count` components in ascending mask order.
///
/// # Safety
/// `members` must hold `count` live handles; `prior` null or live; `out`
/// valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_mopoe(
    members: *const *const BaryGaussian,
    count: usize,
    prior: *const BaryGaussian,
    out: *mut *mut BaryMixture,
) -> BaryStatus {
    powerset(members, count, prior, out, barycenter::mopoe)
}

/// Mixture over the powerset of Wasserstein barycenters; otherwise as [`bary_mopoe`].
///
/// # Safety
/// Same contract as [`bary_mopoe`].
#[no_mangle]
pub unsafe extern "C" fn bary_mwb(
    members: *const *const BaryGaussian,
    count: usize,
    prior: *const BaryGaussian,
    out: *mut *mut BaryMixture,
) -> BaryStatus {
    powerset(members, count, prior, out, barycenter::mwb)
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bary_mixture_free(m: *mut BaryMixture) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of components; 0 for null.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bary_mixture_len(m: *const BaryMixture) -> usize {
    m.as_ref().map_or(0, |m| m.0.len())
}

/// Weight of component `index`.
///
/// # Safety
/// `m` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_mixture_weight(m: *const BaryMixture, index: usize, out: *mut f64) -> BaryStatus {
    guard(|| {
        let m = &handle(m, "m")?.0;
        let w = *m
            .weights()
            .get(index)
            .ok_or_else(|| FfiError::invalid(format!("component {index} of {}", m.len())))?;
        put(out, w, "out")
    })
}

/// Copy of component `index` as a new handle.
///
/// # Safety
/// `m` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_mixture_component(
    m: *const BaryMixture,
    index: usize,
    out: *mut *mut BaryGaussian,
) -> BaryStatus {
    guard(|| {
        let m = &handle(m, "m")?.0;
        let c = m
            .components()
            .get(index)
            .ok_or_else(|| FfiError::invalid(format!("component {index} of {}", m.len())))?;
        put(out, boxed(BaryGaussian(c.clone())), "out")
    })
}

/// Log density of the mixture at `x`.
///
/// # Safety
/// `m` must be a live handle; `x` valid for `len` reads; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_mixture_log_density(
    m: *const BaryMixture,
    x: *const f64,
    len: usize,
    out: *mut f64,
) -> BaryStatus {
    guard(|| {
        let v = handle(m, "m")?.0.log_density(slice(x, len, "x")?)?;
        put(out, v, "out")
    })
}

/// Creates a full-covariance Gaussian; `cov` is `dim x dim` row-major and must be SPD.
///
/// # Safety
/// `mean` valid for `dim` reads, `cov` for `dim * dim`; `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_full_gaussian_new(
    mean: *const f64,
    cov: *const f64,
    dim: usize,
    out: *mut *mut BaryFullGaussian,
) -> BaryStatus {
    guard(|| {
        let cov = SymMatrix::new(dim, slice(cov, dim * dim, "cov")?.to_vec())?;
        let g = FullGaussian::new(slice(mean, dim, "mean")?.to_vec(), cov)?;
        put(out, boxed(BaryFullGaussian(g)), "out")
    })
}

/// # Safety
/// `g` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bary_full_gaussian_free(g: *mut BaryFullGaussian) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Dimension of `g`; 0 for null.
///
/// # Safety
/// `g` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bary_full_gaussian_dim(g: *const BaryFullGaussian) -> usize {
    g.as_ref().map_or(0, |g| g.0.dim())
}

/// Copies the mean into `out` (`len` must equal the dimension).
///
/// # Safety
/// `g` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn bary_full_gaussian_mean(g: *const BaryFullGaussian, out: *mut f64, len: usize) -> BaryStatus {
    guard(|| copy_out(handle(g, "g")?.0.mean(), out, len))
}

/// Copies the covariance, row-major, into `out` (`len` must be `dim * dim`).
///
/// # Safety
/// `g` must be a live handle; `out` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn bary_full_gaussian_cov(g: *const BaryFullGaussian, out: *mut f64, len: usize) -> BaryStatus {
    guard(|| copy_out(handle(g, "g")?.0.cov().as_slice(), out, len))
}

/// Full-covariance Wasserstein barycenter by fixed-point iteration.
///
/// `weights` null means uniform. Returns `NUMERIC_FAILURE` when the residual
/// stays above `tol·(1 + ‖Σ‖_F)` after `max_iter` iterations.
///
/// # Safety
/// `members` must hold `count` live handles; `weights` null or valid for
/// `count` reads; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_wb_full(
    members: *const *const BaryFullGaussian,
    weights: *const f64,
    count: usize,
    tol: f64,
    max_iter: usize,
    out: *mut *mut BaryFullGaussian,
) -> BaryStatus {
    guard(|| {
        let fam = family(collect(members, count, |h: &BaryFullGaussian| &h.0)?, weights, count)?;
        put(
            out,
            boxed(BaryFullGaussian(barycenter::wb_full(&fam, tol, max_iter)?)),
            "out",
        )
    })
}

/// Squared Bures-Wasserstein distance between full-covariance Gaussians.
///
/// # Safety
/// `p`, `q` must be live handles; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn bary_w2sq_full(
    p: *const BaryFullGaussian,
    q: *const BaryFullGaussian,
    out: *mut f64,
) -> BaryStatus {
    guard(|| put(out, gaussian::w2sq_full(&handle(p, "p")?.0, &handle(q, "q")?.0)?, "out"))
}
