//! C interface to `brown-mde`.
//!
//! Specs and models are opaque handles owned by the caller and released with
//! the matching `_free` function. Every fallible call returns a [`BmStatus`];
//! on failure [`bm_last_error`] describes the error for the calling thread.
//! Solver, quadrature and support settings are the library defaults.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use brown_mde::brown::{compute_l, QuadratureConfig};
use brown_mde::config::RunConfig;
use brown_mde::dyson::{solve_vde, SolverConfig};
use brown_mde::profiles::{discretize, validate, BlockPartition, DiscretizedModel, ProfileFile, ProfileSpec, Violation};
use brown_mde::support::{dist_zero_support, rho_density, SupportConfig};
use brown_mde::{c64, Error};

/// Status codes. `BM_OK` is zero; the rest mirror the library error kinds.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BmStatus {
    BmOk = 0,
    BmErrNullPointer = 1,
    BmErrInvalidSpec = 2,
    BmErrBlockUnresolved = 3,
    BmErrDomain = 4,
    BmErrNonConvergence = 5,
    BmErrNumericalFailure = 6,
    BmErrConfig = 7,
    BmErrIo = 8,
    BmErrPanic = 9,
}

/// Bits of the violation mask written by [`bm_spec_validate`].
pub const BM_VIOLATION_VARIANCE_ABOVE_BOUND: u32 = 1;
pub const BM_VIOLATION_VARIANCE_BELOW_BOUND: u32 = 1 << 1;
pub const BM_VIOLATION_DEFORMATION_ABOVE_BOUND: u32 = 1 << 2;
pub const BM_VIOLATION_ZERO_DIAGONAL_BLOCK: u32 = 1 << 3;
pub const BM_VIOLATION_NOT_PRIMITIVE: u32 = 1 << 4;
pub const BM_VIOLATION_HOLDER_EXPONENT: u32 = 1 << 5;

/// Opaque profile specification.
pub struct BmSpec(ProfileSpec);

/// Opaque discretized model.
pub struct BmModel(DiscretizedModel);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> BmStatus {
    match e {
        Error::InvalidSpec(_) => BmStatus::BmErrInvalidSpec,
        Error::BlockUnresolved { .. } => BmStatus::BmErrBlockUnresolved,
        Error::Domain(_) => BmStatus::BmErrDomain,
        Error::NonConvergence { .. } => BmStatus::BmErrNonConvergence,
        Error::NumericalFailure(_) => BmStatus::BmErrNumericalFailure,
        Error::Config(_) => BmStatus::BmErrConfig,
        Error::Io(_) => BmStatus::BmErrIo,
    }
}

enum Fail {
    Null(&'static str),
    Lib(&'static str, Error),
}

impl From<(&'static str, Error)> for Fail {
    fn from((op, e): (&'static str, Error)) -> Self {
        Fail::Lib(op, e)
    }
}

fn guard<F>(f: F) -> BmStatus
where
    F: FnOnce() -> Result<(), Fail>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BmStatus::BmOk
        }
        Ok(Err(Fail::Null(arg))) => {
            set_error(&format!("null pointer: {arg}"));
            BmStatus::BmErrNullPointer
        }
        Ok(Err(Fail::Lib(op, e))) => {
            set_error(&format!("{op}: {e}"));
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            BmStatus::BmErrPanic
        }
    }
}

fn tag<T>(op: &'static str, r: brown_mde::Result<T>) -> Result<T, Fail> {
    r.map_err(|e| Fail::Lib(op, e))
}

unsafe fn deref<'a, T>(p: *const T, arg: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(arg))
}

unsafe fn slice<'a>(p: *const f64, len: usize, arg: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(arg));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write<T>(p: *mut T, v: T, arg: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(arg));
    }
    p.write(v);
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call into this library on the thread.
#[no_mangle]
pub extern "C" fn bm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a profile from TOML text: either the profile keys alone
/// (`breakpoints`, `variance`, `deformation_re`, `deformation_im`,
/// optional `c_bound`, `holder_theta`) or a full run configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_spec_from_toml(toml: *const c_char, out: *mut *mut BmSpec) -> BmStatus {
    guard(|| {
        if toml.is_null() {
            return Err(Fail::Null("toml"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|_| Fail::Lib("profiles::parse", Error::Config("TOML text is not UTF-8".into())))?;
        let spec = match toml::from_str::<ProfileFile>(text) {
            Ok(f) => tag("profiles::parse", ProfileSpec::try_from(f))?,
            Err(e) => match RunConfig::parse(text, &Default::default()) {
                Ok(cfg) => cfg.model,
                Err(_) => return Err(Fail::Lib("profiles::parse", Error::Config(e.message().to_string()))),
            },
        };
        write(out, Box::into_raw(Box::new(BmSpec(spec))), "out")
    })
}

/// Builds a profile with `k` blocks from `k + 1` breakpoints, a row-major
/// `k * k` variance matrix and `k` deformation values.
///
/// # Safety
/// Array pointers must hold the stated number of elements.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn bm_spec_new(
    k: usize,
    breakpoints: *const f64,
    variance: *const f64,
    deformation_re: *const f64,
    deformation_im: *const f64,
    c_bound: f64,
    holder_theta: f64,
    out: *mut *mut BmSpec,
) -> BmStatus {
    guard(|| {
        if k == 0 {
            return Err(("profiles::ProfileSpec", Error::InvalidSpec("k must be at least 1".into())).into());
        }
        let b = slice(breakpoints, k + 1, "breakpoints")?;
        let s = slice(variance, k * k, "variance")?;
        let re = slice(deformation_re, k, "deformation_re")?;
        let im = slice(deformation_im, k, "deformation_im")?;
        let partition = tag("profiles::ProfileSpec", BlockPartition::new(b.to_vec()))?;
        let spec = tag(
            "profiles::ProfileSpec",
            ProfileSpec::new(
                partition,
                s.chunks(k).map(<[f64]>::to_vec).collect(),
                re.iter().zip(im).map(|(&r, &i)| c64::new(r, i)).collect(),
                c_bound,
                holder_theta,
            ),
        )?;
        write(out, Box::into_raw(Box::new(BmSpec(spec))), "out")
    })
}

/// # Safety
/// `spec` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bm_spec_free(spec: *mut BmSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Checks the model assumptions. Writes the number of violations and a
/// mask of `BM_VIOLATION_*` bits; either output may be null.
///
/// # Safety
/// `spec` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn bm_spec_validate(spec: *const BmSpec, count: *mut usize, mask: *mut u32) -> BmStatus {
    guard(|| {
        let report = validate(&deref(spec, "spec")?.0);
        let bits = report.violations.iter().fold(0u32, |acc, v| {
            acc | match v {
                Violation::VarianceAboveBound { .. } => BM_VIOLATION_VARIANCE_ABOVE_BOUND,
                Violation::VarianceBelowBound { .. } => BM_VIOLATION_VARIANCE_BELOW_BOUND,
                Violation::DeformationAboveBound { .. } => BM_VIOLATION_DEFORMATION_ABOVE_BOUND,
                Violation::ZeroDiagonalBlock { .. } => BM_VIOLATION_ZERO_DIAGONAL_BLOCK,
                Violation::NotPrimitive => BM_VIOLATION_NOT_PRIMITIVE,
                Violation::HolderExponentTooSmall { .. } => BM_VIOLATION_HOLDER_EXPONENT,
            }
        });
        if !count.is_null() {
            count.write(report.violations.len());
        }
        if !mask.is_null() {
            mask.write(bits);
        }
        Ok(())
    })
}

/// # Safety
/// `spec` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_model_discretize(spec: *const BmSpec, n: usize, out: *mut *mut BmModel) -> BmStatus {
    guard(|| {
        let m = tag("profiles::discretize", discretize(&deref(spec, "spec")?.0, n))?;
        write(out, Box::into_raw(Box::new(BmModel(m))), "out")
    })
}

/// Dimension `n` of a model, or 0 for a null handle.
///
/// # Safety
/// `model` must be a valid handle or null.
#[no_mangle]
pub unsafe extern "C" fn bm_model_n(model: *const BmModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n())
}

/// # Safety
/// `model` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn bm_model_free(model: *mut BmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Solves the vector Dyson equation at `(zeta, eta)`. `v1` and `v2` must
/// hold `len == n` doubles; `residual` may be null.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn bm_solve_vde(
    model: *const BmModel,
    zeta_re: f64,
    zeta_im: f64,
    eta: f64,
    v1: *mut f64,
    v2: *mut f64,
    len: usize,
    residual: *mut f64,
) -> BmStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        if len != m.n() {
            return Err(("dyson::solve_vde", Error::Domain(format!("output length {len} != n = {}", m.n()))).into());
        }
        if v1.is_null() || v2.is_null() {
            return Err(Fail::Null("v1/v2"));
        }
        let sol = tag(
            "dyson::solve_vde",
            solve_vde(m, c64::new(zeta_re, zeta_im), eta, None, &SolverConfig::default()),
        )?;
        ptr::copy_nonoverlapping(sol.v1.as_ptr(), v1, len);
        ptr::copy_nonoverlapping(sol.v2.as_ptr(), v2, len);
        if !residual.is_null() {
            residual.write(sol.residual);
        }
        Ok(())
    })
}

/// Log-potential `L(zeta)`; `error_estimate` may be null.
///
/// # Safety
/// `model` must be a valid handle and `value` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_log_potential(
    model: *const BmModel,
    zeta_re: f64,
    zeta_im: f64,
    value: *mut f64,
    error_estimate: *mut f64,
) -> BmStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let l = tag(
            "brown::compute_L",
            compute_l(m, c64::new(zeta_re, zeta_im), &QuadratureConfig::default(), &SolverConfig::default()),
        )?;
        write(value, l.value, "value")?;
        if !error_estimate.is_null() {
            error_estimate.write(l.error_estimate);
        }
        Ok(())
    })
}

/// Density of the limiting singular value measure at `tau`.
///
/// # Safety
/// `model` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_rho_density(
    model: *const BmModel,
    zeta_re: f64,
    zeta_im: f64,
    tau: f64,
    out: *mut f64,
) -> BmStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let rho = tag(
            "support::rho_density",
            rho_density(m, c64::new(zeta_re, zeta_im), tau, &SupportConfig::default(), &SolverConfig::default()),
        )?;
        write(out, rho, "out")
    })
}

/// Distance from 0 to the support of the singular value measure at `zeta`.
///
/// # Safety
/// `model` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bm_dist_zero_support(model: *const BmModel, zeta_re: f64, zeta_im: f64, out: *mut f64) -> BmStatus {
    guard(|| {
        let m = &deref(model, "model")?.0;
        let d = tag(
            "support::dist_zero_support",
            dist_zero_support(m, c64::new(zeta_re, zeta_im), &SupportConfig::default(), &SolverConfig::default()),
        )?;
        write(out, d, "out")
    })
}
