//! C ABI over the `satstab` core.
//!
//! Every fallible entry point returns a [`SatstabStatus`]. On failure the
//! message is available from [`satstab_last_error`] on the same thread until
//! the next call. Objects are opaque handles released with their `_free`
//! function; strings returned through out-parameters are released with
//! [`satstab_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use satstab::experiment::{Experiment, ExperimentConfig, SynthesisReport};
use satstab::saturation::{sat_scalar, SaturationLevel};
use satstab::spectral::{
    eigen_system, unstable_count, BoundaryCondition, EigenSystem, OperatorParams,
};
use satstab::Error;

/// Result of an FFI call. Values 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SatstabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Infeasible = 4,
    Panic = 5,
}

/// Boundary condition selector for [`satstab_eigen_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SatstabBoundary {
    Hinged = 0,
    Clamped = 1,
    NeumannCh = 2,
}

/// Eigenpairs of the fourth-order operator.
pub struct SatstabEigen {
    inner: EigenSystem,
}

/// Assembled experiment with its synthesis result cached after the first
/// call to [`satstab_experiment_synthesize`].
pub struct SatstabExperiment {
    inner: Experiment,
    report: Option<SynthesisReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SatstabStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => return SatstabStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            (SatstabStatus::NullPointer, format!("null pointer: {name}"))
        }
        Ok(Err(Failure::Invalid(msg))) => (SatstabStatus::InvalidArgument, msg),
        Ok(Err(Failure::Core(e))) => {
            let status = match e.exit_code() {
                2 => SatstabStatus::InvalidArgument,
                4 => SatstabStatus::Infeasible,
                _ => SatstabStatus::Numerical,
            };
            (status, e.to_string())
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            (SatstabStatus::Panic, format!("panic: {what}"))
        }
    };
    set_last_error(msg);
    status
}

fn non_null<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: caller contract; null is rejected here.
    unsafe { p.as_ref() }.ok_or(Failure::Null(name))
}

fn non_null_mut<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    // SAFETY: caller contract; null is rejected here.
    unsafe { p.as_mut() }.ok_or(Failure::Null(name))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Invalid("output contains a NUL byte".into()))
}

/// Message for the last failed call on this thread, or NULL after a
/// successful one. The pointer is valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn satstab_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn satstab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Computes the leading `count` eigenpairs, sorted by decreasing eigenvalue.
///
/// # Safety
/// `out` must be null or point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn satstab_eigen_new(
    bc: c_int,
    lambda: f64,
    length: f64,
    count: usize,
    out: *mut *mut SatstabEigen,
) -> SatstabStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        let bc = match bc {
            0 => BoundaryCondition::Hinged,
            1 => BoundaryCondition::Clamped,
            2 => BoundaryCondition::NeumannCH,
            other => {
                return Err(Failure::Invalid(format!(
                    "unknown boundary selector {other}"
                )))
            }
        };
        let inner = eigen_system(OperatorParams::new(lambda, length)?, bc, count)?;
        *out = Box::into_raw(Box::new(SatstabEigen { inner }));
        Ok(())
    })
}

/// Number of computed eigenpairs, or 0 for a null handle.
///
/// # Safety
/// `eigen` must be null or a live handle from [`satstab_eigen_new`].
#[no_mangle]
pub unsafe extern "C" fn satstab_eigen_count(eigen: *const SatstabEigen) -> usize {
    unsafe { eigen.as_ref() }.map_or(0, |e| e.inner.count())
}

/// Copies the eigenvalues into `out`, which must hold at least
/// `satstab_eigen_count` values.
///
/// # Safety
/// `eigen` must be a live handle; `out` must be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn satstab_eigen_values(
    eigen: *const SatstabEigen,
    out: *mut f64,
    len: usize,
) -> SatstabStatus {
    guard(|| {
        let values = non_null(eigen, "eigen")?.inner.values();
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        if len < values.len() {
            return Err(Failure::Invalid(format!(
                "buffer holds {len} values, {} required",
                values.len()
            )));
        }
        // SAFETY: out is valid for len >= values.len() writes.
        unsafe { ptr::copy_nonoverlapping(values.as_ptr(), out, values.len()) };
        Ok(())
    })
}

/// Number of nonnegative eigenvalues `n` and the default tail margin
/// `eta = -sigma_{n+1} / 2`.
///
/// # Safety
/// `eigen` must be a live handle; `n` and `eta` must be writable.
#[no_mangle]
pub unsafe extern "C" fn satstab_eigen_unstable(
    eigen: *const SatstabEigen,
    n: *mut usize,
    eta: *mut f64,
) -> SatstabStatus {
    guard(|| {
        let es = &non_null(eigen, "eigen")?.inner;
        let n = non_null_mut(n, "n")?;
        let eta = non_null_mut(eta, "eta")?;
        let uc = unstable_count(es)?;
        *n = uc.n;
        *eta = uc.eta;
        Ok(())
    })
}

/// # Safety
/// `eigen` must be null or a handle from [`satstab_eigen_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn satstab_eigen_free(eigen: *mut SatstabEigen) {
    if !eigen.is_null() {
        drop(unsafe { Box::from_raw(eigen) });
    }
}

/// Componentwise saturation at level `ell` (`INFINITY` for none). `u` and
/// `out` may alias.
///
/// # Safety
/// `u` must be valid for `len` reads and `out` for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn satstab_sat(
    u: *const f64,
    len: usize,
    ell: f64,
    out: *mut f64,
) -> SatstabStatus {
    guard(|| {
        if u.is_null() {
            return Err(Failure::Null("u"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let level = SaturationLevel::new(ell)?;
        for i in 0..len {
            // SAFETY: both buffers hold len elements; element-wise access
            // keeps aliasing sound.
            unsafe { *out.add(i) = sat_scalar(*u.add(i), level) };
        }
        Ok(())
    })
}

/// Parses and validates an experiment configuration (JSON) and assembles
/// the modal system.
///
/// # Safety
/// `config_json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn satstab_experiment_new(
    config_json: *const c_char,
    out: *mut *mut SatstabExperiment,
) -> SatstabStatus {
    guard(|| {
        let out = non_null_mut(out, "out")?;
        *out = ptr::null_mut();
        if config_json.is_null() {
            return Err(Failure::Null("config_json"));
        }
        let text = unsafe { CStr::from_ptr(config_json) }
            .to_str()
            .map_err(|e| Failure::Invalid(format!("config is not UTF-8: {e}")))?;
        let config = ExperimentConfig::from_json(text)?;
        let inner = Experiment::assemble(config)?;
        *out = Box::into_raw(Box::new(SatstabExperiment {
            inner,
            report: None,
        }));
        Ok(())
    })
}

/// Dimension of the finite-dimensional controlled part, or 0 for a null handle.
///
/// # Safety
/// `experiment` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn satstab_experiment_dim(experiment: *const SatstabExperiment) -> usize {
    unsafe { experiment.as_ref() }.map_or(0, |e| e.inner.ms.dim())
}

fn report(exp: &mut SatstabExperiment) -> Result<&SynthesisReport, Failure> {
    if exp.report.is_none() {
        exp.report = Some(exp.inner.synthesize()?);
    }
    Ok(exp.report.as_ref().expect("report set above"))
}

/// Designs the gain and certificate. Writes the report as JSON (same layout
/// as the CLI's `certificate.json`) to `out_json`.
///
/// # Safety
/// `experiment` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn satstab_experiment_synthesize(
    experiment: *mut SatstabExperiment,
    out_json: *mut *mut c_char,
) -> SatstabStatus {
    guard(|| {
        let exp = non_null_mut(experiment, "experiment")?;
        let out = non_null_mut(out_json, "out_json")?;
        *out = ptr::null_mut();
        let json = serde_json::to_string_pretty(report(exp)?)
            .map_err(|e| Failure::Core(Error::Config(e.to_string())))?;
        *out = into_c_string(json)?;
        Ok(())
    })
}

/// Runs the closed loop from the configured initial state and writes the
/// trajectory CSV to `out_csv`. Blow-up returns `SATSTAB_STATUS_NUMERICAL`.
///
/// # Safety
/// `experiment` must be a live handle; `out_csv` must be writable.
#[no_mangle]
pub unsafe extern "C" fn satstab_experiment_simulate(
    experiment: *mut SatstabExperiment,
    out_csv: *mut *mut c_char,
) -> SatstabStatus {
    guard(|| {
        let exp = non_null_mut(experiment, "experiment")?;
        let out = non_null_mut(out_csv, "out_csv")?;
        *out = ptr::null_mut();
        report(exp)?;
        let syn = exp.report.as_ref().expect("report cached");
        let traj = exp.inner.simulate(syn, exp.inner.initial_state()?)?;
        traj.require_completed()?;
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|e| Failure::Invalid(e.to_string()))?;
        *out = into_c_string(text)?;
        Ok(())
    })
}

/// # Safety
/// `experiment` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn satstab_experiment_free(experiment: *mut SatstabExperiment) {
    if !experiment.is_null() {
        drop(unsafe { Box::from_raw(experiment) });
    }
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn satstab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
