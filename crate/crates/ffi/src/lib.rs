//! C ABI for `dirac-lattice`.
//!
//! Conventions:
//! - Every fallible function returns a [`DlStatus`]; `DL_STATUS_OK` is zero.
//!   On failure a message is stored per thread and read back with
//!   [`dl_last_error_message`].
//! - Objects are opaque handles created by `*_new` / `*_load` functions and
//!   released with the matching `*_free`. Passing NULL to a `*_free` is a no-op.
//! - Outputs are written through caller-provided pointers only on success.
//! - Panics never cross the boundary; they surface as `DL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dirac_lattice::criteria::run_criterion;
use dirac_lattice::lattice::{apply_free_dirac, free_resolvent, snapshot, LatticeField, PeriodicLattice};
use dirac_lattice::symbol_analysis::{convergence_sweep, fit_loglog};
use dirac_lattice::symbols::symbol;
use dirac_lattice::{DiracError, Dimension, ModelId, ModelKind};
use num_complex::Complex64;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlStatus {
    Ok = 0,
    InvalidArgument = 1,
    DimensionMismatch = 2,
    Singular = 3,
    Unsupported = 4,
    DegenerateData = 5,
    Precondition = 6,
    NotConverged = 7,
    Format = 8,
    Io = 9,
    NullPointer = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

pub const DL_MODEL_CONTINUOUS: i32 = 0;
pub const DL_MODEL_FB: i32 = 1;
pub const DL_MODEL_S: i32 = 2;
pub const DL_MODEL_FB_MOD: i32 = 3;
pub const DL_MODEL_S_MOD: i32 = 4;

/// Complex number with the memory layout of two consecutive doubles.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DlComplex {
    pub re: f64,
    pub im: f64,
}

impl From<DlComplex> for Complex64 {
    fn from(c: DlComplex) -> Self {
        Complex64::new(c.re, c.im)
    }
}

impl From<Complex64> for DlComplex {
    fn from(c: Complex64) -> Self {
        DlComplex { re: c.re, im: c.im }
    }
}

/// Opaque model descriptor.
pub struct DlModel(ModelId);

/// Opaque periodic lattice.
pub struct DlLattice(PeriodicLattice);

/// Opaque spinor field on a lattice.
pub struct DlField(LatticeField);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("NUL bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

#[derive(Debug)]
struct Failure(DlStatus, String);

impl From<DiracError> for Failure {
    fn from(e: DiracError) -> Self {
        let status = match &e {
            DiracError::InvalidArgument(_) => DlStatus::InvalidArgument,
            DiracError::DimensionMismatch { .. } => DlStatus::DimensionMismatch,
            DiracError::Singular { .. } => DlStatus::Singular,
            DiracError::UnsupportedModel(_) | DiracError::UnsupportedPair(_) => DlStatus::Unsupported,
            DiracError::DegenerateData(_) => DlStatus::DegenerateData,
            DiracError::Precondition(_) => DlStatus::Precondition,
            DiracError::NotConverged { .. } => DlStatus::NotConverged,
            DiracError::Format(_) => DlStatus::Format,
            DiracError::Io(_) => DlStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: DlStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

/// Runs `body`, translating errors and panics into a status code.
fn guard<F>(body: F) -> DlStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            DlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            DlStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees `p` is NULL or a live handle from this library.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(DlStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(DlStatus::NullPointer, format!("{what} is NULL"));
    }
    // SAFETY: the caller guarantees `len` readable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return fail(DlStatus::NullPointer, format!("{what} is NULL"));
    }
    // SAFETY: the caller guarantees `len` writable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return fail(DlStatus::NullPointer, format!("{what} is NULL"));
    }
    // SAFETY: non-null and, per the caller's contract, valid for writes.
    unsafe { out.write(value) };
    Ok(())
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

unsafe fn release<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `boxed` and is released exactly once.
        drop(unsafe { Box::from_raw(p) });
    }
}

fn model_kind(kind: i32) -> Result<ModelKind, Failure> {
    Ok(match kind {
        DL_MODEL_CONTINUOUS => ModelKind::Continuous,
        DL_MODEL_FB => ModelKind::Fb,
        DL_MODEL_S => ModelKind::S,
        DL_MODEL_FB_MOD => ModelKind::FbMod,
        DL_MODEL_S_MOD => ModelKind::SMod,
        other => return fail(DlStatus::InvalidArgument, format!("unknown model kind {other}")),
    })
}

fn dimension(d: u32) -> Result<Dimension, Failure> {
    Ok(Dimension::from_d(d as usize)?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn dl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates a model. `h` is ignored for `DL_MODEL_CONTINUOUS`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_model_new(kind: i32, d: u32, mass: f64, h: f64, out: *mut *mut DlModel) -> DlStatus {
    guard(|| {
        let kind = model_kind(kind)?;
        let h = kind.is_discrete().then_some(h);
        let model = ModelId::new(kind, dimension(d)?, mass, h)?;
        unsafe { write_out(out, boxed(DlModel(model)), "out") }
    })
}

/// # Safety
/// `model` must be NULL or a handle from `dl_model_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dl_model_free(model: *mut DlModel) {
    unsafe { release(model) }
}

/// Spinor size ν (2 for d ≤ 2, 4 for d = 3).
///
/// # Safety
/// `model` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_model_nu(model: *const DlModel, out: *mut u32) -> DlStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        unsafe { write_out(out, m.0.nu() as u32, "out") }
    })
}

/// Writes the ν×ν symbol at momentum `xi` (length d) row-major into `out`
/// (capacity `out_len` ≥ ν²).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn dl_symbol(
    model: *const DlModel,
    xi: *const f64,
    d: usize,
    out: *mut DlComplex,
    out_len: usize,
) -> DlStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let xi = unsafe { slice(xi, d, "xi") }?;
        let g = symbol(&m.0, xi)?;
        let entries = g.to_row_major();
        if out_len < entries.len() {
            return fail(DlStatus::BufferTooSmall, format!("need {} entries", entries.len()));
        }
        let out = unsafe { slice_mut(out, entries.len(), "out") }?;
        for (o, e) in out.iter_mut().zip(entries) {
            *o = e.into();
        }
        Ok(())
    })
}

/// Sup-norm symbol resolvent difference against the continuum for each mesh
/// size in `h_list` (strictly decreasing); values go to `out_values`.
///
/// # Safety
/// Pointers must be valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn dl_symbol_sweep(
    model: *const DlModel,
    z: DlComplex,
    h_list: *const f64,
    len: usize,
    grid_n: usize,
    out_values: *mut f64,
) -> DlStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let hs = unsafe { slice(h_list, len, "h_list") }?;
        let records = convergence_sweep(&m.0, z.into(), hs, grid_n)?;
        let out = unsafe { slice_mut(out_values, len, "out_values") }?;
        for (o, r) in out.iter_mut().zip(&records) {
            *o = r.value;
        }
        Ok(())
    })
}

/// Least-squares slope of `log values` against `log h`.
///
/// # Safety
/// Pointers must be valid for `len` elements; `slope` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_fit_loglog(h: *const f64, values: *const f64, len: usize, slope: *mut f64) -> DlStatus {
    guard(|| {
        let h = unsafe { slice(h, len, "h") }?;
        let v = unsafe { slice(values, len, "values") }?;
        let pts: Vec<(f64, f64)> = h.iter().copied().zip(v.iter().copied()).collect();
        let fit = fit_loglog(&pts)?;
        unsafe { write_out(slope, fit.slope, "slope") }
    })
}

/// Creates an `n^d` lattice of mesh `h`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_lattice_new(d: u32, n: usize, h: f64, out: *mut *mut DlLattice) -> DlStatus {
    guard(|| {
        let lat = PeriodicLattice::new(dimension(d)?, n, h)?;
        unsafe { write_out(out, boxed(DlLattice(lat)), "out") }
    })
}

/// # Safety
/// `lattice` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dl_lattice_free(lattice: *mut DlLattice) {
    unsafe { release(lattice) }
}

/// Field with seeded random entries.
///
/// # Safety
/// `lattice` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_field_random(lattice: *const DlLattice, seed: u64, out: *mut *mut DlField) -> DlStatus {
    guard(|| {
        let lat = unsafe { deref(lattice, "lattice") }?;
        unsafe { write_out(out, boxed(DlField(LatticeField::random(lat.0, seed))), "out") }
    })
}

/// Field from `len = sites·ν` values, site-major with spinor components innermost.
///
/// # Safety
/// `values` must be valid for `len` elements; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_field_from_values(
    lattice: *const DlLattice,
    values: *const DlComplex,
    len: usize,
    out: *mut *mut DlField,
) -> DlStatus {
    guard(|| {
        let lat = unsafe { deref(lattice, "lattice") }?;
        let v = unsafe { slice(values, len, "values") }?;
        let field = LatticeField::from_values(lat.0, v.iter().map(|&c| c.into()).collect())?;
        unsafe { write_out(out, boxed(DlField(field)), "out") }
    })
}

/// Number of complex entries (`sites·ν`).
///
/// # Safety
/// `field` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_field_len(field: *const DlField, out: *mut usize) -> DlStatus {
    guard(|| {
        let f = unsafe { deref(field, "field") }?;
        unsafe { write_out(out, f.0.values().len(), "out") }
    })
}

/// Copies the entries into `out` (capacity `len`).
///
/// # Safety
/// `out` must be valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn dl_field_values(field: *const DlField, out: *mut DlComplex, len: usize) -> DlStatus {
    guard(|| {
        let f = unsafe { deref(field, "field") }?;
        let v = f.0.values();
        if len < v.len() {
            return fail(DlStatus::BufferTooSmall, format!("need {} entries", v.len()));
        }
        let out = unsafe { slice_mut(out, v.len(), "out") }?;
        for (o, &c) in out.iter_mut().zip(v) {
            *o = c.into();
        }
        Ok(())
    })
}

/// Discrete L² norm `(h^d Σ |u|²)^{1/2}`.
///
/// # Safety
/// `field` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_field_norm(field: *const DlField, out: *mut f64) -> DlStatus {
    guard(|| {
        let f = unsafe { deref(field, "field") }?;
        unsafe { write_out(out, f.0.norm(), "out") }
    })
}

/// # Safety
/// `field` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dl_field_free(field: *mut DlField) {
    unsafe { release(field) }
}

/// Applies the free lattice Dirac operator.
///
/// # Safety
/// Handles must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_apply_free_dirac(
    model: *const DlModel,
    field: *const DlField,
    out: *mut *mut DlField,
) -> DlStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let f = unsafe { deref(field, "field") }?;
        let u = apply_free_dirac(&m.0, &f.0)?;
        unsafe { write_out(out, boxed(DlField(u)), "out") }
    })
}

/// Solves `(H_{0,h} − z) u = f`.
///
/// # Safety
/// Handles must be live; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_free_resolvent(
    model: *const DlModel,
    z: DlComplex,
    field: *const DlField,
    out: *mut *mut DlField,
) -> DlStatus {
    guard(|| {
        let m = unsafe { deref(model, "model") }?;
        let f = unsafe { deref(field, "field") }?;
        let u = free_resolvent(&m.0, z.into(), &f.0)?;
        unsafe { write_out(out, boxed(DlField(u)), "out") }
    })
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a Path, Failure> {
    if path.is_null() {
        return fail(DlStatus::NullPointer, "path is NULL");
    }
    // SAFETY: the caller passes a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(path) }
        .to_str()
        .map_err(|_| Failure(DlStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(Path::new(s))
}

/// Writes a DLAT1 snapshot atomically.
///
/// # Safety
/// `field` must be live; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn dl_field_save(field: *const DlField, path: *const c_char) -> DlStatus {
    guard(|| {
        let f = unsafe { deref(field, "field") }?;
        let p = unsafe { path_arg(path) }?;
        Ok(snapshot::save(&f.0, p)?)
    })
}

/// Reads a DLAT1 snapshot.
///
/// # Safety
/// `path` NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_field_load(path: *const c_char, out: *mut *mut DlField) -> DlStatus {
    guard(|| {
        let p = unsafe { path_arg(path) }?;
        let f = snapshot::load(p)?;
        unsafe { write_out(out, boxed(DlField(f)), "out") }
    })
}

/// Runs acceptance criterion `id` (1 to 10); `passed` receives 1 or 0.
///
/// # Safety
/// `passed` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn dl_run_criterion(id: u32, passed: *mut i32) -> DlStatus {
    guard(|| {
        let id = u8::try_from(id).map_err(|_| Failure(DlStatus::InvalidArgument, format!("bad criterion {id}")))?;
        let report = run_criterion(id)?;
        unsafe { write_out(passed, i32::from(report.pass), "passed") }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn panics_become_status_codes() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, DlStatus::Panic);
        let msg = unsafe { CStr::from_ptr(dl_last_error_message()) }.to_str().unwrap();
        assert_eq!(msg, "panic: boom");
    }

    #[test]
    fn success_clears_the_last_error() {
        let _ = guard(|| fail(DlStatus::Io, "x"));
        assert!(!dl_last_error_message().is_null());
        assert_eq!(guard(|| Ok(())), DlStatus::Ok);
        assert!(dl_last_error_message().is_null());
    }

    #[test]
    fn complex_layout_matches() {
        assert_eq!(std::mem::size_of::<DlComplex>(), std::mem::size_of::<Complex64>());
        assert_eq!(std::mem::align_of::<DlComplex>(), std::mem::align_of::<Complex64>());
    }
}
