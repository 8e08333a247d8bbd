//! C ABI for `wavecoder`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! call returns a [`WcStatus`]; on failure the message is available through
//! [`wc_last_error_message`] on the same thread. Complex arrays are
//! interleaved `(re, im)` doubles in row-major order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use num_complex::Complex64;
use wavecoder::config::ExperimentConfig;
use wavecoder::export::read_params;
use wavecoder::model::Model;
use wavecoder::propagation::{propagate_as, propagate_direct, Method, Segment};
use wavecoder::{ComplexField, Error, Grid};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    SizeLimit = 4,
    Format = 5,
    Io = 6,
    Config = 7,
    NonFinite = 8,
    Panic = 9,
    Other = 10,
}

/// Sampling grid.
pub struct WcGrid {
    inner: Grid,
}

/// Complex field on a grid.
pub struct WcField {
    inner: ComplexField,
}

/// Optical stack built from an experiment configuration.
pub struct WcModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WcStatus {
    match e {
        Error::InvalidArgument(_) | Error::IndexOutOfRange { .. } | Error::OffGridFrequency { .. } => WcStatus::InvalidArgument,
        Error::ShapeMismatch { .. } => WcStatus::ShapeMismatch,
        Error::SizeLimit { .. } => WcStatus::SizeLimit,
        Error::Format { .. } => WcStatus::Format,
        Error::Io(_) | Error::Path { .. } => WcStatus::Io,
        Error::Config(_) => WcStatus::Config,
        Error::NonFiniteLoss { .. } => WcStatus::NonFinite,
        _ => WcStatus::Other,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (WcStatus, String)>) -> WcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            WcStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            WcStatus::Panic
        }
    }
}

fn lib<T>(r: wavecoder::Result<T>) -> Result<T, (WcStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (WcStatus, String) {
    (WcStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (WcStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, (WcStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| (WcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (WcStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (WcStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), (WcStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn check_len(expected: usize, found: usize) -> Result<(), (WcStatus, String)> {
    if expected == found {
        Ok(())
    } else {
        Err((WcStatus::ShapeMismatch, format!("expected length {expected}, found {found}")))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length, 0 if none.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn wc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let k = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, k);
                *buf.add(k) = 0;
            }
            bytes.len()
        }
    })
}

/// # Safety
/// `out` must be a valid pointer to receive the handle.
#[no_mangle]
pub unsafe extern "C" fn wc_grid_new(n: usize, dx: f64, wavelength: f64, out: *mut *mut WcGrid) -> WcStatus {
    guard(|| {
        let g = lib(Grid::new(n, dx, wavelength))?;
        store(out, WcGrid { inner: g })
    })
}

/// # Safety
/// `grid` must come from [`wc_grid_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wc_grid_free(grid: *mut WcGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_grid_size(grid: *const WcGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.n())
}

/// Field from `2·n²` interleaved doubles.
///
/// # Safety
/// `values` must hold `len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_field_new(grid: *const WcGrid, values: *const f64, len: usize, out: *mut *mut WcField) -> WcStatus {
    guard(|| {
        let g = deref(grid, "grid")?.inner;
        check_len(2 * g.len(), len)?;
        let v = slice_arg(values, len, "values")?;
        let data = v.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        store(out, WcField { inner: lib(ComplexField::new(g, data))? })
    })
}

/// Reads a field in the binary `WFLD` format.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_field_read(path: *const c_char, out: *mut *mut WcField) -> WcStatus {
    guard(|| {
        let p = path_arg(path, "path")?;
        let bytes = std::fs::read(&p).map_err(|e| (WcStatus::Io, format!("{}: {e}", p.display())))?;
        store(out, WcField { inner: lib(ComplexField::from_binary(&bytes))? })
    })
}

/// # Safety
/// `field` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn wc_field_write(field: *const WcField, path: *const c_char) -> WcStatus {
    guard(|| {
        let f = deref(field, "field")?;
        let p = path_arg(path, "path")?;
        let file = std::fs::File::create(&p).map_err(|e| (WcStatus::Io, format!("{}: {e}", p.display())))?;
        lib(f.inner.write_binary(std::io::BufWriter::new(file)))
    })
}

/// # Safety
/// `field` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wc_field_free(field: *mut WcField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// # Safety
/// `field` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_field_size(field: *const WcField) -> usize {
    field.as_ref().map_or(0, |f| f.inner.n())
}

/// `Σ|U|²·dx²`; NaN for a null handle.
///
/// # Safety
/// `field` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_field_energy(field: *const WcField) -> f64 {
    field.as_ref().map_or(f64::NAN, |f| f.inner.energy())
}

/// Copies `2·n²` interleaved doubles into `out`.
///
/// # Safety
/// `out` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wc_field_values(field: *const WcField, out: *mut f64, len: usize) -> WcStatus {
    guard(|| {
        let f = deref(field, "field")?;
        check_len(2 * f.inner.values().len(), len)?;
        let dst = slice_out(out, len, "out")?;
        for (d, z) in dst.chunks_exact_mut(2).zip(f.inner.values()) {
            d[0] = z.re;
            d[1] = z.im;
        }
        Ok(())
    })
}

/// Copies the `n²` intensities `|U|²` into `out`.
///
/// # Safety
/// `out` must be valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wc_field_intensity(field: *const WcField, out: *mut f64, len: usize) -> WcStatus {
    guard(|| {
        let f = deref(field, "field")?;
        let i = f.inner.intensity();
        check_len(i.len(), len)?;
        slice_out(out, len, "out")?.copy_from_slice(&i);
        Ok(())
    })
}

/// Angular-spectrum propagation over `distance` with zero-padding factor
/// `pad_factor`.
///
/// # Safety
/// `field` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_propagate_as(field: *const WcField, distance: f64, pad_factor: usize, out: *mut *mut WcField) -> WcStatus {
    guard(|| {
        let f = deref(field, "field")?;
        let seg = lib(Segment::new(distance, Method::AngularSpectrum, pad_factor))?;
        store(out, WcField { inner: lib(propagate_as(&f.inner, &seg))? })
    })
}

/// Direct Rayleigh-Sommerfeld summation; grids above 64 are rejected.
///
/// # Safety
/// `field` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_propagate_direct(field: *const WcField, distance: f64, out: *mut *mut WcField) -> WcStatus {
    guard(|| {
        let f = deref(field, "field")?;
        let seg = lib(Segment::direct(distance))?;
        store(out, WcField { inner: lib(propagate_direct(&f.inner, &seg))? })
    })
}

/// Builds the initial model described by a configuration file.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_model_from_config(config_path: *const c_char, out: *mut *mut WcModel) -> WcStatus {
    guard(|| {
        let p = path_arg(config_path, "config path")?;
        let cfg = lib(ExperimentConfig::load(&p))?;
        store(out, WcModel { inner: lib(cfg.build_model())? })
    })
}

/// Replaces parameters with those stored in a `params.bin` file.
///
/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn wc_model_load_params(model: *mut WcModel, path: *const c_char) -> WcStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let p = path_arg(path, "path")?;
        let params = lib(read_params(&p))?;
        lib(m.inner.set_params(&params))
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wc_model_free(model: *mut WcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Grid size `n` of the model.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_model_grid_size(model: *const WcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.grid().n())
}

/// Number of values written by [`wc_model_forward`].
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn wc_model_output_len(model: *const WcModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.output_len())
}

/// Encodes an `n²` image, runs the stack and writes the readout.
///
/// # Safety
/// `image` must hold `image_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn wc_model_forward(
    model: *const WcModel,
    image: *const f64,
    image_len: usize,
    out: *mut f64,
    out_len: usize,
) -> WcStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let img = slice_arg(image, image_len, "image")?;
        let y = lib(m.inner.forward(img))?;
        check_len(y.len(), out_len)?;
        slice_out(out, out_len, "out")?.copy_from_slice(&y);
        Ok(())
    })
}

/// Detector-plane field for an input field on the model's grid.
///
/// # Safety
/// Handles must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn wc_model_simulate(model: *const WcModel, field: *const WcField, out: *mut *mut WcField) -> WcStatus {
    guard(|| {
        let m = deref(model, "model")?;
        let f = deref(field, "field")?;
        if f.inner.grid() != m.inner.grid() {
            return Err((WcStatus::ShapeMismatch, "field grid differs from the model grid".into()));
        }
        let v = lib(m.inner.propagate_field(f.inner.values()))?;
        store(out, WcField { inner: lib(ComplexField::new(*m.inner.grid(), v))? })
    })
}

/// Runs the `train` command; `seed < 0` keeps the configured seed.
///
/// # Safety
/// Both paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn wc_train(config_path: *const c_char, out_dir: *const c_char, seed: i64) -> WcStatus {
    guard(|| {
        let cfg = path_arg(config_path, "config path")?;
        let dir = path_arg(out_dir, "output directory")?;
        let seed = (seed >= 0).then_some(seed as u64);
        lib(wavecoder::cli::cmd_train(&cfg, Some(Path::new(&dir)), seed, &mut std::io::sink())).map(|_| ())
    })
}
