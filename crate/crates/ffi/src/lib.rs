//! C ABI over gazekit prediction: load feature stacks and model bundles,
//! predict densities, copy or quantize them.
//!
//! Every function returns a [`GkStatus`]; on failure a message is available
//! from [`gk_last_error`] on the same thread. Handles are opaque and must be
//! released with the matching `*_free` function. Panics never cross the
//! boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gazekit::data::{load_feature_stack, FeatureStack};
use gazekit::density::{quantize_equal_mass_256, DensityMap};
use gazekit::trainer::{predict, ModelBundle, PredictMode};
use gazekit::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GkPredictMode {
    /// Average of all fold models.
    Mixture = 0,
    /// The fold model that held this image out.
    LeaveOut = 1,
    /// One fold model, chosen by index.
    Single = 2,
    Pretrained = 3,
}

/// A loaded feature stack.
pub struct GkFeatureStack(FeatureStack);

/// A loaded model bundle.
pub struct GkBundle(ModelBundle);

/// A predicted fixation density.
pub struct GkDensity(DensityMap);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> GkStatus {
    match e {
        Error::Io { .. } => GkStatus::Io,
        Error::Format(_) | Error::Truncated { .. } | Error::NonFinite { .. } | Error::Csv(_) => {
            GkStatus::Format
        }
        Error::Numerical(_) | Error::ZeroDensity { .. } => GkStatus::Numerical,
        _ => GkStatus::InvalidArgument,
    }
}

/// Runs `f`, recording errors and converting panics.
fn guard(f: impl FnOnce() -> Result<(), (GkStatus, String)>) -> GkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GkStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GkStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (GkStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (GkStatus, String) {
    (GkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, (GkStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (GkStatus::InvalidArgument, "path is not UTF-8".to_owned()))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (GkStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread. The pointer stays valid
/// until the next gazekit call on the same thread.
#[no_mangle]
pub extern "C" fn gk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads an FMAP file. The image id is the file stem.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gk_feature_stack_load(
    path: *const c_char,
    out: *mut *mut GkFeatureStack,
) -> GkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let stack = load_feature_stack(&path_arg(path)?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(GkFeatureStack(stack)));
        Ok(())
    })
}

/// # Safety
/// `stack` must come from [`gk_feature_stack_load`]; the out pointers must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gk_feature_stack_dims(
    stack: *const GkFeatureStack,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
) -> GkStatus {
    guard(|| {
        let s = &handle(stack, "stack")?.0;
        if channels.is_null() || height.is_null() || width.is_null() {
            return Err(null("dimension output"));
        }
        *channels = s.channels();
        *height = s.height();
        *width = s.width();
        Ok(())
    })
}

/// # Safety
/// `stack` must be null or come from [`gk_feature_stack_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn gk_feature_stack_free(stack: *mut GkFeatureStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Loads a model bundle directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gk_bundle_load(dir: *const c_char, out: *mut *mut GkBundle) -> GkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let bundle = ModelBundle::load(&path_arg(dir)?).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(GkBundle(bundle)));
        Ok(())
    })
}

/// # Safety
/// `bundle` must come from [`gk_bundle_load`]; `folds` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gk_bundle_num_folds(bundle: *const GkBundle, folds: *mut usize) -> GkStatus {
    guard(|| {
        let b = &handle(bundle, "bundle")?.0;
        if folds.is_null() {
            return Err(null("folds"));
        }
        *folds = b.folds.len();
        Ok(())
    })
}

/// # Safety
/// `bundle` must be null or come from [`gk_bundle_load`], freed once.
#[no_mangle]
pub unsafe extern "C" fn gk_bundle_free(bundle: *mut GkBundle) {
    if !bundle.is_null() {
        drop(Box::from_raw(bundle));
    }
}

/// Predicts the fixation density for one feature stack. `fold` is only read
/// in `GK_PREDICT_MODE_SINGLE` mode.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gk_predict(
    bundle: *const GkBundle,
    stack: *const GkFeatureStack,
    mode: GkPredictMode,
    fold: usize,
    with_center_bias: bool,
    out: *mut *mut GkDensity,
) -> GkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let b = &handle(bundle, "bundle")?.0;
        let s = &handle(stack, "stack")?.0;
        let mode = match mode {
            GkPredictMode::Mixture => PredictMode::Mixture,
            GkPredictMode::LeaveOut => PredictMode::LeaveOut,
            GkPredictMode::Single => PredictMode::Single(fold),
            GkPredictMode::Pretrained => PredictMode::Pretrained,
        };
        let stack = match &b.feature_subset {
            Some(subset) => s.select_channels(subset).map_err(lib_err)?,
            None => s.clone(),
        };
        let d = predict(b, &stack, mode, with_center_bias).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(GkDensity(d)));
        Ok(())
    })
}

/// # Safety
/// `density` must be live; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn gk_density_dims(
    density: *const GkDensity,
    height: *mut usize,
    width: *mut usize,
) -> GkStatus {
    guard(|| {
        let d = &handle(density, "density")?.0;
        if height.is_null() || width.is_null() {
            return Err(null("dimension output"));
        }
        *height = d.shape().height;
        *width = d.shape().width;
        Ok(())
    })
}

unsafe fn out_buffer<'a, T>(buf: *mut T, len: usize, need: usize) -> Result<&'a mut [T], (GkStatus, String)> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len != need {
        return Err((
            GkStatus::InvalidArgument,
            format!("buffer holds {len} values, density has {need}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(buf, len))
}

/// Copies the density, row-major, into `buf` of exactly `height * width`
/// doubles.
///
/// # Safety
/// `density` must be live; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn gk_density_copy(density: *const GkDensity, buf: *mut f64, len: usize) -> GkStatus {
    guard(|| {
        let d = &handle(density, "density")?.0;
        let src = d.grid().as_slice();
        out_buffer(buf, len, src.len())?.copy_from_slice(src);
        Ok(())
    })
}

/// Writes the 256-level equal-mass quantization of the log density,
/// row-major, into `buf` of exactly `height * width` bytes.
///
/// # Safety
/// `density` must be live; `buf` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn gk_density_quantize(density: *const GkDensity, buf: *mut u8, len: usize) -> GkStatus {
    guard(|| {
        let d = &handle(density, "density")?.0;
        let levels = quantize_equal_mass_256(&d.log_density()).map_err(lib_err)?;
        out_buffer(buf, len, levels.levels.len())?.copy_from_slice(&levels.levels);
        Ok(())
    })
}

/// # Safety
/// `density` must be null or come from [`gk_predict`], freed once.
#[no_mangle]
pub unsafe extern "C" fn gk_density_free(density: *mut GkDensity) {
    if !density.is_null() {
        drop(Box::from_raw(density));
    }
}
