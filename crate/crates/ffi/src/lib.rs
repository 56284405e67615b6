//! C interface to the `ddet` library.
//!
//! Images cross the boundary as contiguous `float` buffers in `n × c × h × w`
//! order with values in `[0, 1]`. Every fallible function returns a
//! [`DdetStatus`]; on failure [`ddet_last_error_message`] describes the error
//! for the calling thread. Models are opaque [`DdetModel`] handles created by
//! `ddet_model_new*` and released with [`ddet_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ddet::dynfilter::{dynamic_filter, reshape_channels_to_kernels};
use ddet::metrics::{psnr, ssim, PsnrMode};
use ddet::model::{checkpoint_load_for, checkpoint_save, param_count, Model, ModelConfig};
use ddet::optim::AdamState;
use ddet::{Error, Tensor};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DdetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Format = 5,
    NonFinite = 6,
    Config = 7,
    Panic = 8,
}

/// Colour space for [`ddet_psnr`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DdetPsnrMode {
    Rgb = 0,
    Y = 1,
}

/// Opaque model handle.
pub struct DdetModel {
    inner: Model<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> DdetStatus {
    match e {
        Error::Dimension { .. } | Error::ParamShape { .. } => DdetStatus::Dimension,
        Error::Precondition { .. } => DdetStatus::InvalidArgument,
        Error::NonFinite(_) => DdetStatus::NonFinite,
        Error::Format(_) | Error::UnknownParam(_) | Error::MissingParam(_) => DdetStatus::Format,
        Error::Config { .. } => DdetStatus::Config,
        Error::Data { .. } | Error::Io(_) => DdetStatus::Io,
    }
}

struct Fail(DdetStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> DdetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DdetStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            DdetStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(DdetStatus::NullPointer, format!("`{what}` is null"))
}

fn numel(dims: &[usize]) -> Result<usize, Fail> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail(DdetStatus::InvalidArgument, format!("invalid dimensions {dims:?}")))
}

/// # Safety
/// `ptr` must be null or point to `n·c·h·w` readable floats.
unsafe fn read_tensor(ptr: *const f32, what: &str, shape: [usize; 4]) -> Result<Tensor<f32>, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let len = numel(&shape)?;
    let data = std::slice::from_raw_parts(ptr, len).to_vec();
    Ok(Tensor::from_vec(shape, data)?)
}

/// # Safety
/// `ptr` must be null or point to `t.len()` writable floats.
unsafe fn write_tensor(t: &Tensor<f32>, ptr: *mut f32, what: &str) -> Result<(), Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    ptr::copy_nonoverlapping(t.data().as_ptr(), ptr, t.len());
    Ok(())
}

/// # Safety
/// `s` must be null or a NUL-terminated string.
unsafe fn read_path(s: *const c_char) -> Result<PathBuf, Fail> {
    if s.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| Fail(DdetStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// Message for the last failed call on this thread; empty if none. Valid
/// until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn ddet_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates the default model (kernels 3/5/7, 16 residual blocks, 64
/// channels, detail branch and refinement) with weights drawn from `seed`.
///
/// # Safety
/// `out` must be a valid pointer to a `DdetModel*`.
#[no_mangle]
pub unsafe extern "C" fn ddet_model_new_default(seed: u64, out: *mut *mut DdetModel) -> DdetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Model::init(ModelConfig::full(), seed)?;
        *out = Box::into_raw(Box::new(DdetModel { inner }));
        Ok(())
    })
}

/// Creates a model with a custom configuration.
///
/// # Safety
/// `kernel_sizes` must point to `num_kernel_sizes` values and `out` must be
/// a valid pointer to a `DdetModel*`.
#[no_mangle]
pub unsafe extern "C" fn ddet_model_new(
    kernel_sizes: *const u32,
    num_kernel_sizes: usize,
    num_res_blocks: u32,
    base_channels: u32,
    use_cdm: bool,
    use_pr: bool,
    seed: u64,
    out: *mut *mut DdetModel,
) -> DdetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if kernel_sizes.is_null() && num_kernel_sizes > 0 {
            return Err(null("kernel_sizes"));
        }
        let sizes = if num_kernel_sizes == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(kernel_sizes, num_kernel_sizes)
                .iter()
                .map(|&k| k as usize)
                .collect()
        };
        let cfg = ModelConfig {
            kernel_sizes: sizes,
            num_res_blocks: num_res_blocks as usize,
            base_channels: base_channels as usize,
            use_cdm,
            use_pr,
            ..ModelConfig::full()
        };
        let inner = Model::init(cfg, seed)?;
        *out = Box::into_raw(Box::new(DdetModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from `ddet_model_new*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ddet_model_free(model: *mut DdetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Replaces the weights of `model` with those in a checkpoint. The
/// checkpoint must match the model's configuration exactly.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ddet_model_load(model: *mut DdetModel, path: *const c_char) -> DdetStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        let path = read_path(path)?;
        let (params, _) = checkpoint_load_for::<f32>(&path, &m.inner.config)?;
        m.inner.params = params;
        Ok(())
    })
}

/// Writes the model weights (with an empty optimizer state) to `path`.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ddet_model_save(model: *const DdetModel, path: *const c_char) -> DdetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let path = read_path(path)?;
        checkpoint_save(&m.inner.params, &AdamState::new(), &path)?;
        Ok(())
    })
}

/// Number of scalar parameters.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ddet_model_param_count(model: *const DdetModel, out: *mut u64) -> DdetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = param_count(&m.inner.params).elements as u64;
        Ok(())
    })
}

/// Runs the network on an `n × 3 × h × w` batch; `output` has the same size.
///
/// # Safety
/// `input` and `output` must each hold `n·3·h·w` floats.
#[no_mangle]
pub unsafe extern "C" fn ddet_model_forward(
    model: *const DdetModel,
    input: *const f32,
    n: usize,
    h: usize,
    w: usize,
    output: *mut f32,
) -> DdetStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let c = m.inner.config.input_channels;
        let x = read_tensor(input, "input", [n, c, h, w])?;
        let y = m.inner.forward(&x)?;
        write_tensor(&y, output, "output")
    })
}

/// Applies per-pixel `k × k` kernels (`n × k² × h × w`, row-major taps) to
/// every channel of an `n × c × h × w` image with zero padding.
///
/// # Safety
/// `image` and `output` must hold `n·c·h·w` floats and `kernels` `n·k²·h·w`.
#[no_mangle]
pub unsafe extern "C" fn ddet_dynamic_filter(
    image: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernels: *const f32,
    k: usize,
    output: *mut f32,
) -> DdetStatus {
    guard(|| {
        let img = read_tensor(image, "image", [n, c, h, w])?;
        let kk = k.checked_mul(k).filter(|_| k % 2 == 1).ok_or_else(|| {
            Fail(DdetStatus::InvalidArgument, format!("kernel size {k} must be odd"))
        })?;
        let field = read_tensor(kernels, "kernels", [n, kk, h, w])?;
        let field = reshape_channels_to_kernels(field, k)?;
        let out = dynamic_filter(&img, &field)?;
        write_tensor(&out, output, "output")
    })
}

/// PSNR in dB with peak 1; `+inf` for identical inputs.
///
/// # Safety
/// `a` and `b` must hold `n·c·h·w` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddet_psnr(
    a: *const f32,
    b: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    mode: DdetPsnrMode,
    out: *mut f64,
) -> DdetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let a = read_tensor(a, "a", [n, c, h, w])?;
        let b = read_tensor(b, "b", [n, c, h, w])?;
        let mode = match mode {
            DdetPsnrMode::Rgb => PsnrMode::Rgb,
            DdetPsnrMode::Y => PsnrMode::Y,
        };
        *out = psnr(&a, &b, mode)?.value();
        Ok(())
    })
}

/// Mean SSIM on luma (Gaussian 11×11 window, σ 1.5).
///
/// # Safety
/// `a` and `b` must hold `n·c·h·w` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ddet_ssim(
    a: *const f32,
    b: *const f32,
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    out: *mut f64,
) -> DdetStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let a = read_tensor(a, "a", [n, c, h, w])?;
        let b = read_tensor(b, "b", [n, c, h, w])?;
        *out = ssim(&a, &b)?;
        Ok(())
    })
}
