//! C ABI over the `taylornet` library.
//!
//! Handles are opaque (`TnModel *`), created by `tn_model_load` and released
//! with `tn_model_free`. Every fallible call returns a `TnStatus`; on failure
//! `tn_last_error_message` describes the most recent error on the calling
//! thread. Buffers are caller-allocated and sized in elements; pixel tensors
//! are row-major `[batch, frames, channels, height, width]` `float`s in
//! `[0, 1]`. Panics never cross the boundary; they surface as
//! `TN_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use taylornet::checkpoint::Checkpoint;
use taylornet::data::{BouncingDataset, DataConfig, Split};
use taylornet::eval::metrics::{frame_metrics, FrameShape};
use taylornet::model::TaylorNet;
use taylornet::params::ParamStore;
use taylornet::{Error, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TnStatus {
    Ok = 0,
    /// Bad argument, shape or configuration.
    InvalidArgument = 1,
    /// Non-finite values or a numerical tolerance breach.
    Numerical = 2,
    /// File could not be read or written.
    Io = 3,
    /// File contents are malformed.
    Format = 4,
    /// A required pointer was null.
    NullPointer = 5,
    /// Internal panic, caught at the boundary.
    Panic = 6,
}

/// Per-frame metrics; see the library documentation for conventions.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TnFrameMetrics {
    /// Sum of squared pixel errors.
    pub mse: f64,
    /// Sum of absolute pixel errors.
    pub mae: f64,
    pub ssim: f64,
    pub psnr: f64,
    /// Summed binary cross-entropy.
    pub bce: f64,
    /// Mean squared error per pixel.
    pub mse_pixel: f64,
}

/// A loaded checkpoint ready for prediction.
pub struct TnModel {
    net: TaylorNet,
    params: ParamStore<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> TnStatus {
    match e {
        Error::Shape(_) | Error::InvalidArgument(_) | Error::SequenceNotReset(_) => TnStatus::InvalidArgument,
        Error::NonFinite(_) | Error::Diverged { .. } | Error::Tolerance(_) => TnStatus::Numerical,
        Error::Io { .. } => TnStatus::Io,
        Error::Format { .. } => TnStatus::Format,
    }
}

/// Internal failure: a status plus a message for `tn_last_error_message`.
struct Fail(TnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(TnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TnStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {}", msg));
            TnStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(TnStatus::NullPointer, format!("{} is null", what)))
    } else {
        Ok(())
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread ("" after a success).
/// The pointer stays valid until the next `tn_*` call on the same thread.
#[no_mangle]
pub extern "C" fn tn_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tn_model_load(path: *const c_char, out: *mut *mut TnModel) -> TnStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let ck = Checkpoint::load(&PathBuf::from(path))?;
        let net = TaylorNet::new(ck.model.clone())?;
        let model = Box::new(TnModel { net, params: ck.params });
        unsafe { *out = Box::into_raw(model) };
        Ok(())
    })
}

/// Release a handle from `tn_model_load`. Null is ignored.
///
/// # Safety
/// `model` must come from `tn_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tn_model_free(model: *mut TnModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Frame geometry and number of conditioning frames the model was trained with.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tn_model_shape(
    model: *const TnModel,
    channels: *mut usize,
    height: *mut usize,
    width: *mut usize,
    input_len: *mut usize,
) -> TnStatus {
    guard(|| {
        non_null(model, "model")?;
        for (p, n) in [(channels, "channels"), (height, "height"), (width, "width"), (input_len, "input_len")] {
            non_null(p, n)?;
        }
        let c = unsafe { &*model }.net.config();
        unsafe {
            *channels = c.frame_channels;
            *height = c.frame_height;
            *width = c.frame_width;
            *input_len = c.input_len;
        }
        Ok(())
    })
}

/// Free-running prediction of `n_future` frames after `input_frames`
/// conditioning frames per sequence. `out` must hold
/// `batch · n_future · C · H · W` floats.
///
/// # Safety
/// `inputs` must point to `batch · input_frames · C · H · W` floats and
/// `out` to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn tn_model_predict(
    model: *const TnModel,
    inputs: *const f32,
    batch: usize,
    input_frames: usize,
    n_future: usize,
    out: *mut f32,
    out_len: usize,
) -> TnStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(inputs, "inputs")?;
        non_null(out, "out")?;
        let m = unsafe { &*model };
        let c = m.net.config();
        let frame = c.frame_channels * c.frame_height * c.frame_width;
        if batch == 0 || input_frames == 0 {
            return Err(invalid("batch and input_frames must be positive"));
        }
        let need = batch * n_future * frame;
        if out_len != need {
            return Err(invalid(format!("out holds {} floats, prediction needs {}", out_len, need)));
        }
        let data = unsafe { std::slice::from_raw_parts(inputs, batch * input_frames * frame) }.to_vec();
        let shape = vec![batch, input_frames, c.frame_channels, c.frame_height, c.frame_width];
        let pred = m.net.predict(&m.params, &Tensor::new(shape, data)?, n_future)?;
        if !pred.all_finite() {
            return Err(Error::NonFinite("prediction".into()).into());
        }
        unsafe { std::slice::from_raw_parts_mut(out, need) }.copy_from_slice(pred.data());
        Ok(())
    })
}

/// Metrics of one `channels × height × width` frame pair.
///
/// # Safety
/// `pred` and `target` must each point to `channels · height · width` floats.
#[no_mangle]
pub unsafe extern "C" fn tn_frame_metrics(
    pred: *const f32,
    target: *const f32,
    channels: usize,
    height: usize,
    width: usize,
    out: *mut TnFrameMetrics,
) -> TnStatus {
    guard(|| {
        non_null(pred, "pred")?;
        non_null(target, "target")?;
        non_null(out, "out")?;
        let shape = FrameShape::new(channels, height, width);
        let n = shape.len();
        let (p, t) = unsafe { (std::slice::from_raw_parts(pred, n), std::slice::from_raw_parts(target, n)) };
        let m = frame_metrics(p, t, shape)?;
        unsafe {
            *out = TnFrameMetrics {
                mse: m.mse,
                mae: m.mae,
                ssim: m.ssim,
                psnr: m.psnr,
                bce: m.bce,
                mse_pixel: m.mse_pixel,
            }
        };
        Ok(())
    })
}

/// Bouncing-digit sequences `start .. start + count` of a split
/// (0 train, 1 test) for a base seed, on a `canvas × canvas` frame
/// (32 uses 14-pixel glyphs, 64 uses 28-pixel glyphs). `out` must hold
/// `count · length · canvas²` floats.
///
/// # Safety
/// `out` must point to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn tn_generate_bouncing(
    canvas: usize,
    split: u32,
    base_seed: u64,
    start: u64,
    count: usize,
    length: usize,
    out: *mut f32,
    out_len: usize,
) -> TnStatus {
    guard(|| {
        non_null(out, "out")?;
        let data = match canvas {
            32 => DataConfig::tiny(),
            64 => DataConfig::full(),
            other => return Err(invalid(format!("canvas must be 32 or 64, got {}", other))),
        };
        let split = match split {
            0 => Split::Train,
            1 => Split::Test,
            other => return Err(invalid(format!("split must be 0 or 1, got {}", other))),
        };
        let need = count * length * canvas * canvas;
        if out_len != need {
            return Err(invalid(format!("out holds {} floats, {} needed", out_len, need)));
        }
        let batch = BouncingDataset::new(&data, length, base_seed, split)?.batch(start, count)?;
        unsafe { std::slice::from_raw_parts_mut(out, need) }.copy_from_slice(batch.frames.data());
        Ok(())
    })
}
