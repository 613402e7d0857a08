//! C ABI over the muquant pipeline.
//!
//! Opaque handles, integer status codes, caller-owned buffers. Every
//! function is panic-safe (panics become `MQ_STATUS_INTERNAL_ERROR`) and the
//! last error message is retrievable per thread via [`mq_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use muquant::analysis::{cca, Mat};
use muquant::audio::Waveform;
use muquant::encoder::encode;
use muquant::model::Model;
use muquant::quantizer::{quantize, QuantizeMode};
use muquant::training::{classify, Checkpoint};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MqStatus {
    /// Success.
    Ok = 0,
    /// A pointer was null or an argument violated a precondition.
    InvalidArgument = 1,
    /// File could not be read or written.
    IoError = 2,
    /// Malformed checkpoint container or incompatible audio.
    FormatError = 3,
    /// The checkpoint has no classification head.
    MissingHead = 4,
    /// Unexpected internal failure; see mq_last_error().
    InternalError = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &muquant::Error) -> MqStatus {
    use muquant::Error as E;
    match err {
        E::Io { .. } => MqStatus::IoError,
        E::Wav { .. } | E::Checkpoint(_) | E::Json(_) | E::Audio(_) => MqStatus::FormatError,
        E::InvalidArgument { .. } | E::Shape { .. } | E::Config(_) | E::Dataset(_) => {
            MqStatus::InvalidArgument
        }
        _ => MqStatus::InternalError,
    }
}

fn guard(f: impl FnOnce() -> MqStatus + std::panic::UnwindSafe) -> MqStatus {
    match catch_unwind(f) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            MqStatus::InternalError
        }
    }
}

/// Loaded checkpoint: model weights plus optional classification head.
pub struct MqModel {
    checkpoint: Checkpoint,
    model: Model<f32>,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent error on this thread (empty when none).
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a checkpoint container from `path` into a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mq_model_load(path: *const c_char, out: *mut *mut MqModel) -> MqStatus {
    guard(AssertUnwindSafe(|| {
        if path.is_null() || out.is_null() {
            set_error("null pointer argument");
            return MqStatus::InvalidArgument;
        }
        let path_str = match unsafe { CStr::from_ptr(path) }.to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return MqStatus::InvalidArgument;
            }
        };
        match Checkpoint::load(Path::new(path_str)).and_then(|c| {
            let model = c.to_model()?;
            Ok(MqModel { checkpoint: c, model })
        }) {
            Ok(m) => {
                unsafe { *out = Box::into_raw(Box::new(m)) };
                MqStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Free a handle returned by `mq_model_load` (null is a no-op).
///
/// # Safety
/// `model` must be a pointer returned by `mq_model_load`, freed once.
#[no_mangle]
pub unsafe extern "C" fn mq_model_free(model: *mut MqModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Dimension of extracted feature vectors.
///
/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mq_model_feature_dim(model: *const MqModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.model.config.context.model_dim
}

/// Number of classifier outputs, 0 when the checkpoint has no head.
///
/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mq_model_num_classes(model: *const MqModel) -> usize {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.checkpoint.meta.head.as_ref().map(|h| h.num_classes).unwrap_or(0)
}

/// Expected input sample rate in Hz.
///
/// # Safety
/// `model` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn mq_model_sample_rate(model: *const MqModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    unsafe { &*model }.model.config.encoder.sample_rate
}

/// Mean-pooled context features for a mono waveform in [-1, 1].
/// `out` must hold exactly `mq_model_feature_dim` floats.
///
/// # Safety
/// `samples` must point to `len` floats, `out` to `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn mq_extract_features(
    model: *const MqModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out: *mut f32,
    out_len: usize,
) -> MqStatus {
    guard(AssertUnwindSafe(|| {
        if model.is_null() || samples.is_null() || out.is_null() {
            set_error("null pointer argument");
            return MqStatus::InvalidArgument;
        }
        let handle = unsafe { &*model };
        let dim = handle.model.config.context.model_dim;
        if out_len != dim {
            set_error(&format!("output buffer holds {} floats, feature dim is {}", out_len, dim));
            return MqStatus::InvalidArgument;
        }
        let wave = Waveform::new(unsafe { std::slice::from_raw_parts(samples, len) }.to_vec(), sample_rate);
        match handle.model.extract_features(&wave) {
            Ok(f) => {
                unsafe { std::slice::from_raw_parts_mut(out, out_len) }.copy_from_slice(&f);
                MqStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Classify a waveform with a finetuned checkpoint. `out_probs` may be null;
/// when given it must hold `mq_model_num_classes` floats.
///
/// # Safety
/// Pointer arguments must be valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mq_classify(
    model: *const MqModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out_class: *mut u32,
    out_probs: *mut f32,
    probs_len: usize,
) -> MqStatus {
    guard(AssertUnwindSafe(|| {
        if model.is_null() || samples.is_null() || out_class.is_null() {
            set_error("null pointer argument");
            return MqStatus::InvalidArgument;
        }
        let handle = unsafe { &*model };
        let Some(head) = handle.checkpoint.meta.head.as_ref() else {
            set_error("checkpoint has no classification head; finetune first");
            return MqStatus::MissingHead;
        };
        if !out_probs.is_null() && probs_len != head.num_classes {
            set_error(&format!(
                "probability buffer holds {} floats, head has {} classes",
                probs_len, head.num_classes
            ));
            return MqStatus::InvalidArgument;
        }
        let wave = Waveform::new(unsafe { std::slice::from_raw_parts(samples, len) }.to_vec(), sample_rate);
        match classify(&handle.checkpoint, &wave) {
            Ok(c) => {
                unsafe { *out_class = c.class as u32 };
                if !out_probs.is_null() {
                    unsafe { std::slice::from_raw_parts_mut(out_probs, probs_len) }
                        .copy_from_slice(&c.probabilities);
                }
                MqStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Discrete joint code ids (one per frame) for a waveform, from the
/// quantizer in deterministic eval mode. Writes up to `cap` codes and stores
/// the frame count in `out_count`; fails if `cap` is too small.
///
/// # Safety
/// Pointer arguments must be valid for their stated lengths.
#[no_mangle]
pub unsafe extern "C" fn mq_quantize_codes(
    model: *const MqModel,
    samples: *const f32,
    len: usize,
    sample_rate: u32,
    out_codes: *mut u32,
    cap: usize,
    out_count: *mut usize,
) -> MqStatus {
    guard(AssertUnwindSafe(|| {
        if model.is_null() || samples.is_null() || out_codes.is_null() || out_count.is_null() {
            set_error("null pointer argument");
            return MqStatus::InvalidArgument;
        }
        let handle = unsafe { &*model };
        let wave = Waveform::new(unsafe { std::slice::from_raw_parts(samples, len) }.to_vec(), sample_rate);
        let result = encode(&handle.model.params, &handle.model.config.encoder, &wave).and_then(|latents| {
            quantize(
                &handle.model.params,
                &handle.model.config.quantizer,
                &latents,
                QuantizeMode::Eval,
                1.0,
                0,
            )
        });
        match result {
            Ok(q) => {
                let codes = q.joint_codes();
                if codes.len() > cap {
                    set_error(&format!("code buffer holds {}, need {}", cap, codes.len()));
                    return MqStatus::InvalidArgument;
                }
                let dst = unsafe { std::slice::from_raw_parts_mut(out_codes, codes.len()) };
                for (d, c) in dst.iter_mut().zip(&codes) {
                    *d = *c as u32;
                }
                unsafe { *out_count = codes.len() };
                MqStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}

/// Canonical correlation analysis of two row-major matrices W [n x k] and
/// Y [n x j]: writes min(k, j) coefficients (descending) plus their mean
/// and the projection-weighted mean.
///
/// # Safety
/// `w` must hold n*k doubles, `y` n*j, `out_coefficients` min(k, j).
#[no_mangle]
pub unsafe extern "C" fn mq_cca(
    w: *const f64,
    n: usize,
    k: usize,
    y: *const f64,
    j: usize,
    out_coefficients: *mut f64,
    out_mean: *mut f64,
    out_pwcca: *mut f64,
) -> MqStatus {
    guard(AssertUnwindSafe(|| {
        if w.is_null() || y.is_null() || out_coefficients.is_null() || out_mean.is_null() || out_pwcca.is_null()
        {
            set_error("null pointer argument");
            return MqStatus::InvalidArgument;
        }
        let wm = match Mat::from_rows(n, k, unsafe { std::slice::from_raw_parts(w, n * k) }.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return MqStatus::InvalidArgument;
            }
        };
        let ym = match Mat::from_rows(n, j, unsafe { std::slice::from_raw_parts(y, n * j) }.to_vec()) {
            Ok(m) => m,
            Err(e) => {
                set_error(&e.to_string());
                return MqStatus::InvalidArgument;
            }
        };
        match cca(&wm, &ym) {
            Ok(r) => {
                let out = unsafe { std::slice::from_raw_parts_mut(out_coefficients, r.coefficients.len()) };
                out.copy_from_slice(&r.coefficients);
                unsafe {
                    *out_mean = r.mean_cca;
                    *out_pwcca = r.pwcca;
                }
                MqStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    }))
}
