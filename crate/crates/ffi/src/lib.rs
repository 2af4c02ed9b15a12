//! C ABI over the mhdetr crate.
//!
//! Models are opaque `MhModel` handles created by `mh_model_load` and
//! released by `mh_model_free`. Fallible calls return an `MhStatus`; the
//! message of the last failure on the calling thread is available through
//! `mh_last_error_message`. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mhdetr::checkpoint::Checkpoint;
use mhdetr::encoder::{FeatureSequence, Modality};
use mhdetr::matching::hungarian;
use mhdetr::span::{span_giou, span_iou};
use mhdetr::{Error, MhDetr, MomentSpan, Tensor};

/// Status codes; 2–4 equal the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MhStatus {
    Ok = 0,
    /// Null pointer or a path that is not UTF-8.
    InvalidArgument = 1,
    ConfigError = 2,
    DataError = 3,
    NumericError = 4,
    /// A Rust panic was caught at the boundary.
    InternalError = 5,
}

pub struct MhModel {
    model: MhDetr,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MhStatus {
    match e.exit_code() {
        2 => MhStatus::ConfigError,
        3 => MhStatus::DataError,
        _ => MhStatus::NumericError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (MhStatus, String)>) -> MhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MhStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("internal panic".into());
            MhStatus::InternalError
        }
    }
}

fn invalid(msg: &str) -> (MhStatus, String) {
    (MhStatus::InvalidArgument, msg.to_string())
}

fn lib(e: Error) -> (MhStatus, String) {
    (status_of(&e), e.to_string())
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn mh_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        bytes.len() + 1
    })
}

/// Loads a checkpoint file into a new model handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mh_model_load(path: *const c_char, out: *mut *mut MhModel) -> MhStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(invalid("null argument"));
        }
        let p = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let ck = Checkpoint::load(Path::new(p)).map_err(lib)?;
        let model = ck.to_model().map_err(lib)?;
        *out = Box::into_raw(Box::new(MhModel { model }));
        Ok(())
    })
}

/// Releases a handle from `mh_model_load`; null is ignored.
///
/// # Safety
/// `model` must come from `mh_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mh_model_free(model: *mut MhModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trainable scalar count, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mh_model_num_params(model: *const MhModel) -> u64 {
    model.as_ref().map_or(0, |m| m.model.num_params() as u64)
}

/// Moment queries per prediction, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mh_model_num_queries(model: *const MhModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.num_queries)
}

/// Expected video and text feature widths.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mh_model_feature_dims(model: *const MhModel, video_dim: *mut usize, text_dim: *mut usize) -> MhStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("null model"))?;
        if video_dim.is_null() || text_dim.is_null() {
            return Err(invalid("null argument"));
        }
        *video_dim = m.model.config.video_dim;
        *text_dim = m.model.config.text_dim;
        Ok(())
    })
}

/// Runs inference on one sample.
///
/// Inputs are row-major `video_len × video_dim` and `text_len × text_dim`
/// float arrays. Outputs: `spans` holds `num_queries × 2` normalized
/// `(start, end)` pairs, `fg_prob` `num_queries` foreground probabilities,
/// `saliency` `video_len` clip scores in `[0, 1]`.
///
/// # Safety
/// Every pointer must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn mh_model_predict(
    model: *const MhModel,
    video: *const f32,
    video_len: usize,
    text: *const f32,
    text_len: usize,
    spans: *mut f64,
    fg_prob: *mut f64,
    saliency: *mut f64,
) -> MhStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("null model"))?;
        if video.is_null() || text.is_null() || spans.is_null() || fg_prob.is_null() || saliency.is_null() {
            return Err(invalid("null argument"));
        }
        if video_len == 0 || text_len == 0 {
            return Err((MhStatus::DataError, "empty video or text".into()));
        }
        let c = &m.model.config;
        let to_seq = |ptr: *const f32, rows: usize, cols: usize, modality| {
            let data: Vec<f64> = std::slice::from_raw_parts(ptr, rows * cols).iter().map(|&x| x as f64).collect();
            Tensor::new(vec![rows, cols], data).and_then(|t| FeatureSequence::dense(modality, t)).map_err(lib)
        };
        let v = to_seq(video, video_len, c.video_dim, Modality::Video)?;
        let t = to_seq(text, text_len, c.text_dim, Modality::Text)?;
        let p = m.model.predict(&v, &t).map_err(lib)?;
        let out_spans = std::slice::from_raw_parts_mut(spans, 2 * c.num_queries);
        for (i, s) in p.spans.iter().enumerate() {
            out_spans[2 * i] = s.start;
            out_spans[2 * i + 1] = s.end;
        }
        std::slice::from_raw_parts_mut(fg_prob, c.num_queries).copy_from_slice(&p.fg_prob);
        std::slice::from_raw_parts_mut(saliency, video_len).copy_from_slice(&p.saliency);
        Ok(())
    })
}

/// Temporal IoU of two intervals; inverted intervals are empty.
#[no_mangle]
pub extern "C" fn mh_span_iou(s1: f64, e1: f64, s2: f64, e2: f64) -> f64 {
    span_iou(&MomentSpan::new(s1, e1), &MomentSpan::new(s2, e2))
}

/// Generalized temporal IoU of two intervals.
#[no_mangle]
pub extern "C" fn mh_span_giou(s1: f64, e1: f64, s2: f64, e2: f64) -> f64 {
    span_giou(&MomentSpan::new(s1, e1), &MomentSpan::new(s2, e2))
}

/// Minimum-cost assignment of `rows ≤ cols`; `cost` is row-major and
/// `assignment[r]` receives the column of row `r`.
///
/// # Safety
/// `cost` must hold `rows * cols` values and `assignment` `rows` slots.
#[no_mangle]
pub unsafe extern "C" fn mh_hungarian(cost: *const f64, rows: usize, cols: usize, assignment: *mut usize) -> MhStatus {
    guard(|| {
        if rows == 0 {
            return Ok(());
        }
        if cost.is_null() || assignment.is_null() {
            return Err(invalid("null argument"));
        }
        if cols < rows {
            return Err((MhStatus::DataError, format!("cannot assign {rows} rows to {cols} columns")));
        }
        let flat = std::slice::from_raw_parts(cost, rows * cols);
        let matrix: Vec<Vec<f64>> = flat.chunks(cols).map(<[f64]>::to_vec).collect();
        let a = hungarian(&matrix).map_err(lib)?;
        std::slice::from_raw_parts_mut(assignment, rows).copy_from_slice(&a);
        Ok(())
    })
}
