//! C ABI over the warpnet core.
//!
//! Every entry point returns a [`WarpnetStatus`]; on failure the message is
//! available from [`warpnet_last_error`] on the same thread. Models and paths
//! are opaque heap handles released with their `_free` function. Arrays are
//! passed as pointer plus length and are only read during the call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use warpnet::analysis::fractional_ranks;
use warpnet::datasets::LabeledSeries;
use warpnet::models::{Classifier, DistanceModel};
use warpnet::tensor::{Mode, Tape};
use warpnet::training::{predict_labels, Checkpoint};
use warpnet::warping::{dtw, dtw_with_path, pairwise_matrix, soft_dtw, DtwParams, ElementwiseMode, SoftDtwParams};
use warpnet::{Error, ErrorKind};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarpnetStatus {
    Ok = 0,
    /// A required pointer was null.
    NullPointer = 1,
    /// Bad arguments: shapes, unknown task, infeasible band.
    Usage = 2,
    /// Invalid configuration or parameters.
    Schema = 3,
    /// Unreadable or malformed files.
    Data = 4,
    /// Non-finite values.
    Numerical = 5,
    /// An internal panic was caught at the boundary.
    Panic = 6,
}

/// Owned warping path.
pub struct WarpnetPath {
    cells: Vec<(usize, usize)>,
}

/// A trained distance regressor loaded from a checkpoint.
pub struct WarpnetDistanceModel {
    model: DistanceModel,
}

/// A trained (single- or multi-task) classifier loaded from a checkpoint.
pub struct WarpnetClassifier {
    model: Classifier,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> WarpnetStatus {
    match e.kind() {
        ErrorKind::Usage => WarpnetStatus::Usage,
        ErrorKind::Schema => WarpnetStatus::Schema,
        ErrorKind::Data => WarpnetStatus::Data,
        ErrorKind::Numerical => WarpnetStatus::Numerical,
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WarpnetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            WarpnetStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            WarpnetStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            WarpnetStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::Usage("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// A negative radius means unconstrained.
fn dtw_params(band_radius: i64) -> DtwParams {
    if band_radius < 0 {
        DtwParams::unconstrained()
    } else {
        DtwParams::banded(band_radius as usize)
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn warpnet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn warpnet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the `n × m` absolute-difference matrix (row-major) into `out`,
/// which must hold `n * m` values.
#[no_mangle]
pub unsafe extern "C" fn warpnet_pairwise_matrix(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    out: *mut f64,
) -> WarpnetStatus {
    guard(|| {
        let x = pairwise_matrix(slice(a, n, "a")?, slice(b, m, "b")?, ElementwiseMode::Abs)?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        std::slice::from_raw_parts_mut(out, n * m).copy_from_slice(x.values());
        Ok(())
    })
}

/// DTW distance under a Sakoe-Chiba band of `band_radius` samples
/// (negative for unconstrained).
#[no_mangle]
pub unsafe extern "C" fn warpnet_dtw(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    band_radius: i64,
    out: *mut f64,
) -> WarpnetStatus {
    guard(|| {
        let x = pairwise_matrix(slice(a, n, "a")?, slice(b, m, "b")?, ElementwiseMode::Abs)?;
        *out_ref(out, "out")? = dtw(&x, &dtw_params(band_radius))?;
        Ok(())
    })
}

/// Soft-DTW value at temperature `gamma > 0`.
#[no_mangle]
pub unsafe extern "C" fn warpnet_soft_dtw(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    gamma: f64,
    out: *mut f64,
) -> WarpnetStatus {
    guard(|| {
        let x = pairwise_matrix(slice(a, n, "a")?, slice(b, m, "b")?, ElementwiseMode::Abs)?;
        *out_ref(out, "out")? = soft_dtw(&x, &SoftDtwParams::new(gamma))?;
        Ok(())
    })
}

/// DTW distance plus an optimal path, returned as a new handle.
#[no_mangle]
pub unsafe extern "C" fn warpnet_dtw_path(
    a: *const f64,
    n: usize,
    b: *const f64,
    m: usize,
    band_radius: i64,
    distance: *mut f64,
    path: *mut *mut WarpnetPath,
) -> WarpnetStatus {
    guard(|| {
        let x = pairwise_matrix(slice(a, n, "a")?, slice(b, m, "b")?, ElementwiseMode::Abs)?;
        let dist_out = out_ref(distance, "distance")?;
        let path_out = out_ref(path, "path")?;
        let (d, p) = dtw_with_path(&x, &dtw_params(band_radius))?;
        *dist_out = d;
        *path_out = Box::into_raw(Box::new(WarpnetPath {
            cells: p.cells().to_vec(),
        }));
        Ok(())
    })
}

/// Number of cells on the path; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn warpnet_path_len(path: *const WarpnetPath) -> usize {
    path.as_ref().map_or(0, |p| p.cells.len())
}

/// Cell `index` of the path.
#[no_mangle]
pub unsafe extern "C" fn warpnet_path_get(
    path: *const WarpnetPath,
    index: usize,
    i: *mut usize,
    j: *mut usize,
) -> WarpnetStatus {
    guard(|| {
        let p = path.as_ref().ok_or(Failure::Null("path"))?;
        let &(ci, cj) = p
            .cells
            .get(index)
            .ok_or_else(|| Error::Usage(format!("index {index} past path length {}", p.cells.len())))?;
        *out_ref(i, "i")? = ci;
        *out_ref(j, "j")? = cj;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn warpnet_path_free(path: *mut WarpnetPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Loads a distance-model checkpoint written by `warpnet run`.
#[no_mangle]
pub unsafe extern "C" fn warpnet_distance_model_load(
    checkpoint: *const c_char,
    out: *mut *mut WarpnetDistanceModel,
) -> WarpnetStatus {
    guard(|| {
        let path = path_arg(checkpoint)?;
        let slot = out_ref(out, "out")?;
        let model = Checkpoint::load(&path)?.distance_model()?;
        *slot = Box::into_raw(Box::new(WarpnetDistanceModel { model }));
        Ok(())
    })
}

/// Predicted distance between two series of equal length `len`.
#[no_mangle]
pub unsafe extern "C" fn warpnet_distance_model_predict(
    model: *const WarpnetDistanceModel,
    a: *const f64,
    b: *const f64,
    len: usize,
    out: *mut f64,
) -> WarpnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        let (a, b) = (slice(a, len, "a")?, slice(b, len, "b")?);
        let slot = out_ref(out, "out")?;
        let mut tape = Tape::new(Mode::Eval);
        let d = m.model.predict(&mut tape, &[(a, b)])?;
        *slot = tape.value(d).item();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn warpnet_distance_model_free(model: *mut WarpnetDistanceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads a classifier checkpoint written by `warpnet run`.
#[no_mangle]
pub unsafe extern "C" fn warpnet_classifier_load(
    checkpoint: *const c_char,
    out: *mut *mut WarpnetClassifier,
) -> WarpnetStatus {
    guard(|| {
        let path = path_arg(checkpoint)?;
        let slot = out_ref(out, "out")?;
        let model = Checkpoint::load(&path)?.classifier()?;
        *slot = Box::into_raw(Box::new(WarpnetClassifier { model }));
        Ok(())
    })
}

/// Number of task heads; 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn warpnet_classifier_num_tasks(model: *const WarpnetClassifier) -> usize {
    model.as_ref().map_or(0, |m| m.model.heads.tasks.len())
}

/// Index of the head named `task`.
#[no_mangle]
pub unsafe extern "C" fn warpnet_classifier_task_index(
    model: *const WarpnetClassifier,
    task: *const c_char,
    out: *mut usize,
) -> WarpnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        if task.is_null() {
            return Err(Failure::Null("task"));
        }
        let name = CStr::from_ptr(task).to_string_lossy();
        *out_ref(out, "out")? = m.model.task_index(&name)?;
        Ok(())
    })
}

/// Predicted class of one series under task head `task`.
#[no_mangle]
pub unsafe extern "C" fn warpnet_classifier_predict(
    model: *const WarpnetClassifier,
    task: usize,
    series: *const f64,
    len: usize,
    label: *mut usize,
) -> WarpnetStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Failure::Null("model"))?;
        if task >= m.model.heads.tasks.len() {
            return Err(Error::Usage(format!("task index {task} out of range")).into());
        }
        let values = slice(series, len, "series")?.to_vec();
        let slot = out_ref(label, "label")?;
        let query = [LabeledSeries {
            values,
            label: 0,
            source_id: String::new(),
        }];
        *slot = predict_labels(&m.model, task, &query, 1)?[0];
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn warpnet_classifier_free(model: *mut WarpnetClassifier) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fractional ranks of `n` scores (rank 1 = highest, ties share the mean
/// position) written into `out`.
#[no_mangle]
pub unsafe extern "C" fn warpnet_fractional_ranks(scores: *const f64, n: usize, out: *mut f64) -> WarpnetStatus {
    guard(|| {
        let ranks = fractional_ranks(slice(scores, n, "scores")?)?;
        if n > 0 {
            if out.is_null() {
                return Err(Failure::Null("out"));
            }
            std::slice::from_raw_parts_mut(out, n).copy_from_slice(&ranks);
        }
        Ok(())
    })
}
