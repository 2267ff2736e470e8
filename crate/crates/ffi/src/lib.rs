//! C interface to oncode.
//!
//! Every function returns an [`OncodeStatus`]; on failure the message is kept
//! per thread and read with [`oncode_last_error`]. Handles are opaque and
//! released with their `_free` function. Output buffers are caller-owned.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use oncode::graph_data::{DataPaths, Dataset};
use oncode::model::{load_checkpoint, prepare_samples, CheckpointKind, Model};
use oncode::numkit::ParamSet;
use oncode::response::{best_response, categorize, ResponseCategory};
use oncode::synth::{generate_cohort, SynthConfig};
use oncode::tgi::{tgi_fit_points, tgi_simulate, TgiParams};
use oncode::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OncodeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Data = 3,
    Numerical = 4,
    Checkpoint = 5,
    Io = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OncodeCategory {
    Cr = 0,
    Pr = 1,
    Sd = 2,
    Pd = 3,
}

impl From<ResponseCategory> for OncodeCategory {
    fn from(c: ResponseCategory) -> Self {
        match c {
            ResponseCategory::CR => OncodeCategory::Cr,
            ResponseCategory::PR => OncodeCategory::Pr,
            ResponseCategory::SD => OncodeCategory::Sd,
            ResponseCategory::PD => OncodeCategory::Pd,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OncodeTgiFit {
    pub k_g: f64,
    pub k_d: f64,
    pub lambda: f64,
    /// Sum of squared log-volume residuals.
    pub rss: f64,
    pub converged: bool,
}

/// A loaded or generated cohort.
pub struct OncodeDataset {
    inner: Dataset,
}

/// A trained model restored from a checkpoint.
pub struct OncodeModel {
    model: Model,
    params: ParamSet,
    kind: CheckpointKind,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(OncodeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Numerical(_) => OncodeStatus::Numerical,
            Error::Invalid(_) | Error::Config(_) | Error::Shape { .. } => {
                OncodeStatus::InvalidArgument
            }
            Error::Parse { .. } | Error::Data(_) => OncodeStatus::Data,
            Error::Checkpoint(_) => OncodeStatus::Checkpoint,
            Error::Io { .. } => OncodeStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OncodeStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(OncodeStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OncodeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OncodeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            OncodeStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the last failure on this thread, or null. Valid until the next call
/// that fails on the same thread.
#[no_mangle]
pub extern "C" fn oncode_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn oncode_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn oncode_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Closed-form TGI volumes on `grid` (days, starting at 0) into `out_volumes[n]`.
///
/// # Safety
/// `grid` and `out_volumes` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn oncode_tgi_simulate(
    k_g: f64,
    k_d: f64,
    lambda: f64,
    v0: f64,
    grid: *const f64,
    n: usize,
    out_volumes: *mut f64,
) -> OncodeStatus {
    guard(|| {
        let grid = slice(grid, n, "grid")?;
        let dst = slice_mut(out_volumes, n, "out_volumes")?;
        let v = tgi_simulate(&TgiParams::new(k_g, k_d, lambda)?, v0, grid)?;
        dst.copy_from_slice(&v);
        Ok(())
    })
}

/// Fits TGI parameters to one series.
///
/// # Safety
/// `times` and `volumes` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn oncode_tgi_fit(
    times: *const f64,
    volumes: *const f64,
    n: usize,
    out_fit: *mut OncodeTgiFit,
) -> OncodeStatus {
    guard(|| {
        let t = slice(times, n, "times")?;
        let v = slice(volumes, n, "volumes")?;
        let dst = out(out_fit, "out_fit")?;
        let fit = tgi_fit_points(t, v)?;
        *dst = OncodeTgiFit {
            k_g: fit.params.k_g,
            k_d: fit.params.k_d,
            lambda: fit.params.lambda,
            rss: fit.rss,
            converged: fit.converged,
        };
        Ok(())
    })
}

/// Minimum percentage volume change between day 10 and day 64.
///
/// # Safety
/// `times` and `volumes` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn oncode_best_response(
    times: *const f64,
    volumes: *const f64,
    n: usize,
    out_best_response: *mut f64,
) -> OncodeStatus {
    guard(|| {
        let t = slice(times, n, "times")?;
        let v = slice(volumes, n, "volumes")?;
        let dst = out(out_best_response, "out_best_response")?;
        *dst = best_response(t, v)?;
        Ok(())
    })
}

/// mRECIST category of a best response.
///
/// # Safety
/// `out_category` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oncode_categorize(
    best_response: f64,
    out_category: *mut OncodeCategory,
) -> OncodeStatus {
    guard(|| {
        if best_response.is_nan() {
            return Err(invalid("best response is NaN"));
        }
        *out(out_category, "out_category")? = categorize(best_response).into();
        Ok(())
    })
}

/// Loads the six standard cohort files from `dir`.
///
/// # Safety
/// `dir` and `tissue` must be NUL-terminated strings; `out_dataset` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oncode_dataset_load(
    dir: *const c_char,
    tissue: *const c_char,
    out_dataset: *mut *mut OncodeDataset,
) -> OncodeStatus {
    guard(|| {
        let dir = string(dir, "dir")?;
        let tissue = string(tissue, "tissue")?;
        let dst = out(out_dataset, "out_dataset")?;
        let inner = Dataset::load(&DataPaths::in_dir(Path::new(dir)), tissue)?;
        *dst = Box::into_raw(Box::new(OncodeDataset { inner }));
        Ok(())
    })
}

/// Generates a synthetic cohort with default settings apart from the arguments.
///
/// # Safety
/// `out_dataset` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oncode_cohort_generate(
    seed: u64,
    signal: f64,
    noise: f64,
    experiments: usize,
    out_dataset: *mut *mut OncodeDataset,
) -> OncodeStatus {
    guard(|| {
        let dst = out(out_dataset, "out_dataset")?;
        let cohort = generate_cohort(&SynthConfig {
            seed,
            signal,
            noise,
            experiments,
            ..SynthConfig::default()
        })?;
        *dst = Box::into_raw(Box::new(OncodeDataset {
            inner: cohort.dataset,
        }));
        Ok(())
    })
}

/// # Safety
/// `dataset` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn oncode_dataset_free(dataset: *mut OncodeDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// # Safety
/// `dataset` must be a live handle; `out_count` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oncode_dataset_experiment_count(
    dataset: *const OncodeDataset,
    out_count: *mut usize,
) -> OncodeStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        *out(out_count, "out_count")? = ds.inner.experiments.len();
        Ok(())
    })
}

/// Number of measurements of experiment `index`.
///
/// # Safety
/// `dataset` must be a live handle; `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oncode_dataset_series_len(
    dataset: *const OncodeDataset,
    index: usize,
    out_len: *mut usize,
) -> OncodeStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let e = ds
            .inner
            .experiments
            .get(index)
            .ok_or_else(|| invalid(format!("experiment {index} out of range")))?;
        *out(out_len, "out_len")? = e.volumes.len();
        Ok(())
    })
}

/// Copies the measurement days and volumes of experiment `index`; both buffers
/// must hold `oncode_dataset_series_len` doubles, passed as `capacity`.
///
/// # Safety
/// `dataset` must be a live handle; the buffers must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn oncode_dataset_series(
    dataset: *const OncodeDataset,
    index: usize,
    out_times: *mut f64,
    out_volumes: *mut f64,
    capacity: usize,
) -> OncodeStatus {
    guard(|| {
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let e = ds
            .inner
            .experiments
            .get(index)
            .ok_or_else(|| invalid(format!("experiment {index} out of range")))?;
        let n = e.volumes.len();
        if capacity != n {
            return Err(invalid(format!(
                "series has {n} points, buffers hold {capacity}"
            )));
        }
        slice_mut(out_times, n, "out_times")?.copy_from_slice(e.volumes.times());
        slice_mut(out_volumes, n, "out_volumes")?.copy_from_slice(e.volumes.volumes());
        Ok(())
    })
}

/// Restores a checkpoint directory against the vocabulary of `dataset`.
///
/// # Safety
/// `dir` must be a NUL-terminated string, `dataset` a live handle, `out_model` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oncode_model_load(
    dir: *const c_char,
    dataset: *const OncodeDataset,
    out_model: *mut *mut OncodeModel,
) -> OncodeStatus {
    guard(|| {
        let dir = string(dir, "dir")?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        let dst = out(out_model, "out_model")?;
        let ck = load_checkpoint(Path::new(dir))?;
        let model = Model::for_checkpoint(&ck.meta, &ds.inner)?;
        match ck.meta.kind {
            CheckpointKind::Dynamics => model.check_dynamics(&ck.params)?,
            CheckpointKind::Classifier => model.check_classifier(&ck.params)?,
            CheckpointKind::Pretrain => {
                return Err(Failure(
                    OncodeStatus::Checkpoint,
                    "a pretraining checkpoint cannot make predictions".into(),
                ))
            }
        }
        *dst = Box::into_raw(Box::new(OncodeModel {
            model,
            params: ck.params,
            kind: ck.meta.kind,
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn oncode_model_free(model: *mut OncodeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Whether the model is a responder classifier rather than a dynamics model.
///
/// # Safety
/// `model` must be a live handle; `out_is_classifier` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oncode_model_is_classifier(
    model: *const OncodeModel,
    out_is_classifier: *mut bool,
) -> OncodeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out(out_is_classifier, "out_is_classifier")? = m.kind == CheckpointKind::Classifier;
        Ok(())
    })
}

/// Predicted volumes (mm³) of experiment `index` on `grid`, conditioned on the
/// measurements up to day `window`; a negative or NaN `window` uses the whole series.
///
/// # Safety
/// Handles must be live; `grid` and `out_volumes` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn oncode_model_predict(
    model: *const OncodeModel,
    dataset: *const OncodeDataset,
    index: usize,
    window: f64,
    grid: *const f64,
    n: usize,
    out_volumes: *mut f64,
) -> OncodeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if m.kind != CheckpointKind::Dynamics {
            return Err(invalid("trajectories need a dynamics model"));
        }
        let grid = slice(grid, n, "grid")?;
        let dst = slice_mut(out_volumes, n, "out_volumes")?;
        if index >= ds.inner.experiments.len() {
            return Err(invalid(format!("experiment {index} out of range")));
        }
        let sample = prepare_samples(&ds.inner, &[index])?.remove(0);
        let cutoff = (window >= 0.0).then_some(window);
        let pred = m
            .model
            .predict_trajectory(&m.params, &sample, cutoff, grid)?;
        dst.copy_from_slice(&pred.volumes);
        Ok(())
    })
}

/// Responder probability of experiment `index` from a classifier model.
///
/// # Safety
/// Handles must be live; `out_probability` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn oncode_model_classify(
    model: *const OncodeModel,
    dataset: *const OncodeDataset,
    index: usize,
    out_probability: *mut f64,
) -> OncodeStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = dataset.as_ref().ok_or_else(|| null("dataset"))?;
        if m.kind != CheckpointKind::Classifier {
            return Err(invalid("probabilities need a classifier model"));
        }
        let dst = out(out_probability, "out_probability")?;
        if index >= ds.inner.experiments.len() {
            return Err(invalid(format!("experiment {index} out of range")));
        }
        let sample = prepare_samples(&ds.inner, &[index])?.remove(0);
        *dst = m.model.classify(&m.params, &[&sample.instance])?[0];
        Ok(())
    })
}
