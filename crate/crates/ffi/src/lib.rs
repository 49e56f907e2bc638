//! C ABI for the exitgate library.
//!
//! Conventions:
//! - Handles (`ExitgateModel`, `ExitgateDataset`) are opaque; create them with
//!   the `_load` functions and release them with the matching `_free`.
//! - Every fallible call returns an [`ExitgateStatus`]; on any non-`Ok` status
//!   a thread-local message is available via `exitgate_last_error_message`
//!   until the next failing call on the same thread.
//! - Pointers must be valid for the duration of the call; null pointers are
//!   reported as `ExitgateStatus::NullPointer`, never dereferenced.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;

use exitgate::gate::{walk_readouts, Thresholds};
use exitgate::{Dataset, Error, MultiExitModel};

/// Status code returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitgateStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    IoError = 4,
    ParseError = 5,
    TrainingError = 6,
    InternalError = 7,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let cstring = CString::new(message.replace('\0', "?"))
        .unwrap_or_else(|_| CString::new("invalid error message").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_for(error: &Error) -> ExitgateStatus {
    match error {
        Error::ShapeMismatch { .. } => ExitgateStatus::ShapeMismatch,
        Error::InvalidArgument(_) => ExitgateStatus::InvalidArgument,
        Error::Training { .. } => ExitgateStatus::TrainingError,
        Error::Parse { .. } | Error::Json(_) => ExitgateStatus::ParseError,
        Error::Io { .. } => ExitgateStatus::IoError,
        Error::OracleUnavailable(_) => ExitgateStatus::InternalError,
    }
}

fn fail(error: Error) -> ExitgateStatus {
    let status = status_for(&error);
    set_error(&error.to_string());
    status
}

fn null_pointer(name: &str) -> ExitgateStatus {
    set_error(&format!("{name} must not be null"));
    ExitgateStatus::NullPointer
}

/// Runs a body that may panic; panics become `InternalError` instead of
/// unwinding across the FFI boundary.
fn guarded<F: FnOnce() -> ExitgateStatus>(body: F) -> ExitgateStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            ExitgateStatus::InternalError
        }
    }
}

unsafe fn path_from(ptr: *const c_char, name: &str) -> Result<PathBuf, ExitgateStatus> {
    if ptr.is_null() {
        return Err(null_pointer(name));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error(&format!("{name} is not valid UTF-8"));
            Err(ExitgateStatus::InvalidArgument)
        }
    }
}

/// Opaque handle to a trained multi-exit model.
pub struct ExitgateModel {
    inner: MultiExitModel,
}

/// Opaque handle to a loaded dataset.
pub struct ExitgateDataset {
    inner: Dataset,
}

/// Result of gated inference on one sample.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ExitgateInference {
    /// 1-based layer at which the walk terminated.
    pub exit_layer: u32,
    /// Predicted class when covered, -1 when deferred to the expert.
    pub label: i32,
    /// 1 when the sample was deferred, 0 when the model predicted.
    pub deferred: u8,
    /// Exit-head confidence at the terminal layer.
    pub confidence: f64,
    /// Deferral-head hardness at the terminal layer.
    pub hardness: f64,
}

/// Selective metrics over a dataset.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ExitgateMetrics {
    pub total: u64,
    pub covered: u64,
    pub deferred: u64,
    pub coverage: f64,
    /// Error rate among covered samples; meaningful only when `risk_defined`.
    pub risk: f64,
    pub risk_defined: u8,
    pub speedup: f64,
}

static VERSION: OnceLock<CString> = OnceLock::new();

/// Library version as a static NUL-terminated string; never freed by the caller.
#[no_mangle]
pub extern "C" fn exitgate_version() -> *const c_char {
    VERSION
        .get_or_init(|| CString::new(env!("CARGO_PKG_VERSION")).unwrap())
        .as_ptr()
}

/// Message for the most recent failure on this thread, or null when the last
/// call succeeded. Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn exitgate_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(std::ptr::null(), |s| s.as_ptr())
    })
}

/// Loads a model checkpoint. On success stores a heap-allocated handle in
/// `out`; release it with `exitgate_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exitgate_model_load(
    path: *const c_char,
    out: *mut *mut ExitgateModel,
) -> ExitgateStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        let path = match path_from(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match MultiExitModel::load(&path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ExitgateModel { inner }));
                ExitgateStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Saves a model checkpoint.
///
/// # Safety
/// `model` must be a live handle from `exitgate_model_load`; `path` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn exitgate_model_save(
    model: *const ExitgateModel,
    path: *const c_char,
) -> ExitgateStatus {
    guarded(|| {
        if model.is_null() {
            return null_pointer("model");
        }
        let path = match path_from(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match (*model).inner.save(&path) {
            Ok(()) => ExitgateStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must have come from `exitgate_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn exitgate_model_free(model: *mut ExitgateModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of backbone layers; 0 on a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn exitgate_model_layers(model: *const ExitgateModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).inner.layer_count() as u32
}

/// Number of classes; 0 on a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn exitgate_model_classes(model: *const ExitgateModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).inner.classes() as u32
}

/// Expected feature width; 0 on a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn exitgate_model_input_dim(model: *const ExitgateModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).inner.input_dim() as u32
}

/// Loads a `f1..fd,label` CSV dataset.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exitgate_dataset_load_csv(
    path: *const c_char,
    out: *mut *mut ExitgateDataset,
) -> ExitgateStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        let path = match path_from(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match exitgate::load_csv(&path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ExitgateDataset { inner }));
                ExitgateStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a dataset handle; null is ignored.
///
/// # Safety
/// `dataset` must have come from `exitgate_dataset_load_csv` and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn exitgate_dataset_free(dataset: *mut ExitgateDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of samples; 0 on a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn exitgate_dataset_len(dataset: *const ExitgateDataset) -> u64 {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.len() as u64
}

/// Feature width; 0 on a null handle.
///
/// # Safety
/// `dataset` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn exitgate_dataset_dims(dataset: *const ExitgateDataset) -> u32 {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.dims() as u32
}

/// Runs the gated walk on one feature vector. A deferred sample reports
/// `deferred = 1` and `label = -1`; resolving it against an expert is the
/// caller's concern.
///
/// # Safety
/// `model` must be a live handle; `features` must point to `features_len`
/// readable doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exitgate_infer_sample(
    model: *const ExitgateModel,
    features: *const f64,
    features_len: usize,
    alpha: f64,
    beta: f64,
    out: *mut ExitgateInference,
) -> ExitgateStatus {
    guarded(|| {
        if model.is_null() {
            return null_pointer("model");
        }
        if features.is_null() {
            return null_pointer("features");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let x = std::slice::from_raw_parts(features, features_len);
        let pass = match (*model).inner.forward_all(x) {
            Ok(p) => p,
            Err(e) => return fail(e),
        };
        let trace = walk_readouts(&pass.readouts, Thresholds { alpha, beta });
        let terminal = trace.visits.last().expect("walk visits at least one layer");
        *out = ExitgateInference {
            exit_layer: trace.terminal_layer as u32,
            label: trace.predicted.map_or(-1, |c| c as i32),
            deferred: u8::from(!trace.covered),
            confidence: terminal.confidence,
            hardness: terminal.hardness,
        };
        ExitgateStatus::Ok
    })
}

/// Evaluates the gated protocol over a dataset, treating the dataset's labels
/// as the expert.
///
/// # Safety
/// `model` and `dataset` must be live handles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exitgate_evaluate(
    model: *const ExitgateModel,
    dataset: *const ExitgateDataset,
    alpha: f64,
    beta: f64,
    out: *mut ExitgateMetrics,
) -> ExitgateStatus {
    guarded(|| {
        if model.is_null() {
            return null_pointer("model");
        }
        if dataset.is_null() {
            return null_pointer("dataset");
        }
        if out.is_null() {
            return null_pointer("out");
        }
        let data = &(*dataset).inner;
        let oracle = exitgate::GoldOracle::for_dataset(data);
        let thresholds = Thresholds { alpha, beta };
        match exitgate::evaluate(&(*model).inner, data, thresholds, &oracle) {
            Ok(m) => {
                *out = ExitgateMetrics {
                    total: m.total,
                    covered: m.covered,
                    deferred: m.deferrals,
                    coverage: m.coverage,
                    risk: m.risk,
                    risk_defined: u8::from(m.risk_defined),
                    speedup: m.speedup,
                };
                ExitgateStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Fills `counts` (length `counts_len`, which must equal the layer count)
/// with per-layer termination counts, exits and deferrals combined.
///
/// # Safety
/// `model` and `dataset` must be live handles; `counts` must point to
/// `counts_len` writable u64 slots.
#[no_mangle]
pub unsafe extern "C" fn exitgate_exit_histogram(
    model: *const ExitgateModel,
    dataset: *const ExitgateDataset,
    alpha: f64,
    beta: f64,
    counts: *mut u64,
    counts_len: usize,
) -> ExitgateStatus {
    guarded(|| {
        if model.is_null() {
            return null_pointer("model");
        }
        if dataset.is_null() {
            return null_pointer("dataset");
        }
        if counts.is_null() {
            return null_pointer("counts");
        }
        let layers = (*model).inner.layer_count();
        if counts_len != layers {
            return fail(Error::ShapeMismatch {
                context: "histogram buffer".into(),
                expected: layers,
                got: counts_len,
            });
        }
        let data = &(*dataset).inner;
        let oracle = exitgate::GoldOracle::for_dataset(data);
        let thresholds = Thresholds { alpha, beta };
        match exitgate::evaluate(&(*model).inner, data, thresholds, &oracle) {
            Ok(m) => {
                let histogram = m.exit_histogram();
                let out = std::slice::from_raw_parts_mut(counts, counts_len);
                out.copy_from_slice(&histogram);
                ExitgateStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Maximal admissible deferral error rate for one layer with exit error `q`
/// and risk target `gamma`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exitgate_lemma_bound(
    q: f64,
    gamma: f64,
    out: *mut f64,
) -> ExitgateStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        match exitgate::lemma_bound(q, gamma) {
            Ok(v) => {
                *out = v;
                ExitgateStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Worst-layer form of the bound, evaluated at `q_max`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn exitgate_theorem_bound(
    q_max: f64,
    gamma: f64,
    out: *mut f64,
) -> ExitgateStatus {
    guarded(|| {
        if out.is_null() {
            return null_pointer("out");
        }
        match exitgate::theorem_bound(q_max, gamma) {
            Ok(v) => {
                *out = v;
                ExitgateStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Monte Carlo check of the pipeline's generative model with uniform
/// per-layer rates and unit reach probabilities. Writes the empirical
/// covered risk and a three-standard-error half-width.
///
/// # Safety
/// `out_risk` and `out_half_width` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn exitgate_simulate_uniform(
    layers: u32,
    q: f64,
    q_d: f64,
    gamma: f64,
    trials: u64,
    seed: u64,
    out_risk: *mut f64,
    out_half_width: *mut f64,
) -> ExitgateStatus {
    guarded(|| {
        if out_risk.is_null() {
            return null_pointer("out_risk");
        }
        if out_half_width.is_null() {
            return null_pointer("out_half_width");
        }
        let spec = match exitgate::BoundSpec::uniform(layers as usize, q, q_d, gamma) {
            Ok(s) => s,
            Err(e) => return fail(e),
        };
        match exitgate::simulate_pipeline(&spec, trials, seed) {
            Ok(report) => {
                *out_risk = report.risk;
                *out_half_width = report.half_width;
                ExitgateStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
