//! C ABI for the `fgssa` library.
//!
//! Models and datasets are opaque heap handles released with their `*_free`
//! function. Every fallible call returns an [`FgStatus`]; on failure the message is
//! available from [`fg_last_error_message`] until the next failing call on the same
//! thread. Panics never cross the boundary; they are reported as
//! `FG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fgssa::attribution::{build_sim, build_siv, compute_gradcam, AttributionConfig};
use fgssa::data::{filter_and_split, load_csv, window, CsvSchema, Role, SplitConfig, WindowedDataset};
use fgssa::model::{predict_class, CnnModel, Hyperparams};
use fgssa::seed::{derive_seed, stream};
use fgssa::selection::{fg_ssa, SelectionConfig};
use fgssa::trainer::TrainConfig;
use fgssa::{Error, Tensor};

/// Result codes of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    NonFinite = 4,
    Io = 5,
    Format = 6,
    Runtime = 7,
    Panic = 8,
}

/// Opaque trained model.
pub struct FgModel {
    inner: CnnModel,
}

/// Opaque windowed dataset.
pub struct FgDataset {
    inner: WindowedDataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FgStatus {
    match e {
        Error::Shape { .. } => FgStatus::Shape,
        Error::NonFinite { .. } => FgStatus::NonFinite,
        Error::InvalidArgument(_)
        | Error::InfeasibleShape(_)
        | Error::InvalidClass { .. }
        | Error::EmptyDataset(_)
        | Error::UnknownColumn(_) => FgStatus::InvalidArgument,
        Error::ParseCell { .. } | Error::EmptyFile(_) | Error::Format(_) => FgStatus::Format,
        Error::Io(_) => FgStatus::Io,
        Error::Divergence { .. } | Error::SelectionAborted { .. } => FgStatus::Runtime,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FgStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed as {what}"));
            FgStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FgStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn as_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))
}

unsafe fn as_slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn as_slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<(), Failure> {
    if expected != actual {
        return Err(Failure::Lib(Error::Shape {
            context,
            dimension: "buffer length".into(),
            expected,
            actual,
        }));
    }
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer stays valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an untrained model with default layer sizes for the given shape.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn fg_model_new(
    window_len: usize,
    n_signals: usize,
    n_classes: usize,
    conv_size: usize,
    n_filters: usize,
    seed: u64,
    out: *mut *mut FgModel,
) -> FgStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let hp = Hyperparams {
            conv_size,
            n_filters,
            ..Hyperparams::new(window_len, n_signals, n_classes)
        };
        let model = CnnModel::build(hp, seed)?;
        *out = Box::into_raw(Box::new(FgModel { inner: model }));
        Ok(())
    })
}

/// Loads a JSON checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_model_load(path: *const c_char, out: *mut *mut FgModel) -> FgStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let model = CnnModel::load(path)?;
        *out = Box::into_raw(Box::new(FgModel { inner: model }));
        Ok(())
    })
}

/// Writes a JSON checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fg_model_save(model: *const FgModel, path: *const c_char) -> FgStatus {
    guard(|| {
        let model = as_ref(model, "model")?;
        model.inner.save(as_str(path, "path")?)?;
        Ok(())
    })
}

/// Releases a model. NULL is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fg_model_free(model: *mut FgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes window length, signal count, class count and feature length to the
/// non-NULL outputs.
///
/// # Safety
/// `model` must come from this library; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fg_model_shape(
    model: *const FgModel,
    window_len: *mut usize,
    n_signals: *mut usize,
    n_classes: *mut usize,
    feature_len: *mut usize,
) -> FgStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let hp = m.hyperparams();
        for (p, v) in [
            (window_len, hp.window_len),
            (n_signals, hp.n_signals),
            (n_classes, hp.n_classes),
            (feature_len, m.feature_len()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Class probabilities for one window laid out row-major as `[time][signal]`.
/// `probs` receives `n_classes` values; `class_out` (may be NULL) the predicted class.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn fg_model_predict(
    model: *const FgModel,
    window: *const f64,
    window_len: usize,
    probs: *mut f64,
    probs_len: usize,
    class_out: *mut usize,
) -> FgStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let hp = m.hyperparams();
        check_len("fg_model_predict", hp.window_len * hp.n_signals, window_len)?;
        check_len("fg_model_predict", hp.n_classes, probs_len)?;
        let x = Tensor::new(
            vec![hp.window_len, hp.n_signals],
            as_slice(window, window_len, "window")?.to_vec(),
        )?;
        let y = m.forward(&x)?;
        as_slice_mut(probs, probs_len, "probs")?.copy_from_slice(&y.probs);
        if !class_out.is_null() {
            *class_out = predict_class(&y.probs)?;
        }
        Ok(())
    })
}

/// Grad-CAM vectors for one window: `out` receives `n_signals * feature_len` values,
/// signal-major. `class_out` (may be NULL) receives the estimated class.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn fg_model_gradcam(
    model: *const FgModel,
    window: *const f64,
    window_len: usize,
    out: *mut f64,
    out_len: usize,
    class_out: *mut usize,
) -> FgStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let hp = m.hyperparams();
        check_len("fg_model_gradcam", hp.window_len * hp.n_signals, window_len)?;
        check_len("fg_model_gradcam", hp.n_signals * m.feature_len(), out_len)?;
        let x = Tensor::new(
            vec![hp.window_len, hp.n_signals],
            as_slice(window, window_len, "window")?.to_vec(),
        )?;
        let cam = compute_gradcam(&m.feature_gradients(&x)?);
        let dst = as_slice_mut(out, out_len, "out")?;
        for (chunk, map) in dst.chunks_mut(m.feature_len()).zip(&cam.maps) {
            chunk.copy_from_slice(map);
        }
        if !class_out.is_null() {
            *class_out = cam.estimated_class;
        }
        Ok(())
    })
}

/// Reads a CSV (header = signal names + `label`) and cuts it into non-overlapping
/// windows of `window_len` rows.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_dataset_load_csv(
    path: *const c_char,
    window_len: usize,
    out: *mut *mut FgDataset,
) -> FgStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let table = load_csv(path, &CsvSchema::default())?;
        let (ds, _) = window(&table, window_len, window_len)?;
        *out = Box::into_raw(Box::new(FgDataset { inner: ds }));
        Ok(())
    })
}

/// Loads a dataset snapshot written by the `synth` command or the library.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_dataset_load_snapshot(path: *const c_char, out: *mut *mut FgDataset) -> FgStatus {
    guard(|| {
        let path = as_str(path, "path")?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let ds = WindowedDataset::load_snapshot(path)?;
        *out = Box::into_raw(Box::new(FgDataset { inner: ds }));
        Ok(())
    })
}

/// Releases a dataset. NULL is ignored.
///
/// # Safety
/// `dataset` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fg_dataset_free(dataset: *mut FgDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Writes window count, window length, signal count and class count to the
/// non-NULL outputs.
///
/// # Safety
/// `dataset` must come from this library; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn fg_dataset_shape(
    dataset: *const FgDataset,
    n_windows: *mut usize,
    window_len: *mut usize,
    n_signals: *mut usize,
    n_classes: *mut usize,
) -> FgStatus {
    guard(|| {
        let d = &as_ref(dataset, "dataset")?.inner;
        for (p, v) in [
            (n_windows, d.len()),
            (window_len, d.window_len()),
            (n_signals, d.n_signals()),
            (n_classes, d.n_classes()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Signal importance vector of `model` over every window of `dataset`; `out`
/// receives `n_signals` values.
///
/// # Safety
/// Handles must come from this library; `out` must hold `out_len` values.
#[no_mangle]
pub unsafe extern "C" fn fg_siv(
    model: *const FgModel,
    dataset: *const FgDataset,
    out: *mut f64,
    out_len: usize,
) -> FgStatus {
    guard(|| {
        let m = &as_ref(model, "model")?.inner;
        let d = &as_ref(dataset, "dataset")?.inner;
        check_len("fg_siv", d.n_signals(), out_len)?;
        let sim = build_sim(m, d, &AttributionConfig::default())?;
        let siv = build_siv(&sim, None)?;
        as_slice_mut(out, out_len, "out")?.copy_from_slice(&siv.values);
        Ok(())
    })
}

/// Splits `dataset` (seeded by the configuration's seed), runs greedy selection with
/// subset limit `gamma` and returns the trace as JSON in `out_json` (release with
/// [`fg_string_free`]). `config_json` is a serialized selection configuration; NULL
/// selects default layer sizes and training settings.
///
/// # Safety
/// Handles must come from this library; `config_json` may be NULL or a
/// NUL-terminated string; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fg_select(
    dataset: *const FgDataset,
    gamma: usize,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> FgStatus {
    guard(|| {
        let d = &as_ref(dataset, "dataset")?.inner;
        if out_json.is_null() {
            return Err(Failure::Null("out_json"));
        }
        let cfg: SelectionConfig = if config_json.is_null() {
            SelectionConfig::new(
                Hyperparams::new(d.window_len(), d.n_signals(), d.n_classes()),
                TrainConfig::default(),
                0,
            )
        } else {
            serde_json::from_str(as_str(config_json, "config_json")?).map_err(Error::from)?
        };
        let split = filter_and_split(
            &d.clone().with_role(Role::All),
            &SplitConfig {
                seed: derive_seed(cfg.seed, stream::SPLIT),
                ..SplitConfig::default()
            },
        )?;
        let signals: Vec<usize> = (0..d.n_signals()).collect();
        let trace = fg_ssa(&split.train, &split.valid, &signals, gamma, &cfg)?;
        let json = CString::new(trace.to_json()?).map_err(|e| Error::Format(e.to_string()))?;
        *out_json = json.into_raw();
        Ok(())
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn fg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
