//! C ABI over `tabdro`.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free`. Every fallible call returns a
//! [`TabdroStatus`]; on failure [`tabdro_last_error`] describes it.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use tabdro::data::EncodedDataset;
use tabdro::ensemble::{predict, Backbone, Classifier};
use tabdro::model::{load_checkpoint, ModelParams};
use tabdro::pipeline::{run_pipeline, PipelineConfig, RunOptions};
use tabdro::robust::ModelBank;
use tabdro::Error;

/// Status codes. 2, 3 and 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabdroStatus {
    Ok = 0,
    Config = 2,
    Data = 3,
    Numeric = 4,
    NullPointer = 10,
    InvalidUtf8 = 11,
    Panic = 12,
}

/// A loaded model checkpoint.
pub struct TabdroModel {
    inner: ModelParams,
}

/// A loaded model bank: base model plus one specialized model per
/// categorical feature.
pub struct TabdroBank {
    inner: ModelBank,
}

/// A loaded downstream classifier.
pub struct TabdroClassifier {
    inner: Classifier,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TabdroStatus, msg: impl Into<String>) -> TabdroStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> TabdroStatus {
    let status = match e.exit_code() {
        2 => TabdroStatus::Config,
        4 => TabdroStatus::Numeric,
        _ => TabdroStatus::Data,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> TabdroStatus) -> TabdroStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(TabdroStatus::Panic, "internal panic"),
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, TabdroStatus> {
    if p.is_null() {
        return Err(fail(TabdroStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TabdroStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tabdro_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tabdro_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint directory (`checkpoint.json` + `params.bin`).
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tabdro_model_load(dir: *const c_char, out: *mut *mut TabdroModel) -> TabdroStatus {
    guard(|| {
        let dir = try_ffi!(text(dir, "dir"));
        if out.is_null() {
            return fail(TabdroStatus::NullPointer, "out is null");
        }
        match load_checkpoint(&PathBuf::from(dir)) {
            Ok((m, _)) => {
                *out = Box::into_raw(Box::new(TabdroModel { inner: m }));
                TabdroStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `model` must come from [`tabdro_model_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tabdro_model_free(model: *mut TabdroModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tabdro_model_latent_dim(model: *const TabdroModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.d)
}

/// Number of categorical features, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tabdro_model_num_categorical(model: *const TabdroModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.k())
}

/// Number of continuous features, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tabdro_model_num_continuous(model: *const TabdroModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.c())
}

/// Index of `value` in the vocabulary of categorical feature `feature`.
///
/// # Safety
/// Strings must be NUL-terminated; `model` live; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tabdro_model_category_index(
    model: *const TabdroModel,
    feature: *const c_char,
    value: *const c_char,
    out: *mut u32,
) -> TabdroStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(TabdroStatus::NullPointer, "model is null");
        };
        let feature = try_ffi!(text(feature, "feature"));
        let value = try_ffi!(text(value, "value"));
        if out.is_null() {
            return fail(TabdroStatus::NullPointer, "out is null");
        }
        let schema = &m.inner.schema;
        let Some(j) = schema.categorical_index(feature) else {
            return fail(TabdroStatus::Data, format!("no categorical feature named {feature:?}"));
        };
        match schema.vocabulary(j).unwrap_or_default().iter().position(|v| v == value) {
            Some(i) => {
                *out = i as u32;
                TabdroStatus::Ok
            }
            None => fail(TabdroStatus::Data, format!("{value:?} is not a category of {feature:?}")),
        }
    })
}

/// Loads a model bank directory.
///
/// # Safety
/// `dir` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tabdro_bank_load(dir: *const c_char, out: *mut *mut TabdroBank) -> TabdroStatus {
    guard(|| {
        let dir = try_ffi!(text(dir, "dir"));
        if out.is_null() {
            return fail(TabdroStatus::NullPointer, "out is null");
        }
        match ModelBank::load(&PathBuf::from(dir)) {
            Ok(b) => {
                *out = Box::into_raw(Box::new(TabdroBank { inner: b }));
                TabdroStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `bank` must come from [`tabdro_bank_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tabdro_bank_free(bank: *mut TabdroBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Number of specialized models, or 0 for a null handle.
///
/// # Safety
/// `bank` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tabdro_bank_num_features(bank: *const TabdroBank) -> usize {
    bank.as_ref().map_or(0, |b| b.inner.k())
}

/// Loads a classifier JSON file.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn tabdro_classifier_load(
    path: *const c_char,
    out: *mut *mut TabdroClassifier,
) -> TabdroStatus {
    guard(|| {
        let path = try_ffi!(text(path, "path"));
        if out.is_null() {
            return fail(TabdroStatus::NullPointer, "out is null");
        }
        match Classifier::load(&PathBuf::from(path)) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(TabdroClassifier { inner: c }));
                TabdroStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `clf` must come from [`tabdro_classifier_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn tabdro_classifier_free(clf: *mut TabdroClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// Scores `n_rows` encoded rows.
///
/// Pass exactly one of `model` (base-mode classifier) or `bank` (bank-mode
/// classifier). `cat` is row-major `n_rows × n_cat` category indices,
/// `cont` row-major `n_rows × n_cont` standardized values (may be null when
/// `n_cont` is 0). `scores_out` receives `n_rows` probabilities; `j_star_out`,
/// if not null, receives the routed feature index per row, or -1.
///
/// # Safety
/// All buffers must hold the stated number of elements.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tabdro_predict(
    model: *const TabdroModel,
    bank: *const TabdroBank,
    clf: *const TabdroClassifier,
    cat: *const u32,
    cont: *const f64,
    n_rows: usize,
    n_cat: usize,
    n_cont: usize,
    scores_out: *mut f64,
    j_star_out: *mut i64,
) -> TabdroStatus {
    guard(|| {
        let Some(clf) = clf.as_ref() else {
            return fail(TabdroStatus::NullPointer, "clf is null");
        };
        let (backbone, schema) = match (model.as_ref(), bank.as_ref()) {
            (Some(m), None) => (Backbone::Base(&m.inner), m.inner.schema.clone()),
            (None, Some(b)) => (
                Backbone::Bank {
                    bank: &b.inner,
                    routing: clf.inner.routing.unwrap_or_default(),
                },
                b.inner.base.schema.clone(),
            ),
            _ => return fail(TabdroStatus::Config, "pass exactly one of model and bank"),
        };
        if scores_out.is_null() || (cat.is_null() && n_rows * n_cat > 0) || (cont.is_null() && n_rows * n_cont > 0)
        {
            return fail(TabdroStatus::NullPointer, "input or output buffer is null");
        }
        if n_cat != schema.k() || n_cont != schema.c() {
            return fail(
                TabdroStatus::Data,
                format!(
                    "rows have {n_cat} categorical and {n_cont} continuous values, model expects {} and {}",
                    schema.k(),
                    schema.c()
                ),
            );
        }
        let slice = |p: *const u32, len: usize| if len == 0 { &[][..] } else { std::slice::from_raw_parts(p, len) };
        let cat_v = slice(cat, n_rows * n_cat).to_vec();
        let cont_v = if n_rows * n_cont == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(cont, n_rows * n_cont).to_vec()
        };
        let ds = match EncodedDataset::new(
            Arc::clone(&schema),
            cat_v,
            cont_v,
            vec![0; n_rows],
            (0..n_rows as u64).collect(),
        ) {
            Ok(d) => d,
            Err(e) => return from_error(e),
        };
        let preds = match predict(backbone, &clf.inner, &ds) {
            Ok(p) => p,
            Err(e) => return from_error(e),
        };
        std::slice::from_raw_parts_mut(scores_out, n_rows).copy_from_slice(&preds.scores);
        if !j_star_out.is_null() {
            let out = std::slice::from_raw_parts_mut(j_star_out, n_rows);
            for (i, o) in out.iter_mut().enumerate() {
                *o = preds.j_star.get(i).copied().flatten().map_or(-1, |j| j as i64);
            }
        }
        TabdroStatus::Ok
    })
}

/// Area under the ROC curve of `scores` against 0/1 `labels`.
///
/// # Safety
/// Both arrays must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tabdro_auroc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> TabdroStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            return fail(TabdroStatus::NullPointer, "argument is null");
        }
        let s = std::slice::from_raw_parts(scores, n);
        let y = std::slice::from_raw_parts(labels, n);
        match tabdro::eval::auroc(s, y) {
            Ok(a) => {
                *out = a;
                TabdroStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Runs the full pipeline. `config_json` is a JSON config document or null
/// for defaults; `out_dir`, if not null, replaces its output directory.
///
/// # Safety
/// Non-null strings must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tabdro_run_pipeline(config_json: *const c_char, out_dir: *const c_char) -> TabdroStatus {
    guard(|| {
        let doc = if config_json.is_null() {
            "{}"
        } else {
            try_ffi!(text(config_json, "config_json"))
        };
        let mut overrides = Vec::new();
        if !out_dir.is_null() {
            overrides.push(("out_dir".to_string(), try_ffi!(text(out_dir, "out_dir")).to_string()));
        }
        let cfg = match PipelineConfig::from_json(doc, &overrides) {
            Ok(c) => c,
            Err(e) => return from_error(e),
        };
        match run_pipeline(&cfg, RunOptions::default()) {
            Ok(_) => TabdroStatus::Ok,
            Err(e) => from_error(e),
        }
    })
}
