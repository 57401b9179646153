//! C ABI over the `endef` library.
//!
//! Every fallible call returns an [`EndefStatus`]; on failure the message is
//! available from [`endef_last_error_message`] on the same thread. Handles
//! are opaque and must be released with their `_free` function. Strings
//! returned by the library are released with [`endef_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use endef::checkpoint::Checkpoint;
use endef::corpus::{EntitySource, Label, NewsPiece};
use endef::metrics::{self, PredictionSet};
use endef::recognizer::Gazetteer;
use endef::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndefStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    /// A metric needs both classes present.
    SingleClass = 6,
    /// The operation does not apply to this kind of checkpoint.
    WrongModelKind = 7,
    CheckpointVersion = 8,
    /// A Rust panic was caught at the boundary.
    Internal = 99,
}

fn status_of(e: &Error) -> EndefStatus {
    match e {
        Error::Io { .. } => EndefStatus::Io,
        Error::Parse { .. } | Error::Json(_) | Error::Config(_) => EndefStatus::Parse,
        Error::SingleClass { .. } => EndefStatus::SingleClass,
        Error::CheckpointVersion(_) => EndefStatus::CheckpointVersion,
        _ => EndefStatus::InvalidArgument,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(EndefStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard<F>(f: F) -> EndefStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EndefStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EndefStatus::Internal
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(EndefStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EndefStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn str_array(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<String>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    std::slice::from_raw_parts(p, n)
        .iter()
        .map(|&s| str_arg(s, what).map(str::to_owned))
        .collect()
}

unsafe fn predictions(scores: *const f64, labels: *const u8, n: usize) -> Result<PredictionSet, Failure> {
    if scores.is_null() {
        return Err(null("scores"));
    }
    if labels.is_null() {
        return Err(null("labels"));
    }
    let scores = std::slice::from_raw_parts(scores, n).to_vec();
    let labels = std::slice::from_raw_parts(labels, n)
        .iter()
        .map(|&l| Label::from_i64(l as i64))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictionSet::new(scores, labels)?)
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(EndefStatus::Internal, "string contains NUL".into()))
}

/// Library version, statically allocated; do not free.
#[no_mangle]
pub extern "C" fn endef_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copy of the last error message on this thread, or NULL when the last
/// call succeeded. Free with [`endef_string_free`].
#[no_mangle]
pub extern "C" fn endef_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| {
        e.borrow()
            .as_ref()
            .map_or(ptr::null_mut(), |c| c.clone().into_raw())
    })
}

/// # Safety
/// `s` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn endef_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A loaded checkpoint: two-branch or single encoder.
pub struct EndefModelHandle {
    checkpoint: Checkpoint,
}

/// Per-branch probabilities for one piece.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EndefCaseReport {
    pub p_entity: f64,
    pub p_detector: f64,
    pub p_fused: f64,
    pub p_debiased: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EndefEvalReport {
    pub macf1: f64,
    pub acc: f64,
    pub auc: f64,
    pub spauc: f64,
    pub f1_real: f64,
    pub f1_fake: f64,
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn endef_model_load(path: *const c_char, out: *mut *mut EndefModelHandle) -> EndefStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let checkpoint = Checkpoint::load(str_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(EndefModelHandle { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`endef_model_load`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn endef_model_free(model: *mut EndefModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// 1 for a two-branch checkpoint, 0 for a single encoder, -1 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn endef_model_is_two_branch(model: *const EndefModelHandle) -> i32 {
    match model.as_ref() {
        None => -1,
        Some(m) => matches!(m.checkpoint, Checkpoint::Endef(_)) as i32,
    }
}

unsafe fn piece_from(
    tokens: *const *const c_char,
    n_tokens: usize,
    entities: *const *const c_char,
    n_entities: usize,
) -> Result<NewsPiece, Failure> {
    Ok(NewsPiece {
        id: String::new(),
        tokens: str_array(tokens, n_tokens, "tokens")?,
        entities: str_array(entities, n_entities, "entities")?,
        label: Label::Real,
        timestamp: 0,
        entity_source: EntitySource::External,
    })
}

/// Debiased fake probability for one piece (the plain output for a single
/// encoder checkpoint). Entity strings may span several tokens.
///
/// # Safety
/// `model` must be live; `tokens` must hold `n_tokens` strings and
/// `entities` `n_entities` strings (may be NULL when the count is 0).
#[no_mangle]
pub unsafe extern "C" fn endef_model_predict(
    model: *const EndefModelHandle,
    tokens: *const *const c_char,
    n_tokens: usize,
    entities: *const *const c_char,
    n_entities: usize,
    out: *mut f64,
) -> EndefStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let piece = piece_from(tokens, n_tokens, entities, n_entities)?;
        *out = model.checkpoint.predict(&piece)?;
        Ok(())
    })
}

/// # Safety
/// As [`endef_model_predict`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn endef_model_case_report(
    model: *const EndefModelHandle,
    tokens: *const *const c_char,
    n_tokens: usize,
    entities: *const *const c_char,
    n_entities: usize,
    out: *mut EndefCaseReport,
) -> EndefStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let Checkpoint::Endef(m) = &model.checkpoint else {
            return Err(Failure(
                EndefStatus::WrongModelKind,
                "case reports need a two-branch checkpoint".into(),
            ));
        };
        let r = m.case_report(&piece_from(tokens, n_tokens, entities, n_entities)?)?;
        *out = EndefCaseReport {
            p_entity: r.p_entity,
            p_detector: r.p_detector,
            p_fused: r.p_fused,
            p_debiased: r.p_debiased,
        };
        Ok(())
    })
}

/// Labels are 0 (real) or 1 (fake).
///
/// # Safety
/// `scores` and `labels` must each hold `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn endef_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> EndefStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = metrics::roc_auc(&predictions(scores, labels, n)?)?;
        Ok(())
    })
}

/// Standardized partial AUC over false-positive rates up to `maxfpr`.
///
/// # Safety
/// As [`endef_roc_auc`].
#[no_mangle]
pub unsafe extern "C" fn endef_sp_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    maxfpr: f64,
    out: *mut f64,
) -> EndefStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = metrics::sp_auc(&predictions(scores, labels, n)?, maxfpr)?;
        Ok(())
    })
}

/// # Safety
/// As [`endef_roc_auc`].
#[no_mangle]
pub unsafe extern "C" fn endef_evaluate(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    threshold: f64,
    maxfpr: f64,
    out: *mut EndefEvalReport,
) -> EndefStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = predictions(scores, labels, n)?.with_threshold(threshold);
        let r = metrics::evaluate_with(&p, maxfpr)?;
        *out = EndefEvalReport {
            macf1: r.macf1,
            acc: r.acc,
            auc: r.auc,
            spauc: r.spauc,
            f1_real: r.f1_real,
            f1_fake: r.f1_fake,
        };
        Ok(())
    })
}

pub struct EndefGazetteer {
    inner: Gazetteer,
}

/// Loads one entity per line (first tab-separated column).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn endef_gazetteer_load(
    path: *const c_char,
    case_sensitive: bool,
    out: *mut *mut EndefGazetteer,
) -> EndefStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Gazetteer::load(str_arg(path, "path")?, case_sensitive)?;
        *out = Box::into_raw(Box::new(EndefGazetteer { inner }));
        Ok(())
    })
}

/// # Safety
/// `entries` must hold `n` strings and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn endef_gazetteer_new(
    entries: *const *const c_char,
    n: usize,
    case_sensitive: bool,
    out: *mut *mut EndefGazetteer,
) -> EndefStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inner = Gazetteer::new(str_array(entries, n, "entries")?, case_sensitive)?;
        *out = Box::into_raw(Box::new(EndefGazetteer { inner }));
        Ok(())
    })
}

/// # Safety
/// `g` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn endef_gazetteer_free(g: *mut EndefGazetteer) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Recognized entities as a JSON array of strings, in order of occurrence.
/// Free the result with [`endef_string_free`].
///
/// # Safety
/// `g` must be live, `tokens` hold `n_tokens` strings, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn endef_gazetteer_recognize(
    g: *const EndefGazetteer,
    tokens: *const *const c_char,
    n_tokens: usize,
    out_json: *mut *mut c_char,
) -> EndefStatus {
    guard(|| {
        let g = g.as_ref().ok_or_else(|| null("gazetteer"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        let found = g.inner.recognize(&str_array(tokens, n_tokens, "tokens")?);
        let json = serde_json::to_string(&found).map_err(|e| Failure::from(Error::from(e)))?;
        *out_json = into_c_string(json)?;
        Ok(())
    })
}
