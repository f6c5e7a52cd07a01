//! C ABI over the `kgte` core.
//!
//! Every fallible function returns a [`KgteStatus`]; on failure a message is
//! available from [`kgte_last_error`] on the same thread. Strings handed out
//! by the library are owned by the caller and released with
//! [`kgte_string_free`]. Index handles are released with [`kgte_index_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kgte::analysis::{linear_fit, log_param_fit};
use kgte::corpus::{build_kb, load_dataset, normalize_surface, DatasetFormat};
use kgte::encoder::{encoder_from_config, Encoder, EncoderConfig, DEFAULT_DIMENSION};
use kgte::evaluation::micro_f1;
use kgte::extraction::random_f1_closed_form;
use kgte::parsing::parse_triplets;
use kgte::retriever::Retriever;
use kgte::vector_index::{build_index, load_index_for, save_index, ExampleEmbedMode, NodeKind, VectorIndex};
use kgte::{Error, Triplet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KgteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Mismatch = 6,
    Remote = 7,
    Internal = 8,
    Panic = 9,
}

impl From<&Error> for KgteStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => KgteStatus::Io,
            Error::MalformedRecord { .. }
            | Error::Manifest { .. }
            | Error::IndexParse { .. }
            | Error::IndexVersion { .. }
            | Error::Json(_)
            | Error::Csv(_)
            | Error::InvalidResponse(_) => KgteStatus::Parse,
            Error::DimensionMismatch { .. }
            | Error::EncoderMismatch { .. }
            | Error::IndexKind { .. }
            | Error::Misaligned { .. } => KgteStatus::Mismatch,
            Error::Transport { .. } | Error::Api { .. } => KgteStatus::Remote,
            Error::EmptySplit { .. }
            | Error::EmptyKnowledgeBase
            | Error::InvalidArgument(_)
            | Error::EmptyText
            | Error::BudgetTooSmall { .. }
            | Error::Template(_)
            | Error::Fit(_) => KgteStatus::InvalidArgument,
            #[allow(unreachable_patterns)]
            _ => KgteStatus::Internal,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(KgteStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(KgteStatus::from(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(KgteStatus::Parse, e.to_string())
    }
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> KgteStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
            KgteStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("panic inside kgte".into());
            KgteStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(KgteStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(KgteStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn write_string(out: *mut *mut c_char, value: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(KgteStatus::NullPointer, "output pointer is null".into()));
    }
    let c = CString::new(value).map_err(|_| Failure(KgteStatus::Internal, "interior NUL in output".into()))?;
    *out = c.into_raw();
    Ok(())
}

fn check_out<T>(out: *mut T) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(KgteStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kgte_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next kgte call on the same thread.
#[no_mangle]
pub extern "C" fn kgte_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from a kgte function and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn kgte_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Canonical surface form of `input`.
///
/// # Safety
/// `input` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgte_normalize(input: *const c_char, out: *mut *mut c_char) -> KgteStatus {
    guard(|| {
        let s = str_arg(input, "input")?;
        write_string(out, normalize_surface(s))
    })
}

/// Parses generator output; writes a JSON object
/// `{"triplets": [[s,p,o],...], "malformed_lines": n, "truncated_to_max": b}`.
///
/// # Safety
/// `raw` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgte_parse_triplets_json(
    raw: *const c_char,
    max_triplets: usize,
    out: *mut *mut c_char,
) -> KgteStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        if max_triplets == 0 {
            return Err(Failure(KgteStatus::InvalidArgument, "max_triplets must be >= 1".into()));
        }
        let outcome = parse_triplets(raw, max_triplets);
        write_string(out, serde_json::to_string(&outcome)?)
    })
}

/// Micro-averaged scores. Both inputs are JSON arrays (one entry per
/// sentence) of arrays of `[s, p, o]`; writes the full report as JSON.
///
/// # Safety
/// Inputs must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgte_micro_f1_json(
    predictions: *const c_char,
    gold: *const c_char,
    out: *mut *mut c_char,
) -> KgteStatus {
    guard(|| {
        let pred: Vec<Vec<Triplet>> = serde_json::from_str(str_arg(predictions, "predictions")?)?;
        let gold: Vec<Vec<Triplet>> = serde_json::from_str(str_arg(gold, "gold")?)?;
        let report = micro_f1(&pred, &gold)?;
        write_string(out, report.to_json()?)
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KgteFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Least-squares fit of `y` on `x` (or on `ln x` when `log_x` is set).
///
/// # Safety
/// `xs` and `ys` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgte_linear_fit(
    xs: *const f64,
    ys: *const f64,
    n: usize,
    log_x: bool,
    out: *mut KgteFit,
) -> KgteStatus {
    guard(|| {
        check_out(out)?;
        if n > 0 && (xs.is_null() || ys.is_null()) {
            return Err(Failure(KgteStatus::NullPointer, "xs or ys is null".into()));
        }
        let points: Vec<(f64, f64)> = if n == 0 {
            Vec::new()
        } else {
            let xs = std::slice::from_raw_parts(xs, n);
            let ys = std::slice::from_raw_parts(ys, n);
            xs.iter().copied().zip(ys.iter().copied()).collect()
        };
        let fit = if log_x { log_param_fit(&points)? } else { linear_fit(&points)? };
        *out = KgteFit {
            slope: fit.slope,
            intercept: fit.intercept,
            r2: fit.r2,
            n_points: fit.n_points,
        };
        Ok(())
    })
}

/// `(p / n_kb)^n`; NaN when `n_kb` is 0.
#[no_mangle]
pub extern "C" fn kgte_random_f1_closed_form(p: f64, n_kb: usize, n: usize) -> f64 {
    if n_kb == 0 {
        return f64::NAN;
    }
    random_f1_closed_form(p, n_kb, n)
}

/// Opaque handle: a vector index together with the encoder that built it.
pub struct KgteIndex {
    index: VectorIndex,
    encoder: Box<dyn Encoder>,
}

fn hashed_config(dimension: usize) -> Result<EncoderConfig, Failure> {
    let d = if dimension == 0 { DEFAULT_DIMENSION } else { dimension };
    let config = EncoderConfig::hashed(d, 3, 5);
    config.validate()?;
    Ok(config)
}

unsafe fn write_handle(out: *mut *mut KgteIndex, handle: KgteIndex) {
    *out = Box::into_raw(Box::new(handle));
}

unsafe fn index_ref<'a>(idx: *const KgteIndex) -> Result<&'a KgteIndex, Failure> {
    idx.as_ref()
        .ok_or_else(|| Failure(KgteStatus::NullPointer, "index handle is null".into()))
}

/// Builds an index over the train + validation KB of a dataset manifest
/// with the hashed n-gram encoder. `kind` is "triplet" or "example";
/// `dimension` 0 selects the default.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgte_index_build(
    manifest: *const c_char,
    kind: *const c_char,
    dimension: usize,
    out: *mut *mut KgteIndex,
) -> KgteStatus {
    guard(|| {
        check_out(out)?;
        let manifest = str_arg(manifest, "manifest")?;
        let kind: NodeKind = str_arg(kind, "kind")?.parse()?;
        let config = hashed_config(dimension)?;
        let encoder = encoder_from_config(&config)?;
        let dataset = load_dataset(Path::new(manifest), DatasetFormat::Jsonl)?;
        let kb = build_kb(&dataset.train, &dataset.validation)?;
        let index = build_index(&kb, kind, ExampleEmbedMode::SentenceOnly, encoder.as_ref())?;
        write_handle(out, KgteIndex { index, encoder });
        Ok(())
    })
}

/// Loads an index file written by `kgte index` or [`kgte_index_save`].
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kgte_index_load(path: *const c_char, dimension: usize, out: *mut *mut KgteIndex) -> KgteStatus {
    guard(|| {
        check_out(out)?;
        let path = str_arg(path, "path")?;
        let config = hashed_config(dimension)?;
        let index = load_index_for(Path::new(path), &config)?;
        let encoder = encoder_from_config(&config)?;
        write_handle(out, KgteIndex { index, encoder });
        Ok(())
    })
}

/// # Safety
/// `idx` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kgte_index_save(idx: *const KgteIndex, path: *const c_char) -> KgteStatus {
    guard(|| {
        let idx = index_ref(idx)?;
        let path = str_arg(path, "path")?;
        save_index(&idx.index, Path::new(path))?;
        Ok(())
    })
}

/// Number of nodes; 0 for a NULL handle.
///
/// # Safety
/// `idx` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kgte_index_len(idx: *const KgteIndex) -> usize {
    idx.as_ref().map_or(0, |i| i.index.len())
}

/// Retrieves the context for `sentence` and writes it as JSON
/// `{"n_kb_requested": k, "mode": ..., "items": [{"node_id", "score", "item"}, ...]}`.
///
/// # Safety
/// `idx` must be a live handle; `sentence` NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kgte_index_retrieve_json(
    idx: *const KgteIndex,
    sentence: *const c_char,
    n_kb: usize,
    out: *mut *mut c_char,
) -> KgteStatus {
    guard(|| {
        let idx = index_ref(idx)?;
        let sentence = str_arg(sentence, "sentence")?;
        let retriever = Retriever::new(&idx.index, idx.encoder.as_ref())?;
        let context = retriever.retrieve(sentence, n_kb)?;
        write_string(out, serde_json::to_string(&context)?)
    })
}

/// Releases an index handle. NULL is ignored.
///
/// # Safety
/// `idx` must come from [`kgte_index_build`] or [`kgte_index_load`] and not
/// have been freed already.
#[no_mangle]
pub unsafe extern "C" fn kgte_index_free(idx: *mut KgteIndex) {
    if !idx.is_null() {
        drop(Box::from_raw(idx));
    }
}
