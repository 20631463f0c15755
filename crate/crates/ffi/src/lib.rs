//! C ABI over the corpus, index, query checker and evaluator.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `_free` function. Every fallible call returns a [`BqStatus`];
//! on failure [`bq_last_error_message`] describes the error for the calling
//! thread. Strings handed out by the library are NUL-terminated UTF-8 and
//! must be released with [`bq_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use bioqa::corpus::{Corpus, CorpusError};
use bioqa::eval::{evaluate, load_submission, load_testset};
use bioqa::index::{Bm25Index, Bm25Params, IndexError};
use bioqa::query::{parse_query, render_query, validate_query};
use serde_json::json;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BqStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    NotFound = 3,
    InvalidQuery = 4,
    Io = 5,
    InvalidInput = 6,
    Internal = 7,
}

/// Opaque corpus handle.
pub struct BqCorpus(Corpus);

/// Opaque index handle.
pub struct BqIndex(Bm25Index);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("NULs removed")));
}

struct Failure(BqStatus, String);

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        let status = match e {
            CorpusError::NotFound(_) => BqStatus::NotFound,
            CorpusError::Corrupt { .. } => BqStatus::InvalidInput,
            _ => BqStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<IndexError> for Failure {
    fn from(e: IndexError) -> Self {
        let status = match e {
            IndexError::InvalidQuery(_) => BqStatus::InvalidQuery,
            IndexError::Params(_) | IndexError::Limit(_) => BqStatus::InvalidInput,
            IndexError::NotFound(_) => BqStatus::NotFound,
            IndexError::Store { .. } => BqStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BqStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            BqStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(BqStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(BqStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `out` must be null or valid for one pointer write.
unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(BqStatus::NullArgument, "output pointer is null".into()));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// # Safety
/// `out` must be null or valid for one pointer write.
unsafe fn write_string(out: *mut *mut c_char, s: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure(BqStatus::NullArgument, "output pointer is null".into()));
    }
    let c = CString::new(s).map_err(|_| Failure(BqStatus::Internal, "output contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

/// # Safety
/// `p` must be null or a handle of the right type that has not been freed.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(BqStatus::NullArgument, format!("{what} handle is null")))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bq_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bq_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A new empty corpus.
#[no_mangle]
pub extern "C" fn bq_corpus_new() -> *mut BqCorpus {
    Box::into_raw(Box::new(BqCorpus(Corpus::new())))
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bq_corpus_open(dir: *const c_char, out: *mut *mut BqCorpus) -> BqStatus {
    guard(|| {
        let dir = read_str(dir, "dir")?;
        write_out(out, BqCorpus(Corpus::open(dir)?))
    })
}

/// Ingest line-delimited JSON records held in `jsonl`. Counts of stored and
/// rejected records are written to the non-null count pointers.
///
/// # Safety
/// `corpus` must be a live handle; `jsonl` a NUL-terminated string; the
/// count pointers null or valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bq_corpus_ingest_jsonl(
    corpus: *mut BqCorpus,
    jsonl: *const c_char,
    out_count: *mut usize,
    out_rejected: *mut usize,
) -> BqStatus {
    guard(|| {
        let c = corpus.as_mut().ok_or_else(|| Failure(BqStatus::NullArgument, "corpus handle is null".into()))?;
        let text = read_str(jsonl, "jsonl")?;
        let report = c.0.ingest(text.as_bytes(), "<ffi>")?;
        if !out_count.is_null() {
            *out_count = report.count;
        }
        if !out_rejected.is_null() {
            *out_rejected = report.rejected;
        }
        Ok(())
    })
}

/// # Safety
/// `corpus` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bq_corpus_save(corpus: *const BqCorpus, dir: *const c_char) -> BqStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        c.0.save(read_str(dir, "dir")?)?;
        Ok(())
    })
}

/// Number of documents, 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bq_corpus_len(corpus: *const BqCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.0.len())
}

/// The document as a JSON object `{"doc_id", "title", "abstract"}`.
///
/// # Safety
/// `corpus` must be a live handle; `doc_id` a NUL-terminated string; `out`
/// valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bq_corpus_get(
    corpus: *const BqCorpus,
    doc_id: *const c_char,
    out_json: *mut *mut c_char,
) -> BqStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        let doc = c.0.get(read_str(doc_id, "doc_id")?)?;
        write_string(out_json, serde_json::to_string(doc).expect("document serializes"))
    })
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bq_corpus_free(corpus: *mut BqCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Build a BM25 index over the corpus.
///
/// # Safety
/// `corpus` must be a live handle; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bq_index_build(corpus: *const BqCorpus, k1: f64, b: f64, out: *mut *mut BqIndex) -> BqStatus {
    guard(|| {
        let c = handle(corpus, "corpus")?;
        let index = Bm25Index::build(&c.0, Bm25Params::new(k1, b)?)?;
        write_out(out, BqIndex(index))
    })
}

/// # Safety
/// `dir` must be a NUL-terminated string; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bq_index_load(dir: *const c_char, out: *mut *mut BqIndex) -> BqStatus {
    guard(|| write_out(out, BqIndex(Bm25Index::load(read_str(dir, "dir")?)?)))
}

/// # Safety
/// `index` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bq_index_save(index: *const BqIndex, dir: *const c_char) -> BqStatus {
    guard(|| {
        handle(index, "index")?.0.save(read_str(dir, "dir")?)?;
        Ok(())
    })
}

/// Run a query; the result is a JSON array of `{"doc_id", "score",
/// "provenance"}` in rank order.
///
/// # Safety
/// `index` must be a live handle; `query` a NUL-terminated string; `out`
/// valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bq_index_search(
    index: *const BqIndex,
    query: *const c_char,
    limit: usize,
    out_json: *mut *mut c_char,
) -> BqStatus {
    guard(|| {
        let idx = handle(index, "index")?;
        let text = read_str(query, "query")?;
        let report = validate_query(text);
        if !report.ok {
            let codes: Vec<String> = report.error_codes().iter().map(|c| c.to_string()).collect();
            return Err(Failure(BqStatus::InvalidQuery, format!("query failed validation: {}", codes.join(", "))));
        }
        let ast = parse_query(text).map_err(|e| Failure(BqStatus::InvalidQuery, e.to_string()))?;
        let hits = idx.0.execute_query(&ast, limit)?;
        write_string(out_json, serde_json::to_string(&hits).expect("hits serialize"))
    })
}

/// Number of indexed documents, 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bq_index_doc_count(index: *const BqIndex) -> usize {
    index.as_ref().map_or(0, |i| i.0.doc_count())
}

/// # Safety
/// `index` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bq_index_free(index: *mut BqIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Validate a query string. The JSON result holds the validation report
/// and, when valid, the canonical rendering under `"canonical"`. An invalid
/// query is not a call failure: the status is OK and `ok` is false.
///
/// # Safety
/// `query` must be a NUL-terminated string; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bq_query_check(query: *const c_char, out_json: *mut *mut c_char) -> BqStatus {
    guard(|| {
        let text = read_str(query, "query")?;
        let report = validate_query(text);
        let canonical = if report.ok { parse_query(text).ok().map(|a| render_query(&a)) } else { None };
        let value = json!({ "ok": report.ok, "issues": report.issues, "canonical": canonical });
        write_string(out_json, value.to_string())
    })
}

/// Score a BioASQ submission file against a gold test set; the JSON result
/// is the evaluation report.
///
/// # Safety
/// Both paths must be NUL-terminated strings; `out` valid for writing.
#[no_mangle]
pub unsafe extern "C" fn bq_evaluate(
    gold_path: *const c_char,
    pred_path: *const c_char,
    out_json: *mut *mut c_char,
) -> BqStatus {
    guard(|| {
        let invalid = |e: bioqa::eval::EvalError| Failure(BqStatus::InvalidInput, e.to_string());
        let gold = load_testset(Path::new(read_str(gold_path, "gold_path")?)).map_err(invalid)?;
        let pred = load_submission(Path::new(read_str(pred_path, "pred_path")?)).map_err(invalid)?;
        let report = evaluate(&gold, &pred).map_err(invalid)?;
        write_string(out_json, serde_json::to_string(&report).expect("report serializes"))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guard_maps_errors_and_panics() {
        assert_eq!(guard(|| Ok(())), BqStatus::Ok);
        assert_eq!(guard(|| Err(Failure(BqStatus::Io, "disk".into()))), BqStatus::Io);
        let msg = unsafe { CStr::from_ptr(bq_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "disk");

        let hook = std::panic::take_hook();
        std::panic::set_hook(Box::new(|_| {}));
        let status = guard(|| panic!("boom"));
        std::panic::set_hook(hook);
        assert_eq!(status, BqStatus::Internal);
    }

    #[test]
    fn error_messages_drop_nul_bytes() {
        set_error("a\0b");
        let msg = unsafe { CStr::from_ptr(bq_last_error_message()) };
        assert_eq!(msg.to_str().unwrap(), "a b");
    }
}
