use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;

use bioqa_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

/// Take ownership of a library string.
unsafe fn take(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    bq_string_free(p);
    s
}

unsafe fn last_error() -> String {
    let p = bq_last_error_message();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

const DOCS: &str = r#"{"doc_id": "1", "title": "Aspirin and pain", "abstract": "Aspirin reduced pain."}
{"doc_id": "2", "title": "Statins", "abstract": "Statin therapy and myopathy."}
{"doc_id": "3", "title": "Aspirin dosing", "abstract": "Low dose aspirin in adults."}
not json
"#;

#[test]
fn corpus_index_search_round_trip() {
    unsafe {
        let corpus = bq_corpus_new();
        let (mut stored, mut rejected) = (0usize, 0usize);
        assert_eq!(bq_corpus_ingest_jsonl(corpus, c(DOCS).as_ptr(), &mut stored, &mut rejected), BqStatus::Ok);
        assert_eq!((stored, rejected), (3, 1));
        assert_eq!(bq_corpus_len(corpus), 3);

        let mut doc = ptr::null_mut();
        assert_eq!(bq_corpus_get(corpus, c("2").as_ptr(), &mut doc), BqStatus::Ok);
        let doc: serde_json::Value = serde_json::from_str(&take(doc)).unwrap();
        assert_eq!(doc["title"], "Statins");
        let mut missing = ptr::null_mut();
        assert_eq!(bq_corpus_get(corpus, c("9").as_ptr(), &mut missing), BqStatus::NotFound);
        assert!(missing.is_null());

        let mut index = ptr::null_mut();
        assert_eq!(bq_index_build(corpus, 1.2, 0.75, &mut index), BqStatus::Ok);
        assert_eq!(bq_index_doc_count(index), 3);

        let mut hits = ptr::null_mut();
        assert_eq!(bq_index_search(index, c("aspirin").as_ptr(), 10, &mut hits), BqStatus::Ok);
        let hits: Vec<serde_json::Value> = serde_json::from_str(&take(hits)).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h["doc_id"].as_str().unwrap()).collect();
        assert_eq!(ids.len(), 2);
        assert!(ids.contains(&"1") && ids.contains(&"3"));

        let dir = tempfile::tempdir().unwrap();
        let path = c(dir.path().to_str().unwrap());
        assert_eq!(bq_index_save(index, path.as_ptr()), BqStatus::Ok);
        assert_eq!(bq_corpus_save(corpus, path.as_ptr()), BqStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(bq_index_load(path.as_ptr(), &mut loaded), BqStatus::Ok);
        assert_eq!(bq_index_doc_count(loaded), 3);
        let mut reopened = ptr::null_mut();
        assert_eq!(bq_corpus_open(path.as_ptr(), &mut reopened), BqStatus::Ok);
        assert_eq!(bq_corpus_len(reopened), 3);

        bq_index_free(loaded);
        bq_index_free(index);
        bq_corpus_free(reopened);
        bq_corpus_free(corpus);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(bq_index_search(ptr::null(), c("x").as_ptr(), 1, &mut out), BqStatus::NullArgument);
        assert!(last_error().contains("index"));

        let corpus = bq_corpus_new();
        let mut index = ptr::null_mut();
        assert_eq!(bq_index_build(corpus, -1.0, 0.75, &mut index), BqStatus::InvalidInput);
        assert!(index.is_null());
        assert_eq!(bq_index_build(corpus, 1.2, 0.75, &mut index), BqStatus::Ok);
        assert_eq!(bq_index_search(index, c("a AND (").as_ptr(), 5, &mut out), BqStatus::InvalidQuery);
        assert!(last_error().contains("UNBALANCED_PAREN"));
        assert_eq!(bq_index_search(index, c("a").as_ptr(), 0, &mut out), BqStatus::InvalidInput);

        let bad = [0xffu8, 0];
        assert_eq!(bq_query_check(bad.as_ptr() as *const c_char, &mut out), BqStatus::InvalidUtf8);
        assert_eq!(bq_corpus_open(c("/nonexistent/bioqa").as_ptr(), ptr::null_mut()), BqStatus::NullArgument);

        bq_index_free(index);
        bq_corpus_free(corpus);
        bq_corpus_free(ptr::null_mut());
        bq_string_free(ptr::null_mut());
    }
}

#[test]
fn query_check_reports_canonical_form() {
    unsafe {
        let mut out = ptr::null_mut();
        assert_eq!(bq_query_check(c("aspirin pain~").as_ptr(), &mut out), BqStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["ok"], true);
        assert_eq!(v["canonical"], "(aspirin OR pain~)");

        assert_eq!(bq_query_check(c("\"open").as_ptr(), &mut out), BqStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["ok"], false);
        assert!(v["canonical"].is_null());
    }
}

#[test]
fn evaluate_files() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.json");
    let pred = dir.path().join("pred.json");
    std::fs::write(
        &gold,
        r#"{"questions": [
            {"id": "a", "type": "yesno", "body": "?", "exact_answer": "yes"},
            {"id": "b", "type": "factoid", "body": "?", "exact_answer": [["CFTR"]]},
            {"id": "c", "type": "list", "body": "?", "exact_answer": [["x"], ["y"]]}
        ]}"#,
    )
    .unwrap();
    std::fs::write(
        &pred,
        r#"{"questions": [
            {"id": "a", "type": "yesno", "exact_answer": "no"},
            {"id": "b", "type": "factoid", "exact_answer": [["tp53"], ["cftr"]]},
            {"id": "c", "type": "list", "exact_answer": [["x"]]}
        ]}"#,
    )
    .unwrap();
    unsafe {
        let mut out = ptr::null_mut();
        let (g, p) = (c(gold.to_str().unwrap()), c(pred.to_str().unwrap()));
        assert_eq!(bq_evaluate(g.as_ptr(), p.as_ptr(), &mut out), BqStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["per_type"]["yesno"]["value"], 0.0);
        assert_eq!(v["per_type"]["factoid"]["value"], 0.5);
        assert!((v["per_type"]["list"]["value"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-12);

        assert_eq!(bq_evaluate(p.as_ptr(), g.as_ptr(), &mut out), BqStatus::InvalidInput);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/bioqa.h")).unwrap();
    for name in [
        "BQ_STATUS_OK",
        "typedef struct BqCorpus BqCorpus",
        "bq_corpus_ingest_jsonl",
        "bq_index_search",
        "bq_query_check",
        "bq_evaluate",
        "bq_last_error_message",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
