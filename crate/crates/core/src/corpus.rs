//! Title/abstract document store.
//!
//! Records arrive as line-delimited JSON objects with `doc_id`, `title` and
//! `abstract` fields. A corpus lives either in memory or in a directory
//! holding a single `documents.jsonl` file.

use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tokenize::count_tokens;

pub const DOCUMENTS_FILE: &str = "documents.jsonl";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read ingest source {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("document not found: {0}")]
    NotFound(String),
    #[error("corpus store {path}: {source}")]
    Store {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus store {path} line {line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, abstract_text: impl Into<String>) -> Self {
        Document { doc_id: doc_id.into(), title: title.into(), abstract_text: abstract_text.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_title_len: f64,
    pub avg_abstract_len: f64,
}

/// Outcome of one ingest call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    /// Non-blank lines read from the source.
    pub records: usize,
    /// Distinct doc_ids written by this ingest.
    pub count: usize,
    /// Records that overwrote an already stored doc_id.
    pub replaced: usize,
    pub rejected: usize,
    /// 1-based line numbers of rejected records.
    pub rejected_lines: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_documents(docs: impl IntoIterator<Item = Document>) -> Self {
        let mut corpus = Corpus::new();
        for doc in docs {
            corpus.upsert(doc);
        }
        corpus
    }

    /// Open a corpus directory. A missing directory or store file yields an
    /// empty corpus.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = dir.as_ref().join(DOCUMENTS_FILE);
        if !path.exists() {
            return Ok(Corpus::new());
        }
        let display = path.display().to_string();
        let file = File::open(&path).map_err(|source| CorpusError::Store { path: display.clone(), source })?;
        let mut corpus = Corpus::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Store { path: display.clone(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Corrupt {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            corpus.upsert(doc);
        }
        Ok(corpus)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        let store_err = |source| CorpusError::Store { path: dir.display().to_string(), source };
        fs::create_dir_all(dir).map_err(store_err)?;
        let file = File::create(dir.join(DOCUMENTS_FILE)).map_err(store_err)?;
        let mut out = BufWriter::new(file);
        for doc in &self.docs {
            let line = serde_json::to_string(doc).expect("document serializes");
            writeln!(out, "{line}").map_err(store_err)?;
        }
        out.flush().map_err(store_err)
    }

    /// Ingest line-delimited records from a file.
    pub fn ingest_path(&mut self, path: impl AsRef<Path>) -> Result<IngestReport, CorpusError> {
        let path = path.as_ref();
        let file =
            File::open(path).map_err(|source| CorpusError::Unreadable { path: path.display().to_string(), source })?;
        self.ingest(BufReader::new(file), &path.display().to_string())
    }

    /// Ingest line-delimited records. Malformed records are counted and
    /// skipped; a read failure aborts the whole ingest.
    pub fn ingest<R: BufRead>(&mut self, source: R, source_name: &str) -> Result<IngestReport, CorpusError> {
        let mut report = IngestReport::default();
        let mut written = HashSet::new();
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|source| CorpusError::Unreadable { path: source_name.to_string(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            report.records += 1;
            match parse_record(&line) {
                Some(doc) => {
                    written.insert(doc.doc_id.clone());
                    if self.upsert(doc) {
                        report.replaced += 1;
                    }
                }
                None => {
                    report.rejected += 1;
                    report.rejected_lines.push(i + 1);
                }
            }
        }
        report.count = written.len();
        Ok(report)
    }

    /// Insert or replace; returns true when an existing record was replaced.
    /// A replaced record keeps its original position in enumeration order.
    pub fn upsert(&mut self, doc: Document) -> bool {
        match self.by_id.get(&doc.doc_id) {
            Some(&slot) => {
                self.docs[slot] = doc;
                true
            }
            None => {
                self.by_id.insert(doc.doc_id.clone(), self.docs.len());
                self.docs.push(doc);
                false
            }
        }
    }

    pub fn get(&self, doc_id: &str) -> Result<&Document, CorpusError> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i]).ok_or_else(|| CorpusError::NotFound(doc_id.to_string()))
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.by_id.contains_key(doc_id)
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        let n = self.docs.len();
        if n == 0 {
            return CorpusStats { doc_count: 0, avg_title_len: 0.0, avg_abstract_len: 0.0 };
        }
        let (titles, abstracts) = self
            .docs
            .iter()
            .fold((0usize, 0usize), |(t, a), d| (t + count_tokens(&d.title), a + count_tokens(&d.abstract_text)));
        CorpusStats {
            doc_count: n,
            avg_title_len: titles as f64 / n as f64,
            avg_abstract_len: abstracts as f64 / n as f64,
        }
    }
}

fn parse_record(line: &str) -> Option<Document> {
    let Value::Object(map) = serde_json::from_str::<Value>(line).ok()? else {
        return None;
    };
    let doc_id = match map.get("doc_id")? {
        Value::String(s) if !s.trim().is_empty() => s.clone(),
        _ => return None,
    };
    let text_field = |name: &str| match map.get(name) {
        None | Some(Value::Null) => Some(String::new()),
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => None,
    };
    Some(Document { doc_id, title: text_field("title")?, abstract_text: text_field("abstract")? })
}
