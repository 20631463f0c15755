//! Two-field inverted index with BM25 scoring.
//!
//! Each field (title, abstract) keeps its own postings and length statistics.
//! A leaf scores `idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len / avg_len))`
//! per field with `idf = ln(1 + (N - df + 0.5) / (df + 0.5))`, summed over the
//! fields in scope. Documents are filtered by the boolean structure first and
//! scored by the non-negated leaves they match.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::query::{DocFreq, QueryAst};
use crate::tokenize::{token_spans, tokenize};

/// Upper bound on hits returned by one search.
pub const MAX_HITS: usize = 10_000;
/// Cap on vocabulary variants a fuzzy leaf expands to.
pub const MAX_FUZZY_VARIANTS: usize = 50;
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("result limit must be in 1..={MAX_HITS}, got {0}")]
    Limit(usize),
    #[error("invalid BM25 parameters: {0}")]
    Params(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("document not found: {0}")]
    NotFound(String),
    #[error("index store {path}: {message}")]
    Store { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Title,
    Abstract,
}

impl Field {
    pub const ALL: [Field; 2] = [Field::Title, Field::Abstract];

    pub fn as_str(self) -> &'static str {
        match self {
            Field::Title => "title",
            Field::Abstract => "abstract",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self, IndexError> {
        let p = Bm25Params { k1, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), IndexError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(IndexError::Params(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(IndexError::Params(format!("b must be in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Where a scored document came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Bm25,
    Reranked,
    Fallback(String),
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Bm25 => f.write_str("bm25"),
            Provenance::Reranked => f.write_str("reranked"),
            Provenance::Fallback(source) => write!(f, "fallback:{source}"),
        }
    }
}

impl Serialize for Provenance {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Provenance {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "bm25" => Ok(Provenance::Bm25),
            "reranked" => Ok(Provenance::Reranked),
            _ => s
                .strip_prefix("fallback:")
                .map(|name| Provenance::Fallback(name.to_string()))
                .ok_or_else(|| serde::de::Error::custom(format!("unknown provenance {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
    pub provenance: Provenance,
}

/// Sort by descending score, ties by ascending doc_id.
pub fn sort_scored(docs: &mut [ScoredDoc]) {
    docs.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
    pub positions: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct FieldIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    lengths: Vec<u32>,
    avg_len: f64,
}

impl FieldIndex {
    fn build<'a>(texts: impl Iterator<Item = &'a str>) -> Self {
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut lengths = Vec::new();
        for (doc, text) in texts.enumerate() {
            let doc = doc as u32;
            let mut len = 0u32;
            for (pos, span) in token_spans(text).enumerate() {
                len += 1;
                let list = postings.entry(span.text).or_default();
                match list.last_mut() {
                    Some(p) if p.doc == doc => {
                        p.tf += 1;
                        p.positions.push(pos as u32);
                    }
                    _ => list.push(Posting { doc, tf: 1, positions: vec![pos as u32] }),
                }
            }
            lengths.push(len);
        }
        let avg_len = if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().map(|&l| l as f64).sum::<f64>() / lengths.len() as f64
        };
        FieldIndex { postings, lengths, avg_len }
    }
}

/// Per-document score of one leaf, only for documents it matches.
type LeafHits = HashMap<u32, f64>;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    title: FieldIndex,
    #[serde(rename = "abstract")]
    abstract_field: FieldIndex,
    #[serde(skip)]
    by_id: HashMap<String, u32>,
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self, IndexError> {
        params.validate()?;
        let docs = corpus.documents();
        let mut index = Bm25Index {
            params,
            doc_ids: docs.iter().map(|d| d.doc_id.clone()).collect(),
            title: FieldIndex::build(docs.iter().map(|d| d.title.as_str())),
            abstract_field: FieldIndex::build(docs.iter().map(|d| d.abstract_text.as_str())),
            by_id: HashMap::new(),
        };
        index.rebuild_lookup();
        Ok(index)
    }

    fn rebuild_lookup(&mut self) {
        self.by_id = self.doc_ids.iter().enumerate().map(|(i, id)| (id.clone(), i as u32)).collect();
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn posting_list_count(&self) -> usize {
        self.title.postings.len() + self.abstract_field.postings.len()
    }

    pub fn postings(&self, term: &str, field: Field) -> &[Posting] {
        self.field(field).postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn avg_field_len(&self, field: Field) -> f64 {
        self.field(field).avg_len
    }

    fn field(&self, field: Field) -> &FieldIndex {
        match field {
            Field::Title => &self.title,
            Field::Abstract => &self.abstract_field,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), IndexError> {
        let dir = dir.as_ref();
        let store = |message: String| IndexError::Store { path: dir.display().to_string(), message };
        fs::create_dir_all(dir).map_err(|e| store(e.to_string()))?;
        let file = File::create(dir.join(INDEX_FILE)).map_err(|e| store(e.to_string()))?;
        serde_json::to_writer(BufWriter::new(file), self).map_err(|e| store(e.to_string()))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = dir.as_ref().join(INDEX_FILE);
        let store = |message: String| IndexError::Store { path: path.display().to_string(), message };
        let file = File::open(&path).map_err(|e| store(e.to_string()))?;
        let mut index: Bm25Index = serde_json::from_reader(BufReader::new(file)).map_err(|e| store(e.to_string()))?;
        index.params.validate()?;
        index.rebuild_lookup();
        Ok(index)
    }

    /// Documents satisfying `query`, best first, at most `limit` of them.
    pub fn execute_query(&self, query: &QueryAst, limit: usize) -> Result<Vec<ScoredDoc>, IndexError> {
        if limit == 0 || limit > MAX_HITS {
            return Err(IndexError::Limit(limit));
        }
        let scores = self.evaluate(query)?;
        let mut hits: Vec<ScoredDoc> = scores
            .into_iter()
            .map(|(doc, score)| ScoredDoc {
                doc_id: self.doc_ids[doc as usize].clone(),
                score,
                provenance: Provenance::Bm25,
            })
            .collect();
        sort_scored(&mut hits);
        hits.truncate(limit);
        Ok(hits)
    }

    /// Score `execute_query` would give `doc_id`; 0.0 when it does not match.
    pub fn score_document(&self, query: &QueryAst, doc_id: &str) -> Result<f64, IndexError> {
        let doc = *self.by_id.get(doc_id).ok_or_else(|| IndexError::NotFound(doc_id.to_string()))?;
        Ok(self.evaluate(query)?.into_iter().find(|&(d, _)| d == doc).map_or(0.0, |(_, s)| s))
    }

    fn evaluate(&self, query: &QueryAst) -> Result<Vec<(u32, f64)>, IndexError> {
        query.check().map_err(|e| IndexError::InvalidQuery(e.to_string()))?;
        let n = self.doc_count();
        let mut positive = Vec::new();
        let matched = self.eval_node(query, false, &mut positive);
        let mut totals = vec![0.0f64; n];
        for hits in &positive {
            let mut docs: Vec<_> = hits.iter().collect();
            docs.sort_unstable_by_key(|(d, _)| **d);
            for (&doc, &s) in docs {
                totals[doc as usize] += s;
            }
        }
        Ok((0..n as u32).filter(|&d| matched[d as usize]).map(|d| (d, totals[d as usize])).collect())
    }

    fn eval_node(&self, node: &QueryAst, negated: bool, positive: &mut Vec<LeafHits>) -> Vec<bool> {
        let n = self.doc_count();
        match node {
            QueryAst::Term { .. } | QueryAst::Phrase { .. } => {
                let hits = self.leaf_hits(node);
                let mut matched = vec![false; n];
                for &d in hits.keys() {
                    matched[d as usize] = true;
                }
                if !negated {
                    positive.push(hits);
                }
                matched
            }
            QueryAst::Not(child) => self.eval_node(child, true, positive).into_iter().map(|m| !m).collect(),
            QueryAst::And(children) => {
                let mut acc = vec![true; n];
                for c in children {
                    for (a, m) in acc.iter_mut().zip(self.eval_node(c, negated, positive)) {
                        *a &= m;
                    }
                }
                acc
            }
            QueryAst::Or(children) => {
                let mut acc = vec![false; n];
                for c in children {
                    for (a, m) in acc.iter_mut().zip(self.eval_node(c, negated, positive)) {
                        *a |= m;
                    }
                }
                acc
            }
        }
    }

    /// Token alternatives per slot for a leaf, and the field scope.
    fn leaf_slots(&self, leaf: &QueryAst) -> (Vec<Vec<String>>, Option<Field>) {
        match leaf {
            QueryAst::Term { text, field, fuzzy } => {
                let slots = tokenize(text)
                    .into_iter()
                    .map(|t| if *fuzzy { self.fuzzy_variants(&t, *field) } else { vec![t] })
                    .collect();
                (slots, *field)
            }
            QueryAst::Phrase { tokens, field } => (tokens.iter().map(|t| vec![t.clone()]).collect(), *field),
            _ => unreachable!("leaf_slots called on an inner node"),
        }
    }

    /// Vocabulary terms within one edit (Damerau) of `token`, closest first,
    /// capped at [`MAX_FUZZY_VARIANTS`].
    pub fn fuzzy_variants(&self, token: &str, field: Option<Field>) -> Vec<String> {
        let fields: &[Field] = match field {
            Some(Field::Title) => &[Field::Title],
            Some(Field::Abstract) => &[Field::Abstract],
            None => &Field::ALL,
        };
        let mut found: Vec<(u8, &str)> = Vec::new();
        let mut seen = HashSet::new();
        for &f in fields {
            for term in self.field(f).postings.keys() {
                if seen.contains(term.as_str()) {
                    continue;
                }
                if let Some(d) = edit_distance_at_most_one(token, term) {
                    seen.insert(term.as_str());
                    found.push((d, term));
                }
            }
        }
        found.sort_unstable();
        let mut variants: Vec<String> =
            found.into_iter().take(MAX_FUZZY_VARIANTS).map(|(_, t)| t.to_string()).collect();
        if variants.is_empty() {
            variants.push(token.to_string());
        }
        variants
    }

    fn leaf_hits(&self, leaf: &QueryAst) -> LeafHits {
        let (slots, scope) = self.leaf_slots(leaf);
        let fields: &[Field] = match scope {
            Some(Field::Title) => &[Field::Title],
            Some(Field::Abstract) => &[Field::Abstract],
            None => &Field::ALL,
        };
        let mut hits = LeafHits::new();
        for &f in fields {
            let tfs = self.slot_frequencies(&slots, f);
            if tfs.is_empty() {
                continue;
            }
            let fi = self.field(f);
            let idf = idf(self.doc_count(), tfs.len());
            for (doc, tf) in tfs {
                let s = idf * tf_norm(tf, fi.lengths[doc as usize], fi.avg_len, self.params);
                *hits.entry(doc).or_insert(0.0) += s;
            }
        }
        hits
    }

    /// Per document: number of positions where slot i's alternatives occur
    /// at consecutive offsets.
    fn slot_frequencies(&self, slots: &[Vec<String>], field: Field) -> BTreeMap<u32, u32> {
        let fi = self.field(field);
        let positions_for = |alts: &Vec<String>| -> BTreeMap<u32, Vec<u32>> {
            let mut by_doc: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
            for alt in alts {
                for p in fi.postings.get(alt).map(Vec::as_slice).unwrap_or(&[]) {
                    by_doc.entry(p.doc).or_default().extend(&p.positions);
                }
            }
            for v in by_doc.values_mut() {
                v.sort_unstable();
                v.dedup();
            }
            by_doc
        };
        let mut out = BTreeMap::new();
        if slots.is_empty() {
            return out;
        }
        let per_slot: Vec<BTreeMap<u32, Vec<u32>>> = slots.iter().map(positions_for).collect();
        for (&doc, starts) in &per_slot[0] {
            let tf = starts
                .iter()
                .filter(|&&p| {
                    per_slot[1..].iter().enumerate().all(|(i, slot)| {
                        slot.get(&doc).is_some_and(|pos| pos.binary_search(&(p + i as u32 + 1)).is_ok())
                    })
                })
                .count() as u32;
            if tf > 0 {
                out.insert(doc, tf);
            }
        }
        out
    }
}

impl DocFreq for Bm25Index {
    fn doc_freq(&self, token: &str, field: Option<Field>) -> usize {
        match field {
            Some(f) => self.postings(token, f).len(),
            None => {
                let docs: HashSet<u32> =
                    Field::ALL.iter().flat_map(|&f| self.postings(token, f).iter().map(|p| p.doc)).collect();
                docs.len()
            }
        }
    }
}

pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub fn tf_norm(tf: u32, len: u32, avg_len: f64, params: Bm25Params) -> f64 {
    let tf = tf as f64;
    let ratio = if avg_len > 0.0 { len as f64 / avg_len } else { 0.0 };
    tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * ratio))
}

/// `Some(distance)` when the optimal-string-alignment distance is 0 or 1.
pub fn edit_distance_at_most_one(a: &str, b: &str) -> Option<u8> {
    if a == b {
        return Some(0);
    }
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (la, lb) = (a.len(), b.len());
    if la.abs_diff(lb) > 1 {
        return None;
    }
    let prefix = a.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let ok = if la == lb {
        let rest_a = &a[prefix + 1..];
        let rest_b = &b[prefix + 1..];
        // substitution
        rest_a == rest_b
            // adjacent transposition
            || (prefix + 1 < la
                && a[prefix] == b[prefix + 1]
                && a[prefix + 1] == b[prefix]
                && a[prefix + 2..] == b[prefix + 2..])
    } else if la > lb {
        a[prefix + 1..] == b[prefix..]
    } else {
        a[prefix..] == b[prefix + 1..]
    };
    ok.then_some(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::query::parse_query;

    fn corpus(docs: &[(&str, &str, &str)]) -> Corpus {
        Corpus::from_documents(docs.iter().map(|(i, t, a)| Document::new(*i, *t, *a)))
    }

    #[test]
    fn empty_corpus_is_valid() {
        let idx = Bm25Index::build(&Corpus::new(), Bm25Params::default()).unwrap();
        assert_eq!(idx.posting_list_count(), 0);
        assert!(idx.execute_query(&QueryAst::term("x"), 10).unwrap().is_empty());
    }

    #[test]
    fn postings_for_repeated_token() {
        let idx = Bm25Index::build(&corpus(&[("d", "", "aspirin aspirin pain")]), Bm25Params::default()).unwrap();
        assert_eq!(idx.postings("aspirin", Field::Abstract), &[Posting { doc: 0, tf: 2, positions: vec![0, 1] }]);
        assert_eq!(idx.postings("pain", Field::Abstract)[0].tf, 1);
        assert!(idx.postings("aspirin", Field::Title).is_empty());
    }

    #[test]
    fn limit_contract() {
        let idx = Bm25Index::build(&corpus(&[("d", "a", "b")]), Bm25Params::default()).unwrap();
        assert!(matches!(idx.execute_query(&QueryAst::term("a"), 0), Err(IndexError::Limit(0))));
        assert!(matches!(idx.execute_query(&QueryAst::term("a"), MAX_HITS + 1), Err(IndexError::Limit(_))));
        assert!(idx.execute_query(&QueryAst::term("a"), MAX_HITS).is_ok());
    }

    #[test]
    fn pure_negation_rejected_before_scoring() {
        let idx = Bm25Index::build(&corpus(&[("d", "a", "b")]), Bm25Params::default()).unwrap();
        let q = QueryAst::negate(QueryAst::term("a"));
        assert!(matches!(idx.execute_query(&q, 10), Err(IndexError::InvalidQuery(_))));
    }

    #[test]
    fn boolean_structure_filters() {
        let c = corpus(&[
            ("a", "aspirin", "heart attack prevention"),
            ("b", "ibuprofen", "attack of the heart"),
            ("c", "aspirin", "pain relief"),
        ]);
        let idx = Bm25Index::build(&c, Bm25Params::default()).unwrap();
        let ids = |q: &str| -> Vec<String> {
            idx.execute_query(&parse_query(q).unwrap(), 10).unwrap().into_iter().map(|d| d.doc_id).collect()
        };
        assert_eq!(ids("\"heart attack\""), vec!["a"]);
        assert_eq!(ids("aspirin AND NOT pain"), vec!["a"]);
        let mut both = ids("title:aspirin");
        both.sort();
        assert_eq!(both, vec!["a", "c"]);
        assert!(ids("abstract:aspirin").is_empty());
        assert_eq!(ids("ibuprofn~"), vec!["b"]);
        assert!(ids("ibuprofn").is_empty());
    }

    #[test]
    fn score_document_matches_execute() {
        let c = corpus(&[("a", "x y", "x x z"), ("b", "y", "z"), ("c", "", "")]);
        let idx = Bm25Index::build(&c, Bm25Params::default()).unwrap();
        let q = parse_query("x OR z").unwrap();
        for hit in idx.execute_query(&q, 10).unwrap() {
            assert_eq!(idx.score_document(&q, &hit.doc_id).unwrap(), hit.score);
        }
        assert_eq!(idx.score_document(&q, "c").unwrap(), 0.0);
        assert!(matches!(idx.score_document(&q, "nope"), Err(IndexError::NotFound(_))));
    }

    #[test]
    fn edit_distance_cases() {
        assert_eq!(edit_distance_at_most_one("abc", "abc"), Some(0));
        assert_eq!(edit_distance_at_most_one("abc", "abd"), Some(1));
        assert_eq!(edit_distance_at_most_one("abc", "acb"), Some(1));
        assert_eq!(edit_distance_at_most_one("abc", "ab"), Some(1));
        assert_eq!(edit_distance_at_most_one("ab", "cab"), Some(1));
        assert_eq!(edit_distance_at_most_one("abc", "bca"), None);
        assert_eq!(edit_distance_at_most_one("abcd", "ab"), None);
    }

    #[test]
    fn params_validated() {
        assert!(Bm25Params::new(0.0, 0.5).is_err());
        assert!(Bm25Params::new(1.2, 1.5).is_err());
        assert!(Bm25Params::new(1.2, 0.0).is_ok());
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(&[("a", "x y", "x x z"), ("b", "y", "z")]);
        let idx = Bm25Index::build(&c, Bm25Params::default()).unwrap();
        idx.save(dir.path()).unwrap();
        let back = Bm25Index::load(dir.path()).unwrap();
        let q = parse_query("x OR y").unwrap();
        assert_eq!(idx.execute_query(&q, 10).unwrap(), back.execute_query(&q, 10).unwrap());
    }
}
