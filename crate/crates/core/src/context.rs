//! Context assembly under a token budget.
//!
//! Three strategies pick text from ranked sources: plain truncation at a
//! sentence boundary, question-overlap sentence extraction, and k-means
//! clustering of sentence embeddings with nearest-to-centroid picks. When
//! everything fits, all strategies return the sources unchanged.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rerank::{Embedder, RerankError};
use crate::tokenize::{count_tokens, token_spans, truncate_to_tokens};

pub const KMEANS_SEED: u64 = 42;
pub const KMEANS_MAX_K: usize = 8;
pub const KMEANS_MAX_ITERS: usize = 25;

const SOURCE_SEPARATOR: &str = "\n\n";
const SENTENCE_SEPARATOR: &str = "\n";

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("context budget must be positive")]
    ZeroBudget,
    #[error("sentence embedding failed: {0}")]
    Embedding(#[from] RerankError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    RetrievedDocs,
    ProvidedSnippets,
    FullAbstracts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    SimpleTruncation,
    Extractive,
    Kmeans,
}

/// One ranked input. Provenance ranges index into [`Source::body`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Source {
    pub doc_id: String,
    pub title: String,
    pub text: String,
}

impl Source {
    pub fn new(doc_id: impl Into<String>, title: impl Into<String>, text: impl Into<String>) -> Self {
        Source { doc_id: doc_id.into(), title: title.into(), text: text.into() }
    }

    /// Title on its own line followed by the text; just the text when the
    /// title is empty.
    pub fn body(&self) -> String {
        if self.title.trim().is_empty() {
            self.text.clone()
        } else if self.text.is_empty() {
            self.title.clone()
        } else {
            format!("{}\n{}", self.title, self.text)
        }
    }
}

/// Byte range `start..end` of source `doc_id`'s body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SpanRef {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContextBundle {
    pub mode: ContextMode,
    pub strategy: Strategy,
    pub budget_tokens: usize,
    pub text: String,
    pub provenance: Vec<SpanRef>,
    /// No source had any text.
    pub insufficient: bool,
}

impl ContextBundle {
    pub fn is_empty(&self) -> bool {
        self.text.trim().is_empty()
    }

    pub fn token_count(&self) -> usize {
        count_tokens(&self.text)
    }
}

#[derive(Debug, Clone)]
struct Sentence {
    source: usize,
    start: usize,
    end: usize,
    tokens: usize,
}

/// Sentence byte ranges: a sentence ends after `.`, `!` or `?` followed by
/// whitespace, or at a line break. Ranges are trimmed and never empty.
pub fn sentence_spans(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let boundary = match c {
            '\n' | '\r' => Some(i),
            '.' | '!' | '?' => match chars.peek() {
                Some(&(_, n)) if n.is_whitespace() => Some(i + c.len_utf8()),
                None => Some(i + c.len_utf8()),
                _ => None,
            },
            _ => None,
        };
        if let Some(end) = boundary {
            push_trimmed(text, start, end, &mut out);
            start = end;
        }
    }
    push_trimmed(text, start, text.len(), &mut out);
    out
}

fn push_trimmed(text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead + trail < slice.len() {
        out.push((start + lead, end - trail));
    }
}

pub fn assemble_context(
    sources: &[Source],
    mode: ContextMode,
    strategy: Strategy,
    budget_tokens: usize,
    question: &str,
    embedder: &dyn Embedder,
) -> Result<ContextBundle, ContextError> {
    assemble_context_seeded(sources, mode, strategy, budget_tokens, question, embedder, KMEANS_SEED)
}

/// [`assemble_context`] with an explicit k-means seed.
pub fn assemble_context_seeded(
    sources: &[Source],
    mode: ContextMode,
    strategy: Strategy,
    budget_tokens: usize,
    question: &str,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<ContextBundle, ContextError> {
    if budget_tokens == 0 {
        return Err(ContextError::ZeroBudget);
    }
    let bodies: Vec<String> = sources.iter().map(Source::body).collect();
    let mut bundle = ContextBundle {
        mode,
        strategy,
        budget_tokens,
        text: String::new(),
        provenance: Vec::new(),
        insufficient: false,
    };
    let nonempty: Vec<usize> = (0..sources.len()).filter(|&i| !bodies[i].trim().is_empty()).collect();
    if nonempty.is_empty() {
        bundle.insufficient = true;
        return Ok(bundle);
    }
    let total: usize = nonempty.iter().map(|&i| count_tokens(&bodies[i])).sum();
    let picks: Vec<(usize, usize, usize)> = if total <= budget_tokens {
        nonempty.iter().map(|&i| (i, 0, bodies[i].len())).collect()
    } else {
        match strategy {
            Strategy::SimpleTruncation => simple_truncation(&bodies, &nonempty, budget_tokens),
            Strategy::Extractive => extractive(&bodies, &nonempty, budget_tokens, question),
            Strategy::Kmeans => kmeans_pick(&bodies, &nonempty, budget_tokens, embedder, seed)?,
        }
    };
    let whole_sources = total <= budget_tokens || strategy == Strategy::SimpleTruncation;
    let sep = if whole_sources { SOURCE_SEPARATOR } else { SENTENCE_SEPARATOR };
    for (n, (src, start, end)) in picks.into_iter().enumerate() {
        if n > 0 {
            bundle.text.push_str(sep);
        }
        bundle.text.push_str(&bodies[src][start..end]);
        bundle.provenance.push(SpanRef { doc_id: sources[src].doc_id.clone(), start, end });
    }
    Ok(bundle)
}

fn sentences(bodies: &[String], order: &[usize]) -> Vec<Sentence> {
    order
        .iter()
        .flat_map(|&src| {
            sentence_spans(&bodies[src]).into_iter().map(move |(start, end)| Sentence {
                source: src,
                start,
                end,
                tokens: count_tokens(&bodies[src][start..end]),
            })
        })
        .collect()
}

fn simple_truncation(bodies: &[String], order: &[usize], budget: usize) -> Vec<(usize, usize, usize)> {
    let mut picks = Vec::new();
    let mut left = budget;
    for &src in order {
        let body = &bodies[src];
        let n = count_tokens(body);
        if n <= left {
            picks.push((src, 0, body.len()));
            left -= n;
            continue;
        }
        // Cut at the last sentence end that keeps us within budget.
        let mut used = 0;
        let mut cut = None;
        for (start, end) in sentence_spans(body) {
            let t = count_tokens(&body[start..end]);
            if used + t > left {
                break;
            }
            used += t;
            cut = Some(end);
        }
        match cut {
            Some(end) => picks.push((src, 0, end)),
            None if picks.is_empty() => {
                // Not even one sentence fits: fall back to a word boundary.
                let end = truncate_to_tokens(body, left).len();
                if end > 0 {
                    picks.push((src, 0, end));
                }
            }
            None => {}
        }
        break;
    }
    picks
}

fn token_set(text: &str) -> HashSet<String> {
    token_spans(text).map(|t| t.text).collect()
}

fn extractive(bodies: &[String], order: &[usize], budget: usize, question: &str) -> Vec<(usize, usize, usize)> {
    let q = token_set(question);
    let sents = sentences(bodies, order);
    let mut ranked: Vec<(usize, usize)> = sents
        .iter()
        .enumerate()
        .map(|(i, s)| (token_set(&bodies[s.source][s.start..s.end]).intersection(&q).count(), i))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = budget;
    let mut chosen: Vec<usize> = Vec::new();
    for (_, i) in ranked {
        if sents[i].tokens <= left {
            left -= sents[i].tokens;
            chosen.push(i);
        }
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| (sents[i].source, sents[i].start, sents[i].end)).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by Lloyd iterations. Returns the centroids;
/// fewer than `k` when the points have fewer distinct positions.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iters: usize) -> Vec<Vec<f64>> {
    if points.is_empty() || k == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        if d2[pick] <= 0.0 {
            // Rounding walked past the last positive weight.
            pick = d2.iter().rposition(|&w| w > 0.0).expect("positive total");
        }
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, &centroids[centroids.len() - 1]));
        }
    }
    let dim = points[0].len();
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..max_iters {
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assign {
            break;
        }
        assign = next;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0.0; dim];
            for m in &members {
                for (acc, x) in mean.iter_mut().zip(m.iter()) {
                    *acc += x;
                }
            }
            mean.iter_mut().for_each(|x| *x /= members.len() as f64);
            *centroid = mean;
        }
    }
    centroids
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn kmeans_pick(
    bodies: &[String],
    order: &[usize],
    budget: usize,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<Vec<(usize, usize, usize)>, ContextError> {
    let sents = sentences(bodies, order);
    let points: Vec<Vec<f64>> =
        sents.iter().map(|s| embedder.embed(&bodies[s.source][s.start..s.end])).collect::<Result<_, _>>()?;
    let k = KMEANS_MAX_K.min(sents.len());
    let centroids = kmeans(&points, k, seed, KMEANS_MAX_ITERS);

    // Members of each cluster, nearest to the centroid first.
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); centroids.len()];
    for (i, p) in points.iter().enumerate() {
        clusters[nearest(p, &centroids)].push(i);
    }
    for (c, members) in clusters.iter_mut().enumerate() {
        members.sort_by(|&a, &b| {
            dist2(&points[a], &centroids[c]).total_cmp(&dist2(&points[b], &centroids[c])).then(a.cmp(&b))
        });
    }
    clusters.retain(|m| !m.is_empty());
    clusters.sort_by(|a, b| b.len().cmp(&a.len()).then(a.iter().min().cmp(&b.iter().min())));

    let mut left = budget;
    let mut seen: HashSet<&str> = HashSet::new();
    let mut picks = Vec::new();
    let rounds = clusters.iter().map(Vec::len).max().unwrap_or(0);
    for r in 0..rounds {
        for members in &clusters {
            let Some(&i) = members.get(r) else { continue };
            let s = &sents[i];
            let text = &bodies[s.source][s.start..s.end];
            if s.tokens <= left && seen.insert(text) {
                left -= s.tokens;
                picks.push((s.source, s.start, s.end));
            }
        }
    }
    Ok(picks)
}
