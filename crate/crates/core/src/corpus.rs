//! Documents, queries and corpus statistics.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{segment_sentences, tokenize, Sentence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub raw_text: String,
    pub sentences: Vec<Sentence>,
}

impl Document {
    /// Segments `raw_text` into sentences.
    pub fn new(doc_id: impl Into<String>, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let sentences = segment_sentences(&raw_text);
        Document {
            doc_id: doc_id.into(),
            raw_text,
            sentences,
        }
    }

    /// Builds a document out of sentences taken from `source`, joined by a
    /// single space and kept in the given order.
    pub fn from_selected(doc_id: impl Into<String>, source: &Document, picks: &[usize]) -> Self {
        let mut raw_text = String::new();
        let mut sentences = Vec::with_capacity(picks.len());
        for &idx in picks {
            let s = &source.sentences[idx];
            if !raw_text.is_empty() {
                raw_text.push(' ');
            }
            let start = raw_text.len();
            raw_text.push_str(s.text(&source.raw_text));
            sentences.push(Sentence {
                tokens: s.tokens.clone(),
                char_span: (start, raw_text.len()),
            });
        }
        Document {
            doc_id: doc_id.into(),
            raw_text,
            sentences,
        }
    }

    pub fn sentence_text(&self, idx: usize) -> &str {
        self.sentences[idx].text(&self.raw_text)
    }

    /// All tokens in document order.
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    pub tokens: Vec<String>,
}

impl Query {
    pub fn new(query_id: impl Into<String>, text: &str) -> Result<Self> {
        Self::from_tokens(query_id, tokenize(text))
    }

    pub fn from_tokens(query_id: impl Into<String>, tokens: Vec<String>) -> Result<Self> {
        let query_id = query_id.into();
        if query_id.is_empty() {
            return Err(Error::Invalid("empty query id".into()));
        }
        if tokens.is_empty() {
            return Err(Error::Invalid(format!("query {query_id} has no tokens")));
        }
        Ok(Query { query_id, tokens })
    }
}

/// Document frequencies and sentence-length statistics of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_docs: usize,
    pub avg_sentence_len: f64,
    pub df: BTreeMap<String, usize>,
}

impl CorpusStats {
    pub fn df(&self, token: &str) -> usize {
        self.df.get(token).copied().unwrap_or(0)
    }
}

#[derive(Default)]
struct Partial {
    n_docs: usize,
    n_sentences: usize,
    n_tokens: usize,
    df: HashMap<String, usize>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        self.n_docs += other.n_docs;
        self.n_sentences += other.n_sentences;
        self.n_tokens += other.n_tokens;
        for (t, c) in other.df {
            *self.df.entry(t).or_insert(0) += c;
        }
        self
    }
}

/// Counts document frequencies (per document, not per sentence) and the mean
/// sentence length over the whole corpus. Runs in parallel over documents.
pub fn build_corpus_stats(corpus: &[Document]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let total = corpus
        .par_iter()
        .fold(Partial::default, |mut acc, doc| {
            acc.n_docs += 1;
            acc.n_sentences += doc.sentences.len();
            let mut seen = HashSet::new();
            for tok in doc.tokens() {
                acc.n_tokens += 1;
                if seen.insert(tok) {
                    *acc.df.entry(tok.to_string()).or_insert(0) += 1;
                }
            }
            acc
        })
        .reduce(Partial::default, Partial::merge);
    if total.n_sentences == 0 {
        return Err(Error::Invalid("corpus contains no sentences".into()));
    }
    Ok(CorpusStats {
        n_docs: total.n_docs,
        avg_sentence_len: total.n_tokens as f64 / total.n_sentences as f64,
        df: total.df.into_iter().collect(),
    })
}

fn read_tsv(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::format(path, lineno, "expected `id<TAB>text`"))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::format(path, lineno, "empty id"));
        }
        rows.push((lineno, id.to_string(), text.to_string()));
    }
    Ok(rows)
}

/// Reads a corpus from a `doc_id<TAB>text` file.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (lineno, id, text) in read_tsv(path)? {
        if !seen.insert(id.clone()) {
            return Err(Error::format(path, lineno, format!("duplicate doc_id {id}")));
        }
        docs.push(Document::new(id, text));
    }
    Ok(docs)
}

/// Reads queries from a `query_id<TAB>text` file.
pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (lineno, id, text) in read_tsv(path)? {
        if !seen.insert(id.clone()) {
            return Err(Error::format(path, lineno, format!("duplicate query_id {id}")));
        }
        let q = Query::new(id, &text).map_err(|e| Error::format(path, lineno, e.to_string()))?;
        queries.push(q);
    }
    Ok(queries)
}
