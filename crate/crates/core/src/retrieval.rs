//! Document-level BM25 first stage over an in-memory inverted index.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::augment::{bm25_idf, BM25_B, BM25_K1};
use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::trec::{ranked_entries, RunEntry};

#[derive(Debug, Clone)]
pub struct Bm25Index {
    doc_ids: Vec<String>,
    doc_len: Vec<f64>,
    avg_len: f64,
    /// token -> (document index, term frequency)
    postings: HashMap<String, Vec<(usize, u32)>>,
    pub k1: f64,
    pub b: f64,
}

impl Bm25Index {
    pub fn build(corpus: &[Document]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(corpus.len());
        for (i, doc) in corpus.iter().enumerate() {
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in doc.tokens() {
                *tf.entry(t).or_insert(0) += 1;
            }
            doc_len.push(doc.token_count() as f64);
            let mut terms: Vec<(&str, u32)> = tf.into_iter().collect();
            terms.sort_unstable();
            for (t, c) in terms {
                postings.entry(t.to_string()).or_default().push((i, c));
            }
        }
        let avg_len = doc_len.iter().sum::<f64>() / doc_len.len() as f64;
        Ok(Bm25Index {
            doc_ids: corpus.iter().map(|d| d.doc_id.clone()).collect(),
            doc_len,
            avg_len: avg_len.max(f64::MIN_POSITIVE),
            postings,
            k1: BM25_K1,
            b: BM25_B,
        })
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// Scores of every document sharing at least one token with the query.
    pub fn scores(&self, query: &Query) -> Vec<(usize, f64)> {
        let n = self.doc_ids.len();
        let mut acc: HashMap<usize, f64> = HashMap::new();
        for t in &query.tokens {
            let Some(list) = self.postings.get(t) else { continue };
            let idf = bm25_idf(n, list.len());
            for &(d, tf) in list {
                let tf = tf as f64;
                let norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[d] / self.avg_len);
                *acc.entry(d).or_insert(0.0) += idf * tf * (self.k1 + 1.0) / (tf + norm);
            }
        }
        acc.into_iter().collect()
    }

    /// The `k` best documents for `query` as run entries.
    pub fn search(&self, query: &Query, k: usize, tag: &str) -> Vec<RunEntry> {
        let scored: Vec<(String, f64)> = self
            .scores(query)
            .into_iter()
            .map(|(d, s)| (self.doc_ids[d].clone(), s))
            .collect();
        let mut entries = ranked_entries(&query.query_id, scored, tag);
        entries.truncate(k);
        entries
    }

    /// Top-k for every query, in query order.
    pub fn run(&self, queries: &[Query], k: usize, tag: &str) -> Vec<RunEntry> {
        queries
            .par_iter()
            .map(|q| self.search(q, k, tag))
            .collect::<Vec<_>>()
            .concat()
    }
}
