//! Query-dependent extractive augmentation.
//!
//! A document's sentences are scored against the query, the `k` best are kept
//! in descending score order (original order is not preserved) and rendered
//! as a new document. [`augment_batch`] appends one augmented triple after
//! every original triple, doubling the batch.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{dot, norm};
use crate::corpus::{CorpusStats, Document, Query};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::selectors::Selector;
use crate::text::Sentence;
use crate::training::{Provenance, TrainingTriple};

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;
pub const DEFAULT_K_A: usize = 3;

/// `ln(1 + (N - df + 0.5) / (df + 0.5))`; never negative.
pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// BM25 of a sentence, with sentence length normalised by the corpus-wide
/// mean sentence length. Repeated query terms count once per occurrence.
pub fn score_bm25(query: &Query, sentence: &Sentence, stats: &CorpusStats, k1: f64, b: f64) -> f64 {
    let len = sentence.len() as f64;
    let norm = k1 * (1.0 - b + b * len / stats.avg_sentence_len);
    query
        .tokens
        .iter()
        .map(|t| {
            let tf = sentence.tokens.iter().filter(|s| *s == t).count() as f64;
            if tf == 0.0 {
                0.0
            } else {
                bm25_idf(stats.n_docs, stats.df(t)) * tf * (k1 + 1.0) / (tf + norm)
            }
        })
        .sum()
}

/// Cosine between the mean token embeddings of query and sentence; 0 when
/// either mean is missing or zero.
pub fn score_embedding(query: &Query, sentence: &Sentence, table: &EmbeddingTable) -> f64 {
    let (Some(q), Some(s)) = (table.mean(&query.tokens), table.mean(&sentence.tokens)) else {
        return 0.0;
    };
    let (nq, ns) = (norm(&q), norm(&s));
    if nq == 0.0 || ns == 0.0 {
        return 0.0;
    }
    (dot(&q, &s) / (nq * ns)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerName {
    Bm25,
    Embedding,
    Linear,
    Attention,
}

impl std::str::FromStr for ScorerName {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bm25" => Ok(ScorerName::Bm25),
            "embedding" | "glove" => Ok(ScorerName::Embedding),
            "linear" => Ok(ScorerName::Linear),
            "attention" => Ok(ScorerName::Attention),
            other => Err(format!("unknown scorer {other:?}")),
        }
    }
}

/// An augmentation strategy with everything it needs to score sentences.
#[derive(Debug, Clone)]
pub enum ScorerKind {
    Bm25 {
        k1: f64,
        b: f64,
        stats: Arc<CorpusStats>,
    },
    Embedding {
        table: Arc<EmbeddingTable>,
    },
    Linear {
        table: Arc<EmbeddingTable>,
        selector: Arc<Selector>,
    },
    Attention {
        table: Arc<EmbeddingTable>,
        selector: Arc<Selector>,
    },
}

impl ScorerKind {
    pub fn bm25(stats: Arc<CorpusStats>) -> Self {
        ScorerKind::Bm25 {
            k1: BM25_K1,
            b: BM25_B,
            stats,
        }
    }

    /// Wraps a trained selector under the matching scorer kind.
    pub fn supervised(table: Arc<EmbeddingTable>, selector: Arc<Selector>) -> Self {
        match selector.as_ref() {
            Selector::Linear(_) => ScorerKind::Linear { table, selector },
            Selector::Attention(_) => ScorerKind::Attention { table, selector },
        }
    }

    pub fn name(&self) -> ScorerName {
        match self {
            ScorerKind::Bm25 { .. } => ScorerName::Bm25,
            ScorerKind::Embedding { .. } => ScorerName::Embedding,
            ScorerKind::Linear { .. } => ScorerName::Linear,
            ScorerKind::Attention { .. } => ScorerName::Attention,
        }
    }

    /// One score per sentence of `doc`.
    pub fn score_sentences(&self, query: &Query, doc: &Document) -> Result<Vec<f64>> {
        match self {
            ScorerKind::Bm25 { k1, b, stats } => Ok(doc
                .sentences
                .iter()
                .map(|s| score_bm25(query, s, stats, *k1, *b))
                .collect()),
            ScorerKind::Embedding { table } => Ok(doc
                .sentences
                .iter()
                .map(|s| score_embedding(query, s, table))
                .collect()),
            ScorerKind::Linear { table, selector } | ScorerKind::Attention { table, selector } => {
                selector.score_sentences(query, doc, table)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedDocument {
    pub source_doc_id: String,
    pub query_id: String,
    pub k_a: usize,
    /// Indices into the source document's sentences, best first.
    pub picks: Vec<usize>,
    pub sentences: Vec<Sentence>,
    pub scores: Vec<f64>,
}

impl AugmentedDocument {
    /// Renders the selection as a document with id `<source>::aug::<query>`.
    pub fn render(&self, source: &Document) -> Document {
        Document::from_selected(augmented_doc_id(&self.source_doc_id, &self.query_id), source, &self.picks)
    }
}

pub fn augmented_doc_id(source: &str, query_id: &str) -> String {
    format!("{source}::aug::{query_id}")
}

/// Orders sentence indices by descending score, ties by original index, and
/// keeps the first `k`.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The `k` highest scoring sentences of `doc` for `query`, best first.
pub fn augment(doc: &Document, query: &Query, k: usize, scorer: &ScorerKind) -> Result<AugmentedDocument> {
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if doc.sentences.is_empty() {
        return Err(Error::NoSentences(doc.doc_id.clone()));
    }
    let all = scorer.score_sentences(query, doc)?;
    let picks = top_k_indices(&all, k);
    Ok(AugmentedDocument {
        source_doc_id: doc.doc_id.clone(),
        query_id: query.query_id.clone(),
        k_a: k,
        sentences: picks.iter().map(|&i| doc.sentences[i].clone()).collect(),
        scores: picks.iter().map(|&i| all[i]).collect(),
        picks,
    })
}

/// Candidate irrelevant documents for augmented negatives: a per-query list
/// when one is known, otherwise the shared list.
#[derive(Debug, Clone, Default)]
pub struct NegativePool {
    pub shared: Vec<Arc<Document>>,
    pub per_query: HashMap<String, Vec<Arc<Document>>>,
}

impl NegativePool {
    pub fn shared(docs: Vec<Arc<Document>>) -> Self {
        NegativePool {
            shared: docs,
            per_query: HashMap::new(),
        }
    }

    pub fn for_query(&self, query_id: &str) -> &[Arc<Document>] {
        self.per_query
            .get(query_id)
            .map(Vec::as_slice)
            .unwrap_or(&self.shared)
    }
}

/// Appends an augmented copy after every triple: the positive is replaced by
/// its extractive summary and the negative by a uniformly drawn pool document
/// other than the triple's own negative.
pub fn augment_batch(
    batch: &[TrainingTriple],
    queries: &HashMap<String, Query>,
    k_a: usize,
    scorer: &ScorerKind,
    neg_pool: &NegativePool,
    rng_seed: u64,
) -> Result<Vec<TrainingTriple>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(batch.len() * 2);
    for triple in batch {
        let query = queries
            .get(&triple.query_id)
            .ok_or_else(|| Error::Invalid(format!("unknown query {}", triple.query_id)))?;
        let aug = augment(&triple.positive, query, k_a, scorer)?;
        let positive = Arc::new(aug.render(&triple.positive));

        let pool = neg_pool.for_query(&triple.query_id);
        let eligible: Vec<&Arc<Document>> = pool
            .iter()
            .filter(|d| d.doc_id != triple.negative.doc_id && d.doc_id != triple.positive.doc_id)
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptyNegativePool(triple.query_id.clone()));
        }
        let negative = Arc::clone(eligible[rng.gen_range(0..eligible.len())]);

        out.push(triple.clone());
        out.push(TrainingTriple {
            query_id: triple.query_id.clone(),
            positive,
            negative,
            provenance: Provenance::Augmented,
        });
    }
    Ok(out)
}
