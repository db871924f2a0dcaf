//! Synthetic corpora with planted relevance.
//!
//! Every query owns a small topic vocabulary whose embeddings cluster around
//! a topic centre. Relevant documents carry planted sentences mixing query
//! terms with further topic words; hard negatives mention the query terms
//! only in passing; background documents are filler. An optional marker
//! token tags every planted sentence.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};
use crate::embeddings::{EmbeddingTable, OovPolicy};
use crate::trec::Qrels;

pub const MARKER: &str = "zzmark";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_queries: usize,
    pub query_len: usize,
    /// Topic words per query, query terms included.
    pub topic_words: usize,
    pub filler_vocab: usize,
    pub emb_dim: usize,
    /// Spread of topic words around their centre, relative to the centre.
    pub topic_noise: f64,
    pub relevant_per_query: usize,
    pub hard_negatives_per_query: usize,
    pub background_docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    /// Planted sentences per relevant document.
    pub planted: usize,
    /// Query terms inside a planted sentence.
    pub planted_query_terms: usize,
    /// Non-query topic words inside a planted sentence.
    pub planted_topic_terms: usize,
    /// Sentences of a hard negative that mention one query term.
    pub distractor_sentences: usize,
    /// Extra passing query-term mentions in relevant documents, outside the
    /// planted sentences.
    pub relevant_distractors: usize,
    pub marker: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_queries: 200,
            query_len: 3,
            topic_words: 8,
            filler_vocab: 2000,
            emb_dim: 32,
            topic_noise: 0.6,
            relevant_per_query: 4,
            hard_negatives_per_query: 12,
            background_docs: 400,
            min_sentences: 6,
            max_sentences: 12,
            min_sentence_len: 6,
            max_sentence_len: 12,
            planted: 1,
            planted_query_terms: 2,
            planted_topic_terms: 3,
            distractor_sentences: 2,
            relevant_distractors: 0,
            marker: false,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub docs: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: Qrels,
    pub embeddings: EmbeddingTable,
    /// Planted sentence indices of every relevant document, keyed by
    /// `(query_id, doc_id)`.
    pub planted: BTreeMap<(String, String), Vec<usize>>,
}

fn topic_word(q: usize, j: usize) -> String {
    format!("t{q}x{j}")
}

fn filler_word(i: usize) -> String {
    format!("w{i}")
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_vec(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let s = 1.0 / (dim as f64).sqrt();
    (0..dim).map(|_| gaussian(rng) * s).collect()
}

fn sentence_text(words: &[String]) -> String {
    let mut s = words.join(" ");
    s.push('.');
    s
}

pub fn generate(config: &SynthConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config;

    let mut embeddings = EmbeddingTable::new(c.emb_dim, OovPolicy::Zero);
    for i in 0..c.filler_vocab {
        embeddings.insert(filler_word(i), random_vec(&mut rng, c.emb_dim)).expect("dim");
    }
    if c.marker {
        embeddings.insert(MARKER, random_vec(&mut rng, c.emb_dim)).expect("dim");
    }
    for q in 0..c.n_queries {
        let centre = random_vec(&mut rng, c.emb_dim);
        for j in 0..c.topic_words {
            let noise = random_vec(&mut rng, c.emb_dim);
            let v = centre.iter().zip(&noise).map(|(a, b)| a + c.topic_noise * b).collect();
            embeddings.insert(topic_word(q, j), v).expect("dim");
        }
    }

    let filler = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
        (0..n).map(|_| filler_word(rng.gen_range(0..c.filler_vocab))).collect()
    };
    let sentence_len = |rng: &mut ChaCha8Rng| rng.gen_range(c.min_sentence_len..=c.max_sentence_len);
    let n_sentences = |rng: &mut ChaCha8Rng| rng.gen_range(c.min_sentences..=c.max_sentences);

    let mut docs = Vec::new();
    let mut queries = Vec::new();
    let mut qrels = Qrels::default();
    let mut planted = BTreeMap::new();
    for q in 0..c.n_queries {
        let qid = format!("q{q}");
        let qterms: Vec<String> = (0..c.query_len).map(|j| topic_word(q, j)).collect();
        let others: Vec<String> = (c.query_len..c.topic_words).map(|j| topic_word(q, j)).collect();
        queries.push(Query::from_tokens(qid.clone(), qterms.clone()).expect("non-empty query"));

        for r in 0..c.relevant_per_query {
            let n = n_sentences(&mut rng).max(c.planted + c.relevant_distractors);
            let mut slots: Vec<usize> = (0..n).collect();
            slots.shuffle(&mut rng);
            let mut chosen = slots[..c.planted].to_vec();
            chosen.sort_unstable();
            let passing = &slots[c.planted..c.planted + c.relevant_distractors];
            let mut text = String::new();
            for s in 0..n {
                let len = sentence_len(&mut rng);
                let mut words = filler(&mut rng, len);
                if chosen.contains(&s) {
                    let mut extra: Vec<String> = qterms.choose_multiple(&mut rng, c.planted_query_terms).cloned().collect();
                    extra.extend(others.choose_multiple(&mut rng, c.planted_topic_terms).cloned());
                    if c.marker {
                        extra.push(MARKER.to_string());
                    }
                    for w in extra {
                        let at = rng.gen_range(0..=words.len());
                        words.insert(at, w);
                    }
                } else if passing.contains(&s) {
                    let w = qterms.choose(&mut rng).expect("query terms").clone();
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, w);
                }
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(&sentence_text(&words));
            }
            let did = format!("d{q}r{r}");
            qrels.insert(&qid, &did, 1);
            planted.insert((qid.clone(), did.clone()), chosen);
            docs.push(Document::new(did, text));
        }

        for h in 0..c.hard_negatives_per_query {
            let n = n_sentences(&mut rng).max(c.distractor_sentences);
            let mut slots: Vec<usize> = (0..n).collect();
            slots.shuffle(&mut rng);
            let chosen = &slots[..c.distractor_sentences];
            let mut text = String::new();
            for s in 0..n {
                let len = sentence_len(&mut rng);
                let mut words = filler(&mut rng, len);
                if chosen.contains(&s) {
                    let w = qterms.choose(&mut rng).expect("query terms").clone();
                    let at = rng.gen_range(0..=words.len());
                    words.insert(at, w);
                }
                if !text.is_empty() {
                    text.push(' ');
                }
                text.push_str(&sentence_text(&words));
            }
            let did = format!("d{q}n{h}");
            qrels.insert(&qid, &did, 0);
            docs.push(Document::new(did, text));
        }
    }
    for b in 0..c.background_docs {
        let n = n_sentences(&mut rng);
        let text: Vec<String> = (0..n)
            .map(|_| {
                let len = sentence_len(&mut rng);
                sentence_text(&filler(&mut rng, len))
            })
            .collect();
        docs.push(Document::new(format!("bg{b}"), text.join(" ")));
    }
    SyntheticCorpus {
        docs,
        queries,
        qrels,
        embeddings,
        planted,
    }
}

impl SyntheticCorpus {
    pub fn corpus_tsv(&self) -> String {
        let mut out = String::new();
        for d in &self.docs {
            let _ = writeln!(out, "{}\t{}", d.doc_id, d.raw_text);
        }
        out
    }

    pub fn queries_tsv(&self) -> String {
        let mut out = String::new();
        for q in &self.queries {
            let _ = writeln!(out, "{}\t{}", q.query_id, q.tokens.join(" "));
        }
        out
    }

    /// Query ids split into a training and a held-out half.
    pub fn split_queries(&self) -> (Vec<String>, Vec<String>) {
        let half = self.queries.len() / 2;
        let ids: Vec<String> = self.queries.iter().map(|q| q.query_id.clone()).collect();
        (ids[..half].to_vec(), ids[half..].to_vec())
    }

    pub fn docs_by_id(&self) -> HashMap<&str, &Document> {
        self.docs.iter().map(|d| (d.doc_id.as_str(), d)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = SynthConfig {
            n_queries: 5,
            background_docs: 3,
            relevant_per_query: 2,
            marker: true,
            ..Default::default()
        };
        let a = generate(&cfg);
        assert_eq!(a.queries.len(), 5);
        assert_eq!(a.docs.len(), 5 * (2 + 12) + 3);
        assert_eq!(a.planted.len(), 10);
        let b = generate(&cfg);
        assert_eq!(a.corpus_tsv(), b.corpus_tsv());
        for ((_, did), idx) in &a.planted {
            let d = a.docs.iter().find(|d| &d.doc_id == did).unwrap();
            for &i in idx {
                assert!(d.sentences[i].tokens.iter().any(|t| t == MARKER));
            }
        }
    }
}
