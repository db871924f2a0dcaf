//! End-to-end wiring: training data, scorer, negative pool, vocabulary and
//! initial ranker for one experiment.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::sync::Arc;

use crate::augment::{NegativePool, ScorerKind, ScorerName, BM25_B, BM25_K1};
use crate::corpus::{build_corpus_stats, CorpusStats, Document, Query};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::evaluation::{ndcg_at_k, rerank_run, MetricReport};
use crate::ranker::{Ranker, Vocab};
use crate::selectors::Selector;
use crate::training::{build_training_set, train, ExperimentConfig, StepEvent, TrainInputs, TrainingState, TrainingTriple};
use crate::trec::{Qrels, RunEntry};

/// Corpus-level inputs shared by every run of an experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub docs: Vec<Arc<Document>>,
    pub by_id: HashMap<String, Arc<Document>>,
    pub queries: HashMap<String, Query>,
    pub qrels: Qrels,
    pub stats: Arc<CorpusStats>,
    pub embeddings: Option<Arc<EmbeddingTable>>,
}

impl Dataset {
    pub fn new(docs: Vec<Document>, queries: Vec<Query>, qrels: Qrels, embeddings: Option<EmbeddingTable>) -> Result<Self> {
        let stats = Arc::new(build_corpus_stats(&docs)?);
        let docs: Vec<Arc<Document>> = docs.into_iter().map(Arc::new).collect();
        let by_id = docs.iter().map(|d| (d.doc_id.clone(), Arc::clone(d))).collect();
        Ok(Dataset {
            docs,
            by_id,
            queries: queries.into_iter().map(|q| (q.query_id.clone(), q)).collect(),
            qrels,
            stats,
            embeddings: embeddings.map(Arc::new),
        })
    }

    /// Every corpus and query token, sorted, so vocabularies do not depend on
    /// hash order.
    pub fn vocab(&self) -> Vocab {
        let mut tokens: BTreeSet<&str> = BTreeSet::new();
        for d in &self.docs {
            tokens.extend(d.tokens());
        }
        for q in self.queries.values() {
            tokens.extend(q.tokens.iter().map(String::as_str));
        }
        Vocab::from_tokens(tokens)
    }

    /// Sentence scorer named by the config.
    pub fn scorer(&self, name: ScorerName, selector: Option<Arc<Selector>>) -> Result<ScorerKind> {
        let table = || {
            self.embeddings
                .clone()
                .ok_or_else(|| Error::InvalidConfig(vec![format!("scorer: {name:?} needs embeddings")]))
        };
        let selector = || {
            selector
                .clone()
                .ok_or_else(|| Error::InvalidConfig(vec![format!("scorer: {name:?} needs a trained selector")]))
        };
        Ok(match name {
            ScorerName::Bm25 => ScorerKind::Bm25 {
                k1: BM25_K1,
                b: BM25_B,
                stats: Arc::clone(&self.stats),
            },
            ScorerName::Embedding => ScorerKind::Embedding { table: table()? },
            ScorerName::Linear => ScorerKind::Linear {
                table: table()?,
                selector: selector()?,
            },
            ScorerName::Attention => ScorerKind::Attention {
                table: table()?,
                selector: selector()?,
            },
        })
    }

    /// Irrelevant documents of each query's candidate list; queries without
    /// candidates fall back to the whole corpus.
    pub fn negative_pool(&self, run: &[RunEntry], top_k: usize, corpus_wide: bool) -> NegativePool {
        let mut pool = NegativePool::shared(self.docs.clone());
        if corpus_wide {
            for qid in self.queries.keys() {
                let list = self
                    .docs
                    .iter()
                    .filter(|d| !self.qrels.is_relevant(qid, &d.doc_id))
                    .cloned()
                    .collect();
                pool.per_query.insert(qid.clone(), list);
            }
            return pool;
        }
        for (qid, entries) in crate::trec::group_by_query(run) {
            let list: Vec<Arc<Document>> = entries
                .iter()
                .take(top_k)
                .filter(|e| !self.qrels.is_relevant(qid, &e.doc_id))
                .filter_map(|e| self.by_id.get(&e.doc_id).cloned())
                .collect();
            pool.per_query.insert(qid.to_string(), list);
        }
        pool
    }

    /// Run entries restricted to the given queries.
    pub fn restrict(run: &[RunEntry], queries: &[String]) -> Vec<RunEntry> {
        let keep: HashSet<&str> = queries.iter().map(String::as_str).collect();
        run.iter().filter(|e| keep.contains(e.query_id.as_str())).cloned().collect()
    }
}

/// A prepared training job.
pub struct Job {
    pub triples: Vec<TrainingTriple>,
    pub pool: NegativePool,
    pub scorer: Option<ScorerKind>,
    pub init: Ranker,
}

pub fn prepare(config: &ExperimentConfig, data: &Dataset, train_run: &[RunEntry], selector: Option<Arc<Selector>>) -> Result<Job> {
    config.check()?;
    let triples = build_training_set(
        train_run,
        &data.qrels,
        &data.by_id,
        config.dataset_size,
        config.top_k,
        config.corpus_negatives,
        config.seed,
    )?;
    let scorer = if config.augment {
        Some(data.scorer(config.scorer, selector)?)
    } else {
        None
    };
    let init = Ranker::init(config.dims(), data.vocab(), data.embeddings.as_deref(), config.seed)?;
    Ok(Job {
        triples,
        pool: data.negative_pool(train_run, config.top_k, config.augment_corpus_negatives),
        scorer,
        init,
    })
}

/// Builds the training set and trains from a fresh initialisation.
pub fn run_training(
    config: &ExperimentConfig,
    data: &Dataset,
    train_run: &[RunEntry],
    selector: Option<Arc<Selector>>,
    observer: &mut dyn FnMut(&StepEvent),
) -> Result<TrainingState> {
    let job = prepare(config, data, train_run, selector)?;
    let inputs = TrainInputs {
        queries: &data.queries,
        triples: &job.triples,
        scorer: job.scorer.as_ref(),
        neg_pool: &job.pool,
    };
    train(config, job.init, &inputs, observer)
}

/// Re-ranks `run` with `ranker` and scores it with nDCG@k.
pub fn evaluate(ranker: &Ranker, data: &Dataset, run: &[RunEntry], k: usize) -> Result<(Vec<RunEntry>, MetricReport)> {
    let reranked = rerank_run(ranker, run, &data.queries, &data.by_id, "rankaug")?;
    let report = ndcg_at_k(&reranked, &data.qrels, k);
    Ok((reranked, report))
}
