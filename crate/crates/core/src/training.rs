//! Training-set construction, batching and the optimisation loop.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, NegativePool, ScorerKind, ScorerName, DEFAULT_K_A};
use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::losses::{ContrastiveKind, LossConfig};
use crate::optim::{Adam, AdamConfig};
use crate::ranker::{EncodedPair, Ranker, RankerBatch, RankerDims};
use crate::trec::{Qrels, RunEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Augmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTriple {
    pub query_id: String,
    pub positive: Arc<Document>,
    pub negative: Arc<Document>,
    pub provenance: Provenance,
}

/// Default learning rate for a dataset size, following the small-encoder
/// column of the reference schedule.
pub fn default_learning_rate(dataset_size: usize) -> f64 {
    match dataset_size {
        0..=500 => 3e-3,
        501..=50_000 => 3e-4,
        _ => 3e-5,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Query-document pairs; half positive, half negative.
    pub dataset_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` picks [`default_learning_rate`].
    pub learning_rate: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub augment: bool,
    pub k_a: usize,
    pub scorer: ScorerName,
    pub loss: LossConfig,
    pub max_len: usize,
    pub emb_dim: usize,
    pub hidden: usize,
    pub rep_dim: usize,
    /// Candidates per query considered when building the training set.
    pub top_k: usize,
    /// Draw training negatives from the whole corpus rather than the top-k.
    pub corpus_negatives: bool,
    /// Draw augmented negatives from the whole corpus rather than the
    /// query's top-k.
    pub augment_corpus_negatives: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let dims = RankerDims::default();
        ExperimentConfig {
            dataset_size: 1000,
            batch_size: 16,
            epochs: 10,
            learning_rate: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 42,
            augment: true,
            k_a: DEFAULT_K_A,
            scorer: ScorerName::Bm25,
            loss: LossConfig::default(),
            max_len: dims.max_len,
            emb_dim: dims.emb_dim,
            hidden: dims.hidden,
            rep_dim: dims.rep_dim,
            top_k: 100,
            corpus_negatives: false,
            augment_corpus_negatives: true,
        }
    }
}

impl ExperimentConfig {
    /// Every violated constraint, keyed by its JSON path.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.dataset_size == 0 || self.dataset_size % 2 != 0 {
            errs.push(format!("dataset_size: {} must be even and positive", self.dataset_size));
        }
        if self.batch_size < 2 {
            errs.push(format!("batch_size: {} must be at least 2", self.batch_size));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                errs.push(format!("learning_rate: {lr} must be > 0"));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) {
            errs.push(format!("beta1: {} is outside [0, 1)", self.beta1));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            errs.push(format!("beta2: {} is outside [0, 1)", self.beta2));
        }
        if !(self.eps > 0.0) {
            errs.push(format!("eps: {} must be > 0", self.eps));
        }
        if self.k_a == 0 {
            errs.push("k_a: must be at least 1".to_string());
        }
        if self.max_len <= crate::ranker::RESERVED_POSITIONS {
            errs.push(format!("max_len: {} leaves no room for tokens", self.max_len));
        }
        for (key, v) in [("emb_dim", self.emb_dim), ("hidden", self.hidden), ("rep_dim", self.rep_dim), ("top_k", self.top_k)] {
            if v == 0 {
                errs.push(format!("{key}: must be positive"));
            }
        }
        errs.extend(self.loss.validate().into_iter().map(|e| format!("loss.{e}")));
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| default_learning_rate(self.dataset_size))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate(),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn dims(&self) -> RankerDims {
        RankerDims {
            emb_dim: self.emb_dim,
            hidden: self.hidden,
            rep_dim: self.rep_dim,
            max_len: self.max_len,
        }
    }
}

/// Mixes a base seed with a path of indices into an independent stream seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut z = seed;
    for &p in path {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(p.wrapping_mul(0xD1B5_4A32_D192_ED03));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Pairs every relevant document in each query's top-k with one irrelevant
/// document drawn uniformly from the same top-k (or from the whole corpus),
/// shuffles, and keeps `size / 2` triples.
pub fn build_training_set(
    run: &[RunEntry],
    qrels: &Qrels,
    docs: &HashMap<String, Arc<Document>>,
    size: usize,
    top_k: usize,
    corpus_negatives: bool,
    seed: u64,
) -> Result<Vec<TrainingTriple>> {
    if size == 0 || size % 2 != 0 {
        return Err(Error::InvalidConfig(vec![format!("dataset_size: {size} must be even and positive")]));
    }
    let needed = size / 2;
    let mut by_query: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
    for e in run {
        by_query.entry(e.query_id.as_str()).or_default().push(e);
    }
    let all_ids: Vec<&String> = {
        let mut v: Vec<&String> = docs.keys().collect();
        v.sort();
        v
    };
    let get = |id: &str| {
        docs.get(id)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("run references unknown document {id}")))
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut triples = Vec::new();
    for (qid, mut entries) in by_query {
        entries.sort_by_key(|e| e.rank);
        entries.truncate(top_k);
        let (pos, neg): (Vec<&RunEntry>, Vec<&RunEntry>) =
            entries.iter().partition(|e| qrels.is_relevant(qid, &e.doc_id));
        for p in pos {
            let neg_id = if corpus_negatives {
                let pool: Vec<&&String> = all_ids.iter().filter(|d| !qrels.is_relevant(qid, d)).collect();
                match pool.choose(&mut rng) {
                    Some(d) => d.as_str(),
                    None => continue,
                }
            } else {
                match neg.choose(&mut rng) {
                    Some(e) => e.doc_id.as_str(),
                    None => continue,
                }
            };
            triples.push(TrainingTriple {
                query_id: qid.to_string(),
                positive: get(&p.doc_id)?,
                negative: get(neg_id)?,
                provenance: Provenance::Original,
            });
        }
    }
    if triples.len() < needed {
        return Err(Error::InsufficientPositives {
            needed,
            found: triples.len(),
        });
    }
    triples.shuffle(&mut rng);
    triples.truncate(needed);
    Ok(triples)
}

/// Shuffles then chunks; the final short batch is kept.
pub fn make_batches(triples: &[TrainingTriple], batch_size: usize, seed: u64) -> Vec<Vec<TrainingTriple>> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order = triples.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size).map(<[TrainingTriple]>::to_vec).collect()
}

/// Instances `2t` (positive) and `2t + 1` (negative) for triple `t`. An
/// augmented triple directly after an original one of the same query links
/// the two positives as partners.
pub fn ranker_batch(ranker: &Ranker, triples: &[TrainingTriple], queries: &HashMap<String, Query>) -> Result<RankerBatch> {
    let mut batch = RankerBatch::default();
    for (t, triple) in triples.iter().enumerate() {
        let query = queries
            .get(&triple.query_id)
            .ok_or_else(|| Error::Invalid(format!("unknown query {}", triple.query_id)))?;
        for (doc, label) in [(&triple.positive, true), (&triple.negative, false)] {
            batch.inputs.push(ranker.pair_ids(&query.tokens, doc)?);
            batch.labels.push(label);
            batch.query_ids.push(triple.query_id.clone());
            batch.augmented.push(triple.provenance == Provenance::Augmented);
            batch.partners.push(None);
        }
        batch.pairs.push((2 * t, 2 * t + 1));
        if t > 0 && triple.provenance == Provenance::Augmented {
            let prev = &triples[t - 1];
            if prev.provenance == Provenance::Original && prev.query_id == triple.query_id {
                batch.partners[2 * (t - 1)] = Some(2 * t);
                batch.partners[2 * t] = Some(2 * (t - 1));
            }
        }
    }
    Ok(batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub ranking_loss: f64,
    pub contrastive_loss: f64,
}

pub fn history_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("step,epoch,loss,ranking_loss,contrastive_loss\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{:.10e},{:.10e},{:.10e}\n",
            r.step, r.epoch, r.loss, r.ranking_loss, r.contrastive_loss
        ));
    }
    out
}

/// Reported to the observer after every optimisation step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepEvent {
    pub epoch: usize,
    pub batch: usize,
    /// Triples before augmentation.
    pub original_len: usize,
    /// Triples the loss was computed on.
    pub effective_len: usize,
    pub record: LossRecord,
}

/// Everything one training run reads.
pub struct TrainInputs<'a> {
    pub queries: &'a HashMap<String, Query>,
    pub triples: &'a [TrainingTriple],
    /// `None` disables augmentation regardless of `config.augment`.
    pub scorer: Option<&'a ScorerKind>,
    pub neg_pool: &'a NegativePool,
}

#[derive(Debug, Clone)]
pub struct TrainingState {
    pub ranker: Ranker,
    pub optimizer: Adam,
    pub step: u64,
    pub history: Vec<LossRecord>,
}

/// Runs `config.epochs` epochs from `init`. Every batch is augmented exactly
/// once per epoch when augmentation is on.
pub fn train(
    config: &ExperimentConfig,
    init: Ranker,
    inputs: &TrainInputs<'_>,
    observer: &mut dyn FnMut(&StepEvent),
) -> Result<TrainingState> {
    config.check()?;
    let n = init.params.len();
    let mut state = TrainingState {
        ranker: init,
        optimizer: Adam::new(config.adam(), n),
        step: 0,
        history: Vec::new(),
    };
    let scorer = if config.augment { inputs.scorer } else { None };
    for epoch in 0..config.epochs {
        let batches = make_batches(inputs.triples, config.batch_size, derive_seed(config.seed, &[1, epoch as u64]));
        for (b, batch) in batches.iter().enumerate() {
            let effective = match scorer {
                Some(s) => augment_batch(
                    batch,
                    inputs.queries,
                    config.k_a,
                    s,
                    inputs.neg_pool,
                    derive_seed(config.seed, &[2, epoch as u64, b as u64]),
                )?,
                None => batch.clone(),
            };
            let rb = ranker_batch(&state.ranker, &effective, inputs.queries)?;
            let step = state.step;
            let (loss, grad) = state
                .ranker
                .forward_backward(&rb, &config.loss)
                .map_err(|e| Error::TrainingDiverged {
                    step,
                    source: Box::new(e),
                })?;
            state.optimizer.update(state.ranker.params.data_mut(), &grad);
            state.step += 1;
            let record = LossRecord {
                step,
                epoch,
                loss: loss.total,
                ranking_loss: loss.ranking,
                contrastive_loss: loss.contrastive,
            };
            state.history.push(record);
            observer(&StepEvent {
                epoch,
                batch: b,
                original_len: batch.len(),
                effective_len: effective.len(),
                record,
            });
        }
    }
    Ok(state)
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter holding the largest error, as `tensor[i,j]`.
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub const GRAD_CHECK_STEP: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares the analytic gradient against central differences over every
/// parameter. `corrupt` may tamper with the analytic gradient (mutation
/// tests). Embedding rows of tokens absent from the batch cannot influence
/// the loss, so their numeric derivative is exactly zero and is not
/// evaluated by perturbation.
pub fn grad_check(
    ranker: &Ranker,
    batch: &RankerBatch,
    config: &LossConfig,
    corrupt: Option<&dyn Fn(&mut [f64])>,
) -> Result<GradCheckReport> {
    let (_, mut grad) = ranker.forward_backward(batch, config)?;
    if let Some(f) = corrupt {
        f(&mut grad);
    }
    let emb = ranker.params.id("emb").expect("emb tensor");
    let emb_range = ranker.params.range(emb);
    let e = ranker.dims.emb_dim;
    let used: BTreeSet<usize> = batch
        .inputs
        .iter()
        .flat_map(|p: &EncodedPair| p.query.iter().chain(&p.doc).copied())
        .collect();
    let probe = |i: usize| -> bool {
        if emb_range.contains(&i) {
            used.contains(&((i - emb_range.start) / e))
        } else {
            true
        }
    };
    let results: Vec<(usize, f64, f64)> = (0..grad.len())
        .into_par_iter()
        .map_init(
            || ranker.clone(),
            |local, i| {
                if !probe(i) {
                    return Ok((i, grad[i], 0.0));
                }
                let orig = local.params.data()[i];
                local.params.data_mut()[i] = orig + GRAD_CHECK_STEP;
                let up = local.loss(batch, config)?.total;
                local.params.data_mut()[i] = orig - GRAD_CHECK_STEP;
                let down = local.loss(batch, config)?.total;
                local.params.data_mut()[i] = orig;
                Ok((i, grad[i], (up - down) / (2.0 * GRAD_CHECK_STEP)))
            },
        )
        .collect::<Result<_>>()?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        checked: results.len(),
    };
    for (i, a, n) in results {
        let err = relative_error(a, n);
        if err > report.max_rel_error || report.worst_param.is_empty() {
            report = GradCheckReport {
                max_rel_error: err,
                worst_param: ranker.params.describe(i),
                analytic: a,
                numeric: n,
                checked: report.checked,
            };
        }
    }
    Ok(report)
}

/// Fraction of triples whose positive outscores its negative.
pub fn pairwise_accuracy(ranker: &Ranker, triples: &[TrainingTriple], queries: &HashMap<String, Query>) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Invalid("no triples to score".into()));
    }
    let mut hits = 0usize;
    for t in triples {
        let q = queries
            .get(&t.query_id)
            .ok_or_else(|| Error::Invalid(format!("unknown query {}", t.query_id)))?;
        if ranker.score_doc(&q.tokens, &t.positive)? > ranker.score_doc(&q.tokens, &t.negative)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / triples.len() as f64)
}

pub const LAMBDA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];
pub const TAU_GRID: [f64; 3] = [0.1, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub tau: f64,
    pub accuracy: f64,
}

/// Holds out 10% of the triples, trains one run per (λ, τ) in parallel and
/// returns every grid point, best first (ties keep grid order). τ is only
/// varied for the families that use it.
pub fn tune_lambda_tau(
    config: &ExperimentConfig,
    init: &Ranker,
    inputs: &TrainInputs<'_>,
) -> Result<Vec<GridPoint>> {
    let mut shuffled = inputs.triples.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[3])));
    let n_val = (shuffled.len() / 10).max(1);
    if shuffled.len() <= n_val {
        return Err(Error::Invalid("too few triples for a validation split".into()));
    }
    let (val, train_part) = shuffled.split_at(n_val);
    let taus: Vec<f64> = match config.loss.contrastive_kind {
        ContrastiveKind::Scl | ContrastiveKind::InfoNce => TAU_GRID.to_vec(),
        _ => vec![config.loss.tau],
    };
    let grid: Vec<(f64, f64)> = LAMBDA_GRID
        .iter()
        .flat_map(|&l| taus.iter().map(move |&t| (l, t)))
        .collect();
    let mut points: Vec<GridPoint> = grid
        .par_iter()
        .map(|&(lambda, tau)| {
            let mut c = config.clone();
            c.loss.lambda = lambda;
            c.loss.tau = tau;
            let sub = TrainInputs {
                queries: inputs.queries,
                triples: train_part,
                scorer: inputs.scorer,
                neg_pool: inputs.neg_pool,
            };
            let state = train(&c, init.clone(), &sub, &mut |_| {})?;
            Ok(GridPoint {
                lambda,
                tau,
                accuracy: pairwise_accuracy(&state.ranker, val, inputs.queries)?,
            })
        })
        .collect::<Result<_>>()?;
    points.sort_by(|a, b| b.accuracy.total_cmp(&a.accuracy));
    Ok(points)
}
