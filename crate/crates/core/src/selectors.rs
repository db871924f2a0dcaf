//! Supervised sentence selectors: a linear bag-of-embeddings encoder and a
//! QA-LSTM style attention selector, plus a distant-supervision trainer.
//!
//! The trainer labels the top-BM25 sentence of each relevant document as the
//! positive and a random sentence of the paired non-relevant document as the
//! negative, and minimises a pairwise hinge with margin 0.1.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::score_bm25;
use crate::autodiff::{Tape, Var};
use crate::corpus::{CorpusStats, Document, Query};
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::params::{load_checkpoint, save_checkpoint, ParamSet, TensorId};

pub const INIT_BOUND: f64 = 0.1;
pub const SELECTOR_MARGIN: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectorKind {
    Linear,
    Attention,
}

/// `Enc(t) = mean_i (W e(t_i) + b)`, scored by an un-normalised dot product.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSelector {
    pub params: ParamSet,
    emb_dim: usize,
    hidden: usize,
    w: TensorId,
    b: TensorId,
}

impl LinearSelector {
    pub fn zeros(emb_dim: usize, hidden: usize) -> Self {
        let params = ParamSet::new(&[("w", vec![hidden, emb_dim]), ("b", vec![hidden])]);
        Self::from_params(params).expect("fresh linear params")
    }

    pub fn init(emb_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut s = Self::zeros(emb_dim, hidden);
        s.params.fill_uniform(&mut ChaCha8Rng::seed_from_u64(seed), INIT_BOUND);
        s
    }

    /// `W = I`, `b = 0`.
    pub fn identity(dim: usize) -> Self {
        let mut s = Self::zeros(dim, dim);
        let w = s.w;
        let wm = s.params.get_mut(w);
        for i in 0..dim {
            wm[i * dim + i] = 1.0;
        }
        s
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let (w, b) = match (params.id("w"), params.id("b")) {
            (Some(w), Some(b)) => (w, b),
            _ => return Err(Error::Checkpoint("linear selector needs tensors w and b".into())),
        };
        let shape = params.spec(w).shape.clone();
        if shape.len() != 2 || params.spec(b).shape != vec![shape[0]] {
            return Err(Error::Checkpoint("linear selector shapes disagree".into()));
        }
        Ok(LinearSelector {
            emb_dim: shape[1],
            hidden: shape[0],
            params,
            w,
            b,
        })
    }

    pub fn emb_dim(&self) -> usize {
        self.emb_dim
    }

    fn encode_on(&self, tape: &mut Tape, w: Var, b: Var, tokens: &[String], table: &EmbeddingTable) -> Result<Var> {
        if table.dim() != self.emb_dim {
            return Err(Error::Invalid(format!(
                "embedding dim {} does not match selector dim {}",
                table.dim(),
                self.emb_dim
            )));
        }
        let mean = table.mean(tokens).ok_or(Error::NoRepresentableTokens)?;
        let x = tape.leaf(mean);
        let wx = tape.matvec(w, x, self.hidden, self.emb_dim);
        Ok(tape.add(wx, b))
    }

    /// Encodes a token sequence.
    pub fn encode(&self, tokens: &[String], table: &EmbeddingTable) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let w = tape.leaf(self.params.get(self.w).to_vec());
        let b = tape.leaf(self.params.get(self.b).to_vec());
        let out = self.encode_on(&mut tape, w, b, tokens, table)?;
        Ok(tape.value(out).to_vec())
    }

    pub fn score(&self, query: &[String], sentence: &[String], table: &EmbeddingTable) -> Result<f64> {
        let q = self.encode(query, table)?;
        let s = self.encode(sentence, table)?;
        Ok(crate::autodiff::dot(&q, &s))
    }

    fn score_on(&self, tape: &mut Tape, vars: &[Var], query: &[String], sentence: &[String], table: &EmbeddingTable) -> Result<Var> {
        let q = self.encode_on(tape, vars[0], vars[1], query, table)?;
        let s = self.encode_on(tape, vars[0], vars[1], sentence, table)?;
        Ok(tape.dot(q, s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionDims {
    pub emb_dim: usize,
    pub hidden: usize,
    pub attn_dim: usize,
}

/// Bi-LSTM contextualisation, max-pooled query, query-conditioned attention
/// over document positions and cosine scoring of the pooled span.
///
/// Unknown tokens always enter as zero vectors so token positions stay
/// aligned with sentence spans.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionSelector {
    pub params: ParamSet,
    pub dims: AttentionDims,
}

/// Tape variables for every attention tensor, in `ParamSet` order.
struct AttnVars {
    fwd: [Var; 3],
    bwd: [Var; 3],
    w1: Var,
    w2: Var,
    w3: Var,
}

impl AttentionSelector {
    pub const TENSORS: [&'static str; 9] = [
        "fwd.w_x", "fwd.w_h", "fwd.b", "bwd.w_x", "bwd.w_h", "bwd.b", "att.w1", "att.w2", "att.w3",
    ];

    pub fn zeros(dims: AttentionDims) -> Self {
        let AttentionDims {
            emb_dim: e,
            hidden: h,
            attn_dim: a,
        } = dims;
        let params = ParamSet::new(&[
            ("fwd.w_x", vec![4 * h, e]),
            ("fwd.w_h", vec![4 * h, h]),
            ("fwd.b", vec![4 * h]),
            ("bwd.w_x", vec![4 * h, e]),
            ("bwd.w_h", vec![4 * h, h]),
            ("bwd.b", vec![4 * h]),
            ("att.w1", vec![a, 2 * h]),
            ("att.w2", vec![a, 2 * h]),
            ("att.w3", vec![a]),
        ]);
        AttentionSelector { params, dims }
    }

    pub fn init(dims: AttentionDims, seed: u64) -> Self {
        let mut s = Self::zeros(dims);
        s.params.fill_uniform(&mut ChaCha8Rng::seed_from_u64(seed), INIT_BOUND);
        s
    }

    pub fn from_params(params: ParamSet) -> Result<Self> {
        let ids: Option<Vec<TensorId>> = Self::TENSORS.iter().map(|n| params.id(n)).collect();
        let ids = ids.ok_or_else(|| Error::Checkpoint("attention selector tensors missing".into()))?;
        let wx = &params.spec(ids[0]).shape;
        let w1 = &params.spec(ids[6]).shape;
        if wx.len() != 2 || w1.len() != 2 || wx[0] % 4 != 0 {
            return Err(Error::Checkpoint("attention selector shapes disagree".into()));
        }
        let dims = AttentionDims {
            emb_dim: wx[1],
            hidden: wx[0] / 4,
            attn_dim: w1[0],
        };
        let expected = Self::zeros(dims);
        if expected.params.specs() != params.specs() {
            return Err(Error::Checkpoint("attention selector shapes disagree".into()));
        }
        Ok(AttentionSelector { params, dims })
    }

    fn register(&self, tape: &mut Tape) -> (AttnVars, Vec<Var>) {
        let mut all = Vec::with_capacity(Self::TENSORS.len());
        for spec in self.params.specs() {
            let id = self.params.id(&spec.name).unwrap();
            all.push(tape.leaf(self.params.get(id).to_vec()));
        }
        let vars = AttnVars {
            fwd: [all[0], all[1], all[2]],
            bwd: [all[3], all[4], all[5]],
            w1: all[6],
            w2: all[7],
            w3: all[8],
        };
        (vars, all)
    }

    fn embed(&self, tape: &mut Tape, tokens: &[String], table: &EmbeddingTable) -> Result<Vec<Var>> {
        if table.dim() != self.dims.emb_dim {
            return Err(Error::Invalid(format!(
                "embedding dim {} does not match selector dim {}",
                table.dim(),
                self.dims.emb_dim
            )));
        }
        Ok(tokens
            .iter()
            .map(|t| {
                let v = table
                    .get(t)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; self.dims.emb_dim]);
                tape.leaf(v)
            })
            .collect())
    }

    fn lstm(&self, tape: &mut Tape, w: &[Var; 3], xs: &[Var], reverse: bool) -> Vec<Var> {
        let (e, h) = (self.dims.emb_dim, self.dims.hidden);
        let mut hs = tape.leaf(vec![0.0; h]);
        let mut cs = tape.leaf(vec![0.0; h]);
        let mut out = vec![hs; xs.len()];
        let order: Vec<usize> = if reverse {
            (0..xs.len()).rev().collect()
        } else {
            (0..xs.len()).collect()
        };
        for t in order {
            let wx = tape.matvec(w[0], xs[t], 4 * h, e);
            let wh = tape.matvec(w[1], hs, 4 * h, h);
            let z = tape.add(wx, wh);
            let z = tape.add(z, w[2]);
            let i_pre = tape.slice(z, 0, h);
            let f_pre = tape.slice(z, h, h);
            let g_pre = tape.slice(z, 2 * h, h);
            let o_pre = tape.slice(z, 3 * h, h);
            let i = tape.sigmoid(i_pre);
            let f = tape.sigmoid(f_pre);
            let g = tape.tanh(g_pre);
            let o = tape.sigmoid(o_pre);
            let fc = tape.mul(f, cs);
            let ig = tape.mul(i, g);
            cs = tape.add(fc, ig);
            let tc = tape.tanh(cs);
            hs = tape.mul(o, tc);
            out[t] = hs;
        }
        out
    }

    fn contextualize(&self, tape: &mut Tape, v: &AttnVars, xs: &[Var]) -> Vec<Var> {
        let fwd = self.lstm(tape, &v.fwd, xs, false);
        let bwd = self.lstm(tape, &v.bwd, xs, true);
        fwd.iter().zip(&bwd).map(|(f, b)| tape.concat(&[*f, *b])).collect()
    }

    /// Pooled query vector and per-position attended document states.
    fn attend(&self, tape: &mut Tape, v: &AttnVars, query: &[String], doc_tokens: &[String], table: &EmbeddingTable) -> Result<(Var, Vec<Var>)> {
        if query.is_empty() || doc_tokens.is_empty() {
            return Err(Error::NoRepresentableTokens);
        }
        let (h2, a) = (2 * self.dims.hidden, self.dims.attn_dim);
        let qx = self.embed(tape, query, table)?;
        let dx = self.embed(tape, doc_tokens, table)?;
        let q_states = self.contextualize(tape, v, &qx);
        let q_hat = tape.max_pool(&q_states);
        let d_states = self.contextualize(tape, v, &dx);
        let w2q = tape.matvec(v.w2, q_hat, a, h2);
        let attended = d_states
            .iter()
            .map(|&hi| {
                let w1h = tape.matvec(v.w1, hi, a, h2);
                let m = tape.add(w1h, w2q);
                let tm = tape.tanh(m);
                let logit = tape.dot(v.w3, tm);
                let weight = tape.exp(logit);
                tape.scalar_mul(weight, hi)
            })
            .collect();
        Ok((q_hat, attended))
    }

    fn span_scores_on(&self, tape: &mut Tape, v: &AttnVars, query: &[String], doc: &Document, table: &EmbeddingTable) -> Result<Vec<Var>> {
        if doc.sentences.is_empty() {
            return Err(Error::NoSentences(doc.doc_id.clone()));
        }
        let tokens: Vec<String> = doc.tokens().map(str::to_string).collect();
        let (q_hat, attended) = self.attend(tape, v, query, &tokens, table)?;
        let mut start = 0;
        let mut scores = Vec::with_capacity(doc.sentences.len());
        for s in &doc.sentences {
            let end = start + s.len();
            let pooled = tape.max_pool(&attended[start..end]);
            scores.push(tape.cosine(q_hat, pooled));
            start = end;
        }
        Ok(scores)
    }

    /// Scores of every sentence of `doc` for `query`.
    pub fn score_sentences(&self, query: &[String], doc: &Document, table: &EmbeddingTable) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let (v, _) = self.register(&mut tape);
        let vars = self.span_scores_on(&mut tape, &v, query, doc, table)?;
        Ok(vars.iter().map(|&s| tape.scalar(s)).collect())
    }

    /// Score of sentence `span` of `doc`.
    pub fn score(&self, query: &[String], doc: &Document, span: usize, table: &EmbeddingTable) -> Result<f64> {
        if span >= doc.sentences.len() {
            return Err(Error::Invalid(format!(
                "sentence index {span} out of range for {} sentences",
                doc.sentences.len()
            )));
        }
        Ok(self.score_sentences(query, doc, table)?[span])
    }
}

/// A trained (or hand-built) supervised selector.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    Linear(LinearSelector),
    Attention(AttentionSelector),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SelectorMeta {
    kind: SelectorKind,
    seed: u64,
}

impl Selector {
    pub fn kind(&self) -> SelectorKind {
        match self {
            Selector::Linear(_) => SelectorKind::Linear,
            Selector::Attention(_) => SelectorKind::Attention,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Selector::Linear(s) => &s.params,
            Selector::Attention(s) => &s.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Selector::Linear(s) => &mut s.params,
            Selector::Attention(s) => &mut s.params,
        }
    }

    /// Scores of every sentence of `doc`.
    pub fn score_sentences(&self, query: &Query, doc: &Document, table: &EmbeddingTable) -> Result<Vec<f64>> {
        match self {
            Selector::Linear(s) => {
                let q = s.encode(&query.tokens, table)?;
                doc.sentences
                    .iter()
                    .map(|sent| Ok(crate::autodiff::dot(&q, &s.encode(&sent.tokens, table)?)))
                    .collect()
            }
            Selector::Attention(s) => s.score_sentences(&query.tokens, doc, table),
        }
    }

    /// Builds the tape for `margin - score(s+) + score(s-)` hinge of one
    /// example. Returns the loss node and the parameter leaves.
    fn hinge_on(&self, tape: &mut Tape, ex: &LabeledExample<'_>, table: &EmbeddingTable, margin: f64) -> Result<(Var, Vec<Var>)> {
        let (pos, neg, leaves) = match self {
            Selector::Linear(s) => {
                let w = tape.leaf(s.params.get(s.w).to_vec());
                let b = tape.leaf(s.params.get(s.b).to_vec());
                let leaves = vec![w, b];
                let pos = s.score_on(tape, &leaves, &ex.query.tokens, &ex.positive.sentences[ex.pos_sentence].tokens, table)?;
                let neg = s.score_on(tape, &leaves, &ex.query.tokens, &ex.negative.sentences[ex.neg_sentence].tokens, table)?;
                (pos, neg, leaves)
            }
            Selector::Attention(s) => {
                let (v, leaves) = s.register(tape);
                let pos = s.span_scores_on(tape, &v, &ex.query.tokens, ex.positive, table)?[ex.pos_sentence];
                let neg = s.span_scores_on(tape, &v, &ex.query.tokens, ex.negative, table)?[ex.neg_sentence];
                (pos, neg, leaves)
            }
        };
        let m = tape.leaf(vec![margin]);
        let diff = tape.sub(m, pos);
        let diff = tape.add(diff, neg);
        Ok((tape.relu(diff), leaves))
    }

    /// Mean hinge over `examples` and its exact gradient (flat, in parameter
    /// order).
    pub fn loss_and_grad(&self, examples: &[LabeledExample<'_>], table: &EmbeddingTable, margin: f64) -> Result<(f64, Vec<f64>)> {
        if examples.is_empty() {
            return Err(Error::Invalid("empty training data".into()));
        }
        let params = self.params();
        let mut grad = params.zeros_like();
        let mut total = 0.0;
        let n = examples.len() as f64;
        for ex in examples {
            let mut tape = Tape::new();
            let (loss, leaves) = self.hinge_on(&mut tape, ex, table, margin)?;
            total += tape.scalar(loss);
            let grads = tape.backward(loss);
            for (spec_idx, leaf) in leaves.iter().enumerate() {
                if let Some(g) = grads.get(*leaf) {
                    let id = params.id(&params.specs()[spec_idx].name).unwrap();
                    let range = params.range(id);
                    for (dst, src) in grad[range].iter_mut().zip(g) {
                        *dst += src / n;
                    }
                }
            }
        }
        Ok((total / n, grad))
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        save_checkpoint(path, self.params(), &SelectorMeta { kind: self.kind(), seed })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, meta): (ParamSet, SelectorMeta) = load_checkpoint(path)?;
        match meta.kind {
            SelectorKind::Linear => Ok(Selector::Linear(LinearSelector::from_params(params)?)),
            SelectorKind::Attention => Ok(Selector::Attention(AttentionSelector::from_params(params)?)),
        }
    }
}

/// A training example with its chosen sentences.
#[derive(Debug, Clone, Copy)]
pub struct LabeledExample<'a> {
    pub query: &'a Query,
    pub positive: &'a Document,
    pub pos_sentence: usize,
    pub negative: &'a Document,
    pub neg_sentence: usize,
}

/// A `(q, d+, d-)` example before sentence labels are chosen.
#[derive(Debug, Clone, Copy)]
pub struct SelectorExample<'a> {
    pub query: &'a Query,
    pub positive: &'a Document,
    pub negative: &'a Document,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub margin: f64,
    /// Hidden size of the linear layer or the LSTM.
    pub hidden: usize,
    pub attn_dim: usize,
}

impl Default for SelectorTrainConfig {
    fn default() -> Self {
        SelectorTrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 3e-3,
            seed: 42,
            margin: SELECTOR_MARGIN,
            hidden: 32,
            attn_dim: 32,
        }
    }
}

/// Index of the highest BM25 sentence (first on ties).
pub fn top_bm25_sentence(query: &Query, doc: &Document, stats: &CorpusStats) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in doc.sentences.iter().enumerate() {
        let sc = score_bm25(query, s, stats, crate::augment::BM25_K1, crate::augment::BM25_B);
        if best.is_none_or(|(_, b)| sc > b) {
            best = Some((i, sc));
        }
    }
    best.map(|(i, _)| i)
}

pub fn init_selector(kind: SelectorKind, emb_dim: usize, config: &SelectorTrainConfig) -> Selector {
    match kind {
        SelectorKind::Linear => Selector::Linear(LinearSelector::init(emb_dim, config.hidden, config.seed)),
        SelectorKind::Attention => Selector::Attention(AttentionSelector::init(
            AttentionDims {
                emb_dim,
                hidden: config.hidden,
                attn_dim: config.attn_dim,
            },
            config.seed,
        )),
    }
}

/// Trains a selector with Adam on the pairwise sentence hinge. The negative
/// sentence of each example is re-drawn every epoch from the seeded stream.
pub fn train_selector(
    kind: SelectorKind,
    examples: &[SelectorExample<'_>],
    stats: &CorpusStats,
    table: &EmbeddingTable,
    config: &SelectorTrainConfig,
) -> Result<(Selector, Vec<f64>)> {
    let usable: Vec<(SelectorExample<'_>, usize)> = examples
        .iter()
        .filter(|e| !e.negative.sentences.is_empty())
        .filter_map(|e| top_bm25_sentence(e.query, e.positive, stats).map(|i| (*e, i)))
        .collect();
    if usable.is_empty() {
        return Err(Error::Invalid("empty training data".into()));
    }
    let mut selector = init_selector(kind, table.dim(), config);
    let mut adam = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        selector.params().len(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5e1e_c702);
    let mut history = Vec::new();
    let batch_size = config.batch_size.max(1);
    for _epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..usable.len()).collect();
        order.shuffle(&mut rng);
        let labeled: Vec<LabeledExample<'_>> = order
            .iter()
            .map(|&i| {
                let (e, pos) = usable[i];
                LabeledExample {
                    query: e.query,
                    positive: e.positive,
                    pos_sentence: pos,
                    negative: e.negative,
                    neg_sentence: rng.gen_range(0..e.negative.sentences.len()),
                }
            })
            .collect();
        for chunk in labeled.chunks(batch_size) {
            let (loss, grad) = selector.loss_and_grad(chunk, table, config.margin)?;
            if !loss.is_finite() {
                return Err(Error::Invalid(format!("selector loss became {loss}")));
            }
            adam.update(selector.params_mut().data_mut(), &grad);
            history.push(loss);
        }
    }
    Ok((selector, history))
}
