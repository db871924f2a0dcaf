//! The joint query-document encoder.
//!
//! Query and document token embeddings are mean-pooled separately, shifted
//! by a per-segment marker vector, concatenated with their element-wise
//! product and passed through a two-layer MLP. The MLP output is the pair
//! representation Φ and a logistic head on top of it gives the relevance
//! prediction. Gradients are derived by hand.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::dot;
use crate::corpus::Document;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, BatchView, CombinedLoss, LossConfig};
use crate::params::{load_checkpoint, save_checkpoint, ParamSet, TensorId};

pub const UNK: &str = "[UNK]";
/// Marker positions reserved in the length budget (`[CLS] q [SEP] d [SEP]`).
pub const RESERVED_POSITIONS: usize = 3;
pub const INIT_BOUND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RankerDims {
    pub emb_dim: usize,
    pub hidden: usize,
    pub rep_dim: usize,
    pub max_len: usize,
}

impl Default for RankerDims {
    fn default() -> Self {
        RankerDims {
            emb_dim: 32,
            hidden: 128,
            rep_dim: 64,
            max_len: 512,
        }
    }
}

/// Token to row mapping; row 0 is [`UNK`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab {
            tokens: vec![UNK.to_string()],
            index: HashMap::from([(UNK.to_string(), 0)]),
        };
        for t in tokens {
            let t = t.into();
            if !vocab.index.contains_key(&t) {
                vocab.index.insert(t.clone(), vocab.tokens.len());
                vocab.tokens.push(t);
            }
        }
        vocab
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// A query-document pair cut to the model's length budget.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointInput {
    pub query: Vec<String>,
    pub doc: Vec<String>,
    pub max_len: usize,
}

impl JointInput {
    pub fn encoded_len(&self) -> usize {
        self.query.len() + self.doc.len() + RESERVED_POSITIONS
    }
}

/// Tail-truncates the document so the whole pair fits in `max_len`. The query
/// is never truncated.
pub fn truncate_pair(query: &[String], doc: &[String], max_len: usize) -> Result<JointInput> {
    let budget = max_len
        .checked_sub(query.len() + RESERVED_POSITIONS)
        .ok_or(Error::QueryTooLong {
            query_len: query.len(),
            max_len,
        })?;
    Ok(JointInput {
        query: query.to_vec(),
        doc: doc[..doc.len().min(budget)].to_vec(),
        max_len,
    })
}

/// Token rows of a truncated pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub query: Vec<usize>,
    pub doc: Vec<usize>,
}

/// A batch of instances ready for [`Ranker::forward_backward`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankerBatch {
    pub inputs: Vec<EncodedPair>,
    pub labels: Vec<bool>,
    pub query_ids: Vec<String>,
    pub augmented: Vec<bool>,
    pub pairs: Vec<(usize, usize)>,
    pub partners: Vec<Option<usize>>,
}

impl RankerBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Ids {
    emb: TensorId,
    seg_q: TensorId,
    seg_d: TensorId,
    w1: TensorId,
    b1: TensorId,
    w2: TensorId,
    b2: TensorId,
    w: TensorId,
    c: TensorId,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
struct Trace {
    mq: Vec<f64>,
    md: Vec<f64>,
    x: Vec<f64>,
    h: Vec<f64>,
    rep: Vec<f64>,
    pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankerMeta {
    pub dims: RankerDims,
    pub vocab: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranker {
    pub params: ParamSet,
    pub dims: RankerDims,
    pub vocab: Vocab,
}

fn layout(dims: &RankerDims, vocab: usize) -> ParamSet {
    let RankerDims {
        emb_dim: e,
        hidden: h,
        rep_dim: t,
        ..
    } = *dims;
    ParamSet::new(&[
        ("emb", vec![vocab, e]),
        ("seg_q", vec![e]),
        ("seg_d", vec![e]),
        ("w1", vec![h, 3 * e]),
        ("b1", vec![h]),
        ("w2", vec![t, h]),
        ("b2", vec![t]),
        ("w", vec![t]),
        ("c", vec![1]),
    ])
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `logistic(<w, Φ> + c)`.
pub fn logistic(z: f64) -> f64 {
    sigmoid(z)
}

impl Ranker {
    /// Uniform(-0.1, 0.1) initialisation from `seed`. When `table` is given
    /// its vectors seed the embedding rows it covers and its dimension
    /// overrides `dims.emb_dim`.
    pub fn init(mut dims: RankerDims, vocab: Vocab, table: Option<&EmbeddingTable>, seed: u64) -> Result<Self> {
        if let Some(t) = table {
            dims.emb_dim = t.dim();
        }
        if dims.emb_dim == 0 || dims.hidden == 0 || dims.rep_dim == 0 {
            return Err(Error::InvalidConfig(vec!["ranker dimensions must be positive".into()]));
        }
        let mut params = layout(&dims, vocab.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        params.fill_uniform(&mut rng, INIT_BOUND);
        let mut ranker = Ranker { params, dims, vocab };
        if let Some(table) = table {
            let e = dims.emb_dim;
            let emb = ranker.ids().emb;
            let rows = ranker.params.get_mut(emb);
            for (i, tok) in ranker.vocab.tokens.iter().enumerate() {
                if let Some(v) = table.get(tok) {
                    rows[i * e..(i + 1) * e].copy_from_slice(v);
                }
            }
        }
        Ok(ranker)
    }

    pub fn from_parts(params: ParamSet, dims: RankerDims, vocab: Vocab) -> Result<Self> {
        let expected = layout(&dims, vocab.len());
        if expected.specs() != params.specs() {
            return Err(Error::Checkpoint("tensor shapes do not match the ranker dimensions".into()));
        }
        Ok(Ranker { params, dims, vocab })
    }

    fn ids(&self) -> Ids {
        let id = |n: &str| self.params.id(n).expect("ranker tensor");
        Ids {
            emb: id("emb"),
            seg_q: id("seg_q"),
            seg_d: id("seg_d"),
            w1: id("w1"),
            b1: id("b1"),
            w2: id("w2"),
            b2: id("b2"),
            w: id("w"),
            c: id("c"),
        }
    }

    pub fn truncate(&self, query: &[String], doc: &[String]) -> Result<JointInput> {
        truncate_pair(query, doc, self.dims.max_len)
    }

    pub fn encode_ids(&self, input: &JointInput) -> EncodedPair {
        EncodedPair {
            query: self.vocab.ids(&input.query),
            doc: self.vocab.ids(&input.doc),
        }
    }

    /// Token rows of `query` against `doc`, with the document cut to the
    /// length budget.
    pub fn pair_ids(&self, query: &[String], doc: &Document) -> Result<EncodedPair> {
        let budget = self
            .dims
            .max_len
            .checked_sub(query.len() + RESERVED_POSITIONS)
            .ok_or(Error::QueryTooLong {
                query_len: query.len(),
                max_len: self.dims.max_len,
            })?;
        Ok(EncodedPair {
            query: self.vocab.ids(query),
            doc: doc.tokens().take(budget).map(|t| self.vocab.id(t)).collect(),
        })
    }

    /// Relevance prediction of `doc` for `query`.
    pub fn score_doc(&self, query: &[String], doc: &Document) -> Result<f64> {
        Ok(self.forward(&self.pair_ids(query, doc)?).pred)
    }

    fn pool(&self, ids: &[usize], seg: TensorId, emb: TensorId) -> Vec<f64> {
        let e = self.dims.emb_dim;
        let table = self.params.get(emb);
        let mut out = self.params.get(seg).to_vec();
        if !ids.is_empty() {
            let inv = 1.0 / ids.len() as f64;
            for &t in ids {
                for (o, v) in out.iter_mut().zip(&table[t * e..(t + 1) * e]) {
                    *o += inv * v;
                }
            }
        }
        out
    }

    fn forward(&self, pair: &EncodedPair) -> Trace {
        let ids = self.ids();
        let RankerDims {
            emb_dim: e,
            hidden,
            rep_dim,
            ..
        } = self.dims;
        let mq = self.pool(&pair.query, ids.seg_q, ids.emb);
        let md = self.pool(&pair.doc, ids.seg_d, ids.emb);
        let mut x = Vec::with_capacity(3 * e);
        x.extend_from_slice(&mq);
        x.extend_from_slice(&md);
        x.extend(mq.iter().zip(&md).map(|(a, b)| a * b));
        let w1 = self.params.get(ids.w1);
        let b1 = self.params.get(ids.b1);
        let h: Vec<f64> = (0..hidden)
            .map(|r| (dot(&w1[r * 3 * e..(r + 1) * 3 * e], &x) + b1[r]).tanh())
            .collect();
        let w2 = self.params.get(ids.w2);
        let b2 = self.params.get(ids.b2);
        let rep: Vec<f64> = (0..rep_dim)
            .map(|r| dot(&w2[r * hidden..(r + 1) * hidden], &h) + b2[r])
            .collect();
        let pred = sigmoid(dot(self.params.get(ids.w), &rep) + self.params.get(ids.c)[0]);
        Trace { mq, md, x, h, rep, pred }
    }

    /// Φ of a pair.
    pub fn encode_pair(&self, input: &JointInput) -> Vec<f64> {
        self.forward(&self.encode_ids(input)).rep
    }

    /// `logistic(<w, rep> + c)`.
    pub fn score_rep(&self, rep: &[f64]) -> f64 {
        let ids = self.ids();
        sigmoid(dot(self.params.get(ids.w), rep) + self.params.get(ids.c)[0])
    }

    /// Relevance prediction of a query-document token pair.
    pub fn score(&self, query: &[String], doc: &[String]) -> Result<f64> {
        let input = self.truncate(query, doc)?;
        Ok(self.forward(&self.encode_ids(&input)).pred)
    }

    /// Representations and predictions of every instance.
    pub fn forward_batch(&self, batch: &RankerBatch) -> (Vec<Vec<f64>>, Vec<f64>) {
        let traces: Vec<Trace> = batch.inputs.iter().map(|p| self.forward(p)).collect();
        (
            traces.iter().map(|t| t.rep.clone()).collect(),
            traces.iter().map(|t| t.pred).collect(),
        )
    }

    /// Value of the configured composite loss without gradients.
    pub fn loss(&self, batch: &RankerBatch, config: &LossConfig) -> Result<CombinedLoss> {
        let (reps, preds) = self.forward_batch(batch);
        combined_loss(&view(batch, reps, preds), config)
    }

    /// Composite loss and its exact gradient with respect to every parameter,
    /// laid out like `self.params`.
    pub fn forward_backward(&self, batch: &RankerBatch, config: &LossConfig) -> Result<(CombinedLoss, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::InvalidBatch("empty batch".into()));
        }
        let traces: Vec<Trace> = batch.inputs.iter().map(|p| self.forward(p)).collect();
        let loss = combined_loss(
            &view(
                batch,
                traces.iter().map(|t| t.rep.clone()).collect(),
                traces.iter().map(|t| t.pred).collect(),
            ),
            config,
        )?;
        let mut grad = self.params.zeros_like();
        for (i, trace) in traces.iter().enumerate() {
            self.backward(&batch.inputs[i], trace, &loss.d_reps[i], loss.d_preds[i], &mut grad);
        }
        Ok((loss, grad))
    }

    fn backward(&self, pair: &EncodedPair, tr: &Trace, d_rep: &[f64], d_pred: f64, grad: &mut [f64]) {
        let ids = self.ids();
        let RankerDims {
            emb_dim: e,
            hidden,
            rep_dim,
            ..
        } = self.dims;
        let p = &self.params;

        // score head
        let dz = d_pred * tr.pred * (1.0 - tr.pred);
        let w = p.get(ids.w);
        let mut d_phi = d_rep.to_vec();
        if dz != 0.0 {
            let rw = p.range(ids.w);
            for k in 0..rep_dim {
                grad[rw.start + k] += dz * tr.rep[k];
                d_phi[k] += dz * w[k];
            }
            grad[p.range(ids.c).start] += dz;
        }

        // second layer
        let w2 = p.get(ids.w2);
        let (rw2, rb2) = (p.range(ids.w2), p.range(ids.b2));
        let mut dh = vec![0.0; hidden];
        for r in 0..rep_dim {
            let g = d_phi[r];
            if g == 0.0 {
                continue;
            }
            grad[rb2.start + r] += g;
            let row = r * hidden;
            for j in 0..hidden {
                grad[rw2.start + row + j] += g * tr.h[j];
                dh[j] += g * w2[row + j];
            }
        }

        // first layer through tanh
        let w1 = p.get(ids.w1);
        let (rw1, rb1) = (p.range(ids.w1), p.range(ids.b1));
        let mut dx = vec![0.0; 3 * e];
        for r in 0..hidden {
            let g = dh[r] * (1.0 - tr.h[r] * tr.h[r]);
            if g == 0.0 {
                continue;
            }
            grad[rb1.start + r] += g;
            let row = r * 3 * e;
            for j in 0..3 * e {
                grad[rw1.start + row + j] += g * tr.x[j];
                dx[j] += g * w1[row + j];
            }
        }

        // x = [mq; md; mq * md]
        let dmq: Vec<f64> = (0..e).map(|k| dx[k] + dx[2 * e + k] * tr.md[k]).collect();
        let dmd: Vec<f64> = (0..e).map(|k| dx[e + k] + dx[2 * e + k] * tr.mq[k]).collect();
        let (rq, rd, re) = (p.range(ids.seg_q), p.range(ids.seg_d), p.range(ids.emb));
        for k in 0..e {
            grad[rq.start + k] += dmq[k];
            grad[rd.start + k] += dmd[k];
        }
        for (tokens, dm) in [(&pair.query, &dmq), (&pair.doc, &dmd)] {
            if tokens.is_empty() {
                continue;
            }
            let inv = 1.0 / tokens.len() as f64;
            for &t in tokens.iter() {
                let row = re.start + t * e;
                for k in 0..e {
                    grad[row + k] += inv * dm[k];
                }
            }
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64, config_hash: &str) -> Result<()> {
        save_checkpoint(path, &self.params, &self.meta(seed, config_hash))
    }

    pub fn meta(&self, seed: u64, config_hash: &str) -> RankerMeta {
        RankerMeta {
            dims: self.dims,
            vocab: self.vocab.tokens.clone(),
            seed,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, RankerMeta)> {
        let (params, meta): (ParamSet, RankerMeta) = load_checkpoint(path)?;
        let vocab = Vocab::from_tokens(meta.vocab.iter().skip(1).cloned());
        if vocab.tokens != meta.vocab {
            return Err(Error::Checkpoint("vocabulary is malformed".into()));
        }
        Ok((Ranker::from_parts(params, meta.dims, vocab)?, meta))
    }

    /// Zeroes every parameter; used by tests of degenerate regions.
    pub fn zero_tensor(&mut self, name: &str) {
        if let Some(id) = self.params.id(name) {
            self.params.get_mut(id).iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Uniform re-draw of one tensor; handy for gradient checks away from
    /// the initial scale.
    pub fn randomize_tensor(&mut self, name: &str, rng: &mut impl Rng, bound: f64) {
        if let Some(id) = self.params.id(name) {
            self.params
                .get_mut(id)
                .iter_mut()
                .for_each(|v| *v = rng.gen_range(-bound..bound));
        }
    }
}

fn view(batch: &RankerBatch, reps: Vec<Vec<f64>>, preds: Vec<f64>) -> BatchView {
    BatchView {
        reps,
        preds,
        labels: batch.labels.clone(),
        query_ids: batch.query_ids.clone(),
        augmented: batch.augmented.clone(),
        pairs: batch.pairs.clone(),
        partners: batch.partners.clone(),
    }
}
