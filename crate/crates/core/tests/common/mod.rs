#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rankaug::losses::{BatchView, ContrastiveKind, LossConfig, RankingKind};
use rankaug::ranker::{EncodedPair, Ranker, RankerBatch, RankerDims, Vocab};

pub const VOCAB: usize = 12;

pub fn small_ranker(seed: u64) -> Ranker {
    let dims = RankerDims {
        emb_dim: 4,
        hidden: 8,
        rep_dim: 5,
        max_len: 64,
    };
    let vocab = Vocab::from_tokens((1..VOCAB).map(|i| format!("w{i}")));
    let mut r = Ranker::init(dims, vocab, None, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for name in ["emb", "seg_q", "seg_d", "w1", "b1", "w2", "b2", "w", "c"] {
        r.randomize_tensor(name, &mut rng, 0.6);
    }
    r
}

fn tokens(rng: &mut ChaCha8Rng, max: usize) -> Vec<usize> {
    let n = rng.gen_range(1..=max);
    (0..n).map(|_| rng.gen_range(0..VOCAB)).collect()
}

/// Two queries, each with one original and one augmented triple: 8 instances.
pub fn augmented_batch(seed: u64) -> RankerBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = RankerBatch::default();
    for (t, q) in ["qa", "qa", "qb", "qb"].iter().enumerate() {
        let query = tokens(&mut rng, 3);
        for label in [true, false] {
            b.inputs.push(EncodedPair {
                query: query.clone(),
                doc: tokens(&mut rng, 6),
            });
            b.labels.push(label);
            b.query_ids.push(q.to_string());
            b.augmented.push(t % 2 == 1);
            b.partners.push(None);
        }
        b.pairs.push((2 * t, 2 * t + 1));
    }
    b.partners[0] = Some(2);
    b.partners[2] = Some(0);
    b.partners[4] = Some(6);
    b.partners[6] = Some(4);
    b
}

/// Every loss family as (label, config), ranking families with no
/// contrastive term followed by the contrastive ones over pointwise.
pub fn families() -> Vec<(&'static str, LossConfig)> {
    let base = LossConfig {
        tau: 0.7,
        margin: 0.2,
        centroid_margin: 0.5,
        ..Default::default()
    };
    let mut v = vec![
        ("pointwise", LossConfig { ranking_kind: RankingKind::Pointwise, contrastive_kind: ContrastiveKind::None, ..base }),
        ("pairwise", LossConfig { ranking_kind: RankingKind::Pairwise, contrastive_kind: ContrastiveKind::None, ..base }),
    ];
    for (name, kind) in [
        ("scl", ContrastiveKind::Scl),
        ("ctriplet", ContrastiveKind::CTriplet),
        ("infonce", ContrastiveKind::InfoNce),
        ("nca", ContrastiveKind::Nca),
    ] {
        v.push((name, LossConfig { contrastive_kind: kind, ..base }));
    }
    v
}

pub fn random_view(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> BatchView {
    let n_triples = n / 2;
    let mut v = BatchView::default();
    for t in 0..n_triples {
        let q = format!("q{}", rng.gen_range(0..2));
        for label in [true, false] {
            v.reps.push((0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect());
            v.preds.push(rng.gen_range(0.02..0.98));
            v.labels.push(label);
            v.query_ids.push(q.clone());
            v.augmented.push(false);
            v.partners.push(None);
        }
        v.pairs.push((2 * t, 2 * t + 1));
    }
    v
}
pub mod oracle;

pub struct Synthetic {
    pub corpus: rankaug::synthetic::SyntheticCorpus,
    pub data: rankaug::experiment::Dataset,
    pub train_run: Vec<rankaug::trec::RunEntry>,
    pub test_run: Vec<rankaug::trec::RunEntry>,
}

/// A synthetic corpus with its BM25 top-`top_k` run split into training and
/// held-out queries.
pub fn synthetic(config: &rankaug::synthetic::SynthConfig, top_k: usize) -> Synthetic {
    use rankaug::experiment::Dataset;
    let corpus = rankaug::synthetic::generate(config);
    let (train_q, test_q) = corpus.split_queries();
    let run = rankaug::retrieval::Bm25Index::build(&corpus.docs).unwrap().run(&corpus.queries, top_k, "bm25");
    let data = Dataset::new(corpus.docs.clone(), corpus.queries.clone(), corpus.qrels.clone(), Some(corpus.embeddings.clone())).unwrap();
    Synthetic {
        train_run: Dataset::restrict(&run, &train_q),
        test_run: Dataset::restrict(&run, &test_q),
        corpus,
        data,
    }
}
