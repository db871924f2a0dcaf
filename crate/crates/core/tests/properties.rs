mod common;

use common::oracle;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rankaug::augment::{score_bm25, score_embedding, BM25_B, BM25_K1};
use rankaug::corpus::{build_corpus_stats, CorpusStats, Document, Query};
use rankaug::embeddings::{EmbeddingTable, OovPolicy};
use rankaug::evaluation::ndcg_of;
use rankaug::losses::{self, BatchView};
use rankaug::text::{tokenize, Sentence};

fn batch(seed: u64, triples: usize, queries: usize) -> BatchView {
    oracle::random_batch(&mut ChaCha8Rng::seed_from_u64(seed), triples, queries, 3, 1.5)
}

/// Reorders instances by `perm` (new position -> old index), remapping pairs
/// and partners.
fn permute(v: &BatchView, perm: &[usize]) -> BatchView {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    BatchView {
        reps: perm.iter().map(|&o| v.reps[o].clone()).collect(),
        preds: perm.iter().map(|&o| v.preds[o]).collect(),
        labels: perm.iter().map(|&o| v.labels[o]).collect(),
        query_ids: perm.iter().map(|&o| v.query_ids[o].clone()).collect(),
        augmented: perm.iter().map(|&o| v.augmented[o]).collect(),
        pairs: v.pairs.iter().map(|&(p, q)| (inv[p], inv[q])).collect(),
        partners: perm.iter().map(|&o| v.partners[o].map(|p| inv[p])).collect(),
    }
}

fn all_losses(v: &BatchView) -> Vec<f64> {
    vec![
        losses::pointwise(v).unwrap().value,
        losses::pairwise(v, 0.2).unwrap().value,
        losses::scl(v, 0.5).unwrap().value,
        losses::ctriplet(v, 0.5).unwrap().value,
        losses::infonce(v, 0.5).unwrap().value,
        losses::nca(v).map(|o| o.value).unwrap_or(0.0),
    ]
}

fn rotation(a: f64, b: f64) -> [[f64; 3]; 3] {
    let (ca, sa, cb, sb) = (a.cos(), a.sin(), b.cos(), b.sin());
    // rotation about z then about x
    let rz = [[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]];
    let rx = [[1.0, 0.0, 0.0], [0.0, cb, -sb], [0.0, sb, cb]];
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| rx[i][k] * rz[k][j]).sum();
        }
    }
    m
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn losses_are_non_negative(seed in 0u64..10_000, triples in 1usize..5, queries in 1usize..3) {
        for l in all_losses(&batch(seed, triples, queries)) {
            prop_assert!(l >= 0.0 && l.is_finite());
        }
    }

    #[test]
    fn losses_ignore_instance_order(seed in 0u64..10_000, triples in 1usize..5, shuffle in any::<u64>()) {
        use rand::seq::SliceRandom;
        let v = batch(seed, triples, 2);
        let mut perm: Vec<usize> = (0..v.reps.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(shuffle));
        let w = permute(&v, &perm);
        for (a, b) in all_losses(&v).into_iter().zip(all_losses(&w)) {
            prop_assert!(close(a, b), "{a} vs {b}");
        }
    }

    #[test]
    fn dot_product_losses_ignore_rotation(seed in 0u64..10_000, triples in 1usize..5, a in 0.0f64..6.3, b in 0.0f64..6.3) {
        let v = batch(seed, triples, 2);
        let r = rotation(a, b);
        let mut w = v.clone();
        for rep in &mut w.reps {
            let x = rep.clone();
            for (i, out) in rep.iter_mut().enumerate() {
                *out = (0..3).map(|j| r[i][j] * x[j]).sum();
            }
        }
        prop_assert!(close(losses::scl(&v, 0.4).unwrap().value, losses::scl(&w, 0.4).unwrap().value));
        prop_assert!(close(losses::infonce(&v, 0.4).unwrap().value, losses::infonce(&w, 0.4).unwrap().value));
    }

    #[test]
    fn centroid_triplet_ignores_translation(seed in 0u64..10_000, triples in 1usize..5, shift in proptest::collection::vec(-5.0f64..5.0, 3)) {
        let v = batch(seed, triples, 2);
        let mut w = v.clone();
        for rep in &mut w.reps {
            for (x, s) in rep.iter_mut().zip(&shift) {
                *x += s;
            }
        }
        prop_assert!(close(losses::ctriplet(&v, 0.3).unwrap().value, losses::ctriplet(&w, 0.3).unwrap().value));
    }

    #[test]
    fn embedding_score_is_a_cosine(
        vectors in proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, 2), 4),
        q in proptest::collection::vec(0usize..6, 1..4),
        s in proptest::collection::vec(0usize..6, 1..6),
    ) {
        let mut table = EmbeddingTable::new(2, OovPolicy::Zero);
        for (i, v) in vectors.into_iter().enumerate() {
            table.insert(format!("t{i}"), v).unwrap();
        }
        let query = Query::from_tokens("q", q.iter().map(|i| format!("t{i}")).collect()).unwrap();
        let sentence = Sentence { tokens: s.iter().map(|i| format!("t{i}")).collect(), char_span: (0, 0) };
        let score = score_embedding(&query, &sentence, &table);
        prop_assert!((-1.0..=1.0).contains(&score));
    }

    #[test]
    fn bm25_grows_with_term_frequency(tf in 0usize..8, filler in 0usize..8, n_docs in 1usize..50, df_frac in 0.0f64..1.0, avg in 1.0f64..20.0) {
        let df = ((n_docs as f64 * df_frac) as usize).max(1);
        let stats = CorpusStats { n_docs, avg_sentence_len: avg, df: [("x".to_string(), df)].into_iter().collect() };
        let q = Query::new("q", "x").unwrap();
        let mk = |n: usize| Sentence {
            tokens: std::iter::repeat_n("x".to_string(), n).chain(std::iter::repeat_n("f".to_string(), filler)).collect(),
            char_span: (0, 0),
        };
        let lo = score_bm25(&q, &mk(tf), &stats, BM25_K1, BM25_B);
        let hi = score_bm25(&q, &mk(tf + 1), &stats, BM25_K1, BM25_B);
        prop_assert!(hi > lo, "{hi} <= {lo}");
    }

    #[test]
    fn tokenize_is_idempotent(text in "\\PC{0,80}") {
        let once = tokenize(&text);
        prop_assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn document_frequency_never_exceeds_corpus_size(texts in proptest::collection::vec("[a-d .!?]{0,40}", 1..8)) {
        let docs: Vec<Document> = texts.iter().enumerate().map(|(i, t)| Document::new(format!("d{i}"), format!("{t} z."))).collect();
        let stats = build_corpus_stats(&docs).unwrap();
        prop_assert_eq!(stats.n_docs, docs.len());
        for &df in stats.df.values() {
            prop_assert!(df >= 1 && df <= stats.n_docs);
        }
    }

    #[test]
    fn ndcg_is_bounded(grades in proptest::collection::vec(0u32..3, 1..12), k in 1usize..12) {
        if let Some(v) = ndcg_of(&grades, &grades, k) {
            prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
        let mut ideal = grades.clone();
        ideal.sort_unstable_by(|a, b| b.cmp(a));
        if let Some(v) = ndcg_of(&ideal, &grades, k) {
            prop_assert!((v - 1.0).abs() < 1e-12);
        }
    }
}
