//! Baseline vs. augmented training on the synthetic corpus.
//!
//! usage: trend '<synth config json>' '<experiment config json>' [seeds] [top_k]

use std::time::Instant;

use rankaug::experiment::{evaluate, run_training, Dataset};
use rankaug::losses::ContrastiveKind;
use rankaug::retrieval::Bm25Index;
use rankaug::synthetic::{generate, SynthConfig};
use rankaug::training::ExperimentConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let synth: SynthConfig = serde_json::from_str(args.get(1).map_or("{}", String::as_str)).unwrap();
    let base: ExperimentConfig = serde_json::from_str(args.get(2).map_or("{}", String::as_str)).unwrap();
    let seeds: u64 = args.get(3).map_or(3, |s| s.parse().unwrap());
    let top_k: usize = args.get(4).map_or(20, |s| s.parse().unwrap());
    let start = Instant::now();
    let mut totals = [0.0; 3];
    for seed in 0..seeds {
        let corpus = generate(&SynthConfig { seed: synth.seed + seed, ..synth.clone() });
        let (train_q, test_q) = corpus.split_queries();
        let index = Bm25Index::build(&corpus.docs).unwrap();
        let run = index.run(&corpus.queries, top_k, "bm25");
        let data = Dataset::new(corpus.docs.clone(), corpus.queries.clone(), corpus.qrels.clone(), Some(corpus.embeddings.clone())).unwrap();
        let train_run = Dataset::restrict(&run, &train_q);
        let test_run = Dataset::restrict(&run, &test_q);
        let mut row = Vec::new();
        for (i, (augment, kind)) in [(false, ContrastiveKind::None), (true, ContrastiveKind::None), (true, base.loss.contrastive_kind)].into_iter().enumerate() {
            let mut c = base.clone();
            c.seed = base.seed + seed;
            c.augment = augment;
            c.loss.contrastive_kind = kind;
            let state = run_training(&c, &data, &train_run, None, &mut |_| {}).unwrap();
            let (_, report) = evaluate(&state.ranker, &data, &test_run, 10).unwrap();
            let first = state.history.first().map_or(0.0, |r| r.loss);
            let last = state.history.last().map_or(0.0, |r| r.loss);
            row.push(format!("{:.4} (loss {first:.3}->{last:.3})", report.mean));
            totals[i] += report.mean;
        }
        let bm25 = rankaug::evaluation::ndcg_at_k(&test_run, &data.qrels, 10).mean;
        let table = data.embeddings.as_ref().unwrap();
        let mut cos_run = Vec::new();
        for (qid, entries) in rankaug::trec::group_by_query(&test_run) {
            let q = table.mean(&data.queries[qid].tokens).unwrap();
            let scored = entries
                .iter()
                .map(|e| {
                    let toks: Vec<&str> = data.by_id[&e.doc_id].tokens().collect();
                    let d = table.mean(&toks).unwrap();
                    (e.doc_id.clone(), rankaug::autodiff::dot(&q, &d) / rankaug::autodiff::norm(&d))
                })
                .collect();
            cos_run.extend(rankaug::trec::ranked_entries(qid, scored, "cos"));
        }
        let cos = rankaug::evaluation::ndcg_at_k(&cos_run, &data.qrels, 10).mean;
        println!("zero-shot cosine {cos:.4}");
        println!("seed {seed}: bm25 {bm25:.4} | base {} | ce+aug {} | {:?}+aug {}", row[0], row[1], base.loss.contrastive_kind, row[2]);
    }
    let n = seeds as f64;
    println!(
        "mean: base {:.4} ce+aug {:.4} ({:+.4}) contrastive+aug {:.4} ({:+.4})  [{:.1}s]",
        totals[0] / n,
        totals[1] / n,
        (totals[1] - totals[0]) / n,
        totals[2] / n,
        (totals[2] - totals[0]) / n,
        start.elapsed().as_secs_f64()
    );
}
