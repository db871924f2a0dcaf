use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use rankaug::augment::{augment_batch, NegativePool, ScorerName};
use rankaug::corpus::{build_corpus_stats, load_corpus, load_queries, Document, Query};
use rankaug::embeddings::load_embeddings;
use rankaug::evaluation::{ndcg_at_k, paired_significance, relative_improvement, render_markdown, rerank_run, EvalReport};
use rankaug::experiment::{prepare, Dataset};
use rankaug::ranker::Ranker;
use rankaug::retrieval::Bm25Index;
use rankaug::selectors::{train_selector, Selector, SelectorExample, SelectorKind, SelectorTrainConfig};
use rankaug::synthetic::{generate, SynthConfig};
use rankaug::training::{
    derive_seed, grad_check, history_csv, ranker_batch, tune_lambda_tau, ExperimentConfig, Provenance, TrainInputs, TrainingTriple,
};
use rankaug::trec::{group_by_query, load_qrels, load_run, run_to_string, RunEntry};

use crate::config::{self, config_hash, DataPaths};
use crate::manifest::Manifest;
use crate::{AugmentArgs, Cli, Command, EvalArgs, Global, KindArg, ScorerArg, SelectorArgs, Usage};

/// Relative error a gradient check must stay under.
const GRADCHECK_TOLERANCE: f64 = 1e-4;
const DEFAULT_SEED: u64 = 42;

pub fn run(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    match &cli.command {
        Command::Ingest { corpus, queries } => {
            no_config(g, "ingest")?;
            ingest(g, corpus, queries.as_deref())
        }
        Command::Augment(args) => {
            no_config(g, "augment")?;
            augment(g, args)
        }
        Command::TrainSelector(args) => selector(g, args),
        Command::Train { tune } => train(g, *tune),
        Command::Rerank {
            checkpoint,
            corpus,
            queries,
            run,
            out,
        } => {
            no_config(g, "rerank")?;
            rerank(g, checkpoint, corpus, queries, run, out)
        }
        Command::Eval(args) => {
            no_config(g, "eval")?;
            eval(g, args)
        }
        Command::Gradcheck { triples } => gradcheck(g, *triples),
        Command::Report { reports, out } => {
            no_config(g, "report")?;
            report(g, reports, out)
        }
        Command::Retrieve { corpus, queries, k, out } => {
            no_config(g, "retrieve")?;
            retrieve(g, corpus, queries, *k, out)
        }
        Command::Synth { top_k } => synth(g, *top_k),
    }
}

fn no_config(g: &Global, command: &str) -> Result<()> {
    match g.config {
        Some(_) => Err(Usage(format!("--config is not used by `{command}`")).into()),
        None => Ok(()),
    }
}

/// Parses a JSON object into `T`, reporting every key `T` does not know.
fn parse_strict<T: Default + Serialize + DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| rankaug::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(map) = &value else {
        return Err(Usage(format!("{}: config must be a JSON object", path.display())).into());
    };
    let Value::Object(known) = serde_json::to_value(T::default())? else {
        unreachable!("configs serialize to objects")
    };
    let unknown: Vec<String> = map
        .keys()
        .filter(|k| !known.contains_key(*k))
        .map(|k| format!("{k}: unknown key"))
        .collect();
    if !unknown.is_empty() {
        return Err(rankaug::Error::InvalidConfig(unknown).into());
    }
    serde_json::from_value(value).map_err(|e| rankaug::Error::InvalidConfig(vec![e.to_string()]).into())
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s.into_bytes())
}

/// Library savers write straight to a path; go through a scratch file so the
/// artifact itself still lands atomically.
fn save_via(m: &mut Manifest, name: &str, out_dir: &Path, save: impl FnOnce(&Path) -> rankaug::Result<()>) -> Result<()> {
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let scratch = out_dir.join(format!(".{name}.scratch{}", std::process::id()));
    save(&scratch)?;
    let bytes = fs::read(&scratch)?;
    fs::remove_file(&scratch)?;
    m.output(name, &bytes)?;
    Ok(())
}

fn ingest(g: &Global, corpus: &Path, queries: Option<&Path>) -> Result<u8> {
    let mut m = Manifest::new("ingest", &g.out_dir);
    m.input(corpus)?;
    let docs = load_corpus(corpus)?;
    let stats = build_corpus_stats(&docs)?;
    let mut lines = String::new();
    for d in &docs {
        lines.push_str(&serde_json::to_string(d)?);
        lines.push('\n');
    }
    m.output("documents.jsonl", lines.as_bytes())?;
    m.output("stats.json", &json_bytes(&stats)?)?;
    if let Some(q) = queries {
        m.input(q)?;
        let mut lines = String::new();
        for q in load_queries(q)? {
            lines.push_str(&serde_json::to_string(&q)?);
            lines.push('\n');
        }
        m.output("queries.jsonl", lines.as_bytes())?;
    }
    m.finish()?;
    println!(
        "{} documents, {} sentences, {} distinct tokens -> {}",
        stats.n_docs,
        docs.iter().map(|d| d.sentences.len()).sum::<usize>(),
        stats.df.len(),
        g.out_dir.display()
    );
    Ok(0)
}

fn read_triples(path: &Path, by_id: &HashMap<String, Arc<Document>>, queries: &HashMap<String, Query>) -> Result<Vec<TrainingTriple>> {
    let text = fs::read_to_string(path).map_err(|source| rankaug::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |line: usize, message: String| rankaug::Error::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [qid, pos, neg] = fields[..] else {
            return Err(bad(i + 1, format!("expected 3 tab-separated fields, found {}", fields.len())).into());
        };
        if !queries.contains_key(qid) {
            return Err(bad(i + 1, format!("unknown query {qid}")).into());
        }
        let doc = |id: &str| by_id.get(id).cloned().ok_or_else(|| bad(i + 1, format!("unknown document {id}")));
        out.push(TrainingTriple {
            query_id: qid.to_string(),
            positive: doc(pos)?,
            negative: doc(neg)?,
            provenance: Provenance::Original,
        });
    }
    if out.is_empty() {
        return Err(bad(0, "no triples".into()).into());
    }
    Ok(out)
}

fn scorer_name(s: ScorerArg) -> ScorerName {
    match s {
        ScorerArg::Bm25 => ScorerName::Bm25,
        ScorerArg::Embedding => ScorerName::Embedding,
        ScorerArg::Linear => ScorerName::Linear,
        ScorerArg::Attention => ScorerName::Attention,
    }
}

fn augment(g: &Global, a: &AugmentArgs) -> Result<u8> {
    let seed = g.seed.unwrap_or(DEFAULT_SEED);
    let mut m = Manifest::new("augment", &g.out_dir);
    m.seed = Some(seed);
    for p in [Some(&a.corpus), Some(&a.queries), Some(&a.triples), a.qrels.as_ref(), a.embeddings.as_ref(), a.selector.as_ref()]
        .into_iter()
        .flatten()
    {
        m.input(p)?;
    }
    let qrels = a.qrels.as_ref().map(load_qrels).transpose()?;
    let table = a.embeddings.as_ref().map(|p| load_embeddings(p, None)).transpose()?;
    let data = Dataset::new(load_corpus(&a.corpus)?, load_queries(&a.queries)?, qrels.clone().unwrap_or_default(), table)?;
    let selector = a.selector.as_ref().map(Selector::load).transpose()?.map(Arc::new);
    let scorer = data.scorer(scorer_name(a.scorer), selector)?;
    let triples = read_triples(&a.triples, &data.by_id, &data.queries)?;
    let pool = if qrels.is_some() {
        data.negative_pool(&[], 0, true)
    } else {
        NegativePool::shared(data.docs.clone())
    };
    let doubled = augment_batch(&triples, &data.queries, a.k_a, &scorer, &pool, seed)?;

    let mut lines = String::new();
    let mut rendered = BTreeMap::new();
    for t in &doubled {
        let _ = writeln!(lines, "{}\t{}\t{}", t.query_id, t.positive.doc_id, t.negative.doc_id);
        if t.provenance == Provenance::Augmented {
            rendered.insert(t.positive.doc_id.clone(), t.positive.raw_text.clone());
        }
    }
    let mut docs = String::new();
    for (id, text) in &rendered {
        let _ = writeln!(docs, "{id}\t{text}");
    }
    m.output(&a.out, lines.as_bytes())?;
    m.output("augmented_docs.tsv", docs.as_bytes())?;
    m.finish()?;
    println!("{} triples -> {} triples, {} summaries", triples.len(), doubled.len(), rendered.len());
    Ok(0)
}

fn selector(g: &Global, a: &SelectorArgs) -> Result<u8> {
    let mut cfg: SelectorTrainConfig = match &g.config {
        Some(p) => parse_strict(p)?,
        None => SelectorTrainConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let mut m = Manifest::new("train-selector", &g.out_dir);
    m.config = g.config.as_ref().map(|p| p.display().to_string());
    m.seed = Some(cfg.seed);
    if let Some(p) = &g.config {
        m.input(p)?;
    }
    for p in [&a.corpus, &a.queries, &a.qrels, &a.run, &a.embeddings] {
        m.input(p)?;
    }
    let data = Dataset::new(
        load_corpus(&a.corpus)?,
        load_queries(&a.queries)?,
        load_qrels(&a.qrels)?,
        Some(load_embeddings(&a.embeddings, None)?),
    )?;
    let run = load_run(&a.run)?;
    let mut examples = Vec::new();
    for (qid, entries) in group_by_query(&run) {
        let Some(query) = data.queries.get(qid) else { continue };
        let negative = entries
            .iter()
            .filter(|e| !data.qrels.is_relevant(qid, &e.doc_id))
            .find_map(|e| data.by_id.get(&e.doc_id));
        let Some(negative) = negative else { continue };
        for (did, &grade) in data.qrels.for_query(qid).into_iter().flatten() {
            if let (true, Some(positive)) = (grade > 0, data.by_id.get(did)) {
                examples.push(SelectorExample {
                    query,
                    positive,
                    negative,
                });
            }
        }
    }
    let kind = match a.kind {
        KindArg::Linear => SelectorKind::Linear,
        KindArg::Attention => SelectorKind::Attention,
    };
    let table = data.embeddings.as_deref().expect("embeddings were loaded");
    let started = Instant::now();
    let (sel, history) = train_selector(kind, &examples, &data.stats, table, &cfg)?;
    save_via(&mut m, &a.out, &g.out_dir, |p| sel.save(p, cfg.seed))?;
    let mut csv = String::from("step,loss\n");
    for (step, l) in history.iter().enumerate() {
        let _ = writeln!(csv, "{},{l:.10e}", step + 1);
    }
    m.output("selector_history.csv", csv.as_bytes())?;
    m.finish()?;
    println!(
        "{kind:?} selector: {} examples, final loss {:.4} [{:.1}s]",
        examples.len(),
        history.last().copied().unwrap_or(f64::NAN),
        started.elapsed().as_secs_f64()
    );
    Ok(0)
}

struct Loaded {
    data: Dataset,
    run: Vec<RunEntry>,
    selector: Option<Arc<Selector>>,
}

fn load_data(paths: &DataPaths, m: &mut Manifest) -> Result<Loaded> {
    let (corpus, queries, qrels, run) = paths.required()?;
    for p in [Some(&corpus), Some(&queries), Some(&qrels), Some(&run), paths.embeddings.as_ref(), paths.selector.as_ref()]
        .into_iter()
        .flatten()
    {
        m.input(p)?;
    }
    let table = paths.embeddings.as_ref().map(|p| load_embeddings(p, None)).transpose()?;
    Ok(Loaded {
        data: Dataset::new(load_corpus(&corpus)?, load_queries(&queries)?, load_qrels(&qrels)?, table)?,
        run: load_run(&run)?,
        selector: paths.selector.as_ref().map(Selector::load).transpose()?.map(Arc::new),
    })
}

fn train(g: &Global, tune: bool) -> Result<u8> {
    let path = g.config.as_ref().ok_or_else(|| Usage("train needs --config".into()))?;
    let loaded = config::load(path)?;
    let mut exp = loaded.experiment;
    if let Some(s) = g.seed {
        exp.seed = s;
    }
    let mut m = Manifest::new("train", &g.out_dir);
    m.config = Some(path.display().to_string());
    m.seed = Some(exp.seed);
    m.input(path)?;
    let Loaded { data, run, selector } = load_data(&loaded.paths, &mut m)?;

    let started = Instant::now();
    let job = prepare(&exp, &data, &run, selector)?;
    let inputs = TrainInputs {
        queries: &data.queries,
        triples: &job.triples,
        scorer: job.scorer.as_ref(),
        neg_pool: &job.pool,
    };
    if tune {
        let grid = tune_lambda_tau(&exp, &job.init, &inputs)?;
        let best = &grid[0];
        println!("tuned lambda {} tau {} (held-out pair accuracy {:.3})", best.lambda, best.tau, best.accuracy);
        exp.loss.lambda = best.lambda;
        exp.loss.tau = best.tau;
        m.output("tuning.json", &json_bytes(&grid)?)?;
    }
    let state = rankaug::training::train(&exp, job.init, &inputs, &mut |_| {})?;
    let hash = config_hash(&exp);
    save_via(&mut m, "ranker.ckpt", &g.out_dir, |p| state.ranker.save(p, exp.seed, &hash))?;
    m.output("history.csv", history_csv(&state.history).as_bytes())?;
    m.output("config.json", &json_bytes(&exp)?)?;
    m.finish()?;
    let last = state.history.last();
    println!(
        "{} steps on {} triples, final loss {:.4} [{:.1}s] -> {}",
        state.step,
        job.triples.len(),
        last.map_or(f64::NAN, |r| r.loss),
        started.elapsed().as_secs_f64(),
        g.out_dir.join("ranker.ckpt").display()
    );
    Ok(0)
}

fn rerank(g: &Global, checkpoint: &Path, corpus: &Path, queries: &Path, run: &Path, out: &str) -> Result<u8> {
    let mut m = Manifest::new("rerank", &g.out_dir);
    for p in [checkpoint, corpus, queries, run] {
        m.input(p)?;
    }
    let (ranker, meta) = Ranker::load(checkpoint)?;
    m.seed = Some(meta.seed);
    let by_id: HashMap<String, Arc<Document>> = load_corpus(corpus)?
        .into_iter()
        .map(|d| (d.doc_id.clone(), Arc::new(d)))
        .collect();
    let queries: HashMap<String, Query> = load_queries(queries)?
        .into_iter()
        .map(|q| (q.query_id.clone(), q))
        .collect();
    let entries = load_run(run)?;
    let reranked = rerank_run(&ranker, &entries, &queries, &by_id, "rankaug")?;
    m.output(out, run_to_string(&reranked).as_bytes())?;
    m.finish()?;
    println!("{} entries re-ranked -> {}", reranked.len(), g.out_dir.join(out).display());
    Ok(0)
}

fn eval(g: &Global, a: &EvalArgs) -> Result<u8> {
    let mut m = Manifest::new("eval", &g.out_dir);
    m.input(&a.run)?;
    m.input(&a.qrels)?;
    let qrels = load_qrels(&a.qrels)?;
    let system = ndcg_at_k(&load_run(&a.run)?, &qrels, a.k);
    let mut report = EvalReport::from_metric(&system);
    if let Some(b) = &a.baseline {
        m.input(b)?;
        let seed = g.seed.unwrap_or(DEFAULT_SEED);
        m.seed = Some(seed);
        let base = ndcg_at_k(&load_run(b)?, &qrels, a.k);
        let sig = paired_significance(&system, &base, a.permutations, seed)?;
        report.p_value = Some(sig.p_value);
        report.baseline_mean = Some(base.mean);
        report.relative_improvement = Some(relative_improvement(&system, &base)?);
    }
    report.model = a.model.clone();
    report.size = a.size.clone();
    report.method = a.method.clone();
    m.output(&a.out, &json_bytes(&report)?)?;
    m.finish()?;
    print!("{}", render_markdown(std::slice::from_ref(&report)));
    if !system.no_relevant.is_empty() {
        println!("{} queries without relevant documents skipped", system.no_relevant.len());
    }
    Ok(0)
}

fn gradcheck(g: &Global, n_triples: usize) -> Result<u8> {
    if n_triples == 0 {
        return Err(Usage("--triples must be at least 1".into()).into());
    }
    let mut m = Manifest::new("gradcheck", &g.out_dir);
    let (mut exp, paths) = match &g.config {
        Some(p) => {
            m.config = Some(p.display().to_string());
            m.input(p)?;
            let c = config::load(p)?;
            (c.experiment, c.paths)
        }
        None => (ExperimentConfig::default(), DataPaths::default()),
    };
    if let Some(s) = g.seed {
        exp.seed = s;
    }
    m.seed = Some(exp.seed);
    exp.dataset_size = 2 * n_triples;
    exp.batch_size = n_triples.max(2);

    let loaded = if paths.has_data() {
        load_data(&paths, &mut m)?
    } else {
        let corpus = generate(&SynthConfig {
            n_queries: 8,
            background_docs: 20,
            filler_vocab: 100,
            min_sentences: 3,
            max_sentences: 5,
            emb_dim: exp.emb_dim,
            seed: exp.seed,
            ..SynthConfig::default()
        });
        let run = Bm25Index::build(&corpus.docs)?.run(&corpus.queries, exp.top_k, "bm25");
        Loaded {
            data: Dataset::new(corpus.docs, corpus.queries, corpus.qrels, Some(corpus.embeddings))?,
            run,
            selector: None,
        }
    };
    let job = prepare(&exp, &loaded.data, &loaded.run, loaded.selector)?;
    let triples = match &job.scorer {
        Some(scorer) => augment_batch(&job.triples, &loaded.data.queries, exp.k_a, scorer, &job.pool, derive_seed(exp.seed, &[9]))?,
        None => job.triples.clone(),
    };
    let batch = ranker_batch(&job.init, &triples, &loaded.data.queries)?;
    let started = Instant::now();
    let report = grad_check(&job.init, &batch, &exp.loss, None)?;
    let pass = report.max_rel_error < GRADCHECK_TOLERANCE;
    m.output(
        "gradcheck.json",
        &json_bytes(&serde_json::json!({
            "loss": exp.loss,
            "instances": batch.inputs.len(),
            "checked": report.checked,
            "max_rel_error": report.max_rel_error,
            "worst_param": report.worst_param,
            "analytic": report.analytic,
            "numeric": report.numeric,
            "tolerance": GRADCHECK_TOLERANCE,
            "pass": pass,
        }))?,
    )?;
    m.finish()?;
    println!(
        "max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e}; {} coordinates, {} instances, {:.1}s): {}",
        report.max_rel_error,
        report.worst_param,
        report.analytic,
        report.numeric,
        report.checked,
        batch.inputs.len(),
        started.elapsed().as_secs_f64(),
        if pass { "ok" } else { "FAILED" }
    );
    Ok(if pass { 0 } else { 1 })
}

fn report(g: &Global, paths: &[std::path::PathBuf], out: &str) -> Result<u8> {
    let mut m = Manifest::new("report", &g.out_dir);
    let mut reports = Vec::new();
    for p in paths {
        m.input(p)?;
        let text = fs::read_to_string(p).map_err(|source| rankaug::Error::Io {
            path: p.clone(),
            source,
        })?;
        let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("{} is not an eval report", p.display()))?;
        reports.push(r);
    }
    let table = render_markdown(&reports);
    m.output(out, table.as_bytes())?;
    m.finish()?;
    print!("{table}");
    Ok(0)
}

fn retrieve(g: &Global, corpus: &Path, queries: &Path, k: usize, out: &str) -> Result<u8> {
    let mut m = Manifest::new("retrieve", &g.out_dir);
    m.input(corpus)?;
    m.input(queries)?;
    let index = Bm25Index::build(&load_corpus(corpus)?)?;
    let run = index.run(&load_queries(queries)?, k, "bm25");
    m.output(out, run_to_string(&run).as_bytes())?;
    m.finish()?;
    println!("{} entries -> {}", run.len(), g.out_dir.join(out).display());
    Ok(0)
}

fn synth(g: &Global, top_k: usize) -> Result<u8> {
    let mut cfg: SynthConfig = match &g.config {
        Some(p) => parse_strict(p)?,
        None => SynthConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    let mut m = Manifest::new("synth", &g.out_dir);
    m.config = g.config.as_ref().map(|p| p.display().to_string());
    m.seed = Some(cfg.seed);
    if let Some(p) = &g.config {
        m.input(p)?;
    }
    let corpus = generate(&cfg);
    let run = Bm25Index::build(&corpus.docs)?.run(&corpus.queries, top_k, "bm25");
    let (train_q, test_q) = corpus.split_queries();
    m.output("corpus.tsv", corpus.corpus_tsv().as_bytes())?;
    m.output("queries.tsv", corpus.queries_tsv().as_bytes())?;
    m.output("qrels.txt", corpus.qrels.to_trec_string().as_bytes())?;
    m.output("embeddings.txt", corpus.embeddings.to_text().as_bytes())?;
    m.output("train.run", run_to_string(&Dataset::restrict(&run, &train_q)).as_bytes())?;
    m.output("test.run", run_to_string(&Dataset::restrict(&run, &test_q)).as_bytes())?;
    m.finish()?;
    println!(
        "{} documents, {} queries ({} train, {} test) -> {}",
        corpus.docs.len(),
        corpus.queries.len(),
        train_q.len(),
        test_q.len(),
        g.out_dir.display()
    );
    Ok(0)
}
