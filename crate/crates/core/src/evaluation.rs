//! Re-ranking, nDCG, relative improvement and the paired randomization test.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Query};
use crate::error::{Error, Result};
use crate::ranker::Ranker;
use crate::training::derive_seed;
use crate::trec::{group_by_query, ranked_entries, Qrels, RunEntry};

pub const DEFAULT_PERMUTATIONS: usize = 10_000;
const PERMUTATION_CHUNK: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub k: usize,
    pub mean: f64,
    pub per_query: BTreeMap<String, f64>,
    /// Queries without any relevant judgment (scored 0).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub no_relevant: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub n_permutations: usize,
    pub significant_95: bool,
    pub significant_90: bool,
}

impl SignificanceResult {
    pub fn new(p_value: f64, n_permutations: usize) -> Self {
        SignificanceResult {
            p_value,
            n_permutations,
            significant_95: p_value < 0.05,
            significant_90: p_value < 0.10,
        }
    }

    /// `*` at 95%, `#` at 90%, empty otherwise.
    pub fn marker(&self) -> &'static str {
        if self.significant_95 {
            "*"
        } else if self.significant_90 {
            "#"
        } else {
            ""
        }
    }
}

/// Scores every candidate and orders them by descending score, ties by
/// doc_id, ranks from 1.
pub fn rerank(ranker: &Ranker, query: &Query, candidates: &[Arc<Document>], tag: &str) -> Result<Vec<RunEntry>> {
    if candidates.is_empty() {
        return Err(Error::Invalid(format!("query {} has no candidates", query.query_id)));
    }
    let scored = candidates
        .iter()
        .map(|d| Ok((d.doc_id.clone(), ranker.score_doc(&query.tokens, d)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ranked_entries(&query.query_id, scored, tag))
}

/// Re-ranks the candidates of every query in `run`, queries in parallel.
pub fn rerank_run(
    ranker: &Ranker,
    run: &[RunEntry],
    queries: &HashMap<String, Query>,
    docs: &HashMap<String, Arc<Document>>,
    tag: &str,
) -> Result<Vec<RunEntry>> {
    let groups: Vec<(&str, Vec<&RunEntry>)> = group_by_query(run).into_iter().collect();
    let per_query: Vec<Vec<RunEntry>> = groups
        .par_iter()
        .map(|(qid, entries)| {
            let query = queries
                .get(*qid)
                .ok_or_else(|| Error::Invalid(format!("run references unknown query {qid}")))?;
            let candidates = entries
                .iter()
                .map(|e| {
                    docs.get(&e.doc_id)
                        .cloned()
                        .ok_or_else(|| Error::Invalid(format!("run references unknown document {}", e.doc_id)))
                })
                .collect::<Result<Vec<_>>>()?;
            rerank(ranker, query, &candidates, tag)
        })
        .collect::<Result<_>>()?;
    Ok(per_query.concat())
}

fn gain(grade: u32) -> f64 {
    2f64.powi(grade as i32) - 1.0
}

fn discount(position: usize) -> f64 {
    // position counts from 1
    ((position + 1) as f64).log2()
}

/// nDCG@k of one ranked list of grades against the ideal ordering of `all`.
pub fn ndcg_of(ranked: &[u32], all_judged: &[u32], k: usize) -> Option<f64> {
    let mut ideal = all_judged.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let dcg = |grades: &[u32]| -> f64 {
        grades
            .iter()
            .take(k)
            .enumerate()
            .map(|(i, &g)| gain(g) / discount(i + 1))
            .sum()
    };
    let idcg = dcg(&ideal);
    if idcg == 0.0 {
        None
    } else {
        Some(dcg(ranked) / idcg)
    }
}

/// Exponential-gain nDCG@k per query and its mean. The ideal ordering uses
/// every judged document of the query, retrieved or not.
pub fn ndcg_at_k(run: &[RunEntry], qrels: &Qrels, k: usize) -> MetricReport {
    let mut per_query = BTreeMap::new();
    let mut no_relevant = Vec::new();
    for (qid, entries) in group_by_query(run) {
        let ranked: Vec<u32> = entries
            .iter()
            .map(|e| qrels.grade(qid, &e.doc_id).unwrap_or(0))
            .collect();
        let judged: Vec<u32> = qrels
            .for_query(qid)
            .map(|m| m.values().copied().collect())
            .unwrap_or_default();
        let value = match ndcg_of(&ranked, &judged, k) {
            Some(v) => v,
            None => {
                no_relevant.push(qid.to_string());
                0.0
            }
        };
        per_query.insert(qid.to_string(), value);
    }
    let mean = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    MetricReport {
        metric: format!("ndcg_cut_{k}"),
        k,
        mean,
        per_query,
        no_relevant,
    }
}

fn same_queries(a: &MetricReport, b: &MetricReport) -> Result<()> {
    let ka: BTreeSet<&String> = a.per_query.keys().collect();
    let kb: BTreeSet<&String> = b.per_query.keys().collect();
    if ka != kb {
        return Err(Error::Invalid(format!(
            "reports cover different queries ({} vs {})",
            ka.len(),
            kb.len()
        )));
    }
    Ok(())
}

/// `100 (mean_a - mean_b) / mean_b`.
pub fn relative_improvement(a: &MetricReport, b: &MetricReport) -> Result<f64> {
    same_queries(a, b)?;
    relative_change(a.mean, b.mean)
}

pub fn relative_change(a: f64, b: f64) -> Result<f64> {
    if b == 0.0 {
        return Err(Error::Invalid("baseline mean is 0".into()));
    }
    Ok(100.0 * (a - b) / b)
}

/// Two-sided paired sign-flip randomization test on per-query differences.
/// The p-value is the fraction of random sign patterns whose absolute mean
/// difference reaches the observed one.
pub fn paired_significance(
    a: &MetricReport,
    b: &MetricReport,
    n_permutations: usize,
    seed: u64,
) -> Result<SignificanceResult> {
    same_queries(a, b)?;
    if a.per_query.len() < 2 {
        return Err(Error::Invalid("significance needs at least 2 queries".into()));
    }
    if n_permutations == 0 {
        return Err(Error::Invalid("n_permutations must be positive".into()));
    }
    let diffs: Vec<f64> = a
        .per_query
        .iter()
        .map(|(q, va)| va - b.per_query[q])
        .collect();
    Ok(SignificanceResult::new(
        sign_flip_p_value(&diffs, n_permutations, seed),
        n_permutations,
    ))
}

/// Monte Carlo sign-flip p-value; chunks use their own seeds so the result
/// does not depend on the thread count.
pub fn sign_flip_p_value(diffs: &[f64], n_permutations: usize, seed: u64) -> f64 {
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    let chunks = n_permutations.div_ceil(PERMUTATION_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[c as u64]));
            let todo = PERMUTATION_CHUNK.min(n_permutations - c * PERMUTATION_CHUNK);
            (0..todo)
                .filter(|_| {
                    let s: f64 = diffs
                        .iter()
                        .map(|d| if rng.gen::<bool>() { *d } else { -*d })
                        .sum();
                    (s / n).abs() >= observed - 1e-12
                })
                .count()
        })
        .sum();
    hits as f64 / n_permutations as f64
}

/// One evaluated system as written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub k: usize,
    pub mean: f64,
    pub per_query: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_improvement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
}

impl EvalReport {
    pub fn from_metric(report: &MetricReport) -> Self {
        EvalReport {
            metric: report.metric.clone(),
            k: report.k,
            mean: report.mean,
            per_query: report.per_query.clone(),
            p_value: None,
            baseline_mean: None,
            relative_improvement: None,
            model: None,
            size: None,
            method: None,
        }
    }

    /// `0.583 (+9.1)*`, or just the mean without a baseline.
    pub fn cell(&self) -> String {
        let mut s = format!("{:.3}", self.mean);
        if let Some(d) = self.relative_improvement {
            s.push_str(&format!(" ({d:+.1})"));
        }
        if let Some(p) = self.p_value {
            s.push_str(SignificanceResult::new(p, 0).marker());
        }
        s
    }
}

/// Markdown table with one row per (model, size) and one column per method,
/// in first-appearance order.
pub fn render_markdown(reports: &[EvalReport]) -> String {
    let mut methods: Vec<String> = Vec::new();
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut cells: HashMap<(String, String, String), String> = HashMap::new();
    for r in reports {
        let method = r.method.clone().unwrap_or_else(|| r.metric.clone());
        let row = (
            r.model.clone().unwrap_or_else(|| "-".into()),
            r.size.clone().unwrap_or_else(|| "-".into()),
        );
        if !methods.contains(&method) {
            methods.push(method.clone());
        }
        if !rows.contains(&row) {
            rows.push(row.clone());
        }
        cells.insert((row.0, row.1, method), r.cell());
    }
    let mut out = String::from("| Model | Size |");
    for m in &methods {
        out.push_str(&format!(" {m} |"));
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(methods.len()));
    out.push('\n');
    for (model, size) in rows {
        out.push_str(&format!("| {model} | {size} |"));
        for m in &methods {
            let cell = cells
                .get(&(model.clone(), size.clone(), m.clone()))
                .map(String::as_str)
                .unwrap_or("");
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}
