//! TREC qrels and run files.
//!
//! Qrels lines are `qid 0 docid grade`; run lines are
//! `qid Q0 docid rank score tag`. Fields are whitespace separated.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relevance judgments keyed by query, then document.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Qrels {
    pub judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl Qrels {
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> bool {
        self.judgments
            .entry(query_id.to_string())
            .or_default()
            .insert(doc_id.to_string(), grade)
            .is_none()
    }

    pub fn grade(&self, query_id: &str, doc_id: &str) -> Option<u32> {
        self.judgments.get(query_id)?.get(doc_id).copied()
    }

    /// Binary relevance: judged with grade >= 1.
    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.grade(query_id, doc_id).is_some_and(|g| g >= 1)
    }

    pub fn for_query(&self, query_id: &str) -> Option<&BTreeMap<String, u32>> {
        self.judgments.get(query_id)
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parse(content: &str, path: &Path) -> Result<Self> {
        let mut qrels = Qrels::default();
        for (i, line) in content.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("expected 4 fields `qid 0 docid grade`, got {}", fields.len()),
                ));
            }
            let grade: i64 = fields[3]
                .parse()
                .map_err(|_| Error::format(path, lineno, format!("bad grade {:?}", fields[3])))?;
            let grade = u32::try_from(grade)
                .map_err(|_| Error::format(path, lineno, format!("grade {grade} is negative")))?;
            if !qrels.insert(fields[0], fields[2], grade) {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("duplicate judgment ({}, {})", fields[0], fields[2]),
                ));
            }
        }
        Ok(qrels)
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for (q, docs) in &self.judgments {
            for (d, g) in docs {
                let _ = writeln!(out, "{q} 0 {d} {g}");
            }
        }
        out
    }
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Qrels::parse(&content, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

impl RunEntry {
    pub fn to_line(&self) -> String {
        format!(
            "{} Q0 {} {} {:.6} {}",
            self.query_id, self.doc_id, self.rank, self.score, self.tag
        )
    }
}

/// Sorts scored documents (descending score, ties by doc_id) and assigns
/// ranks starting at 1.
///
/// Scores are first rounded to the 6 decimals a run file stores, so a written
/// run always reloads with the same order.
pub fn ranked_entries(query_id: &str, scored: Vec<(String, f64)>, tag: &str) -> Vec<RunEntry> {
    let mut scored: Vec<(String, f64)> = scored
        .into_iter()
        .map(|(d, s)| (d, (s * 1e6).round() / 1e6))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (doc_id, score))| RunEntry {
            query_id: query_id.to_string(),
            doc_id,
            rank: i + 1,
            score,
            tag: tag.to_string(),
        })
        .collect()
}

/// Groups run entries per query, each group sorted by rank.
pub fn group_by_query(entries: &[RunEntry]) -> BTreeMap<&str, Vec<&RunEntry>> {
    let mut groups: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
    for e in entries {
        groups.entry(e.query_id.as_str()).or_default().push(e);
    }
    for list in groups.values_mut() {
        list.sort_by_key(|e| e.rank);
    }
    groups
}

/// Checks ranks are `1..=n` without gaps and scores are non-increasing with
/// ties ordered by doc_id. Returns the offending query on failure.
pub fn validate_run(entries: &[RunEntry]) -> std::result::Result<(), String> {
    for (qid, list) in group_by_query(entries) {
        for (i, e) in list.iter().enumerate() {
            if e.rank != i + 1 {
                return Err(format!("query {qid}: ranks are not 1..{} without gaps", list.len()));
            }
            if i > 0 {
                let prev = list[i - 1];
                let ordered = prev.score > e.score || (prev.score == e.score && prev.doc_id < e.doc_id);
                if !ordered {
                    return Err(format!(
                        "query {qid}: rank {} ({}) is not ordered after rank {} ({})",
                        e.rank, e.doc_id, prev.rank, prev.doc_id
                    ));
                }
            }
        }
    }
    Ok(())
}

pub fn parse_run(content: &str, path: &Path) -> Result<Vec<RunEntry>> {
    let mut entries = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 6 {
            return Err(Error::format(
                path,
                lineno,
                format!("expected 6 fields `qid Q0 docid rank score tag`, got {}", fields.len()),
            ));
        }
        let rank: usize = fields[3]
            .parse()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| Error::format(path, lineno, format!("bad rank {:?}", fields[3])))?;
        let score: f64 = fields[4]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::format(path, lineno, format!("bad score {:?}", fields[4])))?;
        let key = (fields[0].to_string(), fields[2].to_string());
        if let Some(prev) = seen.insert(key, lineno) {
            return Err(Error::format(
                path,
                lineno,
                format!("document {} already ranked for {} on line {prev}", fields[2], fields[0]),
            ));
        }
        entries.push(RunEntry {
            query_id: fields[0].to_string(),
            doc_id: fields[2].to_string(),
            rank,
            score,
            tag: fields[5].to_string(),
        });
    }
    validate_run(&entries).map_err(|m| Error::format(path, 0, m))?;
    Ok(entries)
}

pub fn load_run(path: impl AsRef<Path>) -> Result<Vec<RunEntry>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(&content, path)
}

pub fn run_to_string(entries: &[RunEntry]) -> String {
    let mut out = String::with_capacity(entries.len() * 40);
    for e in entries {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

pub fn write_run(entries: &[RunEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, run_to_string(entries)).map_err(|e| Error::io(path, e))
}
