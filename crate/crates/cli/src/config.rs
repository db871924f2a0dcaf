//! Experiment config files: data paths next to the training settings.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;
use rankaug::training::ExperimentConfig;
use serde_json::{Map, Value};

use crate::Usage;

const PATH_KEYS: [&str; 6] = ["corpus", "queries", "qrels", "run", "embeddings", "selector"];

/// Data files named by a config, resolved against the config's directory.
#[derive(Debug, Clone, Default)]
pub struct DataPaths {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub run: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub selector: Option<PathBuf>,
}

impl DataPaths {
    fn set(&mut self, key: &str, path: PathBuf) {
        match key {
            "corpus" => self.corpus = Some(path),
            "queries" => self.queries = Some(path),
            "qrels" => self.qrels = Some(path),
            "run" => self.run = Some(path),
            "embeddings" => self.embeddings = Some(path),
            _ => self.selector = Some(path),
        }
    }

    pub fn has_data(&self) -> bool {
        self.corpus.is_some() || self.queries.is_some() || self.qrels.is_some() || self.run.is_some()
    }

    /// The four required inputs, or a usage error naming every missing key.
    pub fn required(&self) -> Result<(PathBuf, PathBuf, PathBuf, PathBuf)> {
        match (&self.corpus, &self.queries, &self.qrels, &self.run) {
            (Some(c), Some(q), Some(r), Some(u)) => Ok((c.clone(), q.clone(), r.clone(), u.clone())),
            _ => {
                let missing: Vec<&str> = [
                    ("corpus", &self.corpus),
                    ("queries", &self.queries),
                    ("qrels", &self.qrels),
                    ("run", &self.run),
                ]
                .iter()
                .filter(|(_, v)| v.is_none())
                .map(|(k, _)| *k)
                .collect();
                Err(Usage(format!("config is missing {}", missing.join(", "))).into())
            }
        }
    }
}

pub struct LoadedConfig {
    pub paths: DataPaths,
    pub experiment: ExperimentConfig,
}

pub fn load(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path).map_err(|source| rankaug::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text, path)
}

pub fn parse(text: &str, path: &Path) -> Result<LoadedConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Usage(format!("{}: {e}", path.display())))?;
    let Value::Object(mut map) = value else {
        return Err(Usage(format!("{}: config must be a JSON object", path.display())).into());
    };
    let base = path.parent().unwrap_or(Path::new(""));
    let mut paths = DataPaths::default();
    let mut errs = Vec::new();
    for key in PATH_KEYS {
        match map.remove(key) {
            None | Some(Value::Null) => {}
            Some(Value::String(s)) => paths.set(key, base.join(s)),
            Some(other) => errs.push(format!("{key}: expected a path string, got {other}")),
        }
    }
    let unknown = unknown_keys(&map);
    let experiment = match serde_json::from_value::<ExperimentConfig>(Value::Object(map)) {
        Ok(c) => Some(c),
        Err(e) => {
            if unknown.is_empty() {
                errs.push(e.to_string());
            }
            None
        }
    };
    errs.extend(unknown);
    if let Some(c) = &experiment {
        errs.extend(c.validate());
    }
    match experiment {
        Some(experiment) if errs.is_empty() => Ok(LoadedConfig { paths, experiment }),
        _ => {
            errs.dedup();
            Err(rankaug::Error::InvalidConfig(errs).into())
        }
    }
}

/// Keys serde would reject, listed together rather than one at a time.
fn unknown_keys(map: &Map<String, Value>) -> Vec<String> {
    let Value::Object(known) = serde_json::to_value(ExperimentConfig::default()).expect("config serializes") else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (k, v) in map {
        match (known.get(k), v) {
            (None, _) => out.push(format!("{k}: unknown key")),
            (Some(Value::Object(inner)), Value::Object(given)) => {
                out.extend(given.keys().filter(|g| !inner.contains_key(*g)).map(|g| format!("{k}.{g}: unknown key")));
            }
            _ => {}
        }
    }
    out
}

/// Stable digest of the resolved training settings.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    crate::manifest::sha256_hex(json.as_bytes())
}
