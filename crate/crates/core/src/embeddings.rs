//! Word-embedding tables in the plain text format (`token v1 ... vD`).

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    /// Unknown tokens contribute a zero vector (and still count in means).
    #[default]
    Zero,
    /// Unknown tokens are ignored.
    Skip,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub oov_policy: OovPolicy,
}

impl EmbeddingTable {
    pub fn new(dim: usize, oov_policy: OovPolicy) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            oov_policy,
        }
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Invalid(format!(
                "vector of length {} in a table of dim {}",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(token.into(), vector);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Embeddings for `tokens` under the table's OOV policy: zero vectors for
    /// unknown tokens, or nothing at all when skipping.
    pub fn lookup<'a, S: AsRef<str>>(&'a self, tokens: &'a [S]) -> Vec<std::borrow::Cow<'a, [f64]>> {
        use std::borrow::Cow;
        tokens
            .iter()
            .filter_map(|t| match (self.get(t.as_ref()), self.oov_policy) {
                (Some(v), _) => Some(Cow::Borrowed(v)),
                (None, OovPolicy::Zero) => Some(Cow::Owned(vec![0.0; self.dim])),
                (None, OovPolicy::Skip) => None,
            })
            .collect()
    }

    /// Mean embedding of `tokens`; `None` when no token is representable.
    pub fn mean<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<f64>> {
        let rows = self.lookup(tokens);
        if rows.is_empty() {
            return None;
        }
        let mut out = vec![0.0; self.dim];
        for r in &rows {
            for (o, v) in out.iter_mut().zip(r.iter()) {
                *o += v;
            }
        }
        let n = rows.len() as f64;
        out.iter_mut().for_each(|o| *o /= n);
        Some(out)
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }

    pub fn parse(content: &str, expected_dim: Option<usize>, path: &Path) -> Result<Self> {
        let mut table: Option<EmbeddingTable> = None;
        for (i, line) in content.lines().enumerate() {
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values = fields
                .map(|f| f.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::format(path, lineno, "non-numeric field"))?;
            let table = match &mut table {
                Some(t) => t,
                None => {
                    if values.is_empty() {
                        return Err(Error::format(path, lineno, "token without a vector"));
                    }
                    if let Some(d) = expected_dim {
                        if d != values.len() {
                            return Err(Error::format(
                                path,
                                lineno,
                                format!("expected dim {d}, found {}", values.len()),
                            ));
                        }
                    }
                    table.insert(EmbeddingTable::new(values.len(), OovPolicy::default()))
                }
            };
            if values.len() != table.dim {
                return Err(Error::format(
                    path,
                    lineno,
                    format!("inconsistent dimensions: {} vs {}", values.len(), table.dim),
                ));
            }
            // first occurrence wins
            table.vectors.entry(token.to_string()).or_insert(values);
        }
        table.ok_or(Error::EmptyEmbeddings)
    }

    pub fn to_text(&self) -> String {
        let mut tokens: Vec<&String> = self.vectors.keys().collect();
        tokens.sort();
        let mut out = String::new();
        for t in tokens {
            out.push_str(t);
            for v in &self.vectors[t] {
                out.push(' ');
                out.push_str(&format!("{v}"));
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_embeddings(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::parse(&content, expected_dim, path)
}
