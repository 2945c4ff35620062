//! Word-vector tables in the plain text format `word v1 v2 ... vd`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("embedding table is empty")]
    Empty,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Embeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl Embeddings {
    /// Builds a table from `(word, vector)` pairs; words are lowercased.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut e = Embeddings::default();
        for (i, (w, v)) in pairs.into_iter().enumerate() {
            e.insert(i + 1, w.as_ref(), v)?;
        }
        Ok(e)
    }

    fn insert(&mut self, line: usize, word: &str, v: Vec<f64>) -> Result<(), EmbeddingError> {
        if v.is_empty() {
            return Err(EmbeddingError::Parse { line, message: format!("{word:?} has no components") });
        }
        if self.dim == 0 {
            self.dim = v.len();
        } else if v.len() != self.dim {
            return Err(EmbeddingError::Parse {
                line,
                message: format!("{word:?} has {} components, expected {}", v.len(), self.dim),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbeddingError::Parse { line, message: format!("{word:?} has a non-finite component") });
        }
        // First occurrence wins, as in most tools that read this format.
        self.vectors.entry(word.to_lowercase()).or_insert(v);
        Ok(())
    }

    /// Parses the text format. A leading `count dim` header line is skipped.
    pub fn parse(raw: &str) -> Result<Self, EmbeddingError> {
        let mut e = Embeddings::default();
        for (i, line) in raw.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let rest: Vec<&str> = parts.collect();
            if i == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
                continue;
            }
            let v = rest
                .iter()
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|err| EmbeddingError::Parse { line: i + 1, message: err.to_string() })?;
            e.insert(i + 1, word, v)?;
        }
        if e.vectors.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        Ok(e)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&raw)
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

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// Vectors of the in-vocabulary tokens, in token order.
    pub fn lookup<'a, S: AsRef<str>>(&'a self, tokens: &'a [S]) -> impl Iterator<Item = &'a [f64]> + 'a {
        tokens.iter().filter_map(|t| self.get(t.as_ref()))
    }

    /// Mean of the in-vocabulary vectors, or `None` if there are none.
    pub fn mean<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.dim];
        let mut n = 0usize;
        for v in self.lookup(tokens) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            n += 1;
        }
        (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
    }

    /// Per dimension, the component with the largest magnitude (sign kept;
    /// the earliest token wins ties).
    pub fn extrema<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<f64>> {
        let mut out: Option<Vec<f64>> = None;
        for v in self.lookup(tokens) {
            match &mut out {
                None => out = Some(v.to_vec()),
                Some(acc) => {
                    for (a, x) in acc.iter_mut().zip(v) {
                        if x.abs() > a.abs() {
                            *a = *x;
                        }
                    }
                }
            }
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dot / sqrt(|a|^2 |b|^2)`, clamped to [-1, 1]. `None` for a zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a);
    let nb = dot(b, b);
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((dot(a, b) / (na * nb).sqrt()).clamp(-1.0, 1.0))
}
