//! Text → sparse TF-IDF vectors.
//!
//! Weights use raw term counts and smoothed idf, `ln((1 + N) / (1 + df)) + 1`,
//! and every non-empty vector is L2-normalized. Terms absent from the fitted
//! vocabulary are dropped.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::{Arc, LazyLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

static ENGLISH_STOPWORDS: LazyLock<Arc<HashSet<String>>> = LazyLock::new(|| {
    Arc::new(
        include_str!("../resources/stopwords.txt")
            .lines()
            .map(str::trim)
            .filter(|w| !w.is_empty())
            .map(str::to_owned)
            .collect(),
    )
});

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VectorizerError {
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
}

/// Lowercases, splits on every non-alphanumeric character and drops tokens
/// shorter than two characters, then stopwords if enabled.
#[derive(Debug, Clone)]
pub struct Tokenizer {
    stopwords: Option<Arc<HashSet<String>>>,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::english()
    }
}

impl Tokenizer {
    /// The bundled English stopword list.
    pub fn english() -> Self {
        Self {
            stopwords: Some(ENGLISH_STOPWORDS.clone()),
        }
    }

    pub fn without_stopwords() -> Self {
        Self { stopwords: None }
    }

    pub fn with_stopwords<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stopwords: Some(Arc::new(words.into_iter().map(|w| w.as_ref().to_lowercase()).collect())),
        }
    }

    pub fn stopwords_enabled(&self) -> bool {
        self.stopwords.is_some()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        text.to_lowercase()
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| t.chars().count() >= 2)
            .filter(|t| self.stopwords.as_ref().is_none_or(|s| !s.contains(*t)))
            .map(str::to_owned)
            .collect()
    }
}

/// Tokenize with the bundled stopword list on or off.
pub fn tokenize(text: &str, stopwords: bool) -> Vec<String> {
    if stopwords {
        Tokenizer::english().tokenize(text)
    } else {
        Tokenizer::without_stopwords().tokenize(text)
    }
}

/// Sparse term → weight map. Weights are finite and non-negative; zero
/// weights are never stored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DocumentVector {
    weights: BTreeMap<String, f64>,
}

impl DocumentVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_weights<I, S>(weights: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let weights = weights
            .into_iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|(t, w)| {
                debug_assert!(w.is_finite() && w > 0.0, "weight must be finite and positive");
                (t.into(), w)
            })
            .collect();
        Self { weights }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn get(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(t, w)| (t.as_str(), *w))
    }

    pub fn norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &DocumentVector) -> f64 {
        let (small, large) = if self.len() <= other.len() {
            (self, other)
        } else {
            (other, self)
        };
        small.iter().map(|(t, w)| w * large.get(t)).sum()
    }

    /// Unit-length copy; an empty or zero vector stays empty.
    pub fn normalized(&self) -> DocumentVector {
        let norm = self.norm();
        if norm == 0.0 {
            return DocumentVector::new();
        }
        DocumentVector::from_weights(self.iter().map(|(t, w)| (t.to_string(), w / norm)))
    }

    pub fn scaled(&self, factor: f64) -> DocumentVector {
        DocumentVector::from_weights(self.iter().map(|(t, w)| (t.to_string(), w * factor)))
    }

    /// Element-wise sum.
    pub fn add(&self, other: &DocumentVector) -> DocumentVector {
        let mut weights = self.weights.clone();
        for (t, w) in other.iter() {
            *weights.entry(t.to_string()).or_insert(0.0) += w;
        }
        DocumentVector { weights }
    }
}

/// Document frequencies fitted over a corpus.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    n_docs: usize,
    df: BTreeMap<String, usize>,
    tokenizer: Tokenizer,
}

impl Vocabulary {
    pub fn fit<S: AsRef<str>>(corpus: &[S], tokenizer: Tokenizer) -> Result<Self, VectorizerError> {
        if corpus.is_empty() {
            return Err(VectorizerError::EmptyCorpus);
        }
        let mut df = BTreeMap::new();
        for doc in corpus {
            let distinct: BTreeSet<String> = tokenizer.tokenize(doc.as_ref()).into_iter().collect();
            for term in distinct {
                *df.entry(term).or_insert(0) += 1;
            }
        }
        Ok(Self {
            n_docs: corpus.len(),
            df,
            tokenizer,
        })
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn df(&self, term: &str) -> Option<usize> {
        self.df.get(term).copied()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, usize)> {
        self.df.iter().map(|(t, n)| (t.as_str(), *n))
    }

    pub fn stopwords_enabled(&self) -> bool {
        self.tokenizer.stopwords_enabled()
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.df(term).map(|df| idf(self.n_docs, df))
    }

    /// Un-normalized tf·idf weights for the in-vocabulary terms of `text`.
    pub fn raw_weights(&self, text: &str) -> DocumentVector {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for token in self.tokenizer.tokenize(text) {
            if self.df.contains_key(&token) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        DocumentVector::from_weights(counts.into_iter().map(|(t, tf)| {
            let w = tf as f64 * idf(self.n_docs, self.df[&t]);
            (t, w)
        }))
    }

    pub fn transform(&self, text: &str) -> DocumentVector {
        self.raw_weights(text).normalized()
    }
}

/// Smoothed inverse document frequency; always ≥ 1 for `df ≤ n_docs`.
pub fn idf(n_docs: usize, df: usize) -> f64 {
    ((1.0 + n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
}

#[derive(Debug, Error)]
#[error("embedding provider failed: {0}")]
pub struct EmbeddingError(pub String);

/// Extension point for dense sentence embeddings from an external model.
/// The default build routes with TF-IDF and ships no implementation.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f32>, EmbeddingError>;
}

pub fn dense_cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
