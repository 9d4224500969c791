//! Aspect description retrieval from a local knowledge store.
//!
//! Candidates for an aspect are ranked by the cosine between the mixed query
//! `alpha * avg(C) + (1 - alpha) * e(domain)` and `avg(D')`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

pub fn default_stopwords() -> BTreeSet<String> {
    parse_stopwords(DEFAULT_STOPWORDS)
}

/// One lower-cased word per non-empty line; `#` starts a comment line.
pub fn parse_stopwords(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

/// Suffix-rule lemmatizer for plural and verbal endings.
pub fn lemmatize(token: &str) -> String {
    let w = token.to_lowercase();
    let n = w.chars().count();
    let strip = |suffix: &str, add: &str| {
        let mut s = String::from(&w[..w.len() - suffix.len()]);
        s.push_str(add);
        s
    };
    if n > 4 && w.ends_with("ies") {
        return strip("ies", "y");
    }
    if w.ends_with("sses") {
        return strip("es", "");
    }
    if n > 4 && ["ches", "shes", "xes", "zes"].iter().any(|s| w.ends_with(s)) {
        return strip("es", "");
    }
    if n > 5 && w.ends_with("ing") {
        return strip("ing", "");
    }
    if n > 4 && w.ends_with("ied") {
        return strip("ied", "y");
    }
    if n > 4 && w.ends_with("ed") && !w.ends_with("eed") {
        return strip("ed", "");
    }
    if n > 3 && w.ends_with('s') && !keeps_final_s(&w, n) {
        return strip("s", "");
    }
    w
}

const SINGULAR_US: [&str; 14] = [
    "asparagus",
    "cactus",
    "campus",
    "citrus",
    "couscous",
    "focus",
    "hummus",
    "octopus",
    "status",
    "virus",
    "bonus",
    "census",
    "chorus",
    "fungus",
];

fn keeps_final_s(w: &str, n: usize) -> bool {
    w.ends_with("ss")
        || w.ends_with("is")
        || w.ends_with("ous")
        || (w.ends_with("us") && (n <= 4 || SINGULAR_US.contains(&w)))
}

/// Lower-cased, stop-word-free, lemmatized lookup key.
pub fn normalize_key<S: AsRef<str>>(tokens: &[S], stopwords: &BTreeSet<String>) -> String {
    let kept: Vec<String> = tokens
        .iter()
        .flat_map(|t| t.as_ref().split_whitespace())
        .map(str::to_lowercase)
        .filter(|t| !stopwords.contains(t))
        .map(|t| lemmatize(&t))
        .collect();
    kept.join(" ")
}

/// Static word vectors used only for retrieval.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
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

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::ShapeMismatch {
                op: "embedding_insert",
                left: alloc::vec![self.dim],
                right: alloc::vec![vector.len()],
            });
        }
        self.vectors.insert(token.to_string(), vector);
        Ok(())
    }

    /// Exact match first, then the lower-cased form.
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors
            .get(token)
            .or_else(|| self.vectors.get(&token.to_lowercase()))
            .map(Vec::as_slice)
    }

    pub fn tokens(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.vectors.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Every vector multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * c).collect()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub alpha: f64,
    pub domain_label: String,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            domain_label: "restaurant".into(),
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self, table: &EmbeddingTable) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if table.get(&self.domain_label).is_none() {
            return Err(Error::Config(format!(
                "domain label {:?} has no embedding",
                self.domain_label
            )));
        }
        Ok(())
    }
}

/// Mean embedding of the non-stop-word tokens present in `table`.
pub fn avg_embedding<S: AsRef<str>>(
    tokens: &[S],
    table: &EmbeddingTable,
    stopwords: &BTreeSet<String>,
) -> Result<Vec<f64>> {
    let mut sum = alloc::vec![0.0; table.dim()];
    let mut count = 0usize;
    for t in tokens {
        let t = t.as_ref();
        if stopwords.contains(&t.to_lowercase()) {
            continue;
        }
        if let Some(v) = table.get(t) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("embeddable tokens"));
    }
    let inv = 1.0 / count as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(sum)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::Degenerate("zero-norm embedding"));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `alpha * avg(C) + (1 - alpha) * e(domain)`.
pub fn query_vector<S: AsRef<str>>(
    context: &[S],
    table: &EmbeddingTable,
    stopwords: &BTreeSet<String>,
    cfg: &RetrievalConfig,
) -> Result<Vec<f64>> {
    let ctx = avg_embedding(context, table, stopwords)?;
    let domain = table
        .get(&cfg.domain_label)
        .ok_or_else(|| Error::Config(format!("domain label {:?} has no embedding", cfg.domain_label)))?;
    Ok(ctx
        .iter()
        .zip(domain)
        .map(|(c, d)| cfg.alpha * c + (1.0 - cfg.alpha) * d)
        .collect())
}

pub fn similarity<S: AsRef<str>, T: AsRef<str>>(
    context: &[S],
    candidate: &[T],
    table: &EmbeddingTable,
    stopwords: &BTreeSet<String>,
    cfg: &RetrievalConfig,
) -> Result<f64> {
    let q = query_vector(context, table, stopwords, cfg)?;
    let d = avg_embedding(candidate, table, stopwords)?;
    cosine(&q, &d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tokens: Vec<String>,
}

/// Outcome of a successful lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolution {
    pub key: String,
    pub index: usize,
    pub tokens: Vec<String>,
    /// `None` when a lone candidate was taken without scoring or scoring failed.
    pub score: Option<f64>,
}

/// Normalized aspect key to candidate descriptions.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeStore {
    entries: BTreeMap<String, Vec<Vec<String>>>,
    stopwords: BTreeSet<String>,
}

impl Default for KnowledgeStore {
    fn default() -> Self {
        Self::new(default_stopwords())
    }
}

impl KnowledgeStore {
    pub fn new(stopwords: BTreeSet<String>) -> Self {
        Self {
            entries: BTreeMap::new(),
            stopwords,
        }
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn key(&self, aspect: &[impl AsRef<str>]) -> String {
        normalize_key(aspect, &self.stopwords)
    }

    /// Adds candidates under the normalized form of `key`, appending to any
    /// existing list.
    pub fn insert(&mut self, key: &str, candidates: Vec<Vec<String>>) -> Result<()> {
        if candidates.is_empty() || candidates.iter().any(Vec::is_empty) {
            return Err(Error::Empty("knowledge candidates"));
        }
        let k = self.key(&[key]);
        if k.is_empty() {
            return Err(Error::Empty("knowledge key"));
        }
        self.entries.entry(k).or_default().extend(candidates);
        Ok(())
    }

    pub fn candidates(&self, aspect: &[impl AsRef<str>]) -> Option<&[Vec<String>]> {
        self.entries.get(&self.key(aspect)).map(Vec::as_slice)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[Vec<String>])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Picks the candidate most similar to the context; ties go to the
    /// earliest candidate and unscorable candidates rank last.
    pub fn resolve<S: AsRef<str>, T: AsRef<str>>(
        &self,
        aspect: &[S],
        context: &[T],
        table: &EmbeddingTable,
        cfg: &RetrievalConfig,
    ) -> Option<Resolution> {
        let key = self.key(aspect);
        let candidates = self.entries.get(&key)?;
        if candidates.len() == 1 {
            return Some(Resolution {
                key,
                index: 0,
                tokens: candidates[0].clone(),
                score: similarity(context, &candidates[0], table, &self.stopwords, cfg).ok(),
            });
        }
        let query = query_vector(context, table, &self.stopwords, cfg).ok();
        let mut best = (0usize, f64::NEG_INFINITY, None);
        for (i, cand) in candidates.iter().enumerate() {
            let score = query.as_ref().and_then(|q| {
                let d = avg_embedding(cand, table, &self.stopwords).ok()?;
                cosine(q, &d).ok()
            });
            let s = score.unwrap_or(f64::NEG_INFINITY);
            if s > best.1 {
                best = (i, s, score);
            }
        }
        Some(Resolution {
            key,
            index: best.0,
            tokens: candidates[best.0].clone(),
            score: best.2,
        })
    }
}
