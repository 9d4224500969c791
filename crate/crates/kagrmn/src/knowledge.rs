//! Knowledge-base and static-embedding files, and corpus-level retrieval.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use kagrmn_core::retrieval::{parse_stopwords, Candidate, EmbeddingTable, KnowledgeStore, RetrievalConfig};
use kagrmn_core::Sample;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, Error, Result};

/// JSON object mapping aspect key to `[{"tokens": [...]}, ...]`.
pub fn parse_kb(text: &str, stopwords: BTreeSet<String>) -> Result<KnowledgeStore> {
    let raw: BTreeMap<String, Vec<Candidate>> = serde_json::from_str(text)?;
    let mut store = KnowledgeStore::new(stopwords);
    for (key, candidates) in raw {
        store.insert(&key, candidates.into_iter().map(|c| c.tokens).collect())?;
    }
    Ok(store)
}

pub fn load_kb(path: &Path, stopwords: BTreeSet<String>) -> Result<KnowledgeStore> {
    parse_kb(&read_to_string(path)?, stopwords).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn load_stopwords(path: &Path) -> Result<BTreeSet<String>> {
    Ok(parse_stopwords(&read_to_string(path)?))
}

/// One token per line followed by its space-separated components.
pub fn parse_embeddings(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let vector = parts
            .map(|p| p.parse::<f64>().map_err(|_| err(format!("`{p}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        if vector.is_empty() {
            return Err(err(format!("token `{token}` has no components")));
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        t.insert(token, vector).map_err(|e| err(e.to_string()))?;
    }
    table.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "no embeddings".into(),
    })
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    parse_embeddings(&read_to_string(path)?, path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRecord {
    pub id: String,
    pub aspect: Vec<String>,
    pub key: String,
    pub resolved: bool,
    pub candidate: Option<usize>,
    pub score: Option<f64>,
    pub description_tokens: Option<Vec<String>>,
}

/// Attaches the best description to every sample; misses keep `None`.
pub fn retrieve(
    samples: &mut [Sample],
    kb: &KnowledgeStore,
    table: &EmbeddingTable,
    cfg: &RetrievalConfig,
) -> Vec<RetrievalRecord> {
    samples
        .iter_mut()
        .map(|s| {
            let aspect = s.aspect_tokens().to_vec();
            let hit = kb.resolve(&aspect, &s.tokens, table, cfg);
            s.description_tokens = hit.as_ref().map(|h| h.tokens.clone());
            RetrievalRecord {
                id: s.id.clone(),
                key: kb.key(&aspect),
                aspect,
                resolved: hit.is_some(),
                candidate: hit.as_ref().map(|h| h.index),
                score: hit.as_ref().and_then(|h| h.score),
                description_tokens: hit.map(|h| h.tokens),
            }
        })
        .collect()
}

/// Fraction of records that resolved, 0 for none.
pub fn coverage(records: &[RetrievalRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.resolved).count() as f64 / records.len() as f64
}
