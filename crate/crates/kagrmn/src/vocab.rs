//! Token and relation vocabularies built from training data, and their files.

use std::path::Path;

use kagrmn_core::encoder::Vocabulary;
use kagrmn_core::syntaxgraph::RelationVocab;
use kagrmn_core::Sample;

use crate::error::{read_to_string, write_atomic, Result};

/// Context and description tokens in first-seen order.
pub fn build_vocabulary(samples: &[Sample]) -> Vocabulary {
    let mut vocab = Vocabulary::new();
    for s in samples {
        for t in s.tokens.iter().chain(s.description_tokens.iter().flatten()) {
            vocab.insert(t);
        }
    }
    vocab
}

/// Dependency labels in first-seen order after the distance buckets.
pub fn build_relations(samples: &[Sample], max_distance: usize) -> RelationVocab {
    let mut rel = RelationVocab::new(max_distance);
    for s in samples {
        for r in &s.dep_rels {
            rel.insert(r);
        }
    }
    rel
}

fn lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty())
}

/// One token per line; the first line gets the first id after the reserved ones.
pub fn save_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut text = vocab.entries().join("\n");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_vocabulary(path: &Path) -> Result<Vocabulary> {
    Ok(Vocabulary::from_tokens(lines(&read_to_string(path)?)))
}

/// Every label in id order, one per line.
pub fn save_relations(path: &Path, rel: &RelationVocab) -> Result<()> {
    let mut text = rel.labels().join("\n");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn load_relations(path: &Path) -> Result<RelationVocab> {
    Ok(RelationVocab::from_labels(lines(&read_to_string(path)?))?)
}
