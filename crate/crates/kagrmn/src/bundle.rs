//! A checkpoint together with everything needed to run it again.
//!
//! Beside `model.ckpt` live `model.config.toml`, `model.vocab.txt`,
//! `model.relations.txt` and, after training, `model.metrics.json`.

use std::path::{Path, PathBuf};

use kagrmn_core::encoder::Vocabulary;
use kagrmn_core::heads::Distribution;
use kagrmn_core::model::prepare;
use kagrmn_core::syntaxgraph::RelationVocab;
use kagrmn_core::{ConfusionMatrix, Graph, Metrics, Model, ModelConfig, ParamStore, PreparedSample, Sample, Sentiment};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::{load_config, save_config};
use crate::error::Result;
use crate::vocab::{load_relations, load_vocabulary, save_relations, save_vocabulary};

/// `dir/stem.suffix` for a checkpoint at `dir/stem.ext`.
pub fn sibling(checkpoint: &Path, suffix: &str) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    checkpoint.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Debug, Clone)]
pub struct Bundle {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub relations: RelationVocab,
    pub model: Model,
    pub store: ParamStore<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    /// Probabilities in `[negative, positive, neutral]` order.
    pub distribution: [f64; 3],
    pub label: Sentiment,
}

impl Bundle {
    /// Freshly initialized parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig, vocab: Vocabulary, relations: RelationVocab) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(&mut store, config.clone(), vocab.len(), relations.len(), &mut rng)?;
        Ok(Self {
            config,
            vocab,
            relations,
            model,
            store,
        })
    }

    pub fn save(&self, checkpoint_path: &Path) -> Result<()> {
        save_config(&sibling(checkpoint_path, "config.toml"), &self.config)?;
        save_vocabulary(&sibling(checkpoint_path, "vocab.txt"), &self.vocab)?;
        save_relations(&sibling(checkpoint_path, "relations.txt"), &self.relations)?;
        checkpoint::save(checkpoint_path, &self.store)
    }

    /// Loads with the stored configuration, or with `config` when given; the
    /// checkpoint must match whichever configuration is used.
    pub fn load(checkpoint_path: &Path, config: Option<ModelConfig>) -> Result<Self> {
        let config = match config {
            Some(c) => c,
            None => load_config(&sibling(checkpoint_path, "config.toml"))?,
        };
        let vocab = load_vocabulary(&sibling(checkpoint_path, "vocab.txt"))?;
        let relations = load_relations(&sibling(checkpoint_path, "relations.txt"))?;
        let mut bundle = Self::new(config, vocab, relations)?;
        checkpoint::load_into(checkpoint_path, &mut bundle.store)?;
        Ok(bundle)
    }

    pub fn prepare(&self, sample: &Sample) -> Result<PreparedSample> {
        Ok(prepare(sample, &self.vocab, &self.relations, &self.config)?)
    }

    pub fn distribution(&self, input: &PreparedSample) -> Result<Distribution> {
        let mut g = Graph::new();
        let out = self.model.forward(&mut g, &self.store, input)?;
        Ok(Distribution::from_logits(g.value(out.logits).data()))
    }

    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<Prediction>> {
        samples
            .iter()
            .map(|s| {
                let p = self.distribution(&self.prepare(s)?)?;
                Ok(Prediction {
                    id: s.id.clone(),
                    distribution: p.0,
                    label: p.argmax(),
                })
            })
            .collect()
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<Metrics> {
        let preds = self.predict(samples)?;
        Ok(ConfusionMatrix::from_pairs(samples.iter().zip(&preds).map(|(s, p)| (s.label, p.label))).metrics())
    }
}
