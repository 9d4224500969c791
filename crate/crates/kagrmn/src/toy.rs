//! Synthetic corpus whose labels hinge on aspect knowledge.
//!
//! Homonym aspects ("chip", "apple", ...) are food in some sentences and
//! hardware in others; the context never says which, only the attached
//! description does. The cue "hot" is positive for food and negative for
//! hardware, "cold" the reverse, and "okay" is neutral for both. The test
//! split holds only homonym sentences with a hot/cold cue, so a model that
//! ignores descriptions cannot beat chance on it.

use std::collections::BTreeMap;
use std::path::Path;

use kagrmn_core::retrieval::Candidate;
use kagrmn_core::{AspectSpan, ModelConfig, Sample, Sentiment};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::to_jsonl;
use crate::error::{io_error, write_atomic, Result};

pub const HOMONYMS: [&str; 5] = ["chip", "apple", "mouse", "cookie", "java"];
const FOOD_ONLY: [&str; 2] = ["pizza", "soup"];
const TECH_ONLY: [&str; 2] = ["laptop", "screen"];
const FOOD_WORDS: [&str; 8] = ["fried", "snack", "food", "sweet", "fruit", "baked", "tasty", "treat"];
const TECH_WORDS: [&str; 8] = [
    "device",
    "computer",
    "part",
    "electronic",
    "hardware",
    "gadget",
    "program",
    "tool",
];

pub const TRAIN_SIZE: usize = 200;
pub const TEST_SIZE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Food,
    Tech,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cue {
    Hot,
    Cold,
    Okay,
}

impl Cue {
    fn word(self) -> &'static str {
        match self {
            Cue::Hot => "hot",
            Cue::Cold => "cold",
            Cue::Okay => "okay",
        }
    }
}

pub fn polarity(domain: Domain, cue: Cue) -> Sentiment {
    match (domain, cue) {
        (_, Cue::Okay) => Sentiment::Neutral,
        (Domain::Food, Cue::Hot) | (Domain::Tech, Cue::Cold) => Sentiment::Positive,
        (Domain::Food, Cue::Cold) | (Domain::Tech, Cue::Hot) => Sentiment::Negative,
    }
}

/// Sentence frame: tokens with `A` and `C` placeholders, heads and relations.
struct Frame {
    tokens: &'static [&'static str],
    heads: &'static [i64],
    rels: &'static [&'static str],
}

const FRAMES: [Frame; 4] = [
    Frame {
        tokens: &["the", "A", "was", "C"],
        heads: &[1, 3, 3, -1],
        rels: &["det", "nsubj", "cop", "root"],
    },
    Frame {
        tokens: &["the", "A", "was", "really", "C"],
        heads: &[1, 4, 4, 4, -1],
        rels: &["det", "nsubj", "cop", "advmod", "root"],
    },
    Frame {
        tokens: &["i", "think", "the", "A", "is", "very", "C", "today"],
        heads: &[1, -1, 3, 6, 6, 6, 1, 6],
        rels: &["nsubj", "root", "det", "nsubj", "cop", "advmod", "ccomp", "obl"],
    },
    Frame {
        tokens: &["honestly", "this", "A", "is", "C", "here"],
        heads: &[4, 2, 4, 4, -1, 4],
        rels: &["advmod", "det", "nsubj", "cop", "root", "advmod"],
    },
];

fn description<G: Rng>(domain: Domain, rng: &mut G) -> Vec<String> {
    let pool = match domain {
        Domain::Food => &FOOD_WORDS,
        Domain::Tech => &TECH_WORDS,
    };
    let mut words = vec!["a".to_string(), "kind".into(), "of".into()];
    words.extend(pool.choose_multiple(rng, 2).map(|w| w.to_string()));
    words
}

fn sample<G: Rng>(id: String, aspect: &str, domain: Domain, cue: Cue, rng: &mut G) -> Sample {
    let frame = FRAMES.choose(rng).expect("frames");
    let start = frame.tokens.iter().position(|&t| t == "A").expect("aspect slot");
    let tokens = frame
        .tokens
        .iter()
        .map(|&t| match t {
            "A" => aspect.to_string(),
            "C" => cue.word().to_string(),
            w => w.to_string(),
        })
        .collect();
    Sample {
        id,
        tokens,
        aspect_span: AspectSpan::new(start, start + 1),
        label: polarity(domain, cue),
        dep_heads: frame.heads.to_vec(),
        dep_rels: frame.rels.iter().map(|r| r.to_string()).collect(),
        description_tokens: Some(description(domain, rng)),
    }
}

fn knowledge_dependent<G: Rng>(id: String, rng: &mut G) -> Sample {
    let aspect = HOMONYMS.choose(rng).expect("homonyms");
    let domain = if rng.random_bool(0.5) {
        Domain::Food
    } else {
        Domain::Tech
    };
    let cue = if rng.random_bool(0.5) { Cue::Hot } else { Cue::Cold };
    sample(id, aspect, domain, cue, rng)
}

fn any_sample<G: Rng>(id: String, rng: &mut G) -> Sample {
    let cue = match rng.random_range(0..5) {
        0 | 1 => Cue::Hot,
        2 | 3 => Cue::Cold,
        _ => Cue::Okay,
    };
    let (aspect, domain) = match rng.random_range(0..10) {
        0..=6 => {
            let d = if rng.random_bool(0.5) {
                Domain::Food
            } else {
                Domain::Tech
            };
            (*HOMONYMS.choose(rng).expect("homonyms"), d)
        }
        7 | 8 => {
            if rng.random_bool(0.5) {
                (*FOOD_ONLY.choose(rng).expect("food"), Domain::Food)
            } else {
                (*TECH_ONLY.choose(rng).expect("tech"), Domain::Tech)
            }
        }
        _ => (*FOOD_ONLY.choose(rng).expect("food"), Domain::Food),
    };
    sample(id, aspect, domain, cue, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub train: Vec<Sample>,
    /// Homonym aspects with hot/cold cues only.
    pub test: Vec<Sample>,
    /// Aspect key to candidate descriptions, for the retrieval command.
    pub kb: BTreeMap<String, Vec<Candidate>>,
    /// Static word vectors for retrieval, one `token v1 .. v4` line each.
    pub embeddings: String,
}

pub fn generate(seed: u64) -> ToyCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = (0..TRAIN_SIZE)
        .map(|i| any_sample(format!("train-{i:04}"), &mut rng))
        .collect();
    let test = (0..TEST_SIZE)
        .map(|i| knowledge_dependent(format!("test-{i:04}"), &mut rng))
        .collect();

    let food = Candidate {
        tokens: vec!["a".into(), "kind".into(), "of".into(), "tasty".into(), "food".into()],
    };
    let tech = Candidate {
        tokens: vec![
            "a".into(),
            "kind".into(),
            "of".into(),
            "computer".into(),
            "hardware".into(),
        ],
    };
    let mut kb = BTreeMap::new();
    for h in HOMONYMS {
        kb.insert(h.to_string(), vec![food.clone(), tech.clone()]);
    }
    for f in FOOD_ONLY {
        kb.insert(f.to_string(), vec![food.clone()]);
    }
    for t in TECH_ONLY {
        kb.insert(t.to_string(), vec![tech.clone()]);
    }

    let mut embeddings = String::new();
    let mut line = |word: &str, v: [f64; 4]| {
        embeddings.push_str(word);
        for x in v {
            embeddings.push_str(&format!(" {x:.4}"));
        }
        embeddings.push('\n');
    };
    let mut noise = || rng.random_range(-0.1..0.1);
    line("restaurant", [1.0, 0.0, 0.0, 0.0]);
    for w in FOOD_WORDS.iter().chain(&FOOD_ONLY) {
        line(w, [1.0, noise(), noise(), noise()]);
    }
    for w in TECH_WORDS.iter().chain(&TECH_ONLY) {
        line(w, [noise(), 1.0, noise(), noise()]);
    }
    for w in ["hot", "cold", "okay", "really", "very", "today", "here"] {
        line(w, [noise(), noise(), 1.0, noise()]);
    }
    ToyCorpus {
        train,
        test,
        kb,
        embeddings,
    }
}

impl ToyCorpus {
    /// Writes `train.jsonl`, `test.jsonl`, `kb.json` and `embeddings.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_error(dir))?;
        write_atomic(&dir.join("train.jsonl"), to_jsonl(&self.train)?.as_bytes())?;
        write_atomic(&dir.join("test.jsonl"), to_jsonl(&self.test)?.as_bytes())?;
        write_atomic(&dir.join("kb.json"), serde_json::to_string_pretty(&self.kb)?.as_bytes())?;
        write_atomic(&dir.join("embeddings.txt"), self.embeddings.as_bytes())
    }
}

/// Desk-scale settings the toy corpus is tuned for.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        d_model: 32,
        encoder_layers: 1,
        encoder_heads: 2,
        ffn_dim: 64,
        max_len: 32,
        time_steps: 2,
        self_heads: 2,
        relation_dim: 8,
        learning_rate: 1e-3,
        batch_size: 8,
        dropout: 0.1,
        epochs: 50,
        ..ModelConfig::default()
    }
}
