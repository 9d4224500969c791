//! Model configuration, ablation variants and the full forward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsgnet::{DsgConfig, DsgNet, DsgOutput, GraphInputs};
use crate::encoder::{build_memory_banks, Encoder, EncoderConfig, MemoryBanks, Vocabulary};
use crate::error::{Error, Result};
use crate::gate::{Gate, GateActivation, GateKind};
use crate::graph::{Graph, Var};
use crate::heads::{a2c_attention, new_a2c, Classifier};
use crate::kagrmn::{Kagrmn, KagrmnConfig, KagrmnOutput};
use crate::param::{Linear, ParamStore};
use crate::sample::{AspectSpan, Sample, Sentiment};
use crate::syntaxgraph::{build_dense, build_sparse, position_weights, DependencyParse, RelationVocab};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Variant {
    #[default]
    M0,
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
    M7,
    M8,
    M9,
    M10,
    M11,
    M12,
}

impl Variant {
    pub const ALL: [Variant; 13] = [
        Variant::M0,
        Variant::M1,
        Variant::M2,
        Variant::M3,
        Variant::M4,
        Variant::M5,
        Variant::M6,
        Variant::M7,
        Variant::M8,
        Variant::M9,
        Variant::M10,
        Variant::M11,
        Variant::M12,
    ];

    pub fn switch(self) -> VariantSwitch {
        let base = VariantSwitch::default();
        match self {
            Variant::M0 => base,
            Variant::M1 => VariantSwitch {
                use_knowledge: false,
                ..base
            },
            Variant::M2 => VariantSwitch {
                only_kagrmn: true,
                ..base
            },
            Variant::M3 => VariantSwitch { use_dsg: false, ..base },
            Variant::M4 => VariantSwitch {
                use_relational: false,
                ..base
            },
            Variant::M5 => VariantSwitch {
                use_pgcn: false,
                ..base
            },
            Variant::M6 => VariantSwitch {
                use_ki_gate: false,
                ..base
            },
            Variant::M7 => VariantSwitch { use_a2c: false, ..base },
            Variant::M8 => VariantSwitch { use_a2d: false, ..base },
            Variant::M9 => VariantSwitch {
                use_self_mha: false,
                ..base
            },
            Variant::M10 => VariantSwitch {
                gate1: GateKind::Adaki,
                gate2: GateKind::Adaki,
                ..base
            },
            Variant::M11 => VariantSwitch {
                gate1: GateKind::Ki,
                gate2: GateKind::Ki,
                ..base
            },
            Variant::M12 => VariantSwitch {
                gate1: GateKind::Ki,
                gate2: GateKind::Adaki,
                ..base
            },
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Variant::M0 => "full model",
            Variant::M1 => "descriptions replaced with aspect tokens",
            Variant::M2 => "encoder and memory network only",
            Variant::M3 => "without dual syntax graph",
            Variant::M4 => "without relational attention",
            Variant::M5 => "without position-aware GCN",
            Variant::M6 => "without KI gate",
            Variant::M7 => "without A2C attention",
            Variant::M8 => "without A2D attention",
            Variant::M9 => "without self attention",
            Variant::M10 => "AdaKI gate in both positions",
            Variant::M11 => "KI gate in both positions",
            Variant::M12 => "KI gate then AdaKI gate",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "M{}", *self as usize)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let digits = s.strip_prefix(['M', 'm']).unwrap_or(s);
        digits
            .parse::<usize>()
            .ok()
            .and_then(|i| Variant::ALL.get(i).copied())
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}; expected M0..M12")))
    }
}

/// Component switches a variant resolves to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSwitch {
    pub use_knowledge: bool,
    pub only_kagrmn: bool,
    pub use_dsg: bool,
    pub use_relational: bool,
    pub use_pgcn: bool,
    pub use_ki_gate: bool,
    pub use_a2c: bool,
    pub use_a2d: bool,
    pub use_self_mha: bool,
    pub gate1: GateKind,
    pub gate2: GateKind,
}

impl Default for VariantSwitch {
    fn default() -> Self {
        Self {
            use_knowledge: true,
            only_kagrmn: false,
            use_dsg: true,
            use_relational: true,
            use_pgcn: true,
            use_ki_gate: true,
            use_a2c: true,
            use_a2d: true,
            use_self_mha: true,
            gate1: GateKind::Adaki,
            gate2: GateKind::Ki,
        }
    }
}

/// Which sequence the A2C attention aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum A2cSource {
    /// Final context memory with the aspect row replaced by `R_a`.
    #[default]
    Memory,
    /// Fused graph node sequence with the aspect row replaced by `R_a`.
    Fused,
}

impl FromStr for A2cSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "memory" => Ok(A2cSource::Memory),
            "fused" => Ok(A2cSource::Fused),
            other => Err(Error::Config(format!("unknown a2c source {other:?}"))),
        }
    }
}

/// Every hyper-parameter of a run, as a flat record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub time_steps: usize,
    pub self_heads: usize,
    pub gate_activation: GateActivation,
    pub per_step_projections: bool,
    pub gcn_layers: usize,
    pub relational_heads: usize,
    pub relation_dim: usize,
    pub max_distance: usize,
    pub a2c_source: A2cSource,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    pub alpha: f64,
    pub domain_label: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            encoder_layers: 2,
            encoder_heads: 4,
            ffn_dim: 128,
            max_len: 128,
            time_steps: 2,
            self_heads: 4,
            gate_activation: GateActivation::None,
            per_step_projections: false,
            gcn_layers: 2,
            relational_heads: 2,
            relation_dim: 16,
            max_distance: crate::syntaxgraph::DEFAULT_MAX_DISTANCE,
            a2c_source: A2cSource::Memory,
            learning_rate: 1e-3,
            batch_size: 32,
            dropout: 0.3,
            epochs: 30,
            seed: 42,
            variant: Variant::M0,
            alpha: 0.5,
            domain_label: "restaurant".into(),
        }
    }
}

impl ModelConfig {
    pub fn switch(&self) -> VariantSwitch {
        self.variant.switch()
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            d_model: self.d_model,
            layers: self.encoder_layers,
            heads: self.encoder_heads,
            ffn_dim: self.ffn_dim,
            max_len: self.max_len,
        }
    }

    pub fn kagrmn(&self) -> KagrmnConfig {
        let s = self.switch();
        KagrmnConfig {
            d_model: self.d_model,
            time_steps: self.time_steps,
            heads: self.self_heads,
            gate: s.gate1,
            gate_activation: self.gate_activation,
            per_step_projections: self.per_step_projections,
            use_a2d: s.use_a2d,
            use_self_mha: s.use_self_mha,
            dropout: self.dropout,
        }
    }

    pub fn dsg(&self, relation_vocab: usize) -> DsgConfig {
        let s = self.switch();
        DsgConfig {
            d_model: self.d_model,
            gcn_layers: self.gcn_layers,
            heads: self.relational_heads,
            relation_dim: self.relation_dim,
            relation_vocab,
            use_pgcn: s.use_pgcn,
            use_relational: s.use_relational,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder().validate()?;
        self.kagrmn().validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// A sample converted to ids and graphs, ready for the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub context_ids: Vec<usize>,
    pub aspect_ids: Vec<usize>,
    pub description_ids: Vec<usize>,
    pub span: AspectSpan,
    pub graph: GraphInputs,
    pub label: Sentiment,
}

/// Tokens fed to the description encoder: the retrieved description, or the
/// aspect tokens when knowledge is disabled or nothing was retrieved.
pub fn description_tokens(sample: &Sample, switch: &VariantSwitch) -> Vec<String> {
    match (&sample.description_tokens, switch.use_knowledge) {
        (Some(d), true) if !d.is_empty() => d.clone(),
        _ => sample.aspect_tokens().to_vec(),
    }
}

pub fn prepare(
    sample: &Sample,
    vocab: &Vocabulary,
    relations: &RelationVocab,
    config: &ModelConfig,
) -> Result<PreparedSample> {
    sample.validate()?;
    let parse = DependencyParse::new(&sample.dep_heads, &sample.dep_rels)?;
    let span = sample.aspect_span;
    let sparse = build_sparse(&parse, span)?;
    let dense = build_dense(&parse, span, relations, config.max_distance)?;
    let n = span.merged_len(sample.tokens.len());
    debug_assert_eq!(sparse.node_count(), n);
    let weights = position_weights(n, span.start)?;
    let description = description_tokens(sample, &config.switch());
    Ok(PreparedSample {
        id: sample.id.clone(),
        context_ids: vocab.ids(&sample.tokens),
        aspect_ids: vocab.ids(sample.aspect_tokens()),
        description_ids: vocab.ids(&description),
        span,
        graph: GraphInputs {
            adjacency: sparse.adjacency(),
            aspect_node: sparse.aspect_node(),
            relations: (0..n).map(|j| dense.relation_id(j)).collect(),
            position_weights: weights.weights,
        },
        label: sample.label,
    })
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub switch: VariantSwitch,
    pub encoder: Encoder,
    pub kagrmn: Kagrmn,
    pub dsg: Option<DsgNet>,
    pub ki_gate: Option<Gate>,
    pub a2c: Option<Linear>,
    pub classifier: Classifier,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Var,
    pub banks: MemoryBanks,
    pub memory: KagrmnOutput,
    pub dsg: Option<DsgOutput>,
    /// Aspect representation after the post-graph gate.
    pub r_a: Var,
    /// Input to the classifier alongside `h_cls`.
    pub r_f: Var,
    pub a2c_beta: Option<Var>,
}

impl Model {
    /// Registers exactly the parameters the configured variant uses.
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        config: ModelConfig,
        vocab_size: usize,
        relation_vocab: usize,
        rng: &mut G,
    ) -> Result<Self> {
        config.validate()?;
        let switch = config.switch();
        let d = config.d_model;
        let encoder = Encoder::new(store, config.encoder(), vocab_size, rng)?;
        let kagrmn = Kagrmn::new(store, config.kagrmn(), rng)?;
        let full = !switch.only_kagrmn;
        let dsg = if full && switch.use_dsg {
            Some(DsgNet::new(store, config.dsg(relation_vocab), rng)?)
        } else {
            None
        };
        let ki_gate = if full && switch.use_ki_gate {
            let name = match switch.gate2 {
                GateKind::Ki => "heads.ki.W_kr",
                GateKind::Adaki => "heads.adaki.W_kr",
            };
            Some(Gate::new(store, name, switch.gate2, GateActivation::None, d, rng)?)
        } else {
            None
        };
        let a2c = if full && switch.use_a2c {
            Some(new_a2c(store, d, rng)?)
        } else {
            None
        };
        let classifier = Classifier::new(store, d, rng)?;
        Ok(Self {
            config,
            switch,
            encoder,
            kagrmn,
            dsg,
            ki_gate,
            a2c,
            classifier,
        })
    }

    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        input: &PreparedSample,
    ) -> Result<ForwardOutput> {
        let dropout = if g.is_training() { self.config.dropout } else { 0.0 };
        let (h_cls, h_c) = self
            .encoder
            .encode_pair(g, store, &input.context_ids, &input.aspect_ids, dropout)?;
        let h_d = self.encoder.encode_single(g, store, &input.description_ids, dropout)?;
        let banks = build_memory_banks(g, h_cls, h_c, input.span, h_d)?;
        self.forward_banks(g, store, banks, &input.graph)
    }

    /// Everything downstream of the encoder.
    pub fn forward_banks<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        banks: MemoryBanks,
        graph: &GraphInputs,
    ) -> Result<ForwardOutput> {
        let dropout = if g.is_training() { self.config.dropout } else { 0.0 };
        let memory = self.kagrmn.run(g, store, &banks)?;
        if self.switch.only_kagrmn {
            let logits = self.classifier.logits(g, store, banks.h_cls, memory.r_a, dropout)?;
            return Ok(ForwardOutput {
                logits,
                banks,
                r_a: memory.r_a,
                r_f: memory.r_a,
                memory,
                dsg: None,
                a2c_beta: None,
            });
        }
        let dsg = match &self.dsg {
            Some(net) => Some(net.run(g, store, memory.context, graph)?),
            None => None,
        };
        let r_a_tilde = dsg.as_ref().map_or(memory.r_a, |o| o.aspect);
        let r_a = match &self.ki_gate {
            Some(gate) => gate.forward(g, store, r_a_tilde, memory.r_k)?,
            None => r_a_tilde,
        };
        let (r_f, a2c_beta) = match &self.a2c {
            Some(score) => {
                let base = match (&dsg, self.config.a2c_source) {
                    (Some(o), A2cSource::Fused) => o.fused,
                    _ => memory.context,
                };
                let states = g.scatter_row(base, banks.aspect_index, r_a)?;
                let (beta, r_f) = a2c_attention(g, store, score, states, r_a)?;
                (r_f, Some(beta))
            }
            None => (r_a, None),
        };
        let logits = self.classifier.logits(g, store, banks.h_cls, r_f, dropout)?;
        Ok(ForwardOutput {
            logits,
            banks,
            memory,
            dsg,
            r_a,
            r_f,
            a2c_beta,
        })
    }

    /// Cross-entropy of the forward pass against the sample label.
    pub fn loss<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        input: &PreparedSample,
    ) -> Result<(Var, ForwardOutput)> {
        let out = self.forward(g, store, input)?;
        let loss = g.cross_entropy(out.logits, input.label.index())?;
        Ok((loss, out))
    }
}
