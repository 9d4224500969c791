//! Dual syntax graph network: position-aware GCN over the sparse graph,
//! relation-scored attention over the dense star graph, and an MLP fusing
//! the two node sequences.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{Init, Linear, ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsgConfig {
    pub d_model: usize,
    pub gcn_layers: usize,
    pub heads: usize,
    pub relation_dim: usize,
    pub relation_vocab: usize,
    pub use_pgcn: bool,
    pub use_relational: bool,
}

impl Default for DsgConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            gcn_layers: 2,
            heads: 2,
            relation_dim: 16,
            relation_vocab: 64,
            use_pgcn: true,
            use_relational: true,
        }
    }
}

impl DsgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.use_pgcn && self.gcn_layers == 0 {
            return Err(Error::Config("gcn_layers must be at least 1".into()));
        }
        if self.use_relational && (self.heads == 0 || self.relation_dim == 0) {
            return Err(Error::Config(
                "relational attention needs at least one head and a positive relation width".into(),
            ));
        }
        if self.use_relational && self.relation_vocab == 0 {
            return Err(Error::Config("relation vocabulary is empty".into()));
        }
        Ok(())
    }
}

/// Graph inputs of one sample, aligned with the context memory rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInputs {
    pub adjacency: Arc<Vec<Vec<usize>>>,
    pub aspect_node: usize,
    /// Relation id per node; `None` at the aspect node.
    pub relations: Vec<Option<usize>>,
    pub position_weights: Vec<f64>,
}

impl GraphInputs {
    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn validate(&self, n: usize, relation_vocab: usize) -> Result<()> {
        if self.adjacency.len() != n || self.relations.len() != n || self.position_weights.len() != n {
            return Err(Error::ShapeMismatch {
                op: "graph_inputs",
                left: vec![n],
                right: vec![self.adjacency.len(), self.relations.len(), self.position_weights.len()],
            });
        }
        if self.aspect_node >= n {
            return Err(Error::IndexOutOfRange {
                op: "graph_inputs",
                index: self.aspect_node,
                len: n,
            });
        }
        for r in self.relations.iter().flatten() {
            if *r >= relation_vocab {
                return Err(Error::UnknownRelation {
                    id: *r,
                    size: relation_vocab,
                });
            }
        }
        Ok(())
    }
}

/// One position-aware graph convolution:
/// `h_i = W (sum over N(i) ∪ {i} of w_j h_j) / (d_i + 1) + b`.
pub fn pgcn_layer<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    layer: &Linear,
    input: Var,
    adjacency: &Arc<Vec<Vec<usize>>>,
    weights: &[f64],
) -> Result<Var> {
    let w: Vec<R> = weights.iter().map(|&x| R::from_f64(x)).collect();
    let scaled = g.scale_rows(input, &w)?;
    let mixed = g.graph_mean(scaled, Arc::clone(adjacency))?;
    layer.forward(g, store, mixed)
}

#[derive(Debug, Clone, Copy)]
pub struct RelationalHead {
    /// `W^1`: node projection, `d -> d`.
    pub value: Linear,
    /// `W^2, b^1`: relation embedding to hidden, `d_r -> d_r`.
    pub hidden: Linear,
    /// `W^3, b^2`: hidden to score, `d_r -> 1`.
    pub score: Linear,
}

#[derive(Debug, Clone)]
pub struct RelationalAttention {
    pub embedding: ParamId,
    pub heads: Vec<RelationalHead>,
}

/// Output of relational attention with its attention weights.
#[derive(Debug, Clone)]
pub struct RelationalOutput {
    pub states: Var,
    /// Per head, the aspect node's `1 × (N - 1)` weights over context nodes.
    pub betas: Vec<Var>,
}

impl RelationalAttention {
    pub fn new<R: Real, G: Rng + ?Sized>(store: &mut ParamStore<R>, cfg: &DsgConfig, rng: &mut G) -> Result<Self> {
        let embedding = store.add(
            "dsg.relational.relation_embedding",
            &[cfg.relation_vocab, cfg.relation_dim],
            Init::Normal { std: 0.02 },
            rng,
        )?;
        let d = cfg.d_model;
        let dr = cfg.relation_dim;
        let heads = (0..cfg.heads)
            .map(|m| {
                let p = format!("dsg.relational.head{m}");
                Ok(RelationalHead {
                    value: Linear::new(store, &format!("{p}.W1"), d, d, false, rng)?,
                    hidden: Linear::new(store, &format!("{p}.W2"), dr, dr, true, rng)?,
                    score: Linear::new(store, &format!("{p}.W3"), dr, 1, true, rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { embedding, heads })
    }

    /// Star-graph attention: the aspect node attends over every context node
    /// with relation-derived scores, each context node sees only the aspect
    /// node, and head outputs are averaged.
    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        input: Var,
        graph: &GraphInputs,
    ) -> Result<RelationalOutput> {
        let (n, _) = g.value(input).rows_cols();
        let vocab = store.value(self.embedding).rows_cols().0;
        graph.validate(n, vocab)?;
        let a = graph.aspect_node;
        let context: Vec<usize> = (0..n).filter(|&j| j != a).collect();
        let rel_ids: Vec<usize> = context
            .iter()
            .map(|&j| graph.relations[j].ok_or(Error::InvalidParse(format!("node {j} lacks a relation"))))
            .collect::<Result<_>>()?;
        let table = g.param(store, self.embedding);
        let rel = if rel_ids.is_empty() {
            None
        } else {
            Some(g.gather_rows(table, &rel_ids)?)
        };

        let mut aspect_sum: Option<Var> = None;
        let mut leaf_sum: Option<Var> = None;
        let mut betas = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let proj = head.value.forward(g, store, input)?;
            let aspect_proj = g.row(proj, a)?;
            let h_a = match rel {
                Some(rel) => {
                    let hidden = head.hidden.forward(g, store, rel)?;
                    let hidden = g.relu(hidden)?;
                    let scores = head.score.forward(g, store, hidden)?;
                    let scores = g.transpose(scores)?;
                    let beta = g.softmax(scores)?;
                    betas.push(beta);
                    let ctx = g.gather_rows(proj, &context)?;
                    g.matmul(beta, ctx)?
                }
                // a lone node relates only to itself
                None => aspect_proj,
            };
            aspect_sum = Some(match aspect_sum {
                Some(s) => g.add(s, h_a)?,
                None => h_a,
            });
            leaf_sum = Some(match leaf_sum {
                Some(s) => g.add(s, aspect_proj)?,
                None => aspect_proj,
            });
        }
        let (Some(aspect_sum), Some(leaf_sum)) = (aspect_sum, leaf_sum) else {
            return Err(Error::Config("relational attention has no heads".into()));
        };
        let inv = R::from_f64(1.0 / self.heads.len() as f64);
        let h_a = g.scale(aspect_sum, inv)?;
        let leaf = g.scale(leaf_sum, inv)?;
        let rows = g.gather_rows(leaf, &vec![0; n])?;
        let states = g.scatter_row(rows, a, h_a)?;
        Ok(RelationalOutput { states, betas })
    }
}

/// Two-layer MLP `2d -> d -> d` with a ReLU between.
#[derive(Debug, Clone, Copy)]
pub struct Fusion {
    pub hidden: Linear,
    pub output: Linear,
}

impl Fusion {
    pub fn new<R: Real, G: Rng + ?Sized>(store: &mut ParamStore<R>, d: usize, rng: &mut G) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, "dsg.fusion.hidden", 2 * d, d, true, rng)?,
            output: Linear::new(store, "dsg.fusion.output", d, d, true, rng)?,
        })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, gcn: Var, relational: Var) -> Result<Var> {
        if g.shape(gcn) != g.shape(relational) {
            return Err(Error::ShapeMismatch {
                op: "fuse",
                left: g.shape(gcn).to_vec(),
                right: g.shape(relational).to_vec(),
            });
        }
        let joint = g.concat(&[gcn, relational])?;
        let hidden = self.hidden.forward(g, store, joint)?;
        let hidden = g.relu(hidden)?;
        self.output.forward(g, store, hidden)
    }
}

#[derive(Debug, Clone)]
pub struct DsgNet {
    pub config: DsgConfig,
    pub gcn: Vec<Linear>,
    pub relational: Option<RelationalAttention>,
    pub fusion: Fusion,
}

#[derive(Debug, Clone)]
pub struct DsgOutput {
    /// Fused node sequence `N × d`.
    pub fused: Var,
    /// Fused aspect row `1 × d`.
    pub aspect: Var,
    pub betas: Vec<Var>,
}

impl DsgNet {
    pub fn new<R: Real, G: Rng + ?Sized>(store: &mut ParamStore<R>, config: DsgConfig, rng: &mut G) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut gcn = Vec::new();
        if config.use_pgcn {
            for l in 0..config.gcn_layers {
                gcn.push(Linear::new(store, &format!("dsg.pgcn.layer{l}"), d, d, true, rng)?);
            }
        }
        let relational = if config.use_relational {
            Some(RelationalAttention::new(store, &config, rng)?)
        } else {
            None
        };
        let fusion = Fusion::new(store, d, rng)?;
        Ok(Self {
            config,
            gcn,
            relational,
            fusion,
        })
    }

    pub fn run<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        context: Var,
        graph: &GraphInputs,
    ) -> Result<DsgOutput> {
        let (n, d) = g.value(context).rows_cols();
        graph.validate(n, self.config.relation_vocab.max(1))?;
        let gcn = if self.gcn.is_empty() {
            g.constant(Tensor::zeros(&[n, d]))
        } else {
            let mut h = context;
            for (l, layer) in self.gcn.iter().enumerate() {
                if l > 0 {
                    h = g.relu(h)?;
                }
                h = pgcn_layer(g, store, layer, h, &graph.adjacency, &graph.position_weights)?;
            }
            h
        };
        let (rel, betas) = match &self.relational {
            Some(r) => {
                let out = r.forward(g, store, context, graph)?;
                (out.states, out.betas)
            }
            None => (g.constant(Tensor::zeros(&[n, d])), Vec::new()),
        };
        let fused = self.fusion.forward(g, store, gcn, rel)?;
        let aspect = g.row(fused, graph.aspect_node)?;
        Ok(DsgOutput { fused, aspect, betas })
    }
}
