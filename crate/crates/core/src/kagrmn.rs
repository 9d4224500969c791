//! Knowledge-aware gated recurrent memory network.
//!
//! Each step summarizes the description bank against the current aspect
//! state (A2D), gates the summary into the aspect state, writes it back into
//! the context bank and contextualizes the bank with multi-head self
//! attention.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::MemoryBanks;
use crate::error::{Error, Result};
use crate::gate::{Gate, GateActivation, GateKind};
use crate::graph::{Graph, Var};
use crate::param::{Linear, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KagrmnConfig {
    pub d_model: usize,
    pub time_steps: usize,
    pub heads: usize,
    pub gate: GateKind,
    pub gate_activation: GateActivation,
    /// Separate self-attention projections for every step.
    pub per_step_projections: bool,
    pub use_a2d: bool,
    pub use_self_mha: bool,
    /// Dropout on self-attention weights.
    pub dropout: f64,
}

impl Default for KagrmnConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            time_steps: 2,
            heads: 4,
            gate: GateKind::Adaki,
            gate_activation: GateActivation::None,
            per_step_projections: false,
            use_a2d: true,
            use_self_mha: true,
            dropout: 0.0,
        }
    }
}

impl KagrmnConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "self-attention heads {} must divide width {}",
                self.heads, self.d_model
            )));
        }
        Ok(())
    }
}

/// Query/key/value maps for all heads, stored as `d × d` with head `h`
/// occupying columns `h * d_s .. (h + 1) * d_s`.
#[derive(Debug, Clone, Copy)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
}

impl SelfAttention {
    pub fn new<R: Real, G: Rng + ?Sized>(store: &mut ParamStore<R>, name: &str, d: usize, rng: &mut G) -> Result<Self> {
        Ok(Self {
            query: Linear::new(store, &format!("{name}.W_q"), d, d, false, rng)?,
            key: Linear::new(store, &format!("{name}.W_k"), d, d, false, rng)?,
            value: Linear::new(store, &format!("{name}.W_v"), d, d, false, rng)?,
        })
    }

    /// Concatenation over heads of `softmax(Q K^T / sqrt(d_s)) V`.
    pub fn forward<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        bank: Var,
        heads: usize,
        dropout: f64,
    ) -> Result<Var> {
        let d = g.value(bank).rows_cols().1;
        if heads == 0 || !d.is_multiple_of(heads) {
            return Err(Error::InvalidShape {
                op: "self_mha",
                shape: g.shape(bank).to_vec(),
                reason: "width not divisible by head count",
            });
        }
        let ds = d / heads;
        let q = self.query.forward(g, store, bank)?;
        let k = self.key.forward(g, store, bank)?;
        let v = self.value.forward(g, store, bank)?;
        let scale = R::from_f64(1.0 / (ds as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * ds, ds)?;
            let kh = g.slice_cols(k, h * ds, ds)?;
            let vh = g.slice_cols(v, h * ds, ds)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax(scores)?;
            let attn = g.dropout(attn, dropout)?;
            outs.push(g.matmul(attn, vh)?);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        g.concat(&outs)
    }
}

#[derive(Debug, Clone)]
pub struct Kagrmn {
    pub config: KagrmnConfig,
    pub a2d: Option<Linear>,
    pub gate: Gate,
    pub attention: Vec<SelfAttention>,
}

/// Final state of the recurrence.
#[derive(Debug, Clone)]
pub struct KagrmnOutput {
    pub context: Var,
    pub r_a: Var,
    pub r_k: Var,
    /// A2D weights `1 × N_D` per step (empty without A2D).
    pub alphas: Vec<Var>,
}

impl Kagrmn {
    pub fn new<R: Real, G: Rng + ?Sized>(store: &mut ParamStore<R>, config: KagrmnConfig, rng: &mut G) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let a2d = if config.use_a2d {
            Some(Linear::new(store, "kagrmn.a2d.W_d", d, d, true, rng)?)
        } else {
            None
        };
        let gate_name = match config.gate {
            GateKind::Adaki => "kagrmn.adaki.W_k",
            GateKind::Ki => "kagrmn.ki.W_k",
        };
        let gate = Gate::new(store, gate_name, config.gate, config.gate_activation, d, rng)?;
        let mut attention = Vec::new();
        if config.use_self_mha && config.time_steps > 0 {
            let sets = if config.per_step_projections {
                config.time_steps
            } else {
                1
            };
            for t in 0..sets {
                let name = if config.per_step_projections {
                    format!("kagrmn.self_mha.step{t}")
                } else {
                    "kagrmn.self_mha".into()
                };
                attention.push(SelfAttention::new(store, &name, d, rng)?);
            }
        }
        Ok(Self {
            config,
            a2d,
            gate,
            attention,
        })
    }

    /// Runs `time_steps` recurrent steps over the banks.
    pub fn run<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, banks: &MemoryBanks) -> Result<KagrmnOutput> {
        let n = banks.context_len(g);
        if banks.aspect_index >= n {
            return Err(Error::IndexOutOfRange {
                op: "kagrmn",
                index: banks.aspect_index,
                len: n,
            });
        }
        let mut context = banks.context;
        let mut r_a = g.row(context, banks.aspect_index)?;
        if self.config.time_steps == 0 {
            let r_k = g.mean_rows(banks.description)?;
            return Ok(KagrmnOutput {
                context,
                r_a,
                r_k,
                alphas: Vec::new(),
            });
        }
        let mut alphas = Vec::new();
        let mut r_k = r_a;
        for t in 0..self.config.time_steps {
            r_k = match &self.a2d {
                Some(a2d) => {
                    let (alpha, r_k) = a2d_attention(g, store, a2d, banks.description, r_a)?;
                    alphas.push(alpha);
                    r_k
                }
                None => g.mean_rows(banks.description)?,
            };
            let r_a_star = self.gate.forward(g, store, r_a, r_k)?;
            let written = g.scatter_row(context, banks.aspect_index, r_a_star)?;
            context = match self.attention.get(if self.config.per_step_projections { t } else { 0 }) {
                Some(attn) => attn.forward(g, store, written, self.config.heads, self.config.dropout)?,
                None => written,
            };
            r_a = g.row(context, banks.aspect_index)?;
        }
        Ok(KagrmnOutput {
            context,
            r_a,
            r_k,
            alphas,
        })
    }
}

/// Scores `(M_D W_d + b_d) r_a^T`, returns `(alpha, r_k)` with
/// `alpha: 1 × N_D` and `r_k = alpha M_D`.
pub fn a2d_attention<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    score: &Linear,
    description: Var,
    r_a: Var,
) -> Result<(Var, Var)> {
    if g.value(description).numel() == 0 {
        return Err(Error::Empty("description memory"));
    }
    let proj = score.forward(g, store, description)?;
    let query = g.transpose(r_a)?;
    let scores = g.matmul(proj, query)?;
    let scores = g.transpose(scores)?;
    let alpha = g.softmax(scores)?;
    let r_k = g.matmul(alpha, description)?;
    Ok((alpha, r_k))
}
