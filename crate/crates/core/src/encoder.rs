//! Trainable sentence encoder and memory-bank construction.
//!
//! A small post-norm transformer stands in for a pretrained encoder while
//! keeping the same interface: the review is encoded as the sentence pair
//! `[CLS] context [SEP] aspect [SEP]`, a description as the single sentence
//! `[CLS] description [SEP]`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{Init, Linear, ParamId, ParamStore};
use crate::sample::AspectSpan;
use crate::tensor::{Real, Tensor};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const CLS: usize = 2;
pub const SEP: usize = 3;
pub const RESERVED: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

/// Lower-cased token to id map with a fixed reserved block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: BTreeMap::new(),
        };
        for t in RESERVED {
            v.tokens.push(t.to_string());
            v.index.insert(t.to_string(), v.tokens.len() - 1);
        }
        v
    }

    /// Vocabulary whose ids follow `tokens` after the reserved block.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        let key = token.to_lowercase();
        if let Some(&id) = self.index.get(&key) {
            return id;
        }
        self.tokens.push(key.clone());
        self.index.insert(key, self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn id(&self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        self.index.get(&token.to_lowercase()).copied().unwrap_or(UNK)
    }

    pub fn ids<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Non-reserved tokens in id order.
    pub fn entries(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == RESERVED.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            layers: 2,
            heads: 4,
            ffn_dim: 128,
            max_len: 128,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "encoder width {} must be a positive multiple of the head count {}",
                self.d_model, self.heads
            )));
        }
        if self.max_len < 3 {
            return Err(Error::Config("encoder max_len must be at least 3".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LayerNormParams {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNormParams {
    fn new<R: Real, G: Rng + ?Sized>(store: &mut ParamStore<R>, name: &str, d: usize, rng: &mut G) -> Result<Self> {
        Ok(Self {
            gain: store.add(&format!("{name}.gain"), &[1, d], Init::Ones, rng)?,
            bias: store.add(&format!("{name}.bias"), &[1, d], Init::Zeros, rng)?,
        })
    }

    fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let normed = g.layer_norm(x, 1e-5)?;
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let scaled = g.mul_row(normed, gain)?;
        g.add_row(scaled, bias)
    }
}

#[derive(Debug, Clone)]
struct Block {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    attn_norm: LayerNormParams,
    ffn_in: Linear,
    ffn_out: Linear,
    ffn_norm: LayerNormParams,
}

/// Parameter handles of the encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    token_embedding: ParamId,
    position_embedding: ParamId,
    segment_embedding: ParamId,
    blocks: Vec<Block>,
}

impl Encoder {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        config: EncoderConfig,
        vocab_size: usize,
        rng: &mut G,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let emb = Init::Normal { std: 0.02 };
        let token_embedding = store.add("encoder.token_embedding", &[vocab_size, d], emb, rng)?;
        let position_embedding = store.add("encoder.position_embedding", &[config.max_len, d], emb, rng)?;
        let segment_embedding = store.add("encoder.segment_embedding", &[2, d], emb, rng)?;
        let mut blocks = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("encoder.layer{l}");
            blocks.push(Block {
                query: Linear::new(store, &format!("{p}.attn.query"), d, d, true, rng)?,
                key: Linear::new(store, &format!("{p}.attn.key"), d, d, true, rng)?,
                value: Linear::new(store, &format!("{p}.attn.value"), d, d, true, rng)?,
                output: Linear::new(store, &format!("{p}.attn.output"), d, d, true, rng)?,
                attn_norm: LayerNormParams::new(store, &format!("{p}.attn_norm"), d, rng)?,
                ffn_in: Linear::new(store, &format!("{p}.ffn.in"), d, config.ffn_dim, true, rng)?,
                ffn_out: Linear::new(store, &format!("{p}.ffn.out"), config.ffn_dim, d, true, rng)?,
                ffn_norm: LayerNormParams::new(store, &format!("{p}.ffn_norm"), d, rng)?,
            });
        }
        Ok(Self {
            config,
            token_embedding,
            position_embedding,
            segment_embedding,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    /// Runs the full stack over `ids` with per-position segment ids.
    fn encode<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        ids: &[usize],
        segments: &[usize],
        dropout: f64,
    ) -> Result<Var> {
        let len = ids.len();
        if len > self.config.max_len {
            return Err(Error::TooLong {
                len,
                max: self.config.max_len,
            });
        }
        let vocab_rows = store.value(self.token_embedding).rows_cols().0;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab_rows) {
            return Err(Error::IndexOutOfRange {
                op: "token_embedding",
                index: bad,
                len: vocab_rows,
            });
        }
        let tok = g.param(store, self.token_embedding);
        let pos = g.param(store, self.position_embedding);
        let seg = g.param(store, self.segment_embedding);
        let positions: Vec<usize> = (0..len).collect();
        let t = g.gather_rows(tok, ids)?;
        let p = g.gather_rows(pos, &positions)?;
        let s = g.gather_rows(seg, segments)?;
        let x = g.add(t, p)?;
        let mut x = g.add(x, s)?;
        x = g.dropout(x, dropout)?;
        for block in &self.blocks {
            x = self.block(g, store, block, x, dropout)?;
        }
        Ok(x)
    }

    fn block<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        block: &Block,
        x: Var,
        dropout: f64,
    ) -> Result<Var> {
        let heads = self.config.heads;
        let dh = self.config.d_model / heads;
        let q = block.query.forward(g, store, x)?;
        let k = block.key.forward(g, store, x)?;
        let v = block.value.forward(g, store, x)?;
        let scale = R::from_f64(1.0 / (dh as f64).sqrt());
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let scores = g.matmul(qh, kt)?;
            let scores = g.scale(scores, scale)?;
            let attn = g.softmax(scores)?;
            let attn = g.dropout(attn, dropout)?;
            outs.push(g.matmul(attn, vh)?);
        }
        let merged = g.concat(&outs)?;
        let attended = block.output.forward(g, store, merged)?;
        let attended = g.dropout(attended, dropout)?;
        let res = g.add(x, attended)?;
        let x = block.attn_norm.forward(g, store, res)?;

        let hidden = block.ffn_in.forward(g, store, x)?;
        let hidden = g.relu(hidden)?;
        let out = block.ffn_out.forward(g, store, hidden)?;
        let out = g.dropout(out, dropout)?;
        let res = g.add(x, out)?;
        block.ffn_norm.forward(g, store, res)
    }

    /// Encodes `[CLS] context [SEP] aspect [SEP]`; returns the `1 × d`
    /// `[CLS]` state and the `N_C × d` context-token states.
    pub fn encode_pair<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        context: &[usize],
        aspect: &[usize],
        dropout: f64,
    ) -> Result<(Var, Var)> {
        if context.is_empty() {
            return Err(Error::Empty("context tokens"));
        }
        if aspect.is_empty() {
            return Err(Error::Empty("aspect tokens"));
        }
        let total = context.len() + aspect.len() + 3;
        if total > self.config.max_len {
            return Err(Error::TooLong {
                len: total,
                max: self.config.max_len,
            });
        }
        let mut ids = Vec::with_capacity(total);
        ids.push(CLS);
        ids.extend_from_slice(context);
        ids.push(SEP);
        ids.extend_from_slice(aspect);
        ids.push(SEP);
        let first_segment = context.len() + 2;
        let segments: Vec<usize> = (0..total).map(|i| usize::from(i >= first_segment)).collect();
        let states = self.encode(g, store, &ids, &segments, dropout)?;
        let h_cls = g.row(states, 0)?;
        let h_c = g.slice_rows(states, 1, context.len())?;
        Ok((h_cls, h_c))
    }

    /// Encodes `[CLS] description [SEP]`; returns the `N_D × d` token states.
    pub fn encode_single<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        description: &[usize],
        dropout: f64,
    ) -> Result<Var> {
        if description.is_empty() {
            return Err(Error::Empty("description tokens"));
        }
        let total = description.len() + 2;
        if total > self.config.max_len {
            return Err(Error::TooLong {
                len: total,
                max: self.config.max_len,
            });
        }
        let mut ids = Vec::with_capacity(total);
        ids.push(CLS);
        ids.extend_from_slice(description);
        ids.push(SEP);
        let segments = alloc::vec![0; total];
        let states = self.encode(g, store, &ids, &segments, dropout)?;
        g.slice_rows(states, 1, description.len())
    }
}

/// Inputs of the recurrent memory network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBanks {
    /// Description memory `N_D × d`, never written.
    pub description: Var,
    /// Context memory `N × d` with the aspect collapsed to one row.
    pub context: Var,
    pub aspect_index: usize,
    pub h_cls: Var,
}

impl MemoryBanks {
    pub fn context_len<R: Real>(&self, g: &Graph<R>) -> usize {
        g.value(self.context).rows_cols().0
    }
}

/// Collapses the aspect rows of `h_c` into a single row holding `h_cls`.
pub fn build_memory_banks<R: Real>(
    g: &mut Graph<R>,
    h_cls: Var,
    h_c: Var,
    span: AspectSpan,
    h_d: Var,
) -> Result<MemoryBanks> {
    let (n_c, d) = g.value(h_c).rows_cols();
    span.validate(n_c)?;
    if g.value(h_cls).rows_cols() != (1, d) {
        return Err(Error::ShapeMismatch {
            op: "build_memory_banks",
            left: g.shape(h_cls).to_vec(),
            right: g.shape(h_c).to_vec(),
        });
    }
    let rows: Vec<usize> = (0..span.start)
        .chain(core::iter::once(span.start))
        .chain(span.end..n_c)
        .collect();
    let gathered = g.gather_rows(h_c, &rows)?;
    let context = g.scatter_row(gathered, span.start, h_cls)?;
    Ok(MemoryBanks {
        description: h_d,
        context,
        aspect_index: span.start,
        h_cls,
    })
}

/// Constant-valued memory banks, for exercising downstream modules directly.
pub fn constant_banks<R: Real>(
    g: &mut Graph<R>,
    description: Tensor<R>,
    context: Tensor<R>,
    aspect_index: usize,
) -> Result<MemoryBanks> {
    let n = context.rows_cols().0;
    if aspect_index >= n {
        return Err(Error::IndexOutOfRange {
            op: "constant_banks",
            index: aspect_index,
            len: n,
        });
    }
    let h_cls = Tensor::row(context.row_slice(aspect_index).to_vec());
    let description = g.input(description);
    let context = g.input(context);
    let h_cls = g.input(h_cls);
    Ok(MemoryBanks {
        description,
        context,
        aspect_index,
        h_cls,
    })
}
