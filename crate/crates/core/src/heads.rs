//! Aspect-to-context aggregation, the sentiment classifier and its loss.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{softmax_row, Graph, Var, PROB_FLOOR};
use crate::param::{Linear, ParamStore};
use crate::sample::Sentiment;
use crate::tensor::Real;

/// Scores `(H W_ac + b_ac) R_a^T` over the rows of `states`; returns
/// `(beta, R_f)` with `beta: 1 × N` and `R_f = beta H`.
pub fn a2c_attention<R: Real>(
    g: &mut Graph<R>,
    store: &ParamStore<R>,
    score: &Linear,
    states: Var,
    r_a: Var,
) -> Result<(Var, Var)> {
    if g.value(states).numel() == 0 {
        return Err(Error::Empty("hidden states"));
    }
    let proj = score.forward(g, store, states)?;
    let query = g.transpose(r_a)?;
    let scores = g.matmul(proj, query)?;
    let scores = g.transpose(scores)?;
    let beta = g.softmax(scores)?;
    let r_f = g.matmul(beta, states)?;
    Ok((beta, r_f))
}

pub fn new_a2c<R: Real, G: Rng + ?Sized>(store: &mut ParamStore<R>, d: usize, rng: &mut G) -> Result<Linear> {
    Linear::new(store, "heads.a2c.W_ac", d, d, true, rng)
}

/// `W_p [h_cls, R_f] + b_p` over the three sentiment classes.
#[derive(Debug, Clone, Copy)]
pub struct Classifier {
    pub output: Linear,
}

impl Classifier {
    pub fn new<R: Real, G: Rng + ?Sized>(store: &mut ParamStore<R>, d: usize, rng: &mut G) -> Result<Self> {
        Ok(Self {
            output: Linear::new(store, "heads.classifier.W_p", 2 * d, Sentiment::ALL.len(), true, rng)?,
        })
    }

    pub fn logits<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        h_cls: Var,
        r_f: Var,
        dropout: f64,
    ) -> Result<Var> {
        if g.shape(h_cls) != g.shape(r_f) {
            return Err(Error::ShapeMismatch {
                op: "classify",
                left: g.shape(h_cls).to_vec(),
                right: g.shape(r_f).to_vec(),
            });
        }
        let joint = g.concat(&[h_cls, r_f])?;
        let joint = g.dropout(joint, dropout)?;
        self.output.forward(g, store, joint)
    }

    /// Sentiment distribution in `[negative, positive, neutral]` order.
    pub fn classify<R: Real>(
        &self,
        g: &mut Graph<R>,
        store: &ParamStore<R>,
        h_cls: Var,
        r_f: Var,
    ) -> Result<Distribution> {
        let logits = self.logits(g, store, h_cls, r_f, 0.0)?;
        Ok(Distribution::from_logits(g.value(logits).data()))
    }
}

/// Probabilities over the fixed label order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distribution(pub [f64; 3]);

impl Distribution {
    pub fn from_logits<R: Real>(logits: &[R]) -> Self {
        let p: Vec<f64> = softmax_row(logits).into_iter().map(Real::as_f64).collect();
        Self([p[0], p[1], p[2]])
    }

    pub fn probs(&self) -> &[f64; 3] {
        &self.0
    }

    /// Most probable label; ties go to the earlier label.
    pub fn argmax(&self) -> Sentiment {
        let mut best = 0;
        for i in 1..3 {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Sentiment::ALL[best]
    }
}

/// `-ln max(P[gold], 1e-12)`.
pub fn loss(p: &Distribution, gold: Sentiment) -> f64 {
    -p.0[gold.index()].max(PROB_FLOOR).ln()
}
