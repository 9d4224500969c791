//! Knowledge gates: the vector-valued AdaKI gate and the scalar KI gate.

use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::{Linear, ParamStore};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    /// `base + k ⊙ (W [base, k])`, `W: 2d -> d`.
    Adaki,
    /// `base + k · (W [base, k])`, `W: 2d -> 1`.
    Ki,
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateKind::Adaki => "adaki",
            GateKind::Ki => "ki",
        })
    }
}

impl FromStr for GateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adaki" => Ok(GateKind::Adaki),
            "ki" => Ok(GateKind::Ki),
            other => Err(Error::Config(alloc::format!("unknown gate {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateActivation {
    #[default]
    None,
    Sigmoid,
}

impl FromStr for GateActivation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(GateActivation::None),
            "sigmoid" => Ok(GateActivation::Sigmoid),
            other => Err(Error::Config(alloc::format!("unknown gate activation {}", other))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Gate {
    pub kind: GateKind,
    pub activation: GateActivation,
    pub weight: Linear,
}

impl Gate {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        name: &str,
        kind: GateKind,
        activation: GateActivation,
        d: usize,
        rng: &mut G,
    ) -> Result<Self> {
        let out = match kind {
            GateKind::Adaki => d,
            GateKind::Ki => 1,
        };
        Ok(Self {
            kind,
            activation,
            weight: Linear::new(store, name, 2 * d, out, false, rng)?,
        })
    }

    /// Mixes `knowledge` into `base`; both are `1 × d`.
    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, base: Var, knowledge: Var) -> Result<Var> {
        if g.shape(base) != g.shape(knowledge) {
            return Err(Error::ShapeMismatch {
                op: "gate",
                left: g.shape(base).to_vec(),
                right: g.shape(knowledge).to_vec(),
            });
        }
        let joint = g.concat(&[base, knowledge])?;
        let mut gate = self.weight.forward(g, store, joint)?;
        if self.activation == GateActivation::Sigmoid {
            gate = g.sigmoid(gate)?;
        }
        let injected = match self.kind {
            GateKind::Adaki => g.hadamard(knowledge, gate)?,
            GateKind::Ki => g.mul_scalar(knowledge, gate)?,
        };
        g.add(base, injected)
    }
}
