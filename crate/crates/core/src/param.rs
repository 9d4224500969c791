//! Named trainable parameters.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
    Normal {
        std: f64,
    },
}

#[derive(Debug, Clone)]
pub struct ParamEntry<R> {
    pub name: String,
    pub init: Init,
    value: Arc<Tensor<R>>,
    grad: Option<Tensor<R>>,
}

impl<R: Real> ParamEntry<R> {
    pub fn value(&self) -> &Tensor<R> {
        &self.value
    }

    pub fn grad(&self) -> Option<&Tensor<R>> {
        self.grad.as_ref()
    }
}

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<R> {
    entries: Vec<ParamEntry<R>>,
    index: BTreeMap<String, ParamId>,
}

impl<R: Real> ParamStore<R> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    pub fn add<G: Rng + ?Sized>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut G) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let numel: usize = shape.iter().product();
        let data: Vec<R> = match init {
            Init::Zeros => alloc::vec![R::zero(); numel],
            Init::Ones => alloc::vec![R::one(); numel],
            Init::XavierUniform => {
                let (fan_in, fan_out) = match shape {
                    [n] => (1, *n),
                    [i, o] => (*i, *o),
                    _ => (numel, numel),
                };
                let bound = libm_sqrt(6.0 / (fan_in + fan_out) as f64);
                let dist =
                    Uniform::new_inclusive(-bound, bound).map_err(|_| Error::Config("invalid uniform bound".into()))?;
                (0..numel).map(|_| R::from_f64(dist.sample(rng))).collect()
            }
            Init::Normal { std } => {
                let dist = Normal::new(0.0, std).map_err(|_| Error::Config("invalid normal std".into()))?;
                (0..numel).map(|_| R::from_f64(dist.sample(rng))).collect()
            }
        };
        let value = Tensor::new(shape.to_vec(), data)?;
        let id = ParamId(self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            init,
            value: Arc::new(value),
            grad: None,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> &[ParamEntry<R>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<R> {
        &self.entries[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn value(&self, id: ParamId) -> &Tensor<R> {
        &self.entries[id.0].value
    }

    pub(crate) fn value_arc(&self, id: ParamId) -> Arc<Tensor<R>> {
        Arc::clone(&self.entries[id.0].value)
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<R> {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    /// Replaces a parameter's data, keeping its shape fixed.
    pub fn set(&mut self, id: ParamId, value: Tensor<R>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(Error::ParamShape {
                name: entry.name.clone(),
                expected: entry.value.shape().to_vec(),
                found: value.shape().to_vec(),
            });
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<R>> {
        self.entries[id.0].grad.as_ref()
    }

    /// Adds `scale * grad` for every parameter reached by a backward pass.
    pub fn accumulate(&mut self, grads: &Gradients<R>, scale: R) {
        for (id, g) in grads.params() {
            let slot = &mut self.entries[id.0].grad;
            match slot {
                Some(acc) => {
                    for (o, &x) in acc.data_mut().iter_mut().zip(g.data()) {
                        *o = *o + scale * x;
                    }
                }
                None => {
                    let data = g.data().iter().map(|&x| scale * x).collect();
                    *slot = Some(Tensor::with_shape(g.shape().to_vec(), data));
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.iter_mut() {
            e.grad = None;
        }
    }

    /// First parameter holding a NaN or infinity, or failing that the first
    /// whose gradient does.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|e| !e.value.is_finite())
            .or_else(|| {
                self.entries
                    .iter()
                    .find(|e| e.grad.as_ref().is_some_and(|g| !g.is_finite()))
            })
            .map(|e| e.name.as_str())
    }

    /// Same parameters in another precision (gradients dropped).
    pub fn cast<S: Real>(&self) -> ParamStore<S> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    init: e.init,
                    value: Arc::new(e.value.cast()),
                    grad: None,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}

fn libm_sqrt(x: f64) -> f64 {
    num_traits::Float::sqrt(x)
}

/// Affine map `x W + b` over rows, with `W` stored as `in × out`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut G,
    ) -> Result<Self> {
        let weight = store.add(
            &alloc::format!("{name}.weight"),
            &[input, output],
            Init::XavierUniform,
            rng,
        )?;
        let bias = if bias {
            Some(store.add(&alloc::format!("{name}.bias"), &[1, output], Init::Zeros, rng)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<R>, store: &ParamStore<R>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}
