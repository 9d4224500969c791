#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod dsgnet;
pub mod encoder;
pub mod error;
pub mod gate;
pub mod gradcheck;
pub mod graph;
pub mod heads;
pub mod kagrmn;
pub mod metrics;
pub mod model;
pub mod param;
pub mod retrieval;
pub mod sample;
pub mod syntaxgraph;
pub mod tensor;

pub use adam::Adam;
pub use error::{Error, Result};
pub use graph::{Gradients, Graph, OpKind, Var};
pub use metrics::{ConfusionMatrix, Metrics};
pub use model::{Model, ModelConfig, PreparedSample, Variant, VariantSwitch};
pub use param::{Init, Linear, ParamId, ParamStore};
pub use sample::{AspectSpan, Sample, Sentiment};
pub use tensor::{Real, Tensor};
