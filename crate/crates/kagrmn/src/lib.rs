//! File formats, the training loop and command-line plumbing around
//! [`kagrmn_core`].

pub mod bundle;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod error;
pub mod graphs;
pub mod knowledge;
pub mod toy;
pub mod train;
pub mod vocab;

pub use error::{write_atomic, Error, Result};
