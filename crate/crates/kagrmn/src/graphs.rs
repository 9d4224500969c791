//! Inspectable dumps of the two syntax graphs of a sample.

use kagrmn_core::syntaxgraph::{build_dense, build_sparse, position_weights, DependencyParse, RelationVocab};
use kagrmn_core::Sample;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub id: String,
    pub nodes: usize,
    pub aspect_node: usize,
    /// Merged-graph edges `[a, b]` with `a < b`.
    pub edges: Vec<[usize; 2]>,
    /// Relation label of each node towards the aspect (`None` for the aspect).
    pub dense_labels: Vec<Option<String>>,
    pub relation_ids: Vec<Option<usize>>,
    pub position_weights: Vec<f64>,
}

pub fn dump(sample: &Sample, relations: &RelationVocab, max_distance: usize) -> Result<GraphDump> {
    sample.validate()?;
    let parse = DependencyParse::new(&sample.dep_heads, &sample.dep_rels)?;
    let span = sample.aspect_span;
    let sparse = build_sparse(&parse, span)?;
    let dense = build_dense(&parse, span, relations, max_distance)?;
    let n = sparse.node_count();
    Ok(GraphDump {
        id: sample.id.clone(),
        nodes: n,
        aspect_node: sparse.aspect_node(),
        edges: sparse.edges().into_iter().map(|(a, b)| [a, b]).collect(),
        dense_labels: (0..n).map(|j| dense.label(j).map(str::to_string)).collect(),
        relation_ids: (0..n).map(|j| dense.relation_id(j)).collect(),
        position_weights: position_weights(n, sparse.aspect_node())?.weights,
    })
}
