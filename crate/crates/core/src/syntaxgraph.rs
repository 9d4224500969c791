//! Aspect-oriented reshaping of dependency parses.
//!
//! The sparse graph collapses the aspect tokens into one node and keeps the
//! remaining (undirected) dependency edges. The dense graph is a star: every
//! context node relates directly to the aspect node through either its
//! dependency label (first-order neighbors) or a bucketed tree distance.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::sample::AspectSpan;

pub const DEFAULT_MAX_DISTANCE: usize = 4;
pub const UNKNOWN_RELATION: &str = "<unk>";
pub const FAR_RELATION: &str = "dist:far";

/// A validated dependency tree: one root, heads in range, no cycles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyParse {
    heads: Vec<Option<usize>>,
    rels: Vec<String>,
}

impl DependencyParse {
    /// `heads` are 0-based with `-1` marking the root.
    pub fn new(heads: &[i64], rels: &[String]) -> Result<Self> {
        let n = heads.len();
        if n == 0 {
            return Err(Error::Empty("dependency parse"));
        }
        if rels.len() != n {
            return Err(Error::InvalidParse(format!("{n} heads but {} relations", rels.len())));
        }
        let mut parsed = Vec::with_capacity(n);
        for (i, &h) in heads.iter().enumerate() {
            parsed.push(match h {
                -1 => None,
                h if h >= 0 && (h as usize) < n && h as usize != i => Some(h as usize),
                h => return Err(Error::InvalidParse(format!("token {i} has invalid head {h}"))),
            });
        }
        let roots = parsed.iter().filter(|h| h.is_none()).count();
        if roots != 1 {
            return Err(Error::InvalidParse(format!("expected one root, found {roots}")));
        }
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(h) = parsed[cur] {
                cur = h;
                steps += 1;
                if steps > n {
                    return Err(Error::InvalidParse(format!("cycle reachable from token {start}")));
                }
            }
        }
        Ok(Self {
            heads: parsed,
            rels: rels.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn head(&self, i: usize) -> Option<usize> {
        self.heads[i]
    }

    pub fn rel(&self, i: usize) -> &str {
        &self.rels[i]
    }
}

/// Dependency graph with the aspect tokens merged into a single node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    adjacency: Arc<Vec<Vec<usize>>>,
    aspect_node: usize,
}

impl SparseGraph {
    pub fn from_edges(n: usize, aspect_node: usize, edges: &BTreeSet<(usize, usize)>) -> Self {
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in edges {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for list in adjacency.iter_mut() {
            list.sort_unstable();
        }
        Self {
            adjacency: Arc::new(adjacency),
            aspect_node,
        }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn aspect_node(&self) -> usize {
        self.aspect_node
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Degree excluding the node itself.
    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn adjacency(&self) -> Arc<Vec<Vec<usize>>> {
        Arc::clone(&self.adjacency)
    }

    /// Undirected edges as `(low, high)` pairs.
    pub fn edges(&self) -> BTreeSet<(usize, usize)> {
        let mut set = BTreeSet::new();
        for (i, nbrs) in self.adjacency.iter().enumerate() {
            for &j in nbrs {
                set.insert((i.min(j), i.max(j)));
            }
        }
        set
    }
}

/// Builds the merged sparse graph for one aspect span.
pub fn build_sparse(parse: &DependencyParse, span: AspectSpan) -> Result<SparseGraph> {
    span.validate(parse.len())?;
    let mut edges = BTreeSet::new();
    for i in 0..parse.len() {
        let Some(h) = parse.head(i) else { continue };
        let (a, b) = (span.merged_index(i), span.merged_index(h));
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    Ok(SparseGraph::from_edges(
        span.merged_len(parse.len()),
        span.start,
        &edges,
    ))
}

/// Relation label set: distance buckets plus dependency labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationVocab {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl RelationVocab {
    /// Reserved block: `<unk>`, `dist:1..=max_distance`, `dist:far`.
    pub fn new(max_distance: usize) -> Self {
        let mut vocab = Self {
            labels: Vec::new(),
            index: BTreeMap::new(),
        };
        vocab.insert(UNKNOWN_RELATION);
        for k in 1..=max_distance {
            vocab.insert(&distance_label(k));
        }
        vocab.insert(FAR_RELATION);
        vocab
    }

    /// Rebuilds a vocabulary from an ordered label list (ids are positions).
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Self {
            labels: Vec::new(),
            index: BTreeMap::new(),
        };
        for l in labels {
            let l = l.as_ref();
            if vocab.index.contains_key(l) {
                return Err(Error::Config(format!("duplicate relation label `{l}`")));
            }
            vocab.insert(l);
        }
        if vocab.labels.first().map(String::as_str) != Some(UNKNOWN_RELATION) {
            return Err(Error::Config("relation vocabulary must start with <unk>".into()));
        }
        Ok(vocab)
    }

    pub fn insert(&mut self, label: &str) -> usize {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len();
        self.labels.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    /// Id of `label`, or the `<unk>` id for unseen labels.
    pub fn id(&self, label: &str) -> usize {
        self.index.get(label).copied().unwrap_or(0)
    }

    pub fn label(&self, id: usize) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn distance_label(k: usize) -> String {
    format!("dist:{k}")
}

/// Star graph: the relation between the aspect node and every other node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseGraph {
    aspect_node: usize,
    labels: Vec<Option<String>>,
    ids: Vec<Option<usize>>,
}

impl DenseGraph {
    pub fn node_count(&self) -> usize {
        self.labels.len()
    }

    pub fn aspect_node(&self) -> usize {
        self.aspect_node
    }

    /// Relation label of node `j` (`None` for the aspect node itself).
    pub fn label(&self, j: usize) -> Option<&str> {
        self.labels[j].as_deref()
    }

    pub fn relation_id(&self, j: usize) -> Option<usize> {
        self.ids[j]
    }

    /// Context node indices in order, paired with their relation ids.
    pub fn context_relations(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.ids.iter().enumerate().filter_map(|(j, id)| id.map(|id| (j, id)))
    }
}

/// Relation labels of the dense graph, before vocabulary lookup.
pub fn dense_labels(parse: &DependencyParse, span: AspectSpan, max_distance: usize) -> Result<Vec<Option<String>>> {
    let sparse = build_sparse(parse, span)?;
    let n = sparse.node_count();
    let aspect = sparse.aspect_node();

    // first-order labels; the earliest edge (by dependent index) wins
    let mut first_order: Vec<Option<String>> = vec![None; n];
    for i in 0..parse.len() {
        let Some(h) = parse.head(i) else { continue };
        let neighbor = match (span.contains(i), span.contains(h)) {
            (true, false) => h,
            (false, true) => i,
            _ => continue,
        };
        let slot = &mut first_order[span.merged_index(neighbor)];
        if slot.is_none() {
            *slot = Some(parse.rel(i).to_string());
        }
    }

    let mut distance = vec![usize::MAX; n];
    distance[aspect] = 0;
    let mut queue = VecDeque::from([aspect]);
    while let Some(u) = queue.pop_front() {
        for &v in sparse.neighbors(u) {
            if distance[v] == usize::MAX {
                distance[v] = distance[u] + 1;
                queue.push_back(v);
            }
        }
    }

    Ok((0..n)
        .map(|j| {
            if j == aspect {
                None
            } else if let Some(label) = first_order[j].take() {
                Some(label)
            } else if distance[j] <= max_distance {
                Some(distance_label(distance[j]))
            } else {
                Some(FAR_RELATION.to_string())
            }
        })
        .collect())
}

/// Builds the star-shaped dense graph with relation ids from `vocab`.
pub fn build_dense(
    parse: &DependencyParse,
    span: AspectSpan,
    vocab: &RelationVocab,
    max_distance: usize,
) -> Result<DenseGraph> {
    let labels = dense_labels(parse, span, max_distance)?;
    let ids = labels.iter().map(|l| l.as_deref().map(|l| vocab.id(l))).collect();
    Ok(DenseGraph {
        aspect_node: span.start,
        labels,
        ids,
    })
}

/// Linear position decay `1 - |i - tau| / (n + 1)` around the aspect node.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionWeights {
    pub tau: usize,
    pub weights: Vec<f64>,
}

pub fn position_weights(n: usize, tau: usize) -> Result<PositionWeights> {
    if tau >= n {
        return Err(Error::IndexOutOfRange {
            op: "position_weights",
            index: tau,
            len: n,
        });
    }
    let denom = (n + 1) as f64;
    let weights = (0..n).map(|i| 1.0 - i.abs_diff(tau) as f64 / denom).collect();
    Ok(PositionWeights { tau, weights })
}

/// Heads of a uniformly shuffled random tree over `n` tokens.
pub fn random_heads<G: rand::Rng + ?Sized>(n: usize, rng: &mut G) -> Vec<i64> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut heads = vec![-1i64; n];
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        heads[order[k]] = parent as i64;
    }
    heads
}
