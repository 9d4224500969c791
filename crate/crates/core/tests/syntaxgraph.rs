mod oracles;

use kagrmn_core::syntaxgraph::{
    build_dense, build_sparse, dense_labels, position_weights, random_heads, DependencyParse, RelationVocab,
    FAR_RELATION,
};
use kagrmn_core::AspectSpan;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| ["nsubj", "amod", "det", "obj", "advmod"][i % 5].to_string())
        .collect()
}

#[test]
fn random_trees_match_bfs_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n = rng.random_range(1..=10);
        let heads = random_heads(n, &mut rng);
        let rels = labels(n);
        let start = rng.random_range(0..n);
        let end = rng.random_range(start + 1..=n.min(start + 3));
        let parse = DependencyParse::new(&heads, &rels).unwrap();
        let span = AspectSpan::new(start, end);
        let sparse = build_sparse(&parse, span).unwrap();
        let oracle = oracles::tree_oracle(&heads, &rels, start, end, 4);
        assert_eq!(sparse.node_count(), oracle.nodes);
        assert_eq!(sparse.node_count(), span.merged_len(n));
        assert_eq!(sparse.edges(), oracle.edges, "heads {heads:?} span {start}..{end}");
        assert_eq!(
            dense_labels(&parse, span, 4).unwrap(),
            oracle.labels,
            "heads {heads:?} span {start}..{end}"
        );
    }
}

#[test]
fn chain_distances_and_cap() {
    // 0 <- 1 <- 2 <- ... <- 10, aspect is token 0
    let n = 11;
    let heads: Vec<i64> = (0..n as i64)
        .map(|i| if i == n as i64 - 1 { -1 } else { i + 1 })
        .collect();
    let rels = vec!["dep".to_string(); n];
    let parse = DependencyParse::new(&heads, &rels).unwrap();
    let labels = dense_labels(&parse, AspectSpan::new(0, 1), 4).unwrap();
    assert_eq!(labels[0], None);
    assert_eq!(labels[1].as_deref(), Some("dep"));
    assert_eq!(labels[3].as_deref(), Some("dist:3"));
    assert_eq!(labels[9].as_deref(), Some(FAR_RELATION));
}

#[test]
fn direct_dependent_gets_its_label() {
    // "food was great": food <-nsubj- great, was <-cop- great
    let rels: Vec<String> = ["nsubj", "cop", "root"].iter().map(|s| s.to_string()).collect();
    let parse = DependencyParse::new(&[2, 2, -1], &rels).unwrap();
    let mut vocab = RelationVocab::new(4);
    vocab.insert("nsubj");
    let dense = build_dense(&parse, AspectSpan::new(0, 1), &vocab, 4).unwrap();
    assert_eq!(dense.label(2), Some("nsubj"));
    assert_eq!(dense.relation_id(2), Some(vocab.id("nsubj")));
    assert_eq!(dense.label(1), Some("dist:2"));
    assert_eq!(dense.relation_id(0), None);
}

#[test]
fn aspect_internal_edges_vanish() {
    // "battery life" where life heads battery, both under 3
    let rels = labels(4);
    let parse = DependencyParse::new(&[2, 2, 3, -1], &rels).unwrap();
    let g = build_sparse(&parse, AspectSpan::new(1, 3)).unwrap();
    assert_eq!(g.node_count(), 3);
    assert!(g.edges().iter().all(|&(a, b)| a != b));
    assert_eq!(g.edges().len(), 2);
}

#[test]
fn malformed_parses_rejected() {
    let rels = labels(3);
    assert!(DependencyParse::new(&[1, 0, -1], &rels).is_err());
    assert!(DependencyParse::new(&[-1, -1, 0], &rels).is_err());
    assert!(DependencyParse::new(&[-1, 5, 0], &rels).is_err());
    assert!(DependencyParse::new(&[-1, 1, 0], &rels).is_err());
    let parse = DependencyParse::new(&[-1, 0, 0], &rels).unwrap();
    assert!(build_sparse(&parse, AspectSpan::new(2, 4)).is_err());
    assert!(build_sparse(&parse, AspectSpan::new(1, 1)).is_err());
}

#[test]
fn position_weight_examples() {
    let w = position_weights(4, 0).unwrap();
    assert_eq!(w.weights[0], 1.0);
    assert!((w.weights[3] - 0.4).abs() < 1e-15);
    assert!(position_weights(4, 4).is_err());
}

#[test]
fn unknown_labels_fall_back() {
    let vocab = RelationVocab::new(4);
    assert_eq!(vocab.id("never-seen"), 0);
    let restored = RelationVocab::from_labels(vocab.labels().iter()).unwrap();
    assert_eq!(restored, vocab);
}

proptest! {
    #[test]
    fn position_weights_are_positive_and_peak_at_aspect(n in 1usize..40, seed in 0u64..1000) {
        let tau = (seed as usize) % n;
        let w = position_weights(n, tau).unwrap();
        prop_assert_eq!(w.weights[tau], 1.0);
        for i in 0..n {
            prop_assert!(w.weights[i] > 0.0 && w.weights[i] <= 1.0);
            prop_assert_eq!(w.weights[i], 1.0 - i.abs_diff(tau) as f64 / (n + 1) as f64);
            if i + 1 < n && i >= tau {
                prop_assert!(w.weights[i + 1] < w.weights[i]);
            }
        }
    }

    #[test]
    fn sparse_graph_is_symmetric_without_self_loops(n in 1usize..12, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let heads = random_heads(n, &mut rng);
        let start = rng.random_range(0..n);
        let end = rng.random_range(start + 1..=n);
        let parse = DependencyParse::new(&heads, &labels(n)).unwrap();
        let g = build_sparse(&parse, AspectSpan::new(start, end)).unwrap();
        for i in 0..g.node_count() {
            prop_assert!(!g.neighbors(i).contains(&i));
            for &j in g.neighbors(i) {
                prop_assert!(g.neighbors(j).contains(&i));
            }
        }
    }
}
