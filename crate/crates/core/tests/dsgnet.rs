mod oracles;

use std::sync::Arc;

use kagrmn_core::dsgnet::{pgcn_layer, DsgConfig, DsgNet, Fusion, GraphInputs, RelationalAttention};
use kagrmn_core::syntaxgraph::{
    build_dense, build_sparse, position_weights, random_heads, DependencyParse, RelationVocab,
};
use kagrmn_core::{AspectSpan, Graph, Linear, ParamStore, Tensor};
use oracles::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LABELS: [&str; 5] = ["nsubj", "amod", "det", "obj", "advmod"];

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Mat {
    (0..r)
        .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn tensor(m: &Mat) -> Tensor<f64> {
    Tensor::matrix(m.len(), m[0].len(), m.concat()).unwrap()
}

fn rows(t: &Tensor<f64>) -> Mat {
    let (r, c) = t.rows_cols();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> (GraphInputs, RelationVocab) {
    let n = rng.random_range(1..=max_nodes);
    let heads = random_heads(n, rng);
    let rels: Vec<String> = (0..n).map(|_| LABELS[rng.random_range(0..5)].to_string()).collect();
    let parse = DependencyParse::new(&heads, &rels).unwrap();
    let start = rng.random_range(0..n);
    let span = AspectSpan::new(start, start + 1);
    let mut vocab = RelationVocab::new(4);
    for l in LABELS {
        vocab.insert(l);
    }
    let sparse = build_sparse(&parse, span).unwrap();
    let dense = build_dense(&parse, span, &vocab, 4).unwrap();
    let w = position_weights(n, start).unwrap();
    (
        GraphInputs {
            adjacency: sparse.adjacency(),
            aspect_node: start,
            relations: (0..n).map(|j| dense.relation_id(j)).collect(),
            position_weights: w.weights,
        },
        vocab,
    )
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for id in store.ids().collect::<Vec<_>>() {
        for x in store.value_mut(id).data_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
    }
}

#[test]
fn pgcn_matches_dense_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = 6;
    for _ in 0..50 {
        let (graph, _) = random_graph(&mut rng, 8);
        let mut store = ParamStore::<f64>::new();
        let layer = Linear::new(&mut store, "gcn", d, d, true, &mut rng).unwrap();
        randomize(&mut store, &mut rng);
        let h = random_mat(&mut rng, graph.node_count(), d);
        let mut g = Graph::new();
        let x = g.constant(tensor(&h));
        let out = pgcn_layer(&mut g, &store, &layer, x, &graph.adjacency, &graph.position_weights).unwrap();
        let expected = oracles::pgcn_dense(
            &graph.adjacency,
            &graph.position_weights,
            &h,
            &oracles::mat(&store, "gcn.weight"),
            &oracles::row_vec(&store, "gcn.bias"),
        );
        assert!(oracles::max_abs_diff(&rows(g.value(out)).concat(), &expected.concat()) <= 1e-9);
    }
}

#[test]
fn pgcn_path_graph_by_hand() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let layer = Linear::new(&mut store, "gcn", 3, 3, true, &mut rng).unwrap();
    let id = store.lookup("gcn.weight").unwrap();
    store
        .set(
            id,
            Tensor::matrix(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
    let adjacency = Arc::new(vec![vec![1], vec![0, 2], vec![1], vec![]]);
    let h = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![2.0, 4.0, 6.0],
    ];
    let mut g = Graph::new();
    let x = g.constant(tensor(&h));
    let out = pgcn_layer(&mut g, &store, &layer, x, &adjacency, &[1.0; 4]).unwrap();
    let out = rows(g.value(out));
    assert!(oracles::max_abs_diff(&out[1], &[1.0 / 3.0; 3]) < 1e-15);
    // isolated node aggregates only itself
    assert_eq!(out[3], vec![2.0, 4.0, 6.0]);
}

fn relational_setup(
    rng: &mut ChaCha8Rng,
    heads: usize,
    d: usize,
    vocab: usize,
) -> (ParamStore<f64>, RelationalAttention) {
    let mut store = ParamStore::new();
    let cfg = DsgConfig {
        d_model: d,
        heads,
        relation_dim: 4,
        relation_vocab: vocab,
        ..DsgConfig::default()
    };
    let attn = RelationalAttention::new(&mut store, &cfg, rng).unwrap();
    randomize(&mut store, rng);
    (store, attn)
}

#[test]
fn relational_matches_dense_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = 6;
    for _ in 0..50 {
        let (graph, vocab) = random_graph(&mut rng, 8);
        let heads = rng.random_range(1..=3);
        let (store, attn) = relational_setup(&mut rng, heads, d, vocab.len());
        let h = random_mat(&mut rng, graph.node_count(), d);
        let mut g = Graph::new();
        let x = g.constant(tensor(&h));
        let out = attn.forward(&mut g, &store, x, &graph).unwrap();
        let params = oracles::RelationalParams::from_store(&store, heads);
        let (expected, betas) = oracles::relational_dense(&params, &h, graph.aspect_node, &graph.relations);
        assert!(oracles::max_abs_diff(g.value(out.states).data(), &expected.concat()) <= 1e-9);
        assert_eq!(out.betas.len(), betas.len());
        for (b, e) in out.betas.iter().zip(&betas) {
            assert!(oracles::max_abs_diff(g.value(*b).data(), e) <= 1e-9);
            assert!((g.value(*b).data().iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}

#[test]
fn identical_relations_give_uniform_attention() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let d = 4;
    let (store, attn) = relational_setup(&mut rng, 1, d, 8);
    let n = 4;
    let graph = GraphInputs {
        adjacency: Arc::new(vec![vec![1], vec![0, 2, 3], vec![1], vec![1]]),
        aspect_node: 1,
        relations: vec![Some(5), None, Some(5), Some(5)],
        position_weights: vec![1.0; n],
    };
    let h = random_mat(&mut rng, n, d);
    let mut g = Graph::new();
    let x = g.constant(tensor(&h));
    let out = attn.forward(&mut g, &store, x, &graph).unwrap();
    for b in g.value(out.betas[0]).data() {
        assert!((b - 1.0 / 3.0).abs() < 1e-12);
    }
    let w1 = oracles::mat(&store, "dsg.relational.head0.W1.weight");
    let proj: Mat = h.iter().map(|r| oracles::vec_mat(r, &w1)).collect();
    let mean: Vec<f64> = (0..d).map(|c| (proj[0][c] + proj[2][c] + proj[3][c]) / 3.0).collect();
    let states = rows(g.value(out.states));
    assert!(oracles::max_abs_diff(&states[1], &mean) < 1e-12);
    // leaves see only the aspect node
    assert!(oracles::max_abs_diff(&states[0], &proj[1]) < 1e-12);
}

#[test]
fn unknown_relation_id_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (store, attn) = relational_setup(&mut rng, 1, 4, 3);
    let graph = GraphInputs {
        adjacency: Arc::new(vec![vec![1], vec![0]]),
        aspect_node: 0,
        relations: vec![None, Some(7)],
        position_weights: vec![1.0, 0.5],
    };
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[2, 4]));
    assert!(attn.forward(&mut g, &store, x, &graph).is_err());
}

#[test]
fn relational_aspect_row_invariant_under_context_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let d = 4;
    let (store, attn) = relational_setup(&mut rng, 2, d, 10);
    let h = random_mat(&mut rng, 5, d);
    let relations = vec![Some(4), Some(6), None, Some(8), Some(9)];
    let graph = |h_rel: &[Option<usize>]| GraphInputs {
        adjacency: Arc::new(vec![vec![2], vec![2], vec![0, 1, 3, 4], vec![2], vec![2]]),
        aspect_node: 2,
        relations: h_rel.to_vec(),
        position_weights: vec![1.0; 5],
    };
    let perm = [4, 3, 2, 0, 1];
    let h_perm: Mat = perm.iter().map(|&i| h[i].clone()).collect();
    let rel_perm: Vec<_> = perm.iter().map(|&i| relations[i]).collect();
    let mut g = Graph::new();
    let a = g.constant(tensor(&h));
    let b = g.constant(tensor(&h_perm));
    let out_a = attn.forward(&mut g, &store, a, &graph(&relations)).unwrap();
    let out_b = attn.forward(&mut g, &store, b, &graph(&rel_perm)).unwrap();
    let ra = rows(g.value(out_a.states));
    let rb = rows(g.value(out_b.states));
    assert!(oracles::max_abs_diff(&ra[2], &rb[2]) < 1e-12);
}

#[test]
fn pgcn_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let d = 3;
    let mut store = ParamStore::<f64>::new();
    let layer = Linear::new(&mut store, "gcn", d, d, true, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let adjacency = vec![vec![1], vec![0, 2, 3], vec![1], vec![1]];
    let weights = [0.6, 1.0, 0.8, 0.6];
    let h = random_mat(&mut rng, 4, d);
    let perm = [3, 1, 0, 2]; // new index i holds old node perm[i]
    let inv: Vec<usize> = (0..4).map(|o| perm.iter().position(|&p| p == o).unwrap()).collect();
    let adj_p: Vec<Vec<usize>> = perm
        .iter()
        .map(|&o| adjacency[o].iter().map(|&j| inv[j]).collect())
        .collect();
    let w_p: Vec<f64> = perm.iter().map(|&o| weights[o]).collect();
    let h_p: Mat = perm.iter().map(|&o| h[o].clone()).collect();
    let mut g = Graph::new();
    let x = g.constant(tensor(&h));
    let xp = g.constant(tensor(&h_p));
    let out = pgcn_layer(&mut g, &store, &layer, x, &Arc::new(adjacency), &weights).unwrap();
    let out_p = pgcn_layer(&mut g, &store, &layer, xp, &Arc::new(adj_p), &w_p).unwrap();
    let (o, op) = (rows(g.value(out)), rows(g.value(out_p)));
    for i in 0..4 {
        assert!(oracles::max_abs_diff(&op[i], &o[perm[i]]) < 1e-12);
    }
}

#[test]
fn fusion_with_zero_weights_returns_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f64>::new();
    let fusion = Fusion::new(&mut store, 4, &mut rng).unwrap();
    for name in ["dsg.fusion.hidden.weight", "dsg.fusion.output.weight"] {
        let id = store.lookup(name).unwrap();
        store.value_mut(id).data_mut().fill(0.0);
    }
    let bias = store.lookup("dsg.fusion.output.bias").unwrap();
    store.value_mut(bias).data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
    let mut g = Graph::new();
    let a = g.constant(Tensor::full(&[1, 4], 0.7));
    let b = g.constant(Tensor::full(&[1, 4], -0.2));
    let out = fusion.forward(&mut g, &store, a, b).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);
    let c = g.constant(Tensor::zeros(&[1, 3]));
    assert!(fusion.forward(&mut g, &store, a, c).is_err());
}

#[test]
fn branch_ablations_change_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (graph, vocab) = random_graph(&mut rng, 1);
    let _ = graph;
    let d = 4;
    let mut outs = Vec::new();
    let heads: Vec<i64> = vec![1, -1, 1, 2, 3];
    let rels: Vec<String> = ["amod", "root", "nsubj", "det", "obj"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let parse = DependencyParse::new(&heads, &rels).unwrap();
    let span = AspectSpan::new(1, 2);
    let sparse = build_sparse(&parse, span).unwrap();
    let dense = build_dense(&parse, span, &vocab, 4).unwrap();
    let graph = GraphInputs {
        adjacency: sparse.adjacency(),
        aspect_node: 1,
        relations: (0..5).map(|j| dense.relation_id(j)).collect(),
        position_weights: position_weights(5, 1).unwrap().weights,
    };
    let h = random_mat(&mut rng, 5, d);
    for (use_pgcn, use_relational) in [(true, true), (true, false), (false, true)] {
        let mut store = ParamStore::<f64>::new();
        let cfg = DsgConfig {
            d_model: d,
            relation_vocab: vocab.len(),
            relation_dim: 4,
            use_pgcn,
            use_relational,
            ..DsgConfig::default()
        };
        let net = DsgNet::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(tensor(&h));
        let out = net.run(&mut g, &store, x, &graph).unwrap();
        assert_eq!(g.shape(out.aspect), &[1, d]);
        outs.push(g.value(out.aspect).data().to_vec());
    }
    assert!(oracles::max_abs_diff(&outs[0], &outs[1]) > 1e-6);
    assert!(oracles::max_abs_diff(&outs[0], &outs[2]) > 1e-6);
}

#[test]
fn one_layer_composition_by_hand() {
    // 3 nodes, aspect in the middle; one GCN layer and one relational head
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = 2;
    let mut store = ParamStore::<f64>::new();
    let cfg = DsgConfig {
        d_model: d,
        gcn_layers: 1,
        heads: 1,
        relation_dim: 2,
        relation_vocab: 4,
        ..DsgConfig::default()
    };
    let net = DsgNet::new(&mut store, cfg, &mut rng).unwrap();
    randomize(&mut store, &mut rng);
    let graph = GraphInputs {
        adjacency: Arc::new(vec![vec![1], vec![0, 2], vec![1]]),
        aspect_node: 1,
        relations: vec![Some(2), None, Some(3)],
        position_weights: vec![0.75, 1.0, 0.75],
    };
    let h = random_mat(&mut rng, 3, d);
    let mut g = Graph::new();
    let x = g.constant(tensor(&h));
    let out = net.run(&mut g, &store, x, &graph).unwrap();

    let gcn = oracles::pgcn_dense(
        &graph.adjacency,
        &graph.position_weights,
        &h,
        &oracles::mat(&store, "dsg.pgcn.layer0.weight"),
        &oracles::row_vec(&store, "dsg.pgcn.layer0.bias"),
    );
    let params = oracles::RelationalParams::from_store(&store, 1);
    let (rel, _) = oracles::relational_dense(&params, &h, 1, &graph.relations);
    let joint: Vec<f64> = gcn[1].iter().chain(&rel[1]).copied().collect();
    let hidden = oracles::relu(&oracles::add(
        &oracles::vec_mat(&joint, &oracles::mat(&store, "dsg.fusion.hidden.weight")),
        &oracles::row_vec(&store, "dsg.fusion.hidden.bias"),
    ));
    let expected = oracles::add(
        &oracles::vec_mat(&hidden, &oracles::mat(&store, "dsg.fusion.output.weight")),
        &oracles::row_vec(&store, "dsg.fusion.output.bias"),
    );
    assert!(oracles::max_abs_diff(g.value(out.aspect).data(), &expected) < 1e-12);
}
