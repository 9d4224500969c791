//! Independent dense reference implementations used by the tests.
#![allow(
    dead_code,
    clippy::needless_range_loop,
    clippy::too_many_arguments,
    clippy::type_complexity
)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use kagrmn_core::ParamStore;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(store: &ParamStore<f64>, name: &str) -> Mat {
    let id = store.lookup(name).unwrap_or_else(|| panic!("no parameter {name}"));
    let t = store.value(id);
    let (r, c) = t.rows_cols();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn row_vec(store: &ParamStore<f64>, name: &str) -> Vec<f64> {
    mat(store, name).remove(0)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(k, x)| x * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn vec_mat(v: &[f64], m: &Mat) -> Vec<f64> {
    matmul(&vec![v.to_vec()], m).remove(0)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

pub fn weighted_rows(w: &[f64], rows: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; rows[0].len()];
    for (wi, r) in w.iter().zip(rows) {
        for (o, x) in out.iter_mut().zip(r) {
            *o += wi * x;
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `Â (diag(w) H) W + b` with `Â = (A + I)` row-scaled by `1 / (d_i + 1)`.
pub fn pgcn_dense(adjacency: &[Vec<usize>], w_p: &[f64], h: &Mat, weight: &Mat, bias: &[f64]) -> Mat {
    let n = h.len();
    let mut a_hat = vec![vec![0.0; n]; n];
    for i in 0..n {
        a_hat[i][i] = 1.0;
        for &j in &adjacency[i] {
            a_hat[i][j] = 1.0;
        }
        let deg = adjacency[i].len() as f64;
        for x in a_hat[i].iter_mut() {
            *x /= deg + 1.0;
        }
    }
    let scaled: Mat = h
        .iter()
        .zip(w_p)
        .map(|(r, w)| r.iter().map(|x| x * w).collect())
        .collect();
    matmul(&matmul(&a_hat, &scaled), weight)
        .into_iter()
        .map(|r| add(&r, bias))
        .collect()
}

/// Relation-scored star attention evaluated node by node.
pub struct RelationalParams {
    pub embedding: Mat,
    pub heads: Vec<(Mat, Mat, Vec<f64>, Mat, Vec<f64>)>,
}

impl RelationalParams {
    pub fn from_store(store: &ParamStore<f64>, heads: usize) -> Self {
        Self {
            embedding: mat(store, "dsg.relational.relation_embedding"),
            heads: (0..heads)
                .map(|m| {
                    let p = format!("dsg.relational.head{m}");
                    (
                        mat(store, &format!("{p}.W1.weight")),
                        mat(store, &format!("{p}.W2.weight")),
                        row_vec(store, &format!("{p}.W2.bias")),
                        mat(store, &format!("{p}.W3.weight")),
                        row_vec(store, &format!("{p}.W3.bias")),
                    )
                })
                .collect(),
        }
    }
}

pub fn relational_dense(
    p: &RelationalParams,
    h: &Mat,
    aspect: usize,
    relations: &[Option<usize>],
) -> (Mat, Vec<Vec<f64>>) {
    let n = h.len();
    let d = h[0].len();
    let nh = p.heads.len() as f64;
    let mut out = vec![vec![0.0; d]; n];
    let mut betas = Vec::new();
    for (w1, w2, b1, w3, b2) in &p.heads {
        let proj: Mat = h.iter().map(|r| vec_mat(r, w1)).collect();
        let neighbors: Vec<usize> = (0..n).filter(|&j| j != aspect).collect();
        for i in 0..n {
            let contribution = if i == aspect {
                if neighbors.is_empty() {
                    proj[aspect].clone()
                } else {
                    let scores: Vec<f64> = neighbors
                        .iter()
                        .map(|&j| {
                            let r = &p.embedding[relations[j].unwrap()];
                            let hidden = relu(&add(&vec_mat(r, w2), b1));
                            dot(&hidden, &w3.iter().map(|c| c[0]).collect::<Vec<_>>()) + b2[0]
                        })
                        .collect();
                    let beta = softmax(&scores);
                    let rows: Mat = neighbors.iter().map(|&j| proj[j].clone()).collect();
                    let v = weighted_rows(&beta, &rows);
                    betas.push(beta);
                    v
                }
            } else {
                proj[aspect].clone()
            };
            for (o, x) in out[i].iter_mut().zip(&contribution) {
                *o += x / nh;
            }
        }
    }
    (out, betas)
}

/// Merged-graph edges and dense relation labels computed directly on the
/// token tree with a multi-source BFS from the aspect tokens.
pub struct TreeOracle {
    pub nodes: usize,
    pub edges: BTreeSet<(usize, usize)>,
    pub labels: Vec<Option<String>>,
}

pub fn tree_oracle(heads: &[i64], rels: &[String], start: usize, end: usize, max_distance: usize) -> TreeOracle {
    let n = heads.len();
    let in_aspect = |i: usize| i >= start && i < end;
    let node_of = |i: usize| {
        if i < start {
            i
        } else if i < end {
            start
        } else {
            i - (end - start) + 1
        }
    };
    let nodes = n - (end - start) + 1;

    let mut edges = BTreeSet::new();
    let mut neighbors = vec![Vec::new(); n];
    for (i, &h) in heads.iter().enumerate() {
        if h < 0 {
            continue;
        }
        let h = h as usize;
        neighbors[i].push(h);
        neighbors[h].push(i);
        if in_aspect(i) && in_aspect(h) {
            continue;
        }
        let (a, b) = (node_of(i), node_of(h));
        edges.insert((a.min(b), a.max(b)));
    }

    let mut dist = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    for i in start..end {
        dist[i] = 0;
        queue.push_back(i);
    }
    while let Some(u) = queue.pop_front() {
        for &v in &neighbors[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }

    let mut first: BTreeMap<usize, (usize, String)> = BTreeMap::new();
    for (i, &h) in heads.iter().enumerate() {
        if h < 0 {
            continue;
        }
        let h = h as usize;
        let outside = match (in_aspect(i), in_aspect(h)) {
            (true, false) => h,
            (false, true) => i,
            _ => continue,
        };
        let entry = first.entry(outside).or_insert((i, rels[i].clone()));
        if i < entry.0 {
            *entry = (i, rels[i].clone());
        }
    }

    let mut labels = vec![None; nodes];
    for tok in 0..n {
        if in_aspect(tok) {
            continue;
        }
        let label = if let Some((_, l)) = first.get(&tok) {
            l.clone()
        } else if dist[tok] <= max_distance {
            format!("dist:{}", dist[tok])
        } else {
            "dist:far".to_string()
        };
        labels[node_of(tok)] = Some(label);
    }
    TreeOracle { nodes, edges, labels }
}

/// Accuracy and macro-F1 recomputed from raw (gold, predicted) index pairs.
pub fn brute_force_metrics(pairs: &[(usize, usize)]) -> (f64, f64, [f64; 3]) {
    let total = pairs.len();
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    let acc = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    let mut f1 = [0.0; 3];
    for c in 0..3 {
        let tp = pairs.iter().filter(|&&(g, p)| g == c && p == c).count() as f64;
        let fp = pairs.iter().filter(|&&(g, p)| g != c && p == c).count() as f64;
        let fn_ = pairs.iter().filter(|&&(g, p)| g == c && p != c).count() as f64;
        let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        f1[c] = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
    }
    (acc, (f1[0] + f1[1] + f1[2]) / 3.0, f1)
}

pub fn transpose(m: &Mat) -> Mat {
    (0..m[0].len()).map(|j| m.iter().map(|r| r[j]).collect()).collect()
}

pub fn col_mean(m: &Mat) -> Vec<f64> {
    let n = m.len() as f64;
    (0..m[0].len())
        .map(|j| m.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect()
}

/// `alpha = softmax((M_D W + b) r_a)`, `r_k = alpha M_D`.
pub fn a2d_dense(md: &Mat, w: &Mat, b: &[f64], r_a: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = md.iter().map(|row| dot(&add(&vec_mat(row, w), b), r_a)).collect();
    let alpha = softmax(&scores);
    let r_k = weighted_rows(&alpha, md);
    (alpha, r_k)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Vector gate (`w` is `2d × d`) or scalar gate (`w` is `2d × 1`).
pub fn gate_dense(w: &Mat, base: &[f64], knowledge: &[f64], squash: bool) -> Vec<f64> {
    let joint: Vec<f64> = base.iter().chain(knowledge).copied().collect();
    let mut gate = vec_mat(&joint, w);
    if squash {
        gate = gate.into_iter().map(sigmoid).collect();
    }
    if gate.len() == 1 {
        base.iter().zip(knowledge).map(|(b, k)| b + k * gate[0]).collect()
    } else {
        base.iter()
            .zip(knowledge)
            .zip(&gate)
            .map(|((b, k), g)| b + k * g)
            .collect()
    }
}

pub fn self_mha_dense(h: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, heads: usize) -> Mat {
    let d = wq[0].len();
    let ds = d / heads;
    let (q, k, v) = (matmul(h, wq), matmul(h, wk), matmul(h, wv));
    let scale = 1.0 / (ds as f64).sqrt();
    let mut out = vec![vec![0.0; d]; h.len()];
    for hd in 0..heads {
        let cols = hd * ds..(hd + 1) * ds;
        for i in 0..h.len() {
            let scores: Vec<f64> = (0..h.len())
                .map(|j| dot(&q[i][cols.clone()], &k[j][cols.clone()]) * scale)
                .collect();
            let w = softmax(&scores);
            for c in cols.clone() {
                out[i][c] = (0..h.len()).map(|j| w[j] * v[j][c]).sum();
            }
        }
    }
    out
}

/// Full recurrence with shared projections, A2D and self-attention on.
pub fn kagrmn_dense(
    store: &ParamStore<f64>,
    gate_name: &str,
    squash: bool,
    md: &Mat,
    mc: &Mat,
    aspect: usize,
    steps: usize,
    heads: usize,
) -> (Mat, Vec<f64>, Vec<Vec<f64>>) {
    let wd = mat(store, "kagrmn.a2d.W_d.weight");
    let bd = row_vec(store, "kagrmn.a2d.W_d.bias");
    let wg = mat(store, &format!("{gate_name}.weight"));
    let wq = mat(store, "kagrmn.self_mha.W_q.weight");
    let wk = mat(store, "kagrmn.self_mha.W_k.weight");
    let wv = mat(store, "kagrmn.self_mha.W_v.weight");
    let mut context = mc.clone();
    let mut alphas = Vec::new();
    for _ in 0..steps {
        let r_a = context[aspect].clone();
        let (alpha, r_k) = a2d_dense(md, &wd, &bd, &r_a);
        alphas.push(alpha);
        context[aspect] = gate_dense(&wg, &r_a, &r_k, squash);
        context = self_mha_dense(&context, &wq, &wk, &wv, heads);
    }
    let r_a = context[aspect].clone();
    (context, r_a, alphas)
}
