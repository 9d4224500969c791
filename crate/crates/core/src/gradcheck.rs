//! Finite-difference verification of analytic parameter gradients.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsgnet::{DsgConfig, DsgNet, GraphInputs};
use crate::encoder::{constant_banks, Encoder, EncoderConfig};
use crate::error::Result;
use crate::gate::{Gate, GateActivation, GateKind};
use crate::graph::{Graph, OpKind, Var};
use crate::heads::{a2c_attention, new_a2c, Classifier};
use crate::kagrmn::{Kagrmn, KagrmnConfig};
use crate::model::{Model, ModelConfig, PreparedSample, Variant};
use crate::param::{ParamId, ParamStore};
use crate::sample::{AspectSpan, Sentiment};
use crate::syntaxgraph::{build_dense, build_sparse, position_weights, random_heads, DependencyParse, RelationVocab};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// Coordinates checked per parameter group.
    pub coords_per_group: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: 1e-4,
            floor: 1e-4,
            coords_per_group: 10,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub suite: String,
    pub group: String,
    pub checked: usize,
    /// Coordinates passed over because the loss is not smooth there.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
    pub warnings: Vec<String>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GroupReport> {
        self.groups.iter().filter(|g| g.max_rel_error > self.tolerance)
    }
}

/// Group key of a parameter name: its first two dot-separated segments.
pub fn group_of(name: &str) -> &str {
    match name.match_indices('.').nth(1) {
        Some((i, _)) => &name[..i],
        None => name,
    }
}

/// Checks sampled coordinates of every parameter group in `store` against
/// central differences of the scalar produced by `loss`.
pub fn check_store<F>(
    suite: &str,
    store: &mut ParamStore<f64>,
    loss: F,
    cfg: &GradcheckConfig,
    fault: Option<OpKind>,
    report: &mut GradcheckReport,
) -> Result<()>
where
    F: Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    report.tolerance = cfg.tolerance;
    if store.is_empty() {
        report
            .warnings
            .push(format!("{suite}: no parameters, gradient check is vacuous"));
        return Ok(());
    }
    let mut g = Graph::new().with_verification();
    if let Some(kind) = fault {
        g = g.with_backward_fault(kind);
    }
    let out = loss(&mut g, store)?;
    let grads = g.backward(out)?;
    let analytic: BTreeMap<ParamId, Tensor<f64>> = grads.params().map(|(id, t)| (id, t.clone())).collect();

    let mut groups: BTreeMap<String, Vec<(ParamId, usize)>> = BTreeMap::new();
    for id in store.ids() {
        let group = group_of(store.name(id)).to_string();
        let coords = groups.entry(group).or_default();
        for k in 0..store.value(id).numel() {
            coords.push((id, k));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let v = loss(&mut g, store)?;
        Ok(g.value(v).data()[0])
    };
    for (group, coords) in groups {
        let grad_at = |&(id, k): &(ParamId, usize)| analytic.get(&id).map_or(0.0, |t| t.data()[k]);
        // half the picks come from coordinates with a live gradient
        let mut live: Vec<_> = coords.iter().copied().filter(|c| grad_at(c) != 0.0).collect();
        live.shuffle(&mut rng);
        let want = cfg.coords_per_group.min(coords.len());
        let mut queue: Vec<(ParamId, usize)> = live.into_iter().take(want.div_ceil(2)).collect();
        let mut seen = queue.clone();
        let mut checked = 0;
        let mut skipped = 0;
        let mut max_err = 0.0f64;
        let mut worst = String::new();
        let mut attempts = 0;
        while checked < want && attempts < 4 * want + 8 {
            attempts += 1;
            let (id, k) = match queue.pop() {
                Some(c) => c,
                None => {
                    let c = coords[rng.random_range(0..coords.len())];
                    if seen.contains(&c) && seen.len() < coords.len() {
                        continue;
                    }
                    seen.push(c);
                    c
                }
            };
            let original = store.value(id).data()[k];
            let mut central = |h: f64| -> Result<f64> {
                store.value_mut(id).data_mut()[k] = original + h;
                let plus = eval(store);
                store.value_mut(id).data_mut()[k] = original - h;
                let minus = eval(store);
                store.value_mut(id).data_mut()[k] = original;
                Ok((plus? - minus?) / (2.0 * h))
            };
            let numeric = central(cfg.step)?;
            let wide = central(2.0 * cfg.step)?;
            // a ReLU kink inside the stencil shows up as disagreement between
            // the two step sizes; such points have no derivative to compare
            if relative_error(numeric, wide, cfg.floor) > 0.1 * cfg.tolerance {
                skipped += 1;
                continue;
            }
            checked += 1;
            let err = relative_error(grad_at(&(id, k)), numeric, cfg.floor);
            if err > max_err || worst.is_empty() {
                max_err = max_err.max(err);
                worst = format!("{}[{k}]", store.name(id));
            }
        }
        report.groups.push(GroupReport {
            suite: suite.to_string(),
            group,
            checked,
            skipped,
            max_rel_error: max_err,
            worst,
        });
    }
    Ok(())
}

/// Dimensions of the verification setting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TinyDims {
    pub d_model: usize,
    pub context_len: usize,
    pub description_len: usize,
    pub time_steps: usize,
    pub vocab: usize,
}

impl Default for TinyDims {
    fn default() -> Self {
        Self {
            d_model: 8,
            context_len: 5,
            description_len: 3,
            time_steps: 2,
            vocab: 16,
        }
    }
}

pub fn tiny_config(dims: &TinyDims, variant: Variant) -> ModelConfig {
    ModelConfig {
        d_model: dims.d_model,
        encoder_layers: 1,
        encoder_heads: 2,
        ffn_dim: 2 * dims.d_model,
        max_len: 32,
        time_steps: dims.time_steps,
        self_heads: 2,
        gcn_layers: 2,
        relational_heads: 2,
        relation_dim: 4,
        dropout: 0.0,
        variant,
        ..ModelConfig::default()
    }
}

const TINY_LABELS: [&str; 4] = ["nsubj", "amod", "det", "obj"];

/// A random sample with a single-token aspect, so the context bank has
/// exactly `context_len` rows.
pub fn tiny_sample<G: Rng + ?Sized>(dims: &TinyDims, rng: &mut G) -> Result<(PreparedSample, RelationVocab)> {
    let n = dims.context_len;
    let heads = random_heads(n, rng);
    let rels: Vec<String> = (0..n)
        .map(|_| TINY_LABELS[rng.random_range(0..TINY_LABELS.len())].to_string())
        .collect();
    let parse = DependencyParse::new(&heads, &rels)?;
    let start = rng.random_range(0..n);
    let span = AspectSpan::new(start, start + 1);
    let mut vocab = RelationVocab::new(crate::syntaxgraph::DEFAULT_MAX_DISTANCE);
    for l in TINY_LABELS {
        vocab.insert(l);
    }
    let sparse = build_sparse(&parse, span)?;
    let dense = build_dense(&parse, span, &vocab, crate::syntaxgraph::DEFAULT_MAX_DISTANCE)?;
    let first = crate::encoder::RESERVED.len();
    let mut token = || rng.random_range(first..dims.vocab);
    let context_ids: Vec<usize> = (0..n).map(|_| token()).collect();
    let description_ids: Vec<usize> = (0..dims.description_len).map(|_| token()).collect();
    let label = Sentiment::ALL[rng.random_range(0..3)];
    Ok((
        PreparedSample {
            id: "tiny".into(),
            aspect_ids: alloc::vec![context_ids[start]],
            context_ids,
            description_ids,
            span,
            graph: GraphInputs {
                adjacency: sparse.adjacency(),
                aspect_node: sparse.aspect_node(),
                relations: (0..n).map(|j| dense.relation_id(j)).collect(),
                position_weights: position_weights(n, start)?.weights,
            },
            label,
        },
        vocab,
    ))
}

fn random_tensor<G: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut G) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::matrix(rows, cols, data).expect("consistent shape")
}

/// `sum(w ⊙ x)` with constant weights, a generic scalar readout.
fn readout(g: &mut Graph<f64>, x: Var, w: &Tensor<f64>) -> Result<Var> {
    let w = g.constant(w.clone());
    let p = g.hadamard(x, w)?;
    g.sum(p)
}

/// Runs the module suites and the end-to-end check at tiny dimensions.
pub fn run(cfg: &GradcheckConfig, dims: &TinyDims, variant: Variant, fault: Option<OpKind>) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        tolerance: cfg.tolerance,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = dims.d_model;
    let n = dims.context_len;
    let nd = dims.description_len;
    let config = tiny_config(dims, variant);
    let (sample, relations) = tiny_sample(dims, &mut rng)?;

    // encoder
    {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, EncoderConfig { ..config.encoder() }, dims.vocab, &mut rng)?;
        let (w_cls, w_c, w_d) = (
            random_tensor(1, d, &mut rng),
            random_tensor(n, d, &mut rng),
            random_tensor(nd, d, &mut rng),
        );
        check_store(
            "encoder",
            &mut store,
            |g, s| {
                let (h, hc) = enc.encode_pair(g, s, &sample.context_ids, &sample.aspect_ids, 0.0)?;
                let hd = enc.encode_single(g, s, &sample.description_ids, 0.0)?;
                let a = readout(g, h, &w_cls)?;
                let b = readout(g, hc, &w_c)?;
                let c = readout(g, hd, &w_d)?;
                let ab = g.add(a, b)?;
                g.add(ab, c)
            },
            cfg,
            fault,
            &mut report,
        )?;
    }

    // memory network
    {
        let mut store = ParamStore::new();
        let kcfg = KagrmnConfig {
            dropout: 0.0,
            ..config.kagrmn()
        };
        let net = Kagrmn::new(&mut store, kcfg, &mut rng)?;
        let (md, mc) = (random_tensor(nd, d, &mut rng), random_tensor(n, d, &mut rng));
        let (w_c, w_k) = (random_tensor(n, d, &mut rng), random_tensor(1, d, &mut rng));
        let aspect = sample.graph.aspect_node;
        check_store(
            "kagrmn",
            &mut store,
            |g, s| {
                let banks = constant_banks(g, md.clone(), mc.clone(), aspect)?;
                let out = net.run(g, s, &banks)?;
                let a = readout(g, out.context, &w_c)?;
                let b = readout(g, out.r_k, &w_k)?;
                g.add(a, b)
            },
            cfg,
            fault,
            &mut report,
        )?;
    }

    // dual syntax graph
    {
        let mut store = ParamStore::new();
        let dcfg: DsgConfig = config.dsg(relations.len());
        let net = DsgNet::new(&mut store, dcfg, &mut rng)?;
        let h = random_tensor(n, d, &mut rng);
        let w = random_tensor(n, d, &mut rng);
        check_store(
            "dsgnet",
            &mut store,
            |g, s| {
                let x = g.input(h.clone());
                let out = net.run(g, s, x, &sample.graph)?;
                readout(g, out.fused, &w)
            },
            cfg,
            fault,
            &mut report,
        )?;
    }

    // heads
    {
        let mut store = ParamStore::new();
        let gate = Gate::new(
            &mut store,
            "heads.ki.W_kr",
            GateKind::Ki,
            GateActivation::None,
            d,
            &mut rng,
        )?;
        let a2c = new_a2c(&mut store, d, &mut rng)?;
        let classifier = Classifier::new(&mut store, d, &mut rng)?;
        let (states, r_tilde, r_k, h_cls) = (
            random_tensor(n, d, &mut rng),
            random_tensor(1, d, &mut rng),
            random_tensor(1, d, &mut rng),
            random_tensor(1, d, &mut rng),
        );
        let aspect = sample.graph.aspect_node;
        check_store(
            "heads",
            &mut store,
            |g, s| {
                let base = g.input(states.clone());
                let rt = g.input(r_tilde.clone());
                let rk = g.input(r_k.clone());
                let hc = g.input(h_cls.clone());
                let r_a = gate.forward(g, s, rt, rk)?;
                let hs = g.scatter_row(base, aspect, r_a)?;
                let (_, r_f) = a2c_attention(g, s, &a2c, hs, r_a)?;
                let logits = classifier.logits(g, s, hc, r_f, 0.0)?;
                g.cross_entropy(logits, sample.label.index())
            },
            cfg,
            fault,
            &mut report,
        )?;
    }

    // full model
    {
        let mut store = ParamStore::new();
        let model = Model::new(&mut store, config.clone(), dims.vocab, relations.len(), &mut rng)?;
        check_store(
            "end_to_end",
            &mut store,
            |g, s| Ok(model.loss(g, s, &sample)?.0),
            cfg,
            fault,
            &mut report,
        )?;
    }
    Ok(report)
}
