use std::collections::BTreeSet;

use kagrmn_core::encoder::Vocabulary;
use kagrmn_core::gradcheck::{tiny_config, tiny_sample, TinyDims};
use kagrmn_core::model::{description_tokens, prepare};
use kagrmn_core::syntaxgraph::RelationVocab;
use kagrmn_core::{AspectSpan, Graph, Model, ModelConfig, ParamStore, Sample, Sentiment, Variant};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sample() -> Sample {
    let tokens: Vec<String> = ["the", "battery", "life", "is", "great"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Sample {
        id: "s1".into(),
        tokens,
        aspect_span: AspectSpan::new(1, 3),
        label: Sentiment::Positive,
        dep_heads: vec![2, 2, 4, 4, -1],
        dep_rels: ["det", "compound", "nsubj", "cop", "root"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        description_tokens: Some(vec!["energy".into(), "storage".into()]),
    }
}

fn param_names(variant: Variant) -> BTreeSet<String> {
    let dims = TinyDims::default();
    let mut store = ParamStore::<f64>::new();
    Model::new(
        &mut store,
        tiny_config(&dims, variant),
        dims.vocab,
        12,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    store.entries().iter().map(|e| e.name.clone()).collect()
}

#[test]
fn prepare_builds_merged_graph_and_ids() {
    let s = sample();
    let vocab = Vocabulary::from_tokens(["the", "battery", "life", "is", "great", "energy"]);
    let mut relations = RelationVocab::new(4);
    relations.insert("nsubj");
    let cfg = ModelConfig::default();
    let p = prepare(&s, &vocab, &relations, &cfg).unwrap();
    assert_eq!(p.context_ids, vec![4, 5, 6, 7, 8]);
    assert_eq!(p.aspect_ids, vec![5, 6]);
    assert_eq!(p.description_ids, vec![9, 1]);
    assert_eq!(p.graph.node_count(), 4);
    assert_eq!(p.graph.aspect_node, 1);
    assert_eq!(p.graph.relations[1], None);
    assert_eq!(p.graph.relations[3], Some(relations.id("nsubj")));
    assert_eq!(p.graph.position_weights[1], 1.0);

    let m1 = ModelConfig {
        variant: Variant::M1,
        ..ModelConfig::default()
    };
    assert_eq!(
        description_tokens(&s, &m1.switch()),
        vec!["battery".to_string(), "life".to_string()]
    );
    assert_eq!(
        prepare(&s, &vocab, &relations, &m1).unwrap().description_ids,
        vec![5, 6]
    );
    let bare = Sample {
        description_tokens: None,
        ..sample()
    };
    assert_eq!(description_tokens(&bare, &cfg.switch()), bare.aspect_tokens().to_vec());
}

#[test]
fn prepare_rejects_malformed_samples() {
    let vocab = Vocabulary::new();
    let relations = RelationVocab::new(4);
    let cfg = ModelConfig::default();
    let mut s = sample();
    s.dep_heads.pop();
    assert!(prepare(&s, &vocab, &relations, &cfg).is_err());
    let mut s = sample();
    s.aspect_span = AspectSpan::new(4, 6);
    assert!(prepare(&s, &vocab, &relations, &cfg).is_err());
}

#[test]
fn variants_register_only_their_components() {
    let full = param_names(Variant::M0);
    let has = |set: &BTreeSet<String>, prefix: &str| set.iter().any(|n| n.starts_with(prefix));
    for prefix in [
        "encoder.",
        "kagrmn.a2d",
        "kagrmn.adaki",
        "kagrmn.self_mha",
        "dsg.pgcn",
        "dsg.relational",
        "dsg.fusion",
        "heads.ki",
        "heads.a2c",
        "heads.classifier",
    ] {
        assert!(has(&full, prefix), "M0 lacks {prefix}");
    }
    let m2 = param_names(Variant::M2);
    assert!(!has(&m2, "dsg.") && !has(&m2, "heads.ki") && !has(&m2, "heads.a2c"));
    assert!(!has(&param_names(Variant::M3), "dsg."));
    assert!(!has(&param_names(Variant::M4), "dsg.relational"));
    assert!(!has(&param_names(Variant::M5), "dsg.pgcn"));
    assert!(!has(&param_names(Variant::M6), "heads.ki"));
    assert!(!has(&param_names(Variant::M7), "heads.a2c"));
    assert!(!has(&param_names(Variant::M8), "kagrmn.a2d"));
    assert!(!has(&param_names(Variant::M9), "kagrmn.self_mha"));
    assert!(has(&param_names(Variant::M10), "heads.adaki"));
    let m11 = param_names(Variant::M11);
    assert!(has(&m11, "kagrmn.ki") && has(&m11, "heads.ki"));
    let m12 = param_names(Variant::M12);
    assert!(has(&m12, "kagrmn.ki") && has(&m12, "heads.adaki"));
}

#[test]
fn every_variant_and_step_count_runs() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for steps in [1, 2, 4] {
        let dims = TinyDims {
            time_steps: steps,
            ..TinyDims::default()
        };
        let (input, relations) = tiny_sample(&dims, &mut rng).unwrap();
        let mut logits = Vec::new();
        for v in Variant::ALL {
            let mut store = ParamStore::<f64>::new();
            let model = Model::new(
                &mut store,
                tiny_config(&dims, v),
                dims.vocab,
                relations.len(),
                &mut ChaCha8Rng::seed_from_u64(2),
            )
            .unwrap();
            let mut g = Graph::new();
            let (loss, out) = model.loss(&mut g, &store, &input).unwrap();
            assert_eq!(g.shape(out.logits), &[1, 3]);
            assert!(g.value(loss).data()[0].is_finite());
            assert_eq!(out.memory.alphas.len(), if v == Variant::M8 { 0 } else { steps });
            let grads = g.backward(loss).unwrap();
            let reached: BTreeSet<_> = grads.params().map(|(id, _)| id).collect();
            for id in store.ids() {
                assert!(reached.contains(&id), "{v}: {} receives no gradient", store.name(id));
            }
            logits.push(g.value(out.logits).data().to_vec());
        }
        // M1 only differs from M0 when a description was retrieved
        for (i, v) in Variant::ALL.iter().enumerate().skip(2) {
            assert_ne!(logits[0], logits[i], "{v} matches M0 at T={steps}");
        }
    }
}

#[test]
fn variant_names_roundtrip() {
    for v in Variant::ALL {
        assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
    }
    assert_eq!("m3".parse::<Variant>().unwrap(), Variant::M3);
    assert_eq!("7".parse::<Variant>().unwrap(), Variant::M7);
    assert!("M13".parse::<Variant>().is_err());
}

#[test]
fn config_rejects_bad_values() {
    for bad in [
        ModelConfig {
            d_model: 0,
            ..ModelConfig::default()
        },
        ModelConfig {
            self_heads: 5,
            ..ModelConfig::default()
        },
        ModelConfig {
            dropout: 1.0,
            ..ModelConfig::default()
        },
        ModelConfig {
            alpha: 1.5,
            ..ModelConfig::default()
        },
        ModelConfig {
            batch_size: 0,
            ..ModelConfig::default()
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
    assert!(ModelConfig::default().validate().is_ok());
}
