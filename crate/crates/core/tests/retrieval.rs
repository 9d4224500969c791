use kagrmn_core::retrieval::{
    avg_embedding, cosine, default_stopwords, lemmatize, normalize_key, similarity, EmbeddingTable, KnowledgeStore,
    RetrievalConfig,
};
use proptest::prelude::*;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn table() -> EmbeddingTable {
    let mut t = EmbeddingTable::new(3);
    t.insert("restaurant", vec![1.0, 0.0, 0.0]).unwrap();
    t.insert("menu", vec![1.0, 1.0, 0.0]).unwrap();
    t.insert("dish", vec![0.9, 0.1, 0.0]).unwrap();
    t.insert("eat", vec![1.0, 0.0, 0.1]).unwrap();
    t.insert("phone", vec![0.0, 0.0, 1.0]).unwrap();
    t.insert("device", vec![0.0, 0.1, 1.0]).unwrap();
    t.insert("screen", vec![0.0, 1.0, 1.0]).unwrap();
    t
}

#[test]
fn average_embedding_examples() {
    let t = table();
    let stop = default_stopwords();
    assert_eq!(
        avg_embedding(&words("menu phone"), &t, &stop).unwrap(),
        vec![0.5, 0.5, 0.5]
    );
    // stop words and unknown tokens are skipped
    assert_eq!(
        avg_embedding(&words("the menu xyzzy"), &t, &stop).unwrap(),
        vec![1.0, 1.0, 0.0]
    );
    assert!(avg_embedding(&words("the of xyzzy"), &t, &stop).is_err());
}

#[test]
fn cosine_examples() {
    assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    let (a, b) = ([0.3, -1.2, 2.5], [1.1, 0.4, -0.7]);
    let dot: f64 = 0.3 * 1.1 - 1.2 * 0.4 - 2.5 * 0.7;
    let expected = dot / ((0.09f64 + 1.44 + 6.25).sqrt() * (1.21f64 + 0.16 + 0.49).sqrt());
    assert!((cosine(&a, &b).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn similarity_by_hand() {
    let t = table();
    let cfg = RetrievalConfig::default();
    // q = 0.5 * [0,0,1] + 0.5 * [1,0,0]; candidate = [0,1,1]
    let s = similarity(&words("phone"), &words("screen"), &t, &default_stopwords(), &cfg).unwrap();
    assert!((s - 0.5 / (0.5f64.sqrt() * 2.0f64.sqrt())).abs() < 1e-12);
}

#[test]
fn lemmatizer_and_keys() {
    assert_eq!(lemmatize("Batteries"), "battery");
    assert_eq!(lemmatize("dishes"), "dish");
    assert_eq!(lemmatize("glass"), "glass");
    assert_eq!(normalize_key(&words("The Menus"), &default_stopwords()), "menu");
    assert_eq!(
        normalize_key(&words("battery life"), &default_stopwords()),
        "battery life"
    );
}

fn store() -> KnowledgeStore {
    let mut s = KnowledgeStore::default();
    s.insert(
        "chip",
        vec![words("small fried dish to eat"), words("device part in a phone")],
    )
    .unwrap();
    s.insert("menu", vec![words("list of dishes")]).unwrap();
    s
}

#[test]
fn resolve_picks_the_context_match() {
    let (s, t, cfg) = (store(), table(), RetrievalConfig::default());
    let food = s
        .resolve(&words("chips"), &words("the menu had chips"), &t, &cfg)
        .unwrap();
    assert_eq!(food.index, 0);
    assert_eq!(food.key, "chip");
    // the domain prior outweighs a weak tech context at alpha 0.5
    let prior = s.resolve(&words("chip"), &words("the phone screen"), &t, &cfg).unwrap();
    assert_eq!(prior.index, 0);
    let cfg = RetrievalConfig { alpha: 0.9, ..cfg };
    let tech = s.resolve(&words("chip"), &words("the phone screen"), &t, &cfg).unwrap();
    assert_eq!(tech.index, 1);
    assert_eq!(tech.tokens, words("device part in a phone"));
    assert!(tech.score.unwrap() > -1.0);
}

#[test]
fn resolve_single_and_missing() {
    let (s, t, cfg) = (store(), table(), RetrievalConfig::default());
    let lone = s.resolve(&words("Menus"), &words("xyzzy"), &t, &cfg).unwrap();
    assert_eq!(lone.index, 0);
    assert_eq!(lone.score, None);
    assert!(s.resolve(&words("battery"), &words("phone"), &t, &cfg).is_none());
    let mut empty = KnowledgeStore::default();
    assert!(empty.insert("x", vec![]).is_err());
    assert!(empty.insert("the", vec![words("a")]).is_err());
}

#[test]
fn config_requires_domain_embedding() {
    let cfg = RetrievalConfig {
        alpha: 0.5,
        domain_label: "laptop".into(),
    };
    assert!(cfg.validate(&table()).is_err());
    assert!(RetrievalConfig::default().validate(&table()).is_ok());
    let mut t = table();
    assert!(t.insert("bad", vec![1.0]).is_err());
}

proptest! {
    #[test]
    fn resolution_is_scale_invariant(c in 0.01f64..100.0, alpha in 0.0f64..=1.0) {
        let (s, t) = (store(), table());
        let cfg = RetrievalConfig { alpha, domain_label: "restaurant".into() };
        for context in ["the menu had chips", "the phone screen", "eat at the restaurant", "device"] {
            let a = s.resolve(&words("chip"), &words(context), &t, &cfg).unwrap();
            let b = s.resolve(&words("chip"), &words(context), &t.scaled(c), &cfg).unwrap();
            prop_assert_eq!(a.index, b.index);
            prop_assert!((a.score.unwrap() - b.score.unwrap()).abs() <= 1e-9);
        }
    }
}
