#![allow(dead_code)]

use agff_core::autodiff::Rng;
use agff_core::corpus::{Dataset, Document};
use agff_core::model::{FusionMode, ModelConfig};
use agff_core::text::{StopWords, TextPipeline};
use agff_core::{Artifacts, Example, FeatureConfig};

pub const CLASSES: usize = 4;

/// `per_class` documents per class; each mixes 2-3 of its class's 3 exclusive
/// keywords with words shared by every class.
pub fn keyword_corpus(per_class: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let mut docs = Vec::new();
    for i in 0..per_class * CLASSES {
        let label = i % CLASSES;
        let mut words: Vec<String> = Vec::new();
        for _ in 0..2 + rng.below(2) {
            words.push(format!("key{label}x{}", rng.below(3)));
        }
        for _ in 0..3 + rng.below(4) {
            words.push(format!("common{}", rng.below(8)));
        }
        rng.shuffle(&mut words);
        docs.push(Document {
            id: format!("doc{i}"),
            label,
            text: words.join(" "),
        });
    }
    let names = (0..CLASSES).map(|c| format!("class{c}")).collect();
    Dataset::new(docs, names).unwrap()
}

pub fn features_for(ds: &Dataset) -> (Artifacts, Vec<Example>) {
    let text = TextPipeline::new(StopWords::default(), false);
    let cfg = FeatureConfig {
        max_terms: 5000,
        semantic_min_count: 1,
        semantic_max_size: 1000,
    };
    let artifacts = Artifacts::fit(ds, text, &cfg).unwrap();
    let examples = artifacts.encode(ds);
    (artifacts, examples)
}

pub fn small_config(artifacts: &Artifacts, num_classes: usize, mode: FusionMode) -> ModelConfig {
    ModelConfig {
        vocab_size_semantic: artifacts.semantic_vocab.len(),
        embed_dim: 16,
        hidden_per_dir: 8,
        tfidf_dim: artifacts.tfidf_vocab.len(),
        num_classes,
        fusion_mode: mode,
        max_seq_len: 400,
        dropout_p: 0.1,
    }
}

/// `|a − n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}
