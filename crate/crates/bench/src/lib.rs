//! Synthetic news-like corpora for benchmarks.

use agff_core::autodiff::Rng;
use agff_core::corpus::{Dataset, Document};
use agff_core::text::{StopWords, TextPipeline};
use agff_core::{Artifacts, Example, FeatureConfig};

const FILLER: [&str; 12] = [
    "the", "of", "and", "to", "in", "said", "on", "for", "with", "new", "after", "was",
];

/// `per_class` documents for each of `classes` topics, `len` words each,
/// drawn from a shared pool of 2000 words plus filler.
pub fn synthetic_dataset(classes: usize, per_class: usize, len: usize, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let mut docs = Vec::with_capacity(classes * per_class);
    for i in 0..classes * per_class {
        let label = i % classes;
        let words: Vec<String> = (0..len)
            .map(|_| match rng.below(4) {
                0 => FILLER[rng.below(FILLER.len())].to_string(),
                1 => format!("topic{label}w{}", rng.below(200)),
                _ => format!("word{}", rng.below(2000)),
            })
            .collect();
        docs.push(Document {
            id: format!("d{i}"),
            label,
            text: words.join(" "),
        });
    }
    let names = (0..classes).map(|c| format!("class{c}")).collect();
    Dataset::new(docs, names).expect("valid synthetic dataset")
}

pub fn featurized(ds: &Dataset) -> (Artifacts, Vec<Example>) {
    let text = TextPipeline::new(StopWords::default(), false);
    let artifacts = Artifacts::fit(ds, text, &FeatureConfig::default()).expect("fit");
    let examples = artifacts.encode(ds);
    (artifacts, examples)
}
