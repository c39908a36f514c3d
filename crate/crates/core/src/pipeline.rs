//! Fitted preprocessing state shared by training, evaluation and inference.

use rayon::prelude::*;

use crate::corpus::Dataset;
use crate::error::Result;
use crate::model::{DocInput, SemanticVocab};
use crate::text::{TextPipeline, TokenSequence};
use crate::tfidf::{build_tfidf_vocab, compute_tfidf, SparseVector, TfidfVocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureConfig {
    /// TF-IDF vocabulary size bound.
    pub max_terms: usize,
    pub semantic_min_count: usize,
    pub semantic_max_size: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            max_terms: 5000,
            semantic_min_count: SemanticVocab::DEFAULT_MIN_COUNT,
            semantic_max_size: SemanticVocab::DEFAULT_MAX_SIZE,
        }
    }
}

/// Text pipeline plus the two vocabularies fitted on a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub text: TextPipeline,
    pub semantic_vocab: SemanticVocab,
    pub tfidf_vocab: TfidfVocabulary,
}

/// Model-ready view of one text.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    /// Tokens seen by the recurrent branch (before truncation).
    pub tokens: TokenSequence,
    pub token_ids: Vec<usize>,
    pub tfidf: SparseVector,
}

impl Features {
    pub fn input(&self) -> DocInput<'_> {
        DocInput {
            token_ids: &self.token_ids,
            tfidf: &self.tfidf,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: usize,
    pub features: Features,
}

impl Artifacts {
    pub fn fit(train: &Dataset, text: TextPipeline, config: &FeatureConfig) -> Result<Self> {
        let prepared: Vec<_> = train
            .documents()
            .par_iter()
            .map(|d| text.prepare(&d.text))
            .collect();
        let (semantic, statistical): (Vec<_>, Vec<_>) =
            prepared.into_iter().map(|p| (p.semantic, p.statistical)).unzip();
        let tfidf_vocab = build_tfidf_vocab(&statistical, config.max_terms)?;
        let semantic_vocab = SemanticVocab::build(&semantic, config.semantic_min_count, config.semantic_max_size);
        log::info!(
            "fitted vocabularies: {} semantic tokens, {} tf-idf terms over {} documents",
            semantic_vocab.len(),
            tfidf_vocab.len(),
            train.len()
        );
        Ok(Self {
            text,
            semantic_vocab,
            tfidf_vocab,
        })
    }

    pub fn featurize(&self, raw: &str) -> Features {
        let prepared = self.text.prepare(raw);
        Features {
            token_ids: self.semantic_vocab.encode(&prepared.semantic),
            tfidf: compute_tfidf(&prepared.statistical, &self.tfidf_vocab),
            tokens: prepared.semantic,
        }
    }

    /// Featurizes every document, in dataset order.
    pub fn encode(&self, dataset: &Dataset) -> Vec<Example> {
        dataset
            .documents()
            .par_iter()
            .map(|d| Example {
                id: d.id.clone(),
                label: d.label,
                features: self.featurize(&d.text),
            })
            .collect()
    }
}
