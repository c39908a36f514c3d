//! The fusion classifier: embeddings → BiLSTM → attention pooling on one
//! side, projected TF-IDF on the other, merged by a sigmoid gate (or one of
//! the ablation modes) and fed to a softmax layer.

mod forward;
mod params;
mod vocab;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forward::{
    attention_pool, bilstm_encode, embed_ids, embed_sequence, forward, forward_on_tape, fuse,
    project_stat, DocInput, ForwardOptions, ForwardTrace, ForwardVars,
};
pub use params::{init_params, LstmIds, ModelParams, ParamIds};
pub use vocab::SemanticVocab;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// `z = g⊙h + (1−g)⊙s'` with a learned gate.
    Gated,
    /// `z = [h ; s']`.
    Concat,
    SemanticOnly,
    TfidfOnly,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::Gated,
        FusionMode::Concat,
        FusionMode::SemanticOnly,
        FusionMode::TfidfOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::Gated => "gated",
            FusionMode::Concat => "concat",
            FusionMode::SemanticOnly => "semantic_only",
            FusionMode::TfidfOnly => "tfidf_only",
        }
    }

    pub fn uses_semantic(self) -> bool {
        self != FusionMode::TfidfOnly
    }

    pub fn uses_statistical(self) -> bool {
        self != FusionMode::SemanticOnly
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown fusion mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Known semantic tokens; the embedding table has one extra UNK row.
    pub vocab_size_semantic: usize,
    pub embed_dim: usize,
    pub hidden_per_dir: usize,
    /// TF-IDF vocabulary size `V`.
    pub tfidf_dim: usize,
    pub num_classes: usize,
    pub fusion_mode: FusionMode,
    /// Longest token prefix the recurrent branch reads.
    pub max_seq_len: usize,
    pub dropout_p: f64,
}

impl ModelConfig {
    pub const DEFAULT_EMBED_DIM: usize = 64;
    pub const DEFAULT_HIDDEN: usize = 64;
    pub const DEFAULT_MAX_SEQ_LEN: usize = 400;
    pub const DEFAULT_DROPOUT: f64 = 0.5;

    pub fn new(vocab_size_semantic: usize, tfidf_dim: usize, num_classes: usize, fusion_mode: FusionMode) -> Self {
        Self {
            vocab_size_semantic,
            embed_dim: Self::DEFAULT_EMBED_DIM,
            hidden_per_dir: Self::DEFAULT_HIDDEN,
            tfidf_dim,
            num_classes,
            fusion_mode,
            max_seq_len: Self::DEFAULT_MAX_SEQ_LEN,
            dropout_p: Self::DEFAULT_DROPOUT,
        }
    }

    /// `D = 2·hidden_per_dir`; the size of `h`, `s'`, `g` and (outside concat mode) `z`.
    pub fn fused_dim(&self) -> usize {
        2 * self.hidden_per_dir
    }

    /// Width of the classifier input.
    pub fn output_input_dim(&self) -> usize {
        match self.fusion_mode {
            FusionMode::Concat => 2 * self.fused_dim(),
            _ => self.fused_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("embed_dim", self.embed_dim),
            ("hidden_per_dir", self.hidden_per_dir),
            ("tfidf_dim", self.tfidf_dim),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be at least 1")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout must be in [0,1), got {}", self.dropout_p)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
