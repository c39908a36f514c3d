//! Attention-guided feature fusion for text classification: a BiLSTM with
//! attention pooling and a projected TF-IDF vector, blended by a learned
//! sigmoid gate.

pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod inspect;
pub mod model;
pub mod pipeline;
pub mod text;
pub mod tfidf;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use corpus::{Dataset, Document};
pub use error::{Error, Result};
pub use model::{FusionMode, ModelConfig, ModelParams};
pub use pipeline::{Artifacts, Example, FeatureConfig, Features};
pub use train::{evaluate, train, EpochMetrics, EvalReport, TrainConfig, TrainOutcome};
