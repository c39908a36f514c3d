//! Mini-batch Adam training with validation-based early stopping, and evaluation.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward_into, AdamState, Gradients, Rng, Tape};
use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};
use crate::model::{forward, forward_on_tape, init_params, ForwardOptions, ModelConfig, ModelParams};
use crate::pipeline::Example;

/// Validation accuracy must beat the best so far by more than this to count.
pub const IMPROVEMENT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub val_fraction: f64,
    /// `None` disables early stopping.
    pub patience: Option<usize>,
    pub seed: u64,
    pub model: ModelConfig,
    /// Constant gate applied in every training pass. Diagnostic use only.
    pub gate_override: Option<f64>,
    /// Each batch is split into this many contiguous shards whose gradients
    /// are computed in parallel and summed in shard order. Results depend on
    /// this value but not on the thread count; 1 accumulates in plain
    /// document order.
    pub grad_shards: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig, seed: u64) -> Self {
        Self {
            lr: 0.001,
            batch_size: 64,
            max_epochs: 10,
            val_fraction: 0.1,
            patience: Some(2),
            seed,
            model,
            gate_override: None,
            grad_shards: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.grad_shards == 0 {
            return Err(Error::Config("gradient shards must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "validation fraction must be in (0,1), got {}",
                self.val_fraction
            )));
        }
        self.model.validate()
    }
}

/// One line of the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    /// Kept out of the serialized form so that reruns produce identical files.
    #[serde(skip)]
    pub seconds: f64,
}

impl EpochMetrics {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("metrics serialize") + "\n"
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub optimizer_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    /// 0-based index of the first epoch reaching the best accuracy.
    pub best_epoch: usize,
}

/// Stops once `patience` consecutive epochs fail to improve on the best
/// accuracy by more than [`IMPROVEMENT_EPS`].
pub fn early_stop_check(history: &[f64], patience: usize) -> StopDecision {
    assert!(!history.is_empty(), "early_stop_check needs at least one epoch");
    let mut best = 0;
    for (i, &acc) in history.iter().enumerate().skip(1) {
        if acc > history[best] + IMPROVEMENT_EPS {
            best = i;
        }
    }
    StopDecision {
        stop: history.len() - 1 - best >= patience,
        best_epoch: best,
    }
}

fn check_training_set(examples: &[Example], num_classes: usize) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Train("training set is empty".into()));
    }
    let mut seen = vec![false; num_classes];
    for ex in examples {
        if ex.label >= num_classes {
            return Err(Error::LabelMismatch(format!(
                "document {} has label {} but the model has {num_classes} classes",
                ex.id, ex.label
            )));
        }
        if ex.features.token_ids.is_empty() {
            return Err(Error::EmptyDocument {
                id: Some(ex.id.clone()),
            });
        }
        seen[ex.label] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::Train("training set needs at least 2 classes".into()));
    }
    Ok(())
}

fn numerical(e: Error) -> Error {
    if e.is_numerical() {
        Error::Numerical(e.to_string())
    } else {
        e
    }
}

/// Forward and backward for one document, adding `weight ·` its gradient
/// into `grads`. Returns the loss and whether the prediction was right.
fn accumulate_example(
    params: &ModelParams,
    ex: &Example,
    opts: ForwardOptions,
    rng: &mut Rng,
    grads: &mut Gradients,
    weight: f64,
) -> Result<(f64, bool)> {
    let mut tape = Tape::new(params.store());
    let out = forward_on_tape(&mut tape, params, ex.features.input(), opts, rng).map_err(|e| match e {
        Error::EmptyDocument { .. } => Error::EmptyDocument {
            id: Some(ex.id.clone()),
        },
        e => numerical(e),
    })?;
    let (loss, probs) = tape
        .softmax_cross_entropy(out.logits, ex.label)
        .map_err(|e| numerical(e.into()))?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss on document {}", ex.id)));
    }
    backward_into(&tape, loss, grads, weight).map_err(|e| numerical(e.into()))?;
    Ok((value, argmax(&probs) == ex.label))
}

/// Trains from freshly initialized parameters. `on_epoch` sees each epoch's
/// metrics as soon as they are known.
pub fn train(
    train_set: &[Example],
    val_set: Option<&[Example]>,
    config: &TrainConfig,
    pretrained: Option<&EmbeddingTable>,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_training_set(train_set, config.model.num_classes)?;

    let mut rng = Rng::new(config.seed);
    let mut init_rng = rng.fork();
    let mut shuffle_rng = rng.fork();
    let mut dropout_rng = rng.fork();

    let mut params = init_params(&config.model, &mut init_rng, pretrained)?;
    let mut adam = AdamState::new(params.store());
    let shards = config.grad_shards.clamp(1, config.batch_size);
    let mut shard_grads: Vec<Gradients> = (0..shards).map(|_| Gradients::zeros_like(params.store())).collect();
    let mut batch_grads = (shards > 1).then(|| Gradients::zeros_like(params.store()));
    let opts = ForwardOptions {
        training: true,
        gate_override: config.gate_override,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut val_history = Vec::new();
    let mut best: Option<(usize, ModelParams)> = None;

    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let weight = 1.0 / batch.len() as f64;
            let mut doc_rngs: Vec<Rng> = batch.iter().map(|_| dropout_rng.fork()).collect();
            let per_shard = batch.len().div_ceil(shards);
            let used = batch.len().div_ceil(per_shard);
            let stats: Vec<Result<(f64, usize)>> = shard_grads[..used]
                .par_iter_mut()
                .zip(batch.par_chunks(per_shard).zip(doc_rngs.par_chunks_mut(per_shard)))
                .map(|(grads, (docs, rngs))| {
                    grads.zero();
                    let mut stats = (0.0, 0);
                    for (&i, rng) in docs.iter().zip(rngs) {
                        let (loss, hit) = accumulate_example(&params, &train_set[i], opts, rng, grads, weight)?;
                        stats.0 += loss;
                        stats.1 += usize::from(hit);
                    }
                    Ok(stats)
                })
                .collect();
            for s in stats {
                let (l, c) = s?;
                loss_sum += l;
                correct += c;
            }
            let grads = match batch_grads.as_mut() {
                Some(total) => {
                    total.zero();
                    for g in &shard_grads[..used] {
                        total.accumulate(g)?;
                    }
                    &*total
                }
                None => &shard_grads[0],
            };
            adam.step(params.store_mut(), grads, config.lr)
                .map_err(|e| numerical(e.into()))?;
        }

        let val_accuracy = match val_set {
            Some(v) if !v.is_empty() => Some(evaluate(&params, v)?.accuracy),
            _ => None,
        };
        let metrics = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} val acc {} ({:.1}s)",
            metrics.train_loss,
            metrics.train_accuracy,
            val_accuracy.map_or("-".to_string(), |a| format!("{a:.4}")),
            metrics.seconds
        );
        on_epoch(&metrics)?;
        history.push(metrics);

        if let Some(acc) = val_accuracy {
            val_history.push(acc);
            let decision = early_stop_check(&val_history, config.patience.unwrap_or(usize::MAX));
            if decision.best_epoch + 1 == epoch {
                best = Some((epoch, params.clone()));
            }
            if decision.stop {
                log::info!("early stop after epoch {epoch}; best epoch {}", decision.best_epoch + 1);
                break;
            }
        }
    }

    let last_epoch = history.len();
    let (best_epoch, params) = best.unwrap_or((last_epoch, params));
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
        optimizer_steps: adam.step_count(),
    })
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub num_docs: usize,
}

impl EvalReport {
    pub fn from_predictions(num_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        let mut total = 0;
        for (truth, pred) in pairs {
            confusion[truth][pred] += 1;
            total += 1;
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let diag: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        let precision = (0..num_classes)
            .map(|c| ratio(confusion[c][c], (0..num_classes).map(|r| confusion[r][c]).sum()))
            .collect();
        let recall = (0..num_classes)
            .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
            .collect();
        Self {
            accuracy: ratio(diag, total),
            precision,
            recall,
            confusion,
            num_docs: total,
        }
    }
}

/// Predicted class per example, in order. Runs inference in parallel.
pub fn predict(params: &ModelParams, examples: &[Example]) -> Result<Vec<usize>> {
    examples
        .par_iter()
        .map(|ex| {
            let trace = forward(params, ex.features.input(), ForwardOptions::inference(), &mut Rng::new(0))?;
            Ok(argmax(&trace.probs))
        })
        .collect()
}

pub fn evaluate(params: &ModelParams, examples: &[Example]) -> Result<EvalReport> {
    let c = params.config().num_classes;
    if let Some(ex) = examples.iter().find(|ex| ex.label >= c) {
        return Err(Error::LabelMismatch(format!(
            "document {} has label {} but the model has {c} classes",
            ex.id, ex.label
        )));
    }
    let predicted = predict(params, examples)?;
    Ok(EvalReport::from_predictions(
        c,
        examples.iter().map(|ex| ex.label).zip(predicted),
    ))
}
