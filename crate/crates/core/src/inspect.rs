//! Gate statistics and top-attention tokens.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Rng;
use crate::error::{Error, Result};
use crate::model::{forward, ForwardOptions, ForwardTrace, FusionMode, ModelParams};
use crate::pipeline::Example;
use crate::text::TokenSequence;

pub const GATE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    /// Mean over a class's documents of the per-document mean gate; `None`
    /// for classes without documents.
    pub per_class_mean: Vec<Option<f64>>,
    /// Per class, counts of document-mean gates in ten equal bins over [0,1].
    pub per_class_histogram: Vec<[usize; GATE_BINS]>,
    pub global_mean: f64,
    /// Documents that produced a gate.
    pub num_docs: usize,
    /// Documents with no tokens, classified without a gate.
    pub skipped_empty: usize,
}

fn bin(x: f64) -> usize {
    ((x * GATE_BINS as f64).floor() as usize).min(GATE_BINS - 1)
}

/// Inference over `examples`, summarizing the document-level gate (the mean
/// of the gate vector).
pub fn gate_summary(params: &ModelParams, examples: &[Example], gate_override: Option<f64>) -> Result<GateReport> {
    let mode = params.config().fusion_mode;
    if mode != FusionMode::Gated {
        return Err(Error::Mode {
            expected: FusionMode::Gated.to_string(),
            found: mode.to_string(),
        });
    }
    let c = params.config().num_classes;
    let opts = ForwardOptions {
        training: false,
        gate_override,
    };
    let gates: Vec<Option<f64>> = examples
        .par_iter()
        .map(|ex| {
            let t = forward(params, ex.features.input(), opts, &mut Rng::new(0))?;
            Ok(t.gate.map(|g| g.iter().sum::<f64>() / g.len() as f64))
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    let mut hist = vec![[0usize; GATE_BINS]; c];
    let mut total = 0.0;
    let mut skipped = 0;
    for (ex, g) in examples.iter().zip(gates) {
        if ex.label >= c {
            return Err(Error::LabelMismatch(format!(
                "document {} has label {} but the model has {c} classes",
                ex.id, ex.label
            )));
        }
        let Some(g) = g else {
            skipped += 1;
            continue;
        };
        sums[ex.label] += g;
        counts[ex.label] += 1;
        hist[ex.label][bin(g)] += 1;
        total += g;
    }
    let num_docs: usize = counts.iter().sum();
    Ok(GateReport {
        per_class_mean: sums
            .iter()
            .zip(&counts)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect(),
        per_class_histogram: hist,
        global_mean: if num_docs > 0 { total / num_docs as f64 } else { f64::NAN },
        num_docs,
        skipped_empty: skipped,
    })
}

/// The `k` tokens with the highest attention, earlier positions first on ties.
/// Attention covers only the truncated prefix the model read.
pub fn attention_topk(trace: &ForwardTrace, tokens: &TokenSequence, k: usize) -> Vec<(String, f64)> {
    let mut order: Vec<usize> = (0..trace.alpha.len().min(tokens.len())).collect();
    order.sort_by(|&a, &b| trace.alpha[b].total_cmp(&trace.alpha[a]));
    order
        .into_iter()
        .take(k)
        .map(|i| (tokens.tokens()[i].clone(), trace.alpha[i]))
        .collect()
}
