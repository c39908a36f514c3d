use crate::autodiff::{softmax, Rng, Tape, Tensor, TensorError, Var};
use crate::error::{Error, Result};
use crate::text::TokenSequence;
use crate::tfidf::SparseVector;

use super::{FusionMode, LstmIds, ModelParams, SemanticVocab};

/// One encoded document: embedding row ids (UNK included) and its TF-IDF vector.
#[derive(Debug, Clone, Copy)]
pub struct DocInput<'a> {
    pub token_ids: &'a [usize],
    pub tfidf: &'a SparseVector,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ForwardOptions {
    pub training: bool,
    /// Replaces the learned gate with a constant vector. Diagnostic use only.
    pub gate_override: Option<f64>,
}

impl ForwardOptions {
    pub fn inference() -> Self {
        Self::default()
    }

    pub fn training() -> Self {
        Self {
            training: true,
            gate_override: None,
        }
    }
}

/// Tape handles for the interesting intermediate values of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub alpha: Option<Var>,
    pub gate: Option<Var>,
    pub fused: Var,
    pub logits: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Attention over the (truncated) tokens; empty when the semantic branch did not run.
    pub alpha: Vec<f64>,
    pub gate: Option<Vec<f64>>,
    pub fused: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Embedding rows for at most `max_seq_len` leading ids.
pub fn embed_ids(tape: &mut Tape<'_>, params: &ModelParams, ids: &[usize]) -> Result<Var> {
    let ids = &ids[..ids.len().min(params.config().max_seq_len)];
    if ids.is_empty() {
        return Err(Error::EmptyDocument { id: None });
    }
    Ok(tape.gather_rows(params.ids().embedding, ids)?)
}

pub fn embed_sequence(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    tokens: &TokenSequence,
    vocab: &SemanticVocab,
) -> Result<Var> {
    embed_ids(tape, params, &vocab.encode(tokens))
}

fn lstm_direction(tape: &mut Tape<'_>, ids: LstmIds, hidden: usize, x: Var, n: usize, reverse: bool) -> Result<Var> {
    let w_ih = tape.param(ids.w_ih);
    let w_hh = tape.param(ids.w_hh);
    let b = tape.param(ids.bias);
    let xs = tape.matmul_nt(x, w_ih)?;
    let xs = tape.add_row(xs, b)?;

    let mut state: Option<(Var, Var)> = None;
    let mut outputs = vec![None; n];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let mut pre = tape.row(xs, t)?;
        if let Some((h, _)) = state {
            let rec = tape.matvec(w_hh, h)?;
            pre = tape.add(pre, rec)?;
        }
        let i = tape.slice(pre, 0, hidden)?;
        let i = tape.sigmoid(i)?;
        let f = tape.slice(pre, hidden, hidden)?;
        let f = tape.sigmoid(f)?;
        let g = tape.slice(pre, 2 * hidden, hidden)?;
        let g = tape.tanh(g)?;
        let o = tape.slice(pre, 3 * hidden, hidden)?;
        let o = tape.sigmoid(o)?;
        let mut c = tape.mul(i, g)?;
        if let Some((_, c_prev)) = state {
            let kept = tape.mul(f, c_prev)?;
            c = tape.add(kept, c)?;
        }
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        outputs[t] = Some(h);
        state = Some((h, c));
    }
    let rows: Vec<Var> = outputs.into_iter().flatten().collect();
    Ok(tape.stack_rows(&rows)?)
}

/// `n×k` embeddings to `n×D` annotations `[→h_i ; ←h_i]`, zero initial state.
pub fn bilstm_encode(tape: &mut Tape<'_>, params: &ModelParams, embedded: Var) -> Result<Var> {
    let (n, k) = tape
        .value(embedded)
        .dims2()
        .ok_or_else(|| TensorError::Contract("bilstm_encode needs an n×k matrix".into()))?;
    let cfg = params.config();
    if n == 0 {
        return Err(Error::EmptyDocument { id: None });
    }
    if k != cfg.embed_dim {
        return Err(TensorError::Shape {
            op: "bilstm_encode",
            left: vec![n, k],
            right: vec![n, cfg.embed_dim],
        }
        .into());
    }
    let ids = params.ids();
    let fwd = lstm_direction(tape, ids.lstm_fwd, cfg.hidden_per_dir, embedded, n, false)?;
    let bwd = lstm_direction(tape, ids.lstm_bwd, cfg.hidden_per_dir, embedded, n, true)?;
    Ok(tape.concat(fwd, bwd)?)
}

/// `u = tanh(H·W_aᵀ + b_a)·v_a`, `α = softmax(u)`, `h = αᵀ·H`. Returns `(h, α)`.
pub fn attention_pool(tape: &mut Tape<'_>, params: &ModelParams, annotations: Var) -> Result<(Var, Var)> {
    let ids = params.ids();
    let w = tape.param(ids.attn_w);
    let b = tape.param(ids.attn_b);
    let v = tape.param(ids.attn_v);
    let proj = tape.matmul_nt(annotations, w)?;
    let proj = tape.add_row(proj, b)?;
    let act = tape.tanh(proj)?;
    let scores = tape.matvec(act, v)?;
    let alpha = tape.softmax(scores)?;
    let h = tape.vecmat(alpha, annotations)?;
    Ok((h, alpha))
}

/// `s' = W_s·s`, touching only the nonzero entries of `s`.
pub fn project_stat(tape: &mut Tape<'_>, params: &ModelParams, s: &SparseVector) -> Result<Var> {
    Ok(tape.sparse_matvec(params.ids().stat_proj, s.dim(), s.entries())?)
}

fn require_dim(tape: &Tape<'_>, v: Var, dim: usize, op: &'static str) -> Result<()> {
    let shape = tape.value(v).shape();
    if shape != [dim] {
        return Err(TensorError::Shape {
            op,
            left: shape.to_vec(),
            right: vec![dim],
        }
        .into());
    }
    Ok(())
}

/// Merges the two branches according to the configured mode. Returns `(z, g)`;
/// `g` is only present in gated mode.
pub fn fuse(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    h: Option<Var>,
    s: Option<Var>,
    gate_override: Option<f64>,
) -> Result<(Var, Option<Var>)> {
    let d = params.config().fused_dim();
    let mode = params.config().fusion_mode;
    let missing = |branch: &str| Error::Tensor(TensorError::Contract(format!("{mode} fusion needs the {branch} vector")));
    let h = if mode.uses_semantic() {
        let h = h.ok_or_else(|| missing("semantic"))?;
        require_dim(tape, h, d, "fuse")?;
        Some(h)
    } else {
        None
    };
    let s = if mode.uses_statistical() {
        let s = s.ok_or_else(|| missing("statistical"))?;
        require_dim(tape, s, d, "fuse")?;
        Some(s)
    } else {
        None
    };
    match (mode, h, s) {
        (FusionMode::Gated, Some(h), Some(s)) => {
            let g = match gate_override {
                Some(value) => tape.constant(Tensor::filled(&[d], value))?,
                None => {
                    let ids = params.ids();
                    let wh = tape.param(ids.gate_w_h);
                    let ws = tape.param(ids.gate_w_s);
                    let b = tape.param(ids.gate_b);
                    let a = tape.matvec(wh, h)?;
                    let c = tape.matvec(ws, s)?;
                    let pre = tape.add(a, c)?;
                    let pre = tape.add(pre, b)?;
                    tape.sigmoid(pre)?
                }
            };
            let from_h = tape.mul(g, h)?;
            let rest = tape.one_minus(g)?;
            let from_s = tape.mul(rest, s)?;
            Ok((tape.add(from_h, from_s)?, Some(g)))
        }
        (FusionMode::Concat, Some(h), Some(s)) => Ok((tape.concat(h, s)?, None)),
        (FusionMode::SemanticOnly, Some(h), _) => Ok((h, None)),
        (FusionMode::TfidfOnly, _, Some(s)) => Ok((s, None)),
        _ => unreachable!("branch presence checked above"),
    }
}

/// Records the full network on `tape`. `rng` drives dropout and is untouched
/// at inference. A document with no tokens is classified by the output bias
/// alone at inference and rejected in training.
pub fn forward_on_tape(
    tape: &mut Tape<'_>,
    params: &ModelParams,
    input: DocInput<'_>,
    opts: ForwardOptions,
    rng: &mut Rng,
) -> Result<ForwardVars> {
    let cfg = params.config();
    let mode = cfg.fusion_mode;
    let ids = params.ids();
    if input.tfidf.dim() != cfg.tfidf_dim {
        return Err(TensorError::Shape {
            op: "project_stat",
            left: vec![cfg.tfidf_dim],
            right: vec![input.tfidf.dim()],
        }
        .into());
    }
    if input.token_ids.is_empty() {
        if opts.training {
            return Err(Error::EmptyDocument { id: None });
        }
        let fused = tape.constant(Tensor::zeros(&[cfg.output_input_dim()]))?;
        let logits = tape.param(ids.out_b);
        return Ok(ForwardVars {
            alpha: None,
            gate: None,
            fused,
            logits,
        });
    }

    let (h, alpha) = if mode.uses_semantic() {
        let x = embed_ids(tape, params, input.token_ids)?;
        let x = tape.dropout(x, cfg.dropout_p, rng, opts.training)?;
        let ann = bilstm_encode(tape, params, x)?;
        let (h, alpha) = attention_pool(tape, params, ann)?;
        (Some(h), Some(alpha))
    } else {
        (None, None)
    };
    let s = if mode.uses_statistical() {
        Some(project_stat(tape, params, input.tfidf)?)
    } else {
        None
    };
    let (fused, gate) = fuse(tape, params, h, s, opts.gate_override)?;
    let z = tape.dropout(fused, cfg.dropout_p, rng, opts.training)?;
    let w = tape.param(ids.out_w);
    let b = tape.param(ids.out_b);
    let wz = tape.matvec(w, z)?;
    let logits = tape.add(wz, b)?;
    Ok(ForwardVars {
        alpha,
        gate,
        fused,
        logits,
    })
}

/// Runs one document on a private tape and returns the observable values.
pub fn forward(params: &ModelParams, input: DocInput<'_>, opts: ForwardOptions, rng: &mut Rng) -> Result<ForwardTrace> {
    let mut tape = Tape::new(params.store());
    let vars = forward_on_tape(&mut tape, params, input, opts, rng)?;
    let read = |v: Var| tape.value(v).data().to_vec();
    let logits = read(vars.logits);
    Ok(ForwardTrace {
        alpha: vars.alpha.map(read).unwrap_or_default(),
        gate: vars.gate.map(read),
        fused: read(vars.fused),
        probs: softmax(&logits),
        logits,
    })
}
