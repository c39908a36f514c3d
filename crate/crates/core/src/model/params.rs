use crate::autodiff::{ParamId, ParamStore, Rng, Tensor, TensorError};
use crate::corpus::EmbeddingTable;
use crate::error::{Error, Result};

use super::ModelConfig;

const EMBED_INIT_RANGE: f64 = 0.05;
const FORGET_BIAS: f64 = 1.0;

/// One LSTM direction. Rows of the weights and bias are grouped `i|f|g|o`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmIds {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamIds {
    pub embedding: ParamId,
    pub lstm_fwd: LstmIds,
    pub lstm_bwd: LstmIds,
    pub attn_w: ParamId,
    pub attn_b: ParamId,
    pub attn_v: ParamId,
    pub stat_proj: ParamId,
    pub gate_w_h: ParamId,
    pub gate_w_s: ParamId,
    pub gate_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Embedding,
    /// Glorot uniform with the given fan-in and fan-out.
    Glorot(usize, usize),
    Zero,
    LstmBias,
}

struct Slot {
    name: &'static str,
    shape: Vec<usize>,
    init: Init,
}

/// Parameter tensors in their fixed order. Checkpoints store tensors in this order.
fn layout(c: &ModelConfig) -> Vec<Slot> {
    let k = c.embed_dim;
    let h = c.hidden_per_dir;
    let d = c.fused_dim();
    let v = c.tfidf_dim;
    let out = c.output_input_dim();
    let slot = |name, shape: &[usize], init| Slot {
        name,
        shape: shape.to_vec(),
        init,
    };
    vec![
        slot("embedding", &[c.vocab_size_semantic + 1, k], Init::Embedding),
        slot("lstm_fwd_w_ih", &[4 * h, k], Init::Glorot(k, 4 * h)),
        slot("lstm_fwd_w_hh", &[4 * h, h], Init::Glorot(h, 4 * h)),
        slot("lstm_fwd_b", &[4 * h], Init::LstmBias),
        slot("lstm_bwd_w_ih", &[4 * h, k], Init::Glorot(k, 4 * h)),
        slot("lstm_bwd_w_hh", &[4 * h, h], Init::Glorot(h, 4 * h)),
        slot("lstm_bwd_b", &[4 * h], Init::LstmBias),
        slot("attn_w", &[d, d], Init::Glorot(d, d)),
        slot("attn_b", &[d], Init::Zero),
        slot("attn_v", &[d], Init::Glorot(d, 1)),
        slot("stat_proj", &[d, v], Init::Glorot(v, d)),
        slot("gate_w_h", &[d, d], Init::Glorot(d, d)),
        slot("gate_w_s", &[d, d], Init::Glorot(d, d)),
        slot("gate_b", &[d], Init::Zero),
        slot("out_w", &[c.num_classes, out], Init::Glorot(out, c.num_classes)),
        slot("out_b", &[c.num_classes], Init::Zero),
    ]
}

/// All trainable tensors of one model together with its configuration.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    store: ParamStore,
    ids: ParamIds,
}

impl ModelParams {
    /// Wraps tensors given in layout order, checking every shape.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let slots = layout(&config);
        if tensors.len() != slots.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        let mut store = ParamStore::new();
        for (slot, t) in slots.iter().zip(tensors) {
            if t.shape() != slot.shape.as_slice() {
                return Err(TensorError::Shape {
                    op: slot.name,
                    left: slot.shape.clone(),
                    right: t.shape().to_vec(),
                }
                .into());
            }
            if !t.all_finite() {
                return Err(TensorError::NonFinite { op: slot.name }.into());
            }
            store.add(slot.name, t);
        }
        Ok(Self::from_store(config, store))
    }

    fn from_store(config: ModelConfig, store: ParamStore) -> Self {
        let id = ParamId;
        let ids = ParamIds {
            embedding: id(0),
            lstm_fwd: LstmIds {
                w_ih: id(1),
                w_hh: id(2),
                bias: id(3),
            },
            lstm_bwd: LstmIds {
                w_ih: id(4),
                w_hh: id(5),
                bias: id(6),
            },
            attn_w: id(7),
            attn_b: id(8),
            attn_v: id(9),
            stat_proj: id(10),
            gate_w_h: id(11),
            gate_w_s: id(12),
            gate_b: id(13),
            out_w: id(14),
            out_b: id(15),
        };
        Self { config, store, ids }
    }

    /// Names and shapes in layout order.
    pub fn layout(config: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
        layout(config).into_iter().map(|s| (s.name, s.shape)).collect()
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        self.store.get(id)
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        self.store.get_mut(id)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.store.iter().map(|(_, name, t)| (name, t))
    }
}

/// Glorot-uniform weights, zero biases (LSTM forget bias 1), embeddings
/// uniform in ±0.05 then overwritten by any pretrained rows. Draws happen in
/// layout order, so equal seeds give identical parameters.
pub fn init_params(config: &ModelConfig, rng: &mut Rng, pretrained: Option<&EmbeddingTable>) -> Result<ModelParams> {
    config.validate()?;
    if let Some(table) = pretrained {
        if table.dim != config.embed_dim {
            return Err(TensorError::Shape {
                op: "pretrained embeddings",
                left: vec![config.embed_dim],
                right: vec![table.dim],
            }
            .into());
        }
    }
    let h = config.hidden_per_dir;
    let mut store = ParamStore::new();
    for slot in layout(config) {
        let mut t = Tensor::zeros(&slot.shape);
        match slot.init {
            Init::Embedding => {
                t.data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE));
                if let Some(table) = pretrained {
                    overwrite_rows(&mut t, table, config.vocab_size_semantic)?;
                }
            }
            Init::Glorot(fan_in, fan_out) => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                t.data_mut().iter_mut().for_each(|x| *x = rng.uniform(-a, a));
            }
            Init::Zero => {}
            Init::LstmBias => t.data_mut()[h..2 * h].fill(FORGET_BIAS),
        }
        store.add(slot.name, t);
    }
    Ok(ModelParams::from_store(config.clone(), store))
}

fn overwrite_rows(e: &mut Tensor, table: &EmbeddingTable, unk: usize) -> Result<()> {
    let k = table.dim;
    let data = e.data_mut();
    for (&row, values) in &table.rows {
        if row >= unk {
            return Err(TensorError::Index { index: row, len: unk }.into());
        }
        data[row * k..(row + 1) * k].copy_from_slice(values);
    }
    if !table.rows.is_empty() {
        data[unk * k..(unk + 1) * k].copy_from_slice(&table.unk_row);
    }
    Ok(())
}
