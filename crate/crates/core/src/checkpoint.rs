//! Binary model files.
//!
//! Layout: `b"AGFF"`, format version (`u32` LE), metadata length in bytes
//! (`u64` LE), UTF-8 JSON metadata, then every parameter tensor in layout
//! order as little-endian `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, SemanticVocab};
use crate::pipeline::Artifacts;
use crate::text::{StopWords, TextPipeline};
use crate::tfidf::{TfidfVocabulary, VocabFile};

pub const MAGIC: [u8; 4] = *b"AGFF";
pub const FORMAT_VERSION: u32 = 1;

/// Everything besides the weights needed to reuse a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub label_names: Vec<String>,
    /// Tokenizer version and stop-word list digest.
    pub text_fingerprint: String,
    pub stopwords: Vec<String>,
    pub strip_newsgroup_noise: bool,
    pub semantic_vocab: SemanticVocab,
    pub tfidf_vocab: VocabFile,
}

impl CheckpointMeta {
    pub fn new(config: ModelConfig, label_names: Vec<String>, artifacts: &Artifacts) -> Self {
        Self {
            config,
            label_names,
            text_fingerprint: artifacts.text.stopwords.fingerprint(),
            stopwords: artifacts.text.stopwords.words().map(str::to_owned).collect(),
            strip_newsgroup_noise: artifacts.text.strip_newsgroup_noise,
            semantic_vocab: artifacts.semantic_vocab.clone(),
            tfidf_vocab: VocabFile::from(&artifacts.tfidf_vocab),
        }
    }

    /// Rebuilds the preprocessing state, checking it against the stored fingerprint.
    pub fn artifacts(&self) -> Result<Artifacts> {
        let stopwords = StopWords::parse(&self.stopwords.join("\n"));
        if stopwords.fingerprint() != self.text_fingerprint {
            return Err(Error::Format(
                "stop-word list does not match the stored text fingerprint".into(),
            ));
        }
        Ok(Artifacts {
            text: TextPipeline::new(stopwords, self.strip_newsgroup_noise),
            semantic_vocab: self.semantic_vocab.clone(),
            tfidf_vocab: TfidfVocabulary::try_from(self.tfidf_vocab.clone())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: CheckpointMeta,
    tensors: Vec<TensorInfo>,
}

pub fn encode_checkpoint(params: &ModelParams, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    if &meta.config != params.config() {
        return Err(Error::Format("metadata config differs from the parameters".into()));
    }
    let header = Header {
        meta: meta.clone(),
        tensors: params
            .tensors()
            .map(|(name, t)| TensorInfo {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 4 * params.store().num_values());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in params.tensors() {
        for &x in t.data() {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Format(format!(
            "truncated {what}: expected {n} bytes, found {}",
            bytes.len()
        )));
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Ok(head)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ModelParams, CheckpointMeta)> {
    let mut rest = bytes;
    let magic = take(&mut rest, 4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let version = u32::from_le_bytes(take(&mut rest, 4, "version")?.try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let len = u64::from_le_bytes(take(&mut rest, 8, "metadata length")?.try_into().unwrap());
    let len = usize::try_from(len).map_err(|_| Error::Format(format!("metadata length {len} too large")))?;
    let header: Header = serde_json::from_slice(take(&mut rest, len, "metadata")?)
        .map_err(|e| Error::Format(format!("metadata: {e}")))?;
    header.meta.config.validate()?;

    let layout = ModelParams::layout(&header.meta.config);
    let declared: Vec<(&str, &[usize])> = header
        .tensors
        .iter()
        .map(|t| (t.name.as_str(), t.shape.as_slice()))
        .collect();
    let expected: Vec<(&str, &[usize])> = layout.iter().map(|(n, s)| (*n, s.as_slice())).collect();
    if declared != expected {
        return Err(Error::Format("tensor table does not match the model configuration".into()));
    }
    let values: usize = layout.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    if rest.len() != 4 * values {
        return Err(Error::Format(format!(
            "payload size mismatch: expected {} bytes, found {}",
            4 * values,
            rest.len()
        )));
    }
    let mut floats = rest
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
    let tensors = layout
        .iter()
        .map(|(_, shape)| {
            let n = shape.iter().product();
            Tensor::new(shape.clone(), floats.by_ref().take(n).collect())
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let params = ModelParams::from_tensors(header.meta.config.clone(), tensors)?;
    Ok((params, header.meta))
}

pub fn save_checkpoint(params: &ModelParams, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params, meta)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Rng;
    use crate::model::{init_params, FusionMode};
    use crate::text::TokenSequence;
    use crate::tfidf::build_tfidf_vocab;

    fn fixture(mode: FusionMode) -> (ModelParams, CheckpointMeta) {
        let docs: Vec<TokenSequence> = vec![vec!["oil", "price"].into(), vec!["goal", "match"].into()];
        let artifacts = Artifacts {
            text: TextPipeline::new(StopWords::default(), true),
            semantic_vocab: SemanticVocab::build(&docs, 1, 100),
            tfidf_vocab: build_tfidf_vocab(&docs, 100).unwrap(),
        };
        let config = ModelConfig {
            vocab_size_semantic: 4,
            embed_dim: 3,
            hidden_per_dir: 2,
            tfidf_dim: 4,
            num_classes: 2,
            fusion_mode: mode,
            max_seq_len: 10,
            dropout_p: 0.5,
        };
        let params = init_params(&config, &mut Rng::new(3), None).unwrap();
        let meta = CheckpointMeta::new(config, vec!["Business".into(), "Sports".into()], &artifacts);
        (params, meta)
    }

    #[test]
    fn roundtrip_is_exact_at_f32() {
        for mode in FusionMode::ALL {
            let (params, meta) = fixture(mode);
            let bytes = encode_checkpoint(&params, &meta).unwrap();
            let (loaded, meta2) = decode_checkpoint(&bytes).unwrap();
            assert_eq!(meta2, meta);
            for ((n1, a), (n2, b)) in params.tensors().zip(loaded.tensors()) {
                assert_eq!(n1, n2);
                let want: Vec<f64> = a.data().iter().map(|&x| x as f32 as f64).collect();
                assert_eq!(b.data(), want.as_slice());
            }
            // metadata bytes survive a second pass unchanged
            assert_eq!(encode_checkpoint(&loaded, &meta2).unwrap(), bytes);
            let artifacts = meta2.artifacts().unwrap();
            assert!(artifacts.text.strip_newsgroup_noise);
            assert_eq!(artifacts.tfidf_vocab.len(), 4);
        }
    }

    #[test]
    fn bad_magic() {
        let (params, meta) = fixture(FusionMode::Gated);
        let mut bytes = encode_checkpoint(&params, &meta).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format(m)) if m.contains("magic")));
        assert!(matches!(decode_checkpoint(b"AG"), Err(Error::Format(_))));
    }

    #[test]
    fn version_mismatch() {
        let (params, meta) = fixture(FusionMode::Gated);
        let mut bytes = encode_checkpoint(&params, &meta).unwrap();
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_checkpoint(&bytes),
            Err(Error::Version { found: 2, supported: 1 })
        ));
    }

    #[test]
    fn short_payload_names_sizes() {
        let (params, meta) = fixture(FusionMode::Gated);
        let bytes = encode_checkpoint(&params, &meta).unwrap();
        let expected = 4 * params.store().num_values();
        let err = decode_checkpoint(&bytes[..bytes.len() - 4]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format(_)));
        assert!(msg.contains(&expected.to_string()) && msg.contains(&(expected - 4).to_string()), "{msg}");
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Format(_))));
    }

    #[test]
    fn tampered_stopwords_are_rejected() {
        let (_, mut meta) = fixture(FusionMode::Gated);
        meta.stopwords.pop();
        assert!(meta.artifacts().is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.agff");
        let (params, meta) = fixture(FusionMode::Concat);
        save_checkpoint(&params, &meta, &path).unwrap();
        let (loaded, _) = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.config(), params.config());
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }
}
