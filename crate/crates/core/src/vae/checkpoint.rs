use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ModelConfig, ModelParams, Tensor, TrainingConfig, TENSOR_NAMES};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"MLVAE1";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint fingerprint mismatch: file content does not match its digest")]
    DigestMismatch,
    #[error("checkpoint was trained on corpus {found}, expected {expected}")]
    CorpusMismatch { expected: String, found: String },
    #[error("checkpoint {section} JSON is invalid: {message}")]
    Json { section: &'static str, message: String },
    #[error("checkpoint tensor {name} has shape {found:?}, config implies {expected:?}")]
    Shape { name: &'static str, expected: Vec<usize>, found: Vec<usize> },
    #[error("checkpoint holds {0} tensors, expected 10")]
    TensorCount(u32),
    #[error("checkpoint holds non-finite parameters")]
    NonFinite,
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(usize),
}

/// A trained model with the settings that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub training: TrainingConfig,
    pub params: ModelParams,
    /// SHA-256 of the dataset manifest the model was trained on.
    pub corpus_fingerprint: [u8; 32],
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, section: &'static str) -> Result<T, CheckpointError> {
        let len = self.u32(section)? as usize;
        serde_json::from_slice(self.take(len, section)?)
            .map_err(|e| CheckpointError::Json { section, message: e.to_string() })
    }
}

fn push_json<T: serde::Serialize>(out: &mut Vec<u8>, value: &T) {
    let json = serde_json::to_vec(value).expect("config serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
}

impl Model {
    /// Layout: magic, model config JSON, training config JSON (each
    /// u32-length-prefixed), corpus fingerprint, tensor count, then per
    /// tensor its rank, u64 dims and f64 LE values; a SHA-256 of everything
    /// before it closes the file.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.parameter_count() * 8 + 1024);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        push_json(&mut out, &self.config);
        push_json(&mut out, &self.training);
        out.extend_from_slice(&self.corpus_fingerprint);
        let tensors = self.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for tensor in tensors {
            out.extend_from_slice(&(tensor.shape.len() as u32).to_le_bytes());
            for &d in &tensor.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &tensor.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Model, CheckpointError> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < CHECKPOINT_MAGIC.len() + 32 {
            return Err(CheckpointError::Truncated("digest"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::DigestMismatch);
        }

        let mut r = Reader { bytes: body, pos: CHECKPOINT_MAGIC.len() };
        let config: ModelConfig = r.json("model config")?;
        config
            .validate()
            .map_err(|e| CheckpointError::Json { section: "model config", message: e.to_string() })?;
        let training: TrainingConfig = r.json("training config")?;
        let corpus_fingerprint: [u8; 32] = r.take(32, "corpus fingerprint")?.try_into().unwrap();

        let count = r.u32("tensor count")?;
        if count as usize != TENSOR_NAMES.len() {
            return Err(CheckpointError::TensorCount(count));
        }
        let mut params = ModelParams::zeros(&config);
        for (name, slot) in TENSOR_NAMES.iter().zip(params.tensors_mut()) {
            let rank = r.u32("tensor shape")? as usize;
            let mut shape = Vec::with_capacity(rank.min(4));
            for _ in 0..rank {
                shape.push(r.u64("tensor shape")? as usize);
            }
            if shape != slot.shape {
                return Err(CheckpointError::Shape { name, expected: slot.shape.clone(), found: shape });
            }
            let raw = r.take(slot.data.len() * 8, "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            *slot = Tensor { shape, data };
        }
        if r.pos != body.len() {
            return Err(CheckpointError::TrailingBytes(body.len() - r.pos));
        }
        if !params.is_finite() {
            return Err(CheckpointError::NonFinite);
        }
        Ok(Model { config, training, params, corpus_fingerprint })
    }

    /// Loads and checks that the model was trained on the expected corpus.
    pub fn load_for_corpus(bytes: &[u8], fingerprint: &[u8; 32]) -> Result<Model, CheckpointError> {
        let model = Model::from_bytes(bytes)?;
        if &model.corpus_fingerprint != fingerprint {
            return Err(CheckpointError::CorpusMismatch {
                expected: hex::encode(fingerprint),
                found: hex::encode(model.corpus_fingerprint),
            });
        }
        Ok(model)
    }
}
