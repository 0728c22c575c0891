//! Content-addressed files under the data directory:
//!
//! ```text
//! corpora/<sha256 of manifest>.json
//! models/<sha256 of checkpoint>.mlvae   models/<id>.json (metadata)
//! sessions/<session id>.json
//! artifacts/<sha256 of content>.json
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use folkvae::corpus::Dataset;
use folkvae::vae::{Model, TrainReport};
use folkvae::workflow::Session;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt {kind} {id}: {check} check failed")]
    Corrupt { kind: &'static str, id: String, check: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub model_id: String,
    pub dataset_id: String,
    pub report: TrainReport,
}

pub struct Store {
    root: PathBuf,
}

const DIRS: [&str; 4] = ["corpora", "models", "sessions", "artifacts"];

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Ids become file names, so only lowercase hex is accepted.
pub fn is_valid_id(id: &str) -> bool {
    (16..=64).contains(&id.len()) && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    // unique name so concurrent writers of one artifact never share a temp file
    let tmp = path.with_extension(format!("{:016x}.tmp", rand::random::<u64>()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        fs::File::open(dir)?.sync_all()?;
    }
    Ok(())
}

fn read_optional(path: &Path) -> io::Result<Option<Vec<u8>>> {
    match fs::read(path) {
        Ok(bytes) => Ok(Some(bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e),
    }
}

impl Store {
    /// Creates the directory layout and checks it is writable.
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, StoreError> {
        let root = root.into();
        for dir in DIRS {
            fs::create_dir_all(root.join(dir))?;
        }
        let probe = root.join(".write-probe");
        write_atomic(&probe, b"ok")?;
        fs::remove_file(&probe)?;
        Ok(Store { root })
    }

    fn path(&self, dir: &str, id: &str, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{id}.{ext}"))
    }

    pub fn put_dataset(&self, dataset: &Dataset) -> Result<String, StoreError> {
        let bytes = dataset.to_manifest_json();
        let id = sha256_hex(&bytes);
        write_atomic(&self.path("corpora", &id, "json"), &bytes)?;
        Ok(id)
    }

    pub fn get_dataset(&self, id: &str) -> Result<Option<Dataset>, StoreError> {
        if !is_valid_id(id) {
            return Ok(None);
        }
        let Some(bytes) = read_optional(&self.path("corpora", id, "json"))? else {
            return Ok(None);
        };
        let corrupt = |check: &str| StoreError::Corrupt { kind: "dataset", id: id.to_string(), check: check.into() };
        if sha256_hex(&bytes) != id {
            return Err(corrupt("fingerprint"));
        }
        Dataset::from_manifest_json(&bytes).map(Some).map_err(|_| corrupt("manifest format"))
    }

    pub fn put_model(&self, model: &Model, dataset_id: &str, report: &TrainReport) -> Result<ModelMeta, StoreError> {
        let bytes = model.to_bytes();
        let model_id = sha256_hex(&bytes);
        let meta = ModelMeta { model_id: model_id.clone(), dataset_id: dataset_id.to_string(), report: report.clone() };
        write_atomic(&self.path("models", &model_id, "mlvae"), &bytes)?;
        let meta_bytes = serde_json::to_vec(&meta).expect("metadata serializes");
        write_atomic(&self.path("models", &model_id, "json"), &meta_bytes)?;
        Ok(meta)
    }

    pub fn get_model(&self, id: &str) -> Result<Option<(Model, ModelMeta)>, StoreError> {
        if !is_valid_id(id) {
            return Ok(None);
        }
        let Some(bytes) = read_optional(&self.path("models", id, "mlvae"))? else {
            return Ok(None);
        };
        let corrupt = |check: String| StoreError::Corrupt { kind: "model", id: id.to_string(), check };
        if sha256_hex(&bytes) != id {
            return Err(corrupt("fingerprint".into()));
        }
        let model = Model::from_bytes(&bytes).map_err(|e| corrupt(format!("checkpoint ({e})")))?;
        let meta_bytes = read_optional(&self.path("models", id, "json"))?.ok_or_else(|| corrupt("metadata".into()))?;
        let meta: ModelMeta = serde_json::from_slice(&meta_bytes).map_err(|_| corrupt("metadata".into()))?;
        if meta.model_id != id || hex::encode(model.corpus_fingerprint) != meta.dataset_id {
            return Err(corrupt("corpus fingerprint".into()));
        }
        Ok(Some((model, meta)))
    }

    fn ids(&self, dir: &str, ext: &str) -> Result<Vec<String>, StoreError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join(dir))? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(ext) {
                continue;
            }
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                if is_valid_id(stem) {
                    ids.push(stem.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn model_ids(&self) -> Result<Vec<String>, StoreError> {
        self.ids("models", "mlvae")
    }

    pub fn put_session(&self, session: &Session) -> Result<(), StoreError> {
        let bytes = serde_json::to_vec(session).expect("session serializes");
        write_atomic(&self.path("sessions", &session.id, "json"), &bytes)?;
        Ok(())
    }

    pub fn get_session(&self, id: &str) -> Result<Option<Session>, StoreError> {
        if !is_valid_id(id) {
            return Ok(None);
        }
        let Some(bytes) = read_optional(&self.path("sessions", id, "json"))? else {
            return Ok(None);
        };
        let corrupt = |check: &str| StoreError::Corrupt { kind: "session", id: id.to_string(), check: check.into() };
        let session: Session = serde_json::from_slice(&bytes).map_err(|_| corrupt("format"))?;
        if session.id != id {
            return Err(corrupt("id"));
        }
        session.validate().map_err(|_| corrupt("invariants"))?;
        Ok(Some(session))
    }

    pub fn session_ids(&self) -> Result<Vec<String>, StoreError> {
        self.ids("sessions", "json")
    }

    /// Stores canonical artifact bytes under their hash.
    pub fn put_artifact(&self, hash: &str, bytes: &[u8]) -> Result<(), StoreError> {
        debug_assert_eq!(sha256_hex(bytes), hash);
        let path = self.path("artifacts", hash, "json");
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(())
    }

    pub fn get_artifact(&self, hash: &str) -> Result<Option<Vec<u8>>, StoreError> {
        if !is_valid_id(hash) {
            return Ok(None);
        }
        let Some(bytes) = read_optional(&self.path("artifacts", hash, "json"))? else {
            return Ok(None);
        };
        if sha256_hex(&bytes) != hash {
            return Err(StoreError::Corrupt { kind: "artifact", id: hash.to_string(), check: "fingerprint".into() });
        }
        Ok(Some(bytes))
    }
}
