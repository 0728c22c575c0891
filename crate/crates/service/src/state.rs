use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use folkvae::corpus::Dataset;
use folkvae::vae::{EpochReport, Model};
use folkvae::workflow::{artifact_bytes, PipelineOutput, Session};
use serde::Serialize;
use serde_json::json;
use tokio::sync::{broadcast, Mutex as AsyncMutex, OwnedMutexGuard};

use crate::config::ServerConfig;
use crate::error::ApiError;
use crate::store::{ModelMeta, Store, StoreError};

const EVENT_BUFFER: usize = 256;

pub struct StoredModel {
    pub model: Model,
    pub meta: ModelMeta,
}

pub struct SessionSlot {
    pub session: Arc<AsyncMutex<Session>>,
    pub events: broadcast::Sender<Arc<str>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Pending,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub job_id: String,
    pub state: JobState,
    pub dataset_id: String,
    pub epoch: usize,
    pub epochs: usize,
    pub latest: Option<EpochReport>,
    pub model_id: Option<String>,
    pub error: Option<String>,
}

pub struct AppState {
    pub config: ServerConfig,
    pub store: Store,
    datasets: RwLock<HashMap<String, Arc<Dataset>>>,
    models: RwLock<HashMap<String, Arc<StoredModel>>>,
    sessions: RwLock<HashMap<String, Arc<SessionSlot>>>,
    jobs: Mutex<HashMap<String, JobStatus>>,
    training: Arc<AtomicBool>,
}

pub fn new_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

/// Clears the training flag when a job ends, including by panic.
pub struct TrainingSlot(Arc<AtomicBool>);

impl Drop for TrainingSlot {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

impl AppState {
    /// Opens the data directory and loads every stored model and session.
    /// Unreadable entries are logged and skipped.
    pub fn open(config: ServerConfig) -> Result<AppState, StoreError> {
        let store = Store::open(&config.data_dir)?;
        let mut models = HashMap::new();
        for id in store.model_ids()? {
            match store.get_model(&id) {
                Ok(Some((model, meta))) => {
                    models.insert(id, Arc::new(StoredModel { model, meta }));
                }
                Ok(None) => {}
                Err(e) => tracing::warn!(model = %id, error = %e, "skipping model"),
            }
        }
        let mut sessions = HashMap::new();
        for id in store.session_ids()? {
            match store.get_session(&id) {
                Ok(Some(session)) => {
                    sessions.insert(id, Arc::new(new_slot(session)));
                }
                Ok(None) => {}
                Err(e) => tracing::warn!(session = %id, error = %e, "skipping session"),
            }
        }
        tracing::info!(models = models.len(), sessions = sessions.len(), "state loaded");
        Ok(AppState {
            config,
            store,
            datasets: RwLock::new(HashMap::new()),
            models: RwLock::new(models),
            sessions: RwLock::new(sessions),
            jobs: Mutex::new(HashMap::new()),
            training: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn dataset(&self, id: &str) -> Result<Arc<Dataset>, ApiError> {
        if let Some(ds) = self.datasets.read().unwrap().get(id) {
            return Ok(ds.clone());
        }
        let ds = self.store.get_dataset(id)?.ok_or_else(|| ApiError::not_found("dataset", id))?;
        let ds = Arc::new(ds);
        self.datasets.write().unwrap().insert(id.to_string(), ds.clone());
        Ok(ds)
    }

    pub fn add_dataset(&self, dataset: Dataset) -> Result<(String, Arc<Dataset>), ApiError> {
        let id = self.store.put_dataset(&dataset)?;
        let ds = Arc::new(dataset);
        self.datasets.write().unwrap().insert(id.clone(), ds.clone());
        Ok((id, ds))
    }

    pub fn model(&self, id: &str) -> Result<Arc<StoredModel>, ApiError> {
        self.models.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("model", id))
    }

    pub fn models(&self) -> Vec<Arc<StoredModel>> {
        let mut all: Vec<_> = self.models.read().unwrap().values().cloned().collect();
        all.sort_by(|a, b| a.meta.model_id.cmp(&b.meta.model_id));
        all
    }

    pub fn add_model(&self, stored: StoredModel) {
        self.models.write().unwrap().insert(stored.meta.model_id.clone(), Arc::new(stored));
    }

    pub fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        self.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found("session", id))
    }

    pub fn slots(&self) -> Vec<Arc<SessionSlot>> {
        self.sessions.read().unwrap().values().cloned().collect()
    }

    /// Persists a new session and makes it visible.
    pub fn add_session(&self, session: Session) -> Result<Arc<SessionSlot>, ApiError> {
        let mut sessions = self.sessions.write().unwrap();
        if sessions.len() >= self.config.max_sessions {
            return Err(ApiError::conflict(format!("session limit of {} reached", self.config.max_sessions)));
        }
        self.store.put_session(&session)?;
        let id = session.id.clone();
        let slot = Arc::new(new_slot(session));
        sessions.insert(id, slot.clone());
        Ok(slot)
    }

    /// Waits up to the busy timeout for exclusive access to a session.
    pub async fn lock(&self, slot: &SessionSlot) -> Result<OwnedMutexGuard<Session>, ApiError> {
        tokio::time::timeout(self.config.busy_timeout(), slot.session.clone().lock_owned())
            .await
            .map_err(|_| ApiError::conflict("session busy"))
    }

    /// Persists artifacts referenced from session history.
    pub fn persist_artifacts<T: Serialize>(&self, values: &[&T]) -> Result<(), ApiError> {
        for value in values {
            let (hash, bytes) = artifact_bytes(value);
            self.store.put_artifact(&hash, &bytes)?;
        }
        Ok(())
    }

    pub fn try_start_training(&self) -> Option<TrainingSlot> {
        self.training
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .ok()
            .map(|_| TrainingSlot(self.training.clone()))
    }

    pub fn set_job(&self, status: JobStatus) {
        self.jobs.lock().unwrap().insert(status.job_id.clone(), status);
    }

    pub fn update_job(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        if let Some(job) = self.jobs.lock().unwrap().get_mut(id) {
            f(job);
        }
    }

    pub fn job(&self, id: &str) -> Option<JobStatus> {
        self.jobs.lock().unwrap().get(id).cloned()
    }

    /// Training progress goes to every open session stream.
    pub fn broadcast_training(&self, job_id: &str, report: &EpochReport) {
        let event: Arc<str> = json!({
            "event": "training",
            "job_id": job_id,
            "epoch": report.epoch,
            "losses": {
                "total": report.total,
                "recon": report.recon,
                "kl": report.kl,
                "reg": report.reg,
            },
            "validation_accuracy": report.validation_accuracy,
            "spearman": report.spearman,
        })
        .to_string()
        .into();
        for slot in self.slots() {
            let _ = slot.events.send(event.clone());
        }
    }
}

fn new_slot(session: Session) -> SessionSlot {
    let (events, _) = broadcast::channel(EVENT_BUFFER);
    SessionSlot { session: Arc::new(AsyncMutex::new(session)), events }
}

pub fn pipeline_event(session: &Session, model: &Model, output: &PipelineOutput) -> Arc<str> {
    json!({
        "event": "pipeline",
        "session_id": session.id,
        "measure": output.measure_index,
        "mu": folkvae::vae::LatentVector(output.regularised_activations(model)),
        "divergence": output.divergence,
        "tokens": output.tokens,
        "reconstruction": output.reconstruction,
        "roll": output.roll,
        "mono_roll": output.mono_roll,
    })
    .to_string()
    .into()
}
