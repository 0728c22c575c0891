use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use folkvae::corpus::Dataset;
use folkvae::euclid::EuclideanSpec;
use folkvae::score::export_midi;
use folkvae::vae::{density_map, train, LatentVector, Model, ModelConfig, TrainingConfig, HEATMAP_BINS, HEATMAP_RANGE};
use folkvae::workflow::{
    apply_latent_edit, compute_pipeline, run_pipeline, sweep, PipelineOutput, Session, SweepRanges,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::OwnedMutexGuard;

use crate::error::{ApiError, ApiJson, ApiQuery};
use crate::state::{new_id, pipeline_event, AppState, JobState, JobStatus, StoredModel};
use crate::ws;

type AppResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

const DEFAULT_CORPUS_SEED: u64 = 1;

pub fn api() -> Router<Arc<AppState>> {
    Router::new()
        .route("/api/corpus", post(create_corpus))
        .route("/api/corpus/{id}/stats", get(corpus_stats))
        .route("/api/train", post(start_training))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/models", get(list_models))
        .route("/api/models/{id}/heatmap", get(heatmap))
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}", get(get_session).patch(patch_session))
        .route("/api/sessions/{id}/pipeline", get(pipeline))
        .route("/api/sessions/{id}/sweep", post(run_sweep))
        .route("/api/sessions/{id}/latent-edit", post(latent_edit))
        .route("/api/sessions/{id}/export.mid", get(export))
        .route("/api/sessions/{id}/events", get(ws::events))
        .route("/api/artifacts/{hash}", get(artifact))
}

pub async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> AppResult<T> + Send + 'static) -> AppResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        tracing::error!(error = %e, "worker task failed");
        ApiError::internal("worker task failed")
    })?
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusRequest {
    abc: String,
    seed: Option<u64>,
}

async fn create_corpus(State(state): Shared, ApiJson(req): ApiJson<CorpusRequest>) -> AppResult<Response> {
    let seed = req.seed.unwrap_or(DEFAULT_CORPUS_SEED);
    let body = blocking(move || {
        let dataset = Dataset::from_abc(&req.abc, seed)?;
        let (id, ds) = state.add_dataset(dataset)?;
        tracing::info!(dataset = %id, measures = ds.len(), "dataset stored");
        Ok(json!({ "dataset_id": id, "stats": ds.stats, "diagnostics": ds.diagnostics }))
    })
    .await?;
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn corpus_stats(State(state): Shared, Path(id): Path<String>) -> AppResult<Json<Value>> {
    let ds = blocking(move || state.dataset(&id)).await?;
    Ok(Json(json!({ "stats": ds.stats, "diagnostics": ds.diagnostics })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainRequest {
    dataset_id: String,
    model: Option<Value>,
    training: Option<Value>,
}

/// Overlays the fields of `overrides` on `base`.
fn merged<T: Clone + Serialize + DeserializeOwned>(base: &T, overrides: Option<Value>, what: &str) -> AppResult<T> {
    let Some(overrides) = overrides else {
        return Ok(base.clone());
    };
    let Value::Object(fields) = overrides else {
        return Err(ApiError::bad_request(format!("{what} overrides must be an object")));
    };
    let mut value = serde_json::to_value(base).expect("config serializes");
    let target = value.as_object_mut().expect("config is an object");
    target.extend(fields);
    serde_json::from_value(value).map_err(|e| ApiError::bad_request(format!("{what}: {e}")))
}

async fn start_training(State(state): Shared, ApiJson(req): ApiJson<TrainRequest>) -> AppResult<Response> {
    let model_config: ModelConfig = merged(&state.config.model, req.model, "model")?;
    let training: TrainingConfig = merged(&state.config.training, req.training, "training")?;
    model_config.validate()?;
    training.validate()?;
    if training.epochs > state.config.max_epochs {
        return Err(ApiError::unprocessable(format!("epochs above the limit of {}", state.config.max_epochs)));
    }
    let dataset_id = req.dataset_id;
    let dataset = {
        let (state, id) = (state.clone(), dataset_id.clone());
        blocking(move || state.dataset(&id)).await?
    };
    let Some(slot) = state.try_start_training() else {
        return Err(ApiError::conflict("a training job is already running"));
    };
    let job_id = new_id();
    state.set_job(JobStatus {
        job_id: job_id.clone(),
        state: JobState::Pending,
        dataset_id: dataset_id.clone(),
        epoch: 0,
        epochs: training.epochs,
        latest: None,
        model_id: None,
        error: None,
    });
    tracing::info!(job = %job_id, dataset = %dataset_id, epochs = training.epochs, "training queued");

    let id = job_id.clone();
    tokio::task::spawn_blocking(move || {
        state.update_job(&id, |j| j.state = JobState::Running);
        let result = train(&dataset, &model_config, &training, |report| {
            state.update_job(&id, |j| {
                j.epoch = report.epoch;
                j.latest = Some(report.clone());
            });
            state.broadcast_training(&id, report);
        });
        let stored = result.map_err(|e| e.to_string()).and_then(|(params, report)| {
            let model = Model {
                config: model_config,
                training,
                params,
                corpus_fingerprint: dataset.fingerprint(),
            };
            let meta = state.store.put_model(&model, &dataset_id, &report).map_err(|e| {
                tracing::error!(error = %e, "saving model failed");
                "storage failure".to_string()
            })?;
            Ok(StoredModel { model, meta })
        });
        match stored {
            Ok(stored) => {
                let model_id = stored.meta.model_id.clone();
                state.add_model(stored);
                tracing::info!(job = %id, model = %model_id, "training done");
                drop(slot);
                state.update_job(&id, |j| {
                    j.state = JobState::Done;
                    j.model_id = Some(model_id);
                });
            }
            Err(e) => {
                tracing::warn!(job = %id, error = %e, "training failed");
                drop(slot);
                state.update_job(&id, |j| {
                    j.state = JobState::Failed;
                    j.error = Some(e);
                });
            }
        }
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response())
}

async fn job_status(State(state): Shared, Path(id): Path<String>) -> AppResult<Json<JobStatus>> {
    state.job(&id).map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}

fn model_summary(stored: &StoredModel) -> Value {
    json!({
        "model_id": stored.meta.model_id,
        "dataset_id": stored.meta.dataset_id,
        "config": stored.model.config,
        "training": stored.model.training,
        "final_epoch": stored.meta.report.last(),
    })
}

async fn list_models(State(state): Shared) -> Json<Value> {
    let models: Vec<Value> = state.models().iter().map(|m| model_summary(m)).collect();
    Json(json!({ "models": models }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct HeatmapQuery {
    #[serde(default)]
    dim_x: usize,
    #[serde(default = "one")]
    dim_y: usize,
}

fn one() -> usize {
    1
}

async fn heatmap(State(state): Shared, Path(id): Path<String>, ApiQuery(q): ApiQuery<HeatmapQuery>) -> AppResult<Json<Value>> {
    let stored = state.model(&id)?;
    let body = blocking(move || {
        let dataset = state.dataset(&stored.meta.dataset_id)?;
        let map = density_map(&stored.model.params, dataset.all().map(|e| &e.tokens), q.dim_x, q.dim_y)?;
        Ok(json!({
            "model_id": id,
            "dim_x": map.dim_x,
            "dim_y": map.dim_y,
            "bins": HEATMAP_BINS,
            "range": HEATMAP_RANGE,
            "total": map.total(),
            "counts": map.counts,
        }))
    })
    .await?;
    Ok(Json(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionRequest {
    model_id: String,
    layers: Option<Vec<EuclideanSpec>>,
    chord: Option<Vec<u8>>,
    length_measures: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SessionPatch {
    layers: Option<Vec<EuclideanSpec>>,
    chord: Option<Vec<u8>>,
    length_measures: Option<u32>,
}

impl SessionPatch {
    fn is_empty(&self) -> bool {
        self.layers.is_none() && self.chord.is_none() && self.length_measures.is_none()
    }

    /// Length first so a longer layer list can arrive with a new chord.
    fn apply(self, session: &mut Session) -> AppResult<()> {
        if let Some(length) = self.length_measures {
            session.set_length(length)?;
        }
        match (self.layers, self.chord) {
            (Some(layers), Some(chord)) => {
                let mut next = session.clone();
                next.layers = layers;
                next.chord = chord;
                next.validate()?;
                *session = next;
            }
            (Some(layers), None) => session.set_layers(layers)?,
            (None, Some(chord)) => session.set_chord(chord)?,
            (None, None) => {}
        }
        Ok(())
    }
}

async fn create_session(State(state): Shared, ApiJson(req): ApiJson<SessionRequest>) -> AppResult<Response> {
    state.model(&req.model_id)?;
    let mut session = Session::new(new_id(), req.model_id);
    SessionPatch { layers: req.layers, chord: req.chord, length_measures: req.length_measures }.apply(&mut session)?;
    session.record("create", Vec::new());
    let body = blocking(move || {
        state.add_session(session.clone())?;
        tracing::info!(session = %session.id, "session created");
        Ok(session)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn list_sessions(State(state): Shared) -> AppResult<Json<Value>> {
    let mut sessions = Vec::new();
    for slot in state.slots() {
        let session = state.lock(&slot).await?;
        sessions.push(json!({
            "id": session.id,
            "model_id": session.model_id,
            "layers": session.layers,
            "history_len": session.history.len(),
        }));
    }
    sessions.sort_by(|a, b| a["id"].as_str().cmp(&b["id"].as_str()));
    Ok(Json(json!({ "sessions": sessions })))
}

async fn snapshot(state: &AppState, id: &str) -> AppResult<Session> {
    let slot = state.slot(id)?;
    let session = state.lock(&slot).await?;
    Ok(session.clone())
}

async fn get_session(State(state): Shared, Path(id): Path<String>) -> AppResult<Json<Session>> {
    snapshot(&state, &id).await.map(Json)
}

/// Runs `f` on a copy of the locked session, persists the copy, then
/// commits it and publishes the event, all before the lock is released.
async fn mutate<R: Send + 'static>(
    state: Arc<AppState>,
    id: &str,
    f: impl FnOnce(&mut Session, &Model) -> AppResult<(R, Option<Arc<str>>)> + Send + 'static,
) -> AppResult<R> {
    let slot = state.slot(id)?;
    let mut guard: OwnedMutexGuard<Session> = state.lock(&slot).await?;
    let stored = state.model(&guard.model_id)?;
    blocking(move || {
        let mut next = guard.clone();
        let (result, event) = f(&mut next, &stored.model)?;
        state.store.put_session(&next)?;
        *guard = next;
        if let Some(event) = event {
            let _ = slot.events.send(event);
        }
        Ok(result)
    })
    .await
}

fn persist_pipeline(state: &AppState, output: &PipelineOutput) -> AppResult<()> {
    state.persist_artifacts(&[&output.tokens, &output.reconstruction])
}

async fn patch_session(
    State(state): Shared,
    Path(id): Path<String>,
    ApiJson(patch): ApiJson<SessionPatch>,
) -> AppResult<Json<Value>> {
    if patch.is_empty() {
        return Err(ApiError::bad_request("patch must set layers, chord or length_measures"));
    }
    let writer = state.clone();
    let body = mutate(state, &id, move |session, model| {
        patch.apply(session)?;
        session.record("patch", Vec::new());
        let output = run_pipeline(session, model, 0)?;
        persist_pipeline(&writer, &output)?;
        let event = pipeline_event(session, model, &output);
        Ok((json!({ "session": session, "pipeline": output }), Some(event)))
    })
    .await?;
    Ok(Json(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasureQuery {
    #[serde(default)]
    measure: u32,
}

async fn pipeline(
    State(state): Shared,
    Path(id): Path<String>,
    ApiQuery(q): ApiQuery<MeasureQuery>,
) -> AppResult<Json<PipelineOutput>> {
    let session = snapshot(&state, &id).await?;
    let stored = state.model(&session.model_id)?;
    let output = blocking(move || Ok(compute_pipeline(&session, &stored.model, q.measure)?)).await?;
    Ok(Json(output))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepRequest {
    layer_index: usize,
    #[serde(default)]
    ranges: SweepRanges,
    #[serde(default)]
    measure: u32,
}

async fn run_sweep(
    State(state): Shared,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<SweepRequest>,
) -> AppResult<Json<Value>> {
    let writer = state.clone();
    let body = mutate(state, &id, move |session, model| {
        let outcome = sweep(session, model, req.layer_index, &req.ranges, req.measure)?;
        writer.persist_artifacts(&[&outcome])?;
        Ok((json!(outcome), None))
    })
    .await?;
    Ok(Json(body))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LatentEditRequest {
    mu: LatentVector,
    dim: usize,
    delta: f64,
}

async fn latent_edit(
    State(state): Shared,
    Path(id): Path<String>,
    ApiJson(req): ApiJson<LatentEditRequest>,
) -> AppResult<Json<Value>> {
    let writer = state.clone();
    let body = mutate(state, &id, move |session, model| {
        let edit = apply_latent_edit(session, model, &req.mu, req.dim, req.delta)?;
        writer.persist_artifacts(&[&edit.tokens])?;
        Ok((json!(edit), None))
    })
    .await?;
    Ok(Json(body))
}

#[derive(Deserialize, Default, Clone, Copy)]
#[serde(rename_all = "lowercase")]
enum ExportRoll {
    #[default]
    Mono,
    Poly,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportQuery {
    #[serde(default)]
    which: ExportRoll,
}

async fn export(State(state): Shared, Path(id): Path<String>, ApiQuery(q): ApiQuery<ExportQuery>) -> AppResult<Response> {
    let session = snapshot(&state, &id).await?;
    let stored = state.model(&session.model_id)?;
    let bytes = blocking(move || {
        let output = compute_pipeline(&session, &stored.model, 0)?;
        Ok(export_midi(match q.which {
            ExportRoll::Mono => &output.mono_roll,
            ExportRoll::Poly => &output.roll,
        }))
    })
    .await?;
    let disposition = format!("attachment; filename=\"{id}.mid\"");
    Ok(([(header::CONTENT_TYPE, "audio/midi".to_string()), (header::CONTENT_DISPOSITION, disposition)], bytes).into_response())
}

async fn artifact(State(state): Shared, Path(hash): Path<String>) -> AppResult<Response> {
    let bytes = {
        let (state, hash) = (state.clone(), hash.clone());
        blocking(move || Ok(state.store.get_artifact(&hash)?)).await?
    };
    let bytes = bytes.ok_or_else(|| ApiError::not_found("artifact", &hash))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}
