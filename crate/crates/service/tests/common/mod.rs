#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use folkvae::corpus::DESK_CORPUS;
use folkvae_service::{AppState, ServerConfig};
use futures_util::StreamExt;
use serde_json::{json, Value};
use tokio::net::TcpStream;
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{MaybeTlsStream, WebSocketStream};

pub type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

pub const THREE_LAYERS: &str = r#"[
    {"pulses": 3, "steps": 7, "rotation": 2},
    {"pulses": 4, "steps": 16, "rotation": 0},
    {"pulses": 2, "steps": 5, "rotation": 2}
]"#;

pub struct Server {
    pub base: String,
    pub state: Arc<AppState>,
    pub http: reqwest::Client,
    task: JoinHandle<()>,
}

impl Drop for Server {
    fn drop(&mut self) {
        self.task.abort();
    }
}

pub async fn start(data_dir: &Path, tweak: impl FnOnce(&mut ServerConfig)) -> Server {
    let mut config = ServerConfig { port: 0, data_dir: data_dir.to_path_buf(), ..ServerConfig::default() };
    tweak(&mut config);
    let state = Arc::new(AppState::open(config.clone()).expect("state opens"));
    let listener = folkvae_service::bind(&config).await.expect("bind");
    let addr = listener.local_addr().unwrap();
    let serve_state = state.clone();
    let task = tokio::spawn(async move {
        folkvae_service::serve(listener, serve_state, std::future::pending()).await.unwrap();
    });
    Server { base: format!("http://{addr}"), state, http: reqwest::Client::new(), task }
}

impl Server {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn ws_url(&self, path: &str) -> String {
        format!("{}{path}", self.base.replacen("http", "ws", 1))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.http.get(self.url(path)).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn send(&self, method: reqwest::Method, path: &str, body: &Value) -> (u16, Value) {
        let resp = self.http.request(method, self.url(path)).json(body).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        self.send(reqwest::Method::POST, path, body).await
    }

    pub async fn patch(&self, path: &str, body: &Value) -> (u16, Value) {
        self.send(reqwest::Method::PATCH, path, body).await
    }

    pub async fn upload_desk_corpus(&self) -> String {
        let (status, body) = self.post("/api/corpus", &json!({ "abc": DESK_CORPUS })).await;
        assert_eq!(status, 201, "{body}");
        body["dataset_id"].as_str().unwrap().to_string()
    }

    /// Polls a job until it leaves the pending and running states.
    pub async fn wait_job(&self, job_id: &str) -> Value {
        for _ in 0..6000 {
            let (status, job) = self.get(&format!("/api/jobs/{job_id}")).await;
            assert_eq!(status, 200, "{job}");
            if job["state"] == "done" || job["state"] == "failed" {
                return job;
            }
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
        panic!("job {job_id} did not finish");
    }

    /// Trains and returns the model id.
    pub async fn train(&self, dataset_id: &str, model: Value, epochs: usize) -> String {
        let body = json!({ "dataset_id": dataset_id, "model": model, "training": { "epochs": epochs } });
        let (status, resp) = self.post("/api/train", &body).await;
        assert_eq!(status, 202, "{resp}");
        let job = self.wait_job(resp["job_id"].as_str().unwrap()).await;
        assert_eq!(job["state"], "done", "{job}");
        job["model_id"].as_str().unwrap().to_string()
    }

    pub async fn session(&self, model_id: &str) -> String {
        let (status, body) = self.post("/api/sessions", &json!({ "model_id": model_id })).await;
        assert_eq!(status, 201, "{body}");
        body["id"].as_str().unwrap().to_string()
    }

    pub async fn connect(&self, session_id: &str) -> Ws {
        let (ws, _) = tokio_tungstenite::connect_async(self.ws_url(&format!("/api/sessions/{session_id}/events")))
            .await
            .expect("websocket connects");
        ws
    }
}

pub fn tiny_model() -> Value {
    json!({ "encoder_hidden": 8, "decoder_hidden": 8 })
}

/// Next text event, or `None` if nothing arrives within `wait`.
pub async fn next_event(ws: &mut Ws, wait: Duration) -> Option<Value> {
    loop {
        match tokio::time::timeout(wait, ws.next()).await {
            Err(_) => return None,
            Ok(None) => return None,
            Ok(Some(Ok(Message::Text(text)))) => return Some(serde_json::from_str(&text).unwrap()),
            Ok(Some(Ok(Message::Close(_)))) => return None,
            Ok(Some(Ok(_))) => continue,
            Ok(Some(Err(e))) => panic!("websocket error: {e}"),
        }
    }
}

/// Next event of the given kind, skipping others.
pub async fn next_of_kind(ws: &mut Ws, kind: &str, wait: Duration) -> Option<Value> {
    loop {
        let event = next_event(ws, wait).await?;
        if event["event"] == kind {
            return Some(event);
        }
    }
}

#[derive(Default)]
pub struct Checks {
    pub failures: Vec<String>,
    pub passed: usize,
}

impl Checks {
    pub fn check(&mut self, name: &str, ok: bool, detail: impl std::fmt::Display) {
        if ok {
            self.passed += 1;
        } else {
            self.failures.push(format!("{name}: {detail}"));
        }
    }
}

/// Sixteenth-step index of each note onset.
pub fn onset_steps(roll: &Value) -> Vec<u64> {
    roll["notes"].as_array().unwrap().iter().map(|n| n["onset"].as_u64().unwrap() / 3).collect()
}

/// Walks the endpoint table: corpus, 2-epoch training, session, PATCH with
/// exactly one event, k-sweep, latent edit and MIDI export.
pub async fn contract_flow(data_dir: &Path) -> Checks {
    let mut c = Checks::default();
    let server = start(data_dir, |_| {}).await;

    let (status, corpus) = server.post("/api/corpus", &json!({ "abc": DESK_CORPUS, "seed": 1 })).await;
    c.check("POST /api/corpus", status == 201, status);
    let dataset_id = corpus["dataset_id"].as_str().unwrap_or_default().to_string();
    let measures = corpus["stats"]["measure_count"].as_u64().unwrap_or(0);
    c.check("desk corpus size", measures >= 300, measures);

    let (status, stats) = server.get(&format!("/api/corpus/{dataset_id}/stats")).await;
    c.check("GET /api/corpus/{id}/stats", status == 200 && stats["stats"] == corpus["stats"], status);

    let train_body = json!({ "dataset_id": dataset_id, "training": { "epochs": 2 } });
    let (status, job) = server.post("/api/train", &train_body).await;
    c.check("POST /api/train", status == 202, status);
    let (status, _) = server.post("/api/train", &train_body).await;
    c.check("second POST /api/train while running", status == 409, status);
    let job = server.wait_job(job["job_id"].as_str().unwrap_or_default()).await;
    c.check("GET /api/jobs/{id}", job["state"] == "done" && job["epoch"] == 2, &job["state"]);
    let model_id = job["model_id"].as_str().unwrap_or_default().to_string();

    let (status, models) = server.get("/api/models").await;
    let listed = models["models"].as_array().is_some_and(|m| m.iter().any(|m| m["model_id"] == model_id.as_str()));
    c.check("GET /api/models", status == 200 && listed, status);

    let (status, heat) = server.get(&format!("/api/models/{model_id}/heatmap?dim_x=0&dim_y=1")).await;
    let grid_ok = heat["counts"].as_array().is_some_and(|rows| {
        rows.len() == 32 && rows.iter().all(|r| r.as_array().is_some_and(|r| r.len() == 32))
    });
    c.check("GET heatmap", status == 200 && grid_ok && heat["total"].as_u64() == Some(measures), &heat["total"]);

    let (status, session) = server.post("/api/sessions", &json!({ "model_id": model_id })).await;
    c.check("POST /api/sessions", status == 201, status);
    let session_id = session["id"].as_str().unwrap_or_default().to_string();
    let (status, _) = server.get(&format!("/api/sessions/{session_id}")).await;
    c.check("GET /api/sessions/{id}", status == 200, status);

    let mut ws = server.connect(&session_id).await;
    let layers: Value = serde_json::from_str(THREE_LAYERS).unwrap();
    let (status, patched) = server.patch(&format!("/api/sessions/{session_id}"), &json!({ "layers": layers })).await;
    c.check("PATCH /api/sessions/{id}", status == 200, status);

    let event = next_event(&mut ws, Duration::from_secs(10)).await;
    let extra = next_event(&mut ws, Duration::from_millis(500)).await;
    match &event {
        Some(e) => {
            c.check("event kind", e["event"] == "pipeline", &e["event"]);
            c.check("event mu[0..3]", e["mu"].as_array().is_some_and(|m| m.len() == 4), &e["mu"]);
            c.check("event divergence", e["divergence"] == patched["pipeline"]["divergence"], &e["divergence"]);
            c.check("event roll", e["roll"] == patched["pipeline"]["roll"], "roll differs from PATCH response");
        }
        None => c.check("pipeline event", false, "no event"),
    }
    c.check("exactly one event", extra.is_none(), format!("{extra:?}"));

    let (status, pipeline) = server.get(&format!("/api/sessions/{session_id}/pipeline?measure=0")).await;
    c.check("GET pipeline", status == 200 && pipeline == patched["pipeline"], status);

    let sweep = json!({ "layer_index": 2, "ranges": { "rotation": { "start": 0, "end": 4 } } });
    let (status, outcome) = server.post(&format!("/api/sessions/{session_id}/sweep"), &sweep).await;
    let results = outcome["results"].as_array().cloned().unwrap_or_default();
    c.check("k-sweep status", status == 200, status);
    c.check("k-sweep count", results.len() == 5, results.len());
    let sorted = results.windows(2).all(|w| {
        let (a, b) = (w[0]["divergence"].as_f64().unwrap(), w[1]["divergence"].as_f64().unwrap());
        a < b || (a == b && w[0]["spec"]["rotation"].as_i64() < w[1]["spec"]["rotation"].as_i64())
    });
    c.check("k-sweep sorted", sorted, "out of order");
    let (_, after) = server.get(&format!("/api/sessions/{session_id}")).await;
    c.check("sweep leaves layers", after["layers"] == layers, &after["layers"]);

    let edit = json!({ "mu": patched["pipeline"]["mu"], "dim": 0, "delta": 1.0 });
    let (status, edited) = server.post(&format!("/api/sessions/{session_id}/latent-edit"), &edit).await;
    let edited_ok = edited["tokens"].as_array().is_some_and(|t| t.len() == 48) && edited["roll"]["notes"].is_array();
    c.check("POST latent-edit", status == 200 && edited_ok, status);

    let resp = server.http.get(server.url(&format!("/api/sessions/{session_id}/export.mid"))).send().await.unwrap();
    let content_type = resp.headers().get("content-type").and_then(|v| v.to_str().ok()).unwrap_or("").to_string();
    c.check("export content type", content_type == "audio/midi", &content_type);
    let bytes = resp.bytes().await.unwrap();
    let header_ok = bytes.len() > 14
        && &bytes[0..4] == b"MThd"
        && bytes[8..10] == [0, 0]
        && bytes[10..12] == [0, 1]
        && u16::from_be_bytes([bytes[12], bytes[13]]) == 480;
    c.check("SMF header", header_ok, format!("{:02x?}", &bytes[..bytes.len().min(14)]));
    match midly::Smf::parse(&bytes) {
        Ok(smf) => {
            let ons = smf.tracks[0]
                .iter()
                .filter(|e| matches!(e.kind, midly::TrackEventKind::Midi { message: midly::MidiMessage::NoteOn { vel, .. }, .. } if vel > 0))
                .count();
            let expected = patched["pipeline"]["mono_roll"]["notes"].as_array().map_or(0, |n| n.len());
            c.check("SMF note count", ons == expected, format!("{ons} vs {expected}"));
        }
        Err(e) => c.check("SMF parses", false, e),
    }

    let unknown = "f".repeat(32);
    let (status, body) = server.get(&format!("/api/sessions/{unknown}")).await;
    c.check("unknown session is 404", status == 404 && body["code"] == "not_found", status);
    let bad = json!({ "layers": [{ "pulses": 6, "steps": 5, "rotation": 0 }] });
    let (status, body) = server.patch(&format!("/api/sessions/{session_id}"), &bad).await;
    c.check("i > j is 422", status == 422 && body["message"].is_string(), status);

    let (_, history) = server.get(&format!("/api/sessions/{session_id}")).await;
    let actions: Vec<&str> = history["history"]
        .as_array()
        .map(|h| h.iter().filter_map(|e| e["action"].as_str()).collect())
        .unwrap_or_default();
    c.check("history", actions == ["create", "patch", "pipeline", "sweep", "latent_edit"], format!("{actions:?}"));
    c
}
