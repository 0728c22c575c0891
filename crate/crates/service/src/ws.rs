use std::sync::Arc;

use axum::extract::ws::{close_code, CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::Response;
use folkvae::workflow::compute_pipeline;
use serde::Deserialize;
use tokio::sync::broadcast::{self, error::RecvError};

use crate::error::{ApiError, ApiQuery};
use crate::state::{pipeline_event, AppState};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventsQuery {
    /// Send the current pipeline state before any live events.
    #[serde(default)]
    replay: bool,
}

pub async fn events(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    ApiQuery(q): ApiQuery<EventsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let Ok(slot) = state.slot(&id) else {
        tracing::debug!(session = %id, "event stream for unknown session");
        return Ok(ws.on_upgrade(move |socket| reject(socket, id)));
    };
    // subscribe before the handshake completes so no later mutation is missed
    let (rx, first) = if q.replay {
        let session = state.lock(&slot).await?;
        let rx = slot.events.subscribe();
        let stored = state.model(&session.model_id)?;
        let output = compute_pipeline(&session, &stored.model, 0)?;
        (rx, Some(pipeline_event(&session, &stored.model, &output)))
    } else {
        (slot.events.subscribe(), None)
    };
    Ok(ws.on_upgrade(move |socket| stream(socket, rx, first)))
}

async fn reject(mut socket: WebSocket, id: String) {
    let frame = CloseFrame { code: close_code::PROTOCOL, reason: format!("unknown session {id}").into() };
    let _ = socket.send(Message::Close(Some(frame))).await;
}

async fn stream(mut socket: WebSocket, mut rx: broadcast::Receiver<Arc<str>>, first: Option<Arc<str>>) {
    if let Some(event) = first {
        if socket.send(Message::Text(event.as_ref().into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            event = rx.recv() => match event {
                Ok(event) => {
                    if socket.send(Message::Text(event.as_ref().into())).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Lagged(missed)) => {
                    // order cannot be kept; the client reconnects with replay
                    tracing::warn!(missed, "event subscriber lagged");
                    let frame = CloseFrame { code: close_code::AGAIN, reason: "lagged".into() };
                    let _ = socket.send(Message::Close(Some(frame))).await;
                    return;
                }
                Err(RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
