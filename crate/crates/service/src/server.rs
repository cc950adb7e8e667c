use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use handover_core::sim::Mode;
use serde::Deserialize;
use tokio::net::TcpListener;
use tokio::sync::Mutex;

use crate::protocol::ServerMessage;
use crate::session::{ServiceError, SessionManager};

#[derive(Clone)]
pub struct AppState {
    manager: Arc<Mutex<SessionManager>>,
}

impl AppState {
    pub fn new(manager: SessionManager) -> Self {
        Self {
            manager: Arc::new(Mutex::new(manager)),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ConnectParams {
    mode: Option<Mode>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(connect))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

pub async fn bind(addr: SocketAddr) -> std::io::Result<TcpListener> {
    TcpListener::bind(addr).await
}

async fn connect(
    ws: WebSocketUpgrade,
    Query(params): Query<ConnectParams>,
    State(state): State<AppState>,
) -> Response {
    let mode = params.mode.unwrap_or(Mode::Preemptive);
    let opened = state.manager.lock().await.open_session(mode, None);
    match opened {
        Ok(id) => ws.on_upgrade(move |socket| run_socket(socket, state, id)),
        Err(e @ ServiceError::ModelUnavailable) => {
            (StatusCode::SERVICE_UNAVAILABLE, e.to_string()).into_response()
        }
        Err(e) => (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    }
}

async fn run_socket(socket: WebSocket, state: AppState, id: u64) {
    let (mut tx, mut rx) = socket.split();
    tracing::info!(session = id, "session opened");
    while let Some(msg) = rx.next().await {
        let text = match msg {
            Ok(Message::Text(t)) => t,
            Ok(Message::Binary(_)) => {
                let reply = ServerMessage::error("binary messages are not supported");
                if send(&mut tx, &reply).await.is_err() {
                    break;
                }
                continue;
            }
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        let replies = state.manager.lock().await.handle_message(id, text.as_str());
        match replies {
            Ok(replies) => {
                let mut failed = false;
                for r in &replies {
                    if send(&mut tx, r).await.is_err() {
                        failed = true;
                        break;
                    }
                }
                if failed {
                    break;
                }
            }
            // The client closed the session.
            Err(ServiceError::UnknownSession(_)) => break,
            Err(e) => {
                let _ = send(&mut tx, &ServerMessage::error(e.to_string())).await;
                break;
            }
        }
        if state.manager.lock().await.session(id).is_none() {
            break;
        }
    }
    let _ = state.manager.lock().await.close_session(id);
    let _ = tx.send(Message::Close(None)).await;
    tracing::info!(session = id, "session closed");
}

async fn send<S>(tx: &mut S, msg: &ServerMessage) -> Result<(), axum::Error>
where
    S: SinkExt<Message, Error = axum::Error> + Unpin,
{
    let text = serde_json::to_string(msg).expect("server messages serialize");
    tx.send(Message::Text(text.into())).await
}
