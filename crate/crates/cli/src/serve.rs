//! HTTP and WebSocket front-end for [`SessionManager`].
//!
//! `POST /api` takes one protocol message and returns the reply. `GET /ws`
//! upgrades to a socket that carries one message per text frame.
//! `GET /health` answers `ok`.

use std::sync::Arc;

use anyhow::Result;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::Router;
use mutadapt::session::SessionManager;

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/api", post(api))
        .route("/ws", get(ws))
        .route("/health", get(|| async { "ok" }))
        .with_state(manager)
}

async fn api(State(m): State<Arc<SessionManager>>, body: String) -> impl IntoResponse {
    let reply = tokio::task::spawn_blocking(move || m.handle_json(&body)).await.expect("handler panicked");
    ([(header::CONTENT_TYPE, "application/json")], reply)
}

async fn ws(State(m): State<Arc<SessionManager>>, upgrade: WebSocketUpgrade) -> impl IntoResponse {
    upgrade.on_upgrade(move |socket| socket_loop(m, socket))
}

async fn socket_loop(m: Arc<SessionManager>, mut socket: WebSocket) {
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t.to_string(),
            Message::Close(_) => break,
            _ => continue,
        };
        let m = m.clone();
        let reply = tokio::task::spawn_blocking(move || m.handle_json(&text)).await.expect("handler panicked");
        if socket.send(Message::Text(reply.into())).await.is_err() {
            break;
        }
    }
}

pub async fn run(manager: SessionManager, bind: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    println!("listening on {addr}");
    tracing::info!(%addr, "session service started");
    axum::serve(listener, router(Arc::new(manager)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
