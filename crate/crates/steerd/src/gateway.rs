//! HTTP side: serves the UI page and carries the binary protocol over
//! WebSocket, one protocol frame per binary message. The first message
//! of a session is the handshake.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{Html, Response};
use axum::routing::get;
use axum::Router;
use tower_http::services::ServeDir;

use crate::collector::{read_error_frame, Collector, Outcome};
use crate::error::Result;
use crate::protocol::{Frame, FRAME_HEADER_LEN, MAX_FRAME};

const INDEX: &str = include_str!("index.html");

pub fn router(collector: Arc<Collector>, ui_dir: Option<PathBuf>) -> Router {
    let r = Router::new().route("/ws", get(upgrade));
    let r = match ui_dir {
        Some(dir) => r.fallback_service(ServeDir::new(dir)),
        None => r.route("/", get(|| async { Html(INDEX) })),
    };
    r.with_state(collector)
}

/// Runs the gateway on its own runtime thread; returns the bound address.
pub fn spawn(
    collector: Arc<Collector>,
    addr: SocketAddr,
    ui_dir: Option<PathBuf>,
) -> Result<SocketAddr> {
    let std_listener = std::net::TcpListener::bind(addr)?;
    std_listener.set_nonblocking(true)?;
    let local = std_listener.local_addr()?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    std::thread::Builder::new()
        .name("slwn-gateway".into())
        .spawn(move || {
            rt.block_on(async move {
                let listener = match tokio::net::TcpListener::from_std(std_listener) {
                    Ok(l) => l,
                    Err(e) => return log::error!("gateway listener: {e}"),
                };
                if let Err(e) = axum::serve(listener, router(collector, ui_dir)).await {
                    log::error!("gateway stopped: {e}");
                }
            })
        })?;
    Ok(local)
}

async fn upgrade(ws: WebSocketUpgrade, State(c): State<Arc<Collector>>) -> Response {
    ws.max_message_size(MAX_FRAME + FRAME_HEADER_LEN)
        .max_frame_size(MAX_FRAME + FRAME_HEADER_LEN)
        .on_upgrade(move |socket| session(socket, c))
}

async fn session(mut socket: WebSocket, c: Arc<Collector>) {
    let hello = match socket.recv().await {
        Some(Ok(Message::Binary(b))) => b,
        _ => return,
    };
    let (reply, ok) = c.handshake(&hello);
    if socket.send(Message::Binary(reply.into())).await.is_err() || !ok {
        let _ = socket.send(Message::Close(None)).await;
        return;
    }
    while let Some(msg) = socket.recv().await {
        let outcome = match msg {
            Ok(Message::Binary(b)) => match Frame::decode(&b) {
                Ok(frame) => {
                    let c = Arc::clone(&c);
                    match tokio::task::spawn_blocking(move || c.dispatch(&frame)).await {
                        Ok(o) => o,
                        Err(_) => return,
                    }
                }
                Err(e) => Outcome::Close(Some(read_error_frame(&e))),
            },
            Ok(Message::Text(_)) => Outcome::Close(Some(read_error_frame(
                &crate::error::Error::Protocol("text messages are not part of the protocol".into()),
            ))),
            Ok(Message::Ping(_) | Message::Pong(_)) => continue,
            Ok(Message::Close(_)) | Err(_) => return,
        };
        let (bytes, close) = match outcome {
            Outcome::Reply(b) => (Some(b), false),
            Outcome::Close(b) => (b, true),
        };
        if let Some(b) = bytes {
            let n = b.len();
            let before = c.stepping();
            let sent = socket.send(Message::Binary(b.into())).await;
            c.note_send(n, before || c.stepping());
            if sent.is_err() {
                return;
            }
        }
        if close {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
    }
}
