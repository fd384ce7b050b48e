//! The collector: one per server. Turns client frames into coordinator
//! requests and coordinator answers into reply frames. Encoding, compression
//! and the socket write all happen on the session's side of the queue, so
//! the step loop keeps running while a reply is on its way out.

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::Error;
use crate::host::{Counters, HostHandle};
use crate::protocol::{
    answer_handshake, cmd, encode_stream, Ack, ClientFrame, Code, Frame, HandshakeStatus, Rejection,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Reply(Vec<u8>),
    /// Send the bytes, if any, then end the session.
    Close(Option<Vec<u8>>),
}

pub struct Collector {
    host: HostHandle,
    export_dir: Option<PathBuf>,
    seq: AtomicU64,
}

pub fn error_frame(code: Code, message: impl Into<String>) -> Vec<u8> {
    Frame::new(cmd::ERROR, Rejection::new(code, message).encode()).encode()
}

/// The error frame sent before closing a session that failed to read a frame.
pub fn read_error_frame(e: &Error) -> Vec<u8> {
    let code = match e {
        Error::FrameTooLarge(_) => Code::FrameTooLarge,
        _ => Code::Malformed,
    };
    error_frame(code, e.to_string())
}

impl Collector {
    pub fn new(host: HostHandle, export_dir: Option<PathBuf>) -> Arc<Self> {
        Arc::new(Self {
            host,
            export_dir,
            seq: AtomicU64::new(0),
        })
    }

    pub fn counters(&self) -> &Counters {
        &self.host.counters
    }

    pub fn host(&self) -> &HostHandle {
        &self.host
    }

    pub fn handshake(&self, client: &[u8]) -> (Vec<u8>, bool) {
        let (reply, status) = answer_handshake(client);
        if status != HandshakeStatus::Ok {
            log::info!("handshake refused: {status:?}");
        }
        (reply, status == HandshakeStatus::Ok)
    }

    pub fn dispatch(&self, frame: &Frame) -> Outcome {
        let req = match ClientFrame::from_frame(frame) {
            Ok(r) => r,
            Err(e) => return Outcome::Close(Some(error_frame(Code::Malformed, e.to_string()))),
        };
        let closed = || Outcome::Close(Some(error_frame(Code::Internal, "simulation has stopped")));
        match req {
            ClientFrame::Visualize(r) => {
                let q = r.query(self.host.default_budget);
                match self.host.query(r.source, q) {
                    Ok(Ok(stream)) => {
                        let payload = encode_stream(&stream, r.source);
                        self.export(r.source, stream.step, &payload);
                        Outcome::Reply(Frame::new(cmd::STREAM, payload).encode())
                    }
                    Ok(Err(rej)) => Outcome::Reply(reject(rej)),
                    Err(_) => closed(),
                }
            }
            ClientFrame::Steer(c) => match self.host.steer(c) {
                Ok(Ok(ack)) => Outcome::Reply(ack_frame(ack)),
                Ok(Err(rej)) => Outcome::Reply(reject(rej)),
                Err(_) => closed(),
            },
            ClientFrame::Metrics => match self.host.metrics() {
                Ok(v) => {
                    Outcome::Reply(Frame::new(cmd::REPORT, v.to_string().into_bytes()).encode())
                }
                Err(_) => closed(),
            },
            ClientFrame::Quit => Outcome::Close(None),
        }
    }

    pub fn stepping(&self) -> bool {
        self.counters().stepping.load(Ordering::SeqCst)
    }

    /// Books a finished write of `bytes`; `overlapped` if a step was running
    /// at its start or end.
    pub fn note_send(&self, bytes: usize, overlapped: bool) {
        let c = self.counters();
        c.sends.fetch_add(1, Ordering::SeqCst);
        c.bytes_sent.fetch_add(bytes as u64, Ordering::SeqCst);
        if overlapped {
            c.sends_during_step.fetch_add(1, Ordering::SeqCst);
        }
    }

    /// Runs a blocking socket write and books it.
    pub fn send<T>(&self, bytes: usize, write: impl FnOnce() -> T) -> T {
        let before = self.stepping();
        let r = write();
        self.note_send(bytes, before || self.stepping());
        r
    }

    /// File-dump mode: every stream sent is also written to the export directory.
    fn export(&self, source: u32, step: u64, payload: &[u8]) {
        let Some(dir) = &self.export_dir else { return };
        let n = self.seq.fetch_add(1, Ordering::SeqCst);
        let path = dir.join(format!("stream_s{source:03}_{step:08}_{n:06}.slwn"));
        if let Err(e) = std::fs::write(&path, payload) {
            log::warn!("cannot write {}: {e}", path.display());
        }
    }
}

fn reject(r: Rejection) -> Vec<u8> {
    Frame::new(cmd::REJECT, r.encode()).encode()
}

fn ack_frame(a: Ack) -> Vec<u8> {
    Frame::new(cmd::ACK, a.encode()).encode()
}
