use thiserror::Error;

use crate::protocol::{HandshakeStatus, Rejection};

#[derive(Debug, Error)]
pub enum Error {
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("frame of {0} bytes exceeds the 64 MiB cap")]
    FrameTooLarge(usize),

    #[error("handshake mismatch: {0:?}")]
    Handshake(HandshakeStatus),

    #[error("request rejected: {0}")]
    Rejected(Rejection),

    #[error("server error: {0}")]
    Server(Rejection),

    #[error("server is shut down")]
    Closed,

    #[error(transparent)]
    Core(#[from] slwn_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
