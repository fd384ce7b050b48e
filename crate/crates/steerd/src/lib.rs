//! Collector and steering server for a running block-structured flow
//! simulation: a framed binary protocol over TCP and WebSocket, budgeted
//! window queries, steering at step boundaries and coupled fine-scale
//! sub-simulations.

pub mod cli;
pub mod client;
pub mod collector;
pub mod config;
pub mod error;
pub mod gateway;
pub mod host;
pub mod protocol;
pub mod server;
pub mod subsim;
pub mod vtk;

pub use error::{Error, Result};
