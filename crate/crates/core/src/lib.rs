//! Block-structured adaptive grids, an incompressible flow solver running on
//! them, and the sliding-window selection used to stream results to clients.

pub mod error;
pub mod exchange;
pub mod geometry;
pub mod hiergrid;
pub mod solver;
pub mod window;

pub use error::{Error, Result};
