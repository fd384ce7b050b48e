use thiserror::Error;

use crate::hiergrid::GridId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("divisibility violated on axis {axis}: {cells} cells not divisible by {subdiv}")]
    Divisibility {
        axis: &'static str,
        cells: usize,
        subdiv: usize,
    },

    #[error("grid {0} is already refined")]
    AlreadyRefined(GridId),

    #[error("grid {id} is at maximum depth {max_depth}")]
    MaxDepth { id: GridId, max_depth: u32 },

    #[error("unknown grid {0}")]
    UnknownGrid(GridId),

    #[error("morton index {index} out of range {bound} on axis {axis} at level {level}")]
    MortonRange {
        level: usize,
        axis: &'static str,
        index: u32,
        bound: u32,
    },

    #[error("morton key needs {0} bits, more than 64")]
    MortonOverflow(u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("selection is stale: built against version {selected}, forest is at {current}")]
    StaleSelection { selected: u64, current: u64 },

    #[error("topology snapshot version {topo} does not match forest version {forest}")]
    StaleTopology { topo: u64, forest: u64 },

    #[error("non-finite value in {field} of grid {grid}")]
    NonFinite { grid: GridId, field: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
