use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb, AXIS_NAMES};

pub const DEFAULT_MAX_DEPTH: u32 = 7;

fn default_max_depth() -> u32 {
    DEFAULT_MAX_DEPTH
}

fn default_level0() -> [usize; 3] {
    [1, 1, 1]
}

/// Grid hierarchy layout, as read from the JSON configuration.
///
/// `subdiv[l]` is the split used when refining a level-`l` grid (so the first
/// entry produces level 1). When the table is shorter than the hierarchy its
/// last entry repeats; an empty table means 2 along every refinable axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub domain: Aabb,
    #[serde(default = "default_level0")]
    pub level0_subdiv: [usize; 3],
    pub cells: [usize; 3],
    #[serde(default)]
    pub subdiv: Vec<[usize; 3]>,
    #[serde(default = "default_max_depth")]
    pub max_depth: u32,
    /// Uniform refinement depth applied at start-up.
    #[serde(default)]
    pub initial_depth: u32,
}

impl GridConfig {
    pub fn new(domain: Aabb, level0_subdiv: [usize; 3], cells: [usize; 3]) -> Self {
        Self {
            domain,
            level0_subdiv,
            cells,
            subdiv: Vec::new(),
            max_depth: DEFAULT_MAX_DEPTH,
            initial_depth: 0,
        }
    }

    pub fn with_subdiv(mut self, subdiv: [usize; 3]) -> Self {
        self.subdiv = vec![subdiv];
        self
    }

    pub fn with_max_depth(mut self, depth: u32) -> Self {
        self.max_depth = depth;
        self
    }

    pub fn with_initial_depth(mut self, depth: u32) -> Self {
        self.initial_depth = depth;
        self
    }

    /// Single cell layer in z with no tiling across it: a pseudo-2D run.
    pub fn is_planar(&self) -> bool {
        self.cells[2] == 1 && self.level0_subdiv[2] == 1
    }

    /// Split factors for refining a grid that sits on `level`.
    pub fn subdiv_for_level(&self, level: u32) -> [usize; 3] {
        match self.subdiv.get(level as usize).or(self.subdiv.last()) {
            Some(s) => *s,
            None if self.is_planar() => [2, 2, 1],
            None => [2, 2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        Aabb::validated(self.domain.min, self.domain.max)?;
        for a in 0..3 {
            if self.cells[a] == 0 {
                return Err(Error::InvalidGeometry(format!(
                    "cell count on axis {} must be positive",
                    AXIS_NAMES[a]
                )));
            }
            if self.level0_subdiv[a] == 0 {
                return Err(Error::InvalidConfig(format!(
                    "level-0 tiling on axis {} must be positive",
                    AXIS_NAMES[a]
                )));
            }
        }
        for s in &self.subdiv {
            if s.contains(&0) {
                return Err(Error::InvalidConfig(format!("zero split factor in {s:?}")));
            }
        }
        if self.initial_depth > self.max_depth {
            return Err(Error::InvalidConfig(format!(
                "initial depth {} exceeds max depth {}",
                self.initial_depth, self.max_depth
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: GridConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
