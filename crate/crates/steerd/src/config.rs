use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use slwn_core::geometry::{Aabb, Face};
use slwn_core::hiergrid::{Forest, GridConfig};
use slwn_core::solver::{BoundaryKind, BoundarySpec, FluidParams, Simulation};

use crate::error::Result;

fn default_budget() -> u32 {
    400
}

fn default_max_subs() -> usize {
    4
}

/// Server configuration file.
///
/// ```json
/// {
///   "grid": { "domain": { "min": [0, 0, 0], "max": [1, 1, 0.1] },
///             "cells": [10, 10, 1], "max_depth": 3, "initial_depth": 3 },
///   "fluid": { "nu": 0.01 },
///   "boundary": { "+y": { "kind": "moving_wall", "velocity": [1, 0, 0] } },
///   "default_budget": 400
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    pub grid: GridConfig,
    #[serde(default)]
    pub fluid: FluidParams,
    /// Face name ("-x" .. "+z") to condition; unnamed faces are no-slip walls.
    #[serde(default)]
    pub boundary: BTreeMap<String, BoundaryKind>,
    #[serde(default = "default_budget")]
    pub default_budget: u32,
    #[serde(default = "default_max_subs")]
    pub max_subs: usize,
    #[serde(default)]
    pub start_paused: bool,
    /// Minimum wall time per step; 0 runs flat out.
    #[serde(default)]
    pub step_interval_ms: u64,
}

impl ServerConfig {
    /// The lid-driven unit cavity: 10×10 cells, three levels of 2×2 refinement.
    pub fn cavity() -> Self {
        Self {
            grid: GridConfig::new(Aabb::new([0.0; 3], [1.0, 1.0, 0.1]), [1, 1, 1], [10, 10, 1])
                .with_max_depth(3)
                .with_initial_depth(3),
            fluid: FluidParams::default(),
            boundary: BTreeMap::from([(
                "+y".to_string(),
                BoundaryKind::MovingWall {
                    velocity: [1.0, 0.0, 0.0],
                },
            )]),
            default_budget: default_budget(),
            max_subs: default_max_subs(),
            start_paused: false,
            step_interval_ms: 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ServerConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn boundary_spec(&self) -> Result<BoundarySpec> {
        let mut spec = BoundarySpec::walls();
        for (name, kind) in &self.boundary {
            let face: Face = name.parse()?;
            if *kind == BoundaryKind::Prescribed {
                return Err(slwn_core::Error::InvalidConfig(format!(
                    "face {face}: prescribed faces are set by coupling only"
                ))
                .into());
            }
            spec.set(face, *kind)?;
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.fluid.validate()?;
        self.boundary_spec()?;
        if self.default_budget == 0 {
            return Err(
                slwn_core::Error::InvalidConfig("default budget must be positive".into()).into(),
            );
        }
        Ok(())
    }

    pub fn build_simulation(&self) -> Result<Simulation> {
        let forest = Forest::new(self.grid.clone())?;
        Ok(Simulation::new(
            forest,
            self.fluid.clone(),
            self.boundary_spec()?,
        )?)
    }
}
