use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Face;
use crate::hiergrid::GridId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluidParams {
    pub rho: f64,
    pub nu: f64,
    /// Fixed step, or the upper bound when `adaptive` is set.
    pub dt: f64,
    pub cfl: f64,
    pub adaptive: bool,
    pub poisson_tol: f64,
    pub poisson_max_iter: usize,
}

impl Default for FluidParams {
    fn default() -> Self {
        Self {
            rho: 1.0,
            nu: 0.01,
            dt: 1e-2,
            cfl: 0.5,
            adaptive: true,
            poisson_tol: 1e-8,
            poisson_max_iter: 200,
        }
    }
}

impl FluidParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParam(m.to_string()));
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return bad("rho must be positive");
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return bad("nu must be non-negative");
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad("cfl must lie in (0, 1]");
        }
        if !(self.poisson_tol > 0.0) || self.poisson_max_iter == 0 {
            return bad("poisson tolerance and iteration cap must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryKind {
    NoSlip,
    /// Wall sliding with a tangential velocity.
    MovingWall {
        velocity: [f64; 3],
    },
    Inflow {
        velocity: [f64; 3],
    },
    /// Zero-gradient velocity, zero pressure.
    Outflow,
    /// Per-cell velocities supplied by a coupling driver.
    Prescribed,
}

impl BoundaryKind {
    pub fn code(&self) -> u8 {
        match self {
            BoundaryKind::NoSlip => 0,
            BoundaryKind::MovingWall { .. } => 1,
            BoundaryKind::Inflow { .. } => 2,
            BoundaryKind::Outflow => 3,
            BoundaryKind::Prescribed => 4,
        }
    }

    pub fn velocity(&self) -> [f64; 3] {
        match self {
            BoundaryKind::MovingWall { velocity } | BoundaryKind::Inflow { velocity } => *velocity,
            _ => [0.0; 3],
        }
    }

    pub fn from_code(code: u8, velocity: [f64; 3]) -> Result<Self> {
        Ok(match code {
            0 => BoundaryKind::NoSlip,
            1 => BoundaryKind::MovingWall { velocity },
            2 => BoundaryKind::Inflow { velocity },
            3 => BoundaryKind::Outflow,
            4 => BoundaryKind::Prescribed,
            c => return Err(Error::Parse(format!("unknown boundary kind {c}"))),
        })
    }

    /// Checks the kind is admissible on `face`.
    pub fn validate_for(&self, face: Face) -> Result<()> {
        if let BoundaryKind::MovingWall { velocity } = self {
            if velocity[face.axis()] != 0.0 {
                return Err(Error::InvalidParam(format!(
                    "moving wall on {face} must move tangentially"
                )));
            }
        }
        if self.velocity().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParam("non-finite wall velocity".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub faces: [BoundaryKind; 6],
    /// Face-ordered ghost-face velocities for `Prescribed` faces.
    #[serde(skip)]
    pub prescribed: BTreeMap<(GridId, Face), Vec<[f64; 3]>>,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self::walls()
    }
}

impl BoundarySpec {
    pub fn walls() -> Self {
        Self {
            faces: [BoundaryKind::NoSlip; 6],
            prescribed: BTreeMap::new(),
        }
    }

    /// Unit cavity with the +y wall sliding at `lid` along x.
    pub fn cavity(lid: f64) -> Self {
        let mut s = Self::walls();
        s.faces[Face::YPlus.index()] = BoundaryKind::MovingWall {
            velocity: [lid, 0.0, 0.0],
        };
        s
    }

    pub fn get(&self, face: Face) -> BoundaryKind {
        self.faces[face.index()]
    }

    pub fn set(&mut self, face: Face, kind: BoundaryKind) -> Result<()> {
        kind.validate_for(face)?;
        self.faces[face.index()] = kind;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for f in Face::ALL {
            self.get(f).validate_for(f)?;
        }
        Ok(())
    }

    /// True if no face pins the pressure level.
    pub fn pure_neumann(&self, axes: &[usize]) -> bool {
        !Face::ALL
            .iter()
            .any(|f| axes.contains(&f.axis()) && self.get(*f) == BoundaryKind::Outflow)
    }
}
