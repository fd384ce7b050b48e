//! Axis-aligned boxes and grid faces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// A box that is valid as a computational domain: every extent strictly positive and finite.
    pub fn validated(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite()) || max[a] - min[a] <= 0.0 {
                return Err(Error::InvalidGeometry(format!(
                    "axis {} has nonpositive extent [{}, {}]",
                    AXIS_NAMES[a], min[a], max[a]
                )));
            }
        }
        Ok(Self { min, max })
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn volume(&self) -> f64 {
        let e = self.extent();
        e[0] * e[1] * e[2]
    }

    /// Measure of the box over the given axes only (area for planar runs).
    pub fn measure(&self, axes: &[usize]) -> f64 {
        axes.iter()
            .map(|&a| (self.max[a] - self.min[a]).max(0.0))
            .product()
    }

    pub fn intersection(&self, other: &Aabb) -> Option<Aabb> {
        let mut out = *self;
        for a in 0..3 {
            out.min[a] = self.min[a].max(other.min[a]);
            out.max[a] = self.max[a].min(other.max[a]);
            if out.min[a] > out.max[a] {
                return None;
            }
        }
        Some(out)
    }

    /// Closed-interval containment test of a point.
    pub fn contains_point(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|a| other.min[a] >= self.min[a] && other.max[a] <= self.max[a])
    }

    pub fn approx_eq(&self, other: &Aabb, tol: f64) -> bool {
        (0..3).all(|a| {
            (self.min[a] - other.min[a]).abs() <= tol && (self.max[a] - other.max[a]).abs() <= tol
        })
    }

    /// The sub-box of a regular `n`-way split at child index `idx`.
    pub fn split(&self, n: [usize; 3], idx: [usize; 3]) -> Aabb {
        let mut out = *self;
        for a in 0..3 {
            let w = (self.max[a] - self.min[a]) / n[a] as f64;
            out.min[a] = self.min[a] + w * idx[a] as f64;
            out.max[a] = if idx[a] + 1 == n[a] {
                self.max[a]
            } else {
                self.min[a] + w * (idx[a] + 1) as f64
            };
        }
        out
    }
}

pub const AXIS_NAMES: [&str; 3] = ["x", "y", "z"];

/// One of the six faces of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Face {
    XMinus,
    XPlus,
    YMinus,
    YPlus,
    ZMinus,
    ZPlus,
}

impl Face {
    pub const ALL: [Face; 6] = [
        Face::XMinus,
        Face::XPlus,
        Face::YMinus,
        Face::YPlus,
        Face::ZMinus,
        Face::ZPlus,
    ];

    pub fn new(axis: usize, plus: bool) -> Face {
        Face::ALL[2 * axis + plus as usize]
    }

    pub fn from_index(i: usize) -> Option<Face> {
        Face::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn axis(self) -> usize {
        self as usize / 2
    }

    pub fn is_plus(self) -> bool {
        self as usize % 2 == 1
    }

    pub fn opposite(self) -> Face {
        Face::new(self.axis(), !self.is_plus())
    }

    /// Signed unit normal pointing out of the block.
    pub fn normal(self) -> [f64; 3] {
        let mut n = [0.0; 3];
        n[self.axis()] = if self.is_plus() { 1.0 } else { -1.0 };
        n
    }
}

impl std::fmt::Display for Face {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = if self.is_plus() { '+' } else { '-' };
        write!(f, "{}{}", s, AXIS_NAMES[self.axis()])
    }
}

impl std::str::FromStr for Face {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        if bytes.len() != 2 {
            return Err(Error::Parse(format!("bad face '{s}'")));
        }
        let plus = match bytes[0] {
            b'+' => true,
            b'-' => false,
            _ => return Err(Error::Parse(format!("bad face '{s}'"))),
        };
        let axis = match bytes[1] {
            b'x' => 0,
            b'y' => 1,
            b'z' => 2,
            _ => return Err(Error::Parse(format!("bad face '{s}'"))),
        };
        Ok(Face::new(axis, plus))
    }
}
