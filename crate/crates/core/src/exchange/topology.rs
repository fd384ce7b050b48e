//! The neighbourhood registry: a purely geometric and topological view of
//! the forest, without any field data.

use std::collections::HashMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Face};
use crate::hiergrid::{Forest, GridId};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopoEntry {
    pub id: GridId,
    pub level: u32,
    pub bbox: Aabb,
    pub subdiv: [usize; 3],
    pub cells: [usize; 3],
    pub parent: Option<GridId>,
    pub children: Vec<GridId>,
    pub owner: usize,
    pub active: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologyIndex {
    version: u64,
    domain: Aabb,
    planar: bool,
    entries: Vec<TopoEntry>,
    /// Morton-sorted ids per level.
    levels: Vec<Vec<GridId>>,
    roots: Vec<GridId>,
    #[serde(skip)]
    neighbors: Vec<[Option<GridId>; 6]>,
    /// Position of each grid within its level's Morton order.
    #[serde(skip)]
    rank: Vec<usize>,
}

type CornerKey = (u32, [i64; 3]);

impl TopologyIndex {
    pub fn build(forest: &Forest) -> Self {
        let domain = forest.domain();
        let entries: Vec<TopoEntry> = forest
            .grids()
            .iter()
            .map(|g| TopoEntry {
                id: g.id,
                level: g.level,
                bbox: g.bbox,
                subdiv: g.subdiv,
                cells: g.cells,
                parent: g.parent,
                children: g.children.clone(),
                owner: g.owner,
                active: g.active,
            })
            .collect();
        let depth = forest.depth();
        let levels: Vec<Vec<GridId>> = (0..=depth).map(|l| forest.level_ids(l)).collect();
        let mut rank = vec![0; entries.len()];
        for ids in &levels {
            for (r, id) in ids.iter().enumerate() {
                rank[id.0 as usize] = r;
            }
        }

        let quant = |p: [f64; 3]| -> [i64; 3] {
            let e = domain.extent();
            let mut q = [0i64; 3];
            for a in 0..3 {
                q[a] = ((p[a] - domain.min[a]) / e[a] * (1u64 << 32) as f64).round() as i64;
            }
            q
        };
        let mut by_min: HashMap<CornerKey, GridId> = HashMap::with_capacity(entries.len());
        let mut by_max: HashMap<CornerKey, GridId> = HashMap::with_capacity(entries.len());
        for e in &entries {
            by_min.insert((e.level, quant(e.bbox.min)), e.id);
            by_max.insert((e.level, quant(e.bbox.max)), e.id);
        }
        let tol = forest.geometric_tol();
        let neighbors = entries
            .iter()
            .map(|e| {
                Face::ALL.map(|face| {
                    let a = face.axis();
                    let candidate = if face.is_plus() {
                        let mut c = e.bbox.min;
                        c[a] = e.bbox.max[a];
                        by_min.get(&(e.level, quant(c)))
                    } else {
                        let mut c = e.bbox.max;
                        c[a] = e.bbox.min[a];
                        by_max.get(&(e.level, quant(c)))
                    }?;
                    let other = &entries[candidate.0 as usize];
                    full_face_match(&e.bbox, &other.bbox, face, tol).then_some(other.id)
                })
            })
            .collect();

        TopologyIndex {
            version: forest.version(),
            domain,
            planar: forest.is_planar(),
            entries,
            levels,
            roots: forest.roots().to_vec(),
            neighbors,
            rank,
        }
    }

    /// Position of `id` within its level's Morton order.
    pub fn morton_rank(&self, id: GridId) -> Result<usize> {
        self.rank
            .get(id.0 as usize)
            .copied()
            .ok_or(Error::UnknownGrid(id))
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn domain(&self) -> Aabb {
        self.domain
    }

    pub fn is_planar(&self) -> bool {
        self.planar
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: GridId) -> Result<&TopoEntry> {
        self.entries
            .get(id.0 as usize)
            .ok_or(Error::UnknownGrid(id))
    }

    pub fn entries(&self) -> &[TopoEntry] {
        &self.entries
    }

    pub fn roots(&self) -> &[GridId] {
        &self.roots
    }

    /// Deepest level.
    pub fn depth(&self) -> u32 {
        self.levels.len().saturating_sub(1) as u32
    }

    /// Ids on `level` in Morton order.
    pub fn level(&self, level: u32) -> &[GridId] {
        self.levels
            .get(level as usize)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// The same-level grid sharing the full `face`, if any.
    pub fn find_neighbor(&self, id: GridId, face: Face) -> Result<Option<GridId>> {
        self.neighbors
            .get(id.0 as usize)
            .map(|n| n[face.index()])
            .ok_or(Error::UnknownGrid(id))
    }

    pub fn check_version(&self, forest: &Forest) -> Result<()> {
        if self.version != forest.version() {
            return Err(Error::StaleTopology {
                topo: self.version,
                forest: forest.version(),
            });
        }
        Ok(())
    }

    /// Debug dump: id, level, box, owner and links of every grid.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serialises")
    }
}

/// `b` lies across `face` of `a` and the two faces coincide exactly.
pub fn full_face_match(a: &Aabb, b: &Aabb, face: Face, tol: f64) -> bool {
    let ax = face.axis();
    let touching = if face.is_plus() {
        (a.max[ax] - b.min[ax]).abs() <= tol
    } else {
        (a.min[ax] - b.max[ax]).abs() <= tol
    };
    touching
        && (0..3)
            .filter(|&t| t != ax)
            .all(|t| (a.min[t] - b.min[t]).abs() <= tol && (a.max[t] - b.max[t]).abs() <= tol)
}
