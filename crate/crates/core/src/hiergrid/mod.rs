//! Hierarchical, non-overlapping block-structured Cartesian grids.
//!
//! Every block carries the same number of cells on every level; refining a
//! block splits its box into `n_x * n_y * n_z` children. Refined blocks keep
//! their arrays but drop out of the computation (`active == false`); their
//! cells are refreshed with averaged child data by the exchange cycle.

mod config;
mod distribute;
mod fields;
pub mod morton;
mod vtk;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use config::{GridConfig, DEFAULT_MAX_DEPTH};
pub use distribute::{distribute, greedy_partition};
pub use fields::{Field, FieldSet, Layer, HALO};
pub use morton::MortonKey;
pub use vtk::write_structured_points;

use crate::error::{Error, Result};
use crate::geometry::{Aabb, Face, AXIS_NAMES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridId(pub u64);

impl std::fmt::Display for GridId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// How a ghost face received its values in the last exchange cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HaloState {
    Unfilled,
    /// On the domain boundary; values come from the boundary conditions.
    Physical,
    SameLevel,
    Parent,
}

#[derive(Debug, Clone)]
pub struct GridNode {
    pub id: GridId,
    pub level: u32,
    pub bbox: Aabb,
    /// Split factors used (or to be used) when this block is refined.
    pub subdiv: [usize; 3],
    pub cells: [usize; 3],
    pub fields: FieldSet,
    pub parent: Option<GridId>,
    pub children: Vec<GridId>,
    pub active: bool,
    pub owner: usize,
    /// Child-index path from the level-0 tiling down to this block.
    pub path: Vec<[u32; 3]>,
    pub halo: [HaloState; 6],
}

impl GridNode {
    pub fn cell_width(&self) -> [f64; 3] {
        let e = self.bbox.extent();
        [
            e[0] / self.cells[0] as f64,
            e[1] / self.cells[1] as f64,
            e[2] / self.cells[2] as f64,
        ]
    }

    /// Centre of a cell given halo-inclusive indices (ghosts included).
    pub fn cell_center(&self, ijk: [usize; 3]) -> [f64; 3] {
        let h = self.cell_width();
        let mut c = [0.0; 3];
        for a in 0..3 {
            c[a] = self.bbox.min[a] + (ijk[a] as f64 - 0.5) * h[a];
        }
        c
    }

    pub fn cell_box(&self, ijk: [usize; 3]) -> Aabb {
        let h = self.cell_width();
        let mut b = Aabb::new([0.0; 3], [0.0; 3]);
        for a in 0..3 {
            b.min[a] = self.bbox.min[a] + (ijk[a] as f64 - 1.0) * h[a];
            b.max[a] = b.min[a] + h[a];
        }
        b
    }

    pub fn cell_volume(&self) -> f64 {
        let h = self.cell_width();
        h[0] * h[1] * h[2]
    }

    pub fn interior_cell_count(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Halo-inclusive index of the cell containing `p` along each axis, clamped to the halo.
    pub fn locate(&self, p: [f64; 3]) -> [usize; 3] {
        let h = self.cell_width();
        let mut out = [0usize; 3];
        for a in 0..3 {
            let s = ((p[a] - self.bbox.min[a]) / h[a]).floor();
            let i = s.clamp(-1.0, self.cells[a] as f64) as isize + 1;
            out[a] = i as usize;
        }
        out
    }

    /// Value of `field` at halo-inclusive indices; edge and corner ghosts,
    /// which no exchange fills, are extrapolated from the adjacent face ghosts.
    pub fn value_at(&self, field: Field, ijk: [usize; 3]) -> f64 {
        let mut out_axes = [0usize; 3];
        let mut n_out = 0;
        for a in 0..3 {
            if ijk[a] == 0 || ijk[a] == self.cells[a] + 1 {
                out_axes[n_out] = a;
                n_out += 1;
            }
        }
        if n_out <= 1 {
            return self.fields.get(field)[self.fields.idx(ijk[0], ijk[1], ijk[2])];
        }
        let (a, b) = (out_axes[0], out_axes[1]);
        let inward = |mut v: [usize; 3], ax: usize| {
            v[ax] = if v[ax] == 0 { 1 } else { self.cells[ax] };
            v
        };
        self.value_at(field, inward(ijk, a)) + self.value_at(field, inward(ijk, b))
            - self.value_at(field, inward(inward(ijk, a), b))
    }

    /// Multilinear interpolation of a cell-centred field at `p`, using the halo.
    pub fn interpolate(&self, field: Field, p: [f64; 3], axes: &[usize]) -> f64 {
        let h = self.cell_width();
        let mut base = [1usize; 3];
        let mut t = [0.0f64; 3];
        for &a in axes {
            let s = (p[a] - self.bbox.min[a]) / h[a] - 0.5;
            let i0 = s.floor().clamp(-1.0, self.cells[a] as f64 - 1.0);
            t[a] = (s - i0).clamp(0.0, 1.0);
            base[a] = (i0 + 1.0) as usize;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << axes.len()) {
            let mut ijk = base;
            let mut w = 1.0;
            for (bit, &a) in axes.iter().enumerate() {
                if corner >> bit & 1 == 1 {
                    ijk[a] += 1;
                    w *= t[a];
                } else {
                    w *= 1.0 - t[a];
                }
            }
            if w != 0.0 {
                acc += w * self.value_at(field, ijk);
            }
        }
        acc
    }
}

/// The whole grid hierarchy, indexed by id.
#[derive(Debug, Clone)]
pub struct Forest {
    config: GridConfig,
    grids: Vec<GridNode>,
    roots: Vec<GridId>,
    version: u64,
}

impl Forest {
    /// Builds the level-0 tiling of the domain and applies `initial_depth`.
    pub fn new(config: GridConfig) -> Result<Self> {
        config.validate()?;
        let mut forest = Forest {
            grids: Vec::new(),
            roots: Vec::new(),
            version: 0,
            config,
        };
        let tiles = forest.config.level0_subdiv;
        let subdiv = forest.config.subdiv_for_level(0);
        let mut indices = all_child_indices(tiles, forest.dims());
        indices.sort_by_key(|idx| morton::interleave(widen(*idx), forest.dims()));
        for idx in indices {
            let id = GridId(forest.grids.len() as u64);
            let bbox = forest.config.domain.split(tiles, idx);
            forest.grids.push(GridNode {
                id,
                level: 0,
                bbox,
                subdiv,
                cells: forest.config.cells,
                fields: FieldSet::new(forest.config.cells),
                parent: None,
                children: Vec::new(),
                active: true,
                owner: 0,
                path: vec![narrow(idx)],
                halo: [HaloState::Unfilled; 6],
            });
            forest.roots.push(id);
        }
        for _ in 0..forest.config.initial_depth {
            forest.refine_all_leaves()?;
        }
        Ok(forest)
    }

    pub fn create_root(domain: Aabb, level0_subdiv: [usize; 3], cells: [usize; 3]) -> Result<Self> {
        Forest::new(GridConfig::new(domain, level0_subdiv, cells))
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn domain(&self) -> Aabb {
        self.config.domain
    }

    pub fn is_planar(&self) -> bool {
        self.config.is_planar()
    }

    /// Number of interleaved axes in Morton keys.
    pub fn dims(&self) -> usize {
        if self.is_planar() {
            2
        } else {
            3
        }
    }

    /// Axes along which the solver discretises.
    pub fn active_axes(&self) -> &'static [usize] {
        if self.is_planar() {
            &[0, 1]
        } else {
            &[0, 1, 2]
        }
    }

    /// Bumped on every structural change.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.grids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grids.is_empty()
    }

    pub fn roots(&self) -> &[GridId] {
        &self.roots
    }

    pub fn grids(&self) -> &[GridNode] {
        &self.grids
    }

    pub fn grids_mut(&mut self) -> &mut [GridNode] {
        &mut self.grids
    }

    pub fn grid(&self, id: GridId) -> Result<&GridNode> {
        self.grids.get(id.0 as usize).ok_or(Error::UnknownGrid(id))
    }

    pub fn grid_mut(&mut self, id: GridId) -> Result<&mut GridNode> {
        self.grids
            .get_mut(id.0 as usize)
            .ok_or(Error::UnknownGrid(id))
    }

    pub fn leaves(&self) -> impl Iterator<Item = &GridNode> {
        self.grids.iter().filter(|g| g.active)
    }

    /// Deepest level present.
    pub fn depth(&self) -> u32 {
        self.grids.iter().map(|g| g.level).max().unwrap_or(0)
    }

    /// Split factors along the path of a grid, level 0 first.
    pub fn radix_of(&self, id: GridId) -> Result<Vec<[u32; 3]>> {
        let g = self.grid(id)?;
        let mut radix = Vec::with_capacity(g.path.len());
        radix.push(narrow(self.config.level0_subdiv));
        let mut chain = Vec::new();
        let mut cur = g.parent;
        while let Some(p) = cur {
            let pg = self.grid(p)?;
            chain.push(narrow(pg.subdiv));
            cur = pg.parent;
        }
        radix.extend(chain.into_iter().rev());
        Ok(radix)
    }

    pub fn morton_key(&self, id: GridId) -> Result<MortonKey> {
        let g = self.grid(id)?;
        morton::encode(&g.path, &self.radix_of(id)?, self.dims())
    }

    /// Space-filling-curve sort key valid across levels.
    pub fn sfc_digits(&self, id: GridId) -> Result<Vec<u64>> {
        let g = self.grid(id)?;
        morton::path_digits(&g.path, &self.radix_of(id)?, self.dims())
    }

    /// Ids of all grids on `level`, in Morton order.
    pub fn level_ids(&self, level: u32) -> Vec<GridId> {
        let mut ids: Vec<(Vec<u64>, GridId)> = self
            .grids
            .iter()
            .filter(|g| g.level == level)
            .map(|g| (self.sfc_digits(g.id).expect("consistent paths"), g.id))
            .collect();
        ids.sort();
        ids.into_iter().map(|(_, id)| id).collect()
    }

    /// Refines with the split factors configured for the grid's level.
    pub fn refine_default(&mut self, id: GridId) -> Result<Vec<GridId>> {
        let level = self.grid(id)?.level;
        let subdiv = self.config.subdiv_for_level(level);
        self.refine(id, subdiv)
    }

    /// Splits an active grid into `subdiv` children that inherit its cell
    /// counts; child cells are initialised by piecewise-constant injection.
    pub fn refine(&mut self, id: GridId, subdiv: [usize; 3]) -> Result<Vec<GridId>> {
        let parent = self.grid(id)?;
        if !parent.active || !parent.children.is_empty() {
            return Err(Error::AlreadyRefined(id));
        }
        if parent.level + 1 > self.config.max_depth {
            return Err(Error::MaxDepth {
                id,
                max_depth: self.config.max_depth,
            });
        }
        for a in 0..3 {
            if subdiv[a] == 0 {
                return Err(Error::InvalidConfig(format!(
                    "zero split factor on axis {}",
                    AXIS_NAMES[a]
                )));
            }
            if parent.cells[a] % subdiv[a] != 0 {
                return Err(Error::Divisibility {
                    axis: AXIS_NAMES[a],
                    cells: parent.cells[a],
                    subdiv: subdiv[a],
                });
            }
        }
        if self.is_planar() && subdiv[2] != 1 {
            return Err(Error::Divisibility {
                axis: "z",
                cells: 1,
                subdiv: subdiv[2],
            });
        }

        let level = parent.level + 1;
        let cells = parent.cells;
        let child_subdiv = self.config.subdiv_for_level(level);
        let mut indices = all_child_indices(subdiv, self.dims());
        indices.sort_by_key(|idx| morton::interleave(widen(*idx), self.dims()));

        let mut children = Vec::with_capacity(indices.len());
        let mut new_nodes = Vec::with_capacity(indices.len());
        for idx in indices {
            let cid = GridId((self.grids.len() + new_nodes.len()) as u64);
            let mut path = parent.path.clone();
            path.push(narrow(idx));
            let mut fields = FieldSet::new(cells);
            inject_from_parent(&parent.fields, &mut fields, subdiv, idx);
            new_nodes.push(GridNode {
                id: cid,
                level,
                bbox: parent.bbox.split(subdiv, idx),
                subdiv: child_subdiv,
                cells,
                fields,
                parent: Some(id),
                children: Vec::new(),
                active: true,
                owner: parent.owner,
                path,
                halo: [HaloState::Unfilled; 6],
            });
            children.push(cid);
        }
        self.grids.extend(new_nodes);
        let p = &mut self.grids[id.0 as usize];
        p.subdiv = subdiv;
        p.children = children.clone();
        p.active = false;
        self.version += 1;
        Ok(children)
    }

    /// Refines every currently active grid once with the configured factors.
    pub fn refine_all_leaves(&mut self) -> Result<()> {
        let leaves: Vec<GridId> = self.leaves().map(|g| g.id).collect();
        for id in leaves {
            self.refine_default(id)?;
        }
        Ok(())
    }

    /// The active grid whose box contains `p`, descending from the roots.
    pub fn find_leaf(&self, p: [f64; 3]) -> Option<GridId> {
        let mut cur = self
            .roots
            .iter()
            .copied()
            .find(|r| self.grids[r.0 as usize].bbox.contains_point(p))?;
        loop {
            let g = &self.grids[cur.0 as usize];
            if g.children.is_empty() {
                return Some(cur);
            }
            cur = g
                .children
                .iter()
                .copied()
                .find(|c| self.grids[c.0 as usize].bbox.contains_point(p))?;
        }
    }

    /// Multilinear sample of a field at `p` on the finest grid covering it.
    pub fn sample(&self, field: Field, p: [f64; 3]) -> Option<f64> {
        let leaf = self.find_leaf(p)?;
        Some(self.grids[leaf.0 as usize].interpolate(field, p, self.active_axes()))
    }

    /// Tolerance for geometric comparisons.
    pub fn geometric_tol(&self) -> f64 {
        let e = self.config.domain.extent();
        1e-12 * e[0].max(e[1]).max(e[2])
    }

    /// True if `face` of the grid lies on the domain boundary.
    pub fn on_domain_boundary(&self, g: &GridNode, face: Face) -> bool {
        let a = face.axis();
        let tol = self.geometric_tol();
        if face.is_plus() {
            (g.bbox.max[a] - self.config.domain.max[a]).abs() <= tol
        } else {
            (g.bbox.min[a] - self.config.domain.min[a]).abs() <= tol
        }
    }

    /// Assigns owners by splitting all grids along the curve.
    pub fn assign_owners(&mut self, workers: usize) {
        let ids: Vec<GridId> = self.grids.iter().map(|g| g.id).collect();
        let assignment = distribute(self, &ids, workers);
        for (id, rank) in assignment {
            self.grids[id.0 as usize].owner = rank;
        }
    }

    /// Ids grouped by owning worker.
    pub fn by_owner(&self) -> BTreeMap<usize, Vec<GridId>> {
        let mut out: BTreeMap<usize, Vec<GridId>> = BTreeMap::new();
        for g in &self.grids {
            out.entry(g.owner).or_default().push(g.id);
        }
        out
    }

    /// Total of all active cells.
    pub fn active_cells(&self) -> usize {
        self.leaves().map(|g| g.interior_cell_count()).sum()
    }

    /// Marks leaf cells whose centres lie in `region` as solid (or fluid).
    pub fn set_solid(&mut self, region: &Aabb, solid: bool) -> usize {
        let mut count = 0;
        for g in self.grids.iter_mut() {
            let coords: Vec<[usize; 3]> = g.fields.interior_coords().collect();
            for ijk in coords {
                if region.contains_point(g.cell_center(ijk)) {
                    let i = g.fields.idx(ijk[0], ijk[1], ijk[2]);
                    g.fields.solid_mut()[i] = solid;
                    if g.active {
                        count += 1;
                    }
                }
            }
        }
        count
    }
}

fn widen(idx: [usize; 3]) -> [u64; 3] {
    [idx[0] as u64, idx[1] as u64, idx[2] as u64]
}

fn narrow(idx: [usize; 3]) -> [u32; 3] {
    [idx[0] as u32, idx[1] as u32, idx[2] as u32]
}

fn all_child_indices(n: [usize; 3], _dims: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(n[0] * n[1] * n[2]);
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                out.push([i, j, k]);
            }
        }
    }
    out
}

/// Piecewise-constant prolongation of every field (and the solid mask) into one child.
fn inject_from_parent(
    parent: &FieldSet,
    child: &mut FieldSet,
    subdiv: [usize; 3],
    idx: [usize; 3],
) {
    let cells = child.cells();
    let coords: Vec<[usize; 3]> = child.interior_coords().collect();
    let mut map = Vec::with_capacity(coords.len());
    for ijk in &coords {
        let mut p = [0usize; 3];
        for a in 0..3 {
            p[a] = 1 + idx[a] * (cells[a] / subdiv[a]) + (ijk[a] - 1) / subdiv[a];
        }
        map.push((
            child.idx(ijk[0], ijk[1], ijk[2]),
            parent.idx(p[0], p[1], p[2]),
        ));
    }
    for field in Field::ALL {
        let src = parent.get(field);
        let dst = child.get_mut(field);
        for &(c, p) in &map {
            dst[c] = src[p];
        }
    }
    let src = parent.solid().to_vec();
    let dst = child.solid_mut();
    for &(c, p) in &map {
        dst[c] = src[p];
    }
}
