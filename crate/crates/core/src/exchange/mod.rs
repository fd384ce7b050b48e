//! Ghost-layer exchange between blocks.
//!
//! One cycle runs in three phases: parents receive the average of their
//! children (deepest level first), faces shared by two blocks of the same
//! level swap interior layers, and whatever is still unfilled and not on the
//! domain boundary is injected from the parent, root to leaf. Physical
//! boundary conditions are left to the solver.
//!
//! Transfers are expressed as [`HaloMsg`] values: each phase first builds all
//! of its messages from an immutable view (in parallel), then applies them.

mod plan;
mod topology;

use rayon::prelude::*;

pub use plan::LevelPlan;
pub use topology::{full_face_match, TopoEntry, TopologyIndex};

use crate::error::{Error, Result};
use crate::geometry::Face;
use crate::hiergrid::{Field, FieldSet, Forest, GridId, GridNode, HaloState, Layer};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    SameLevel,
    ParentToChild,
    ChildToParent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaloMsg {
    pub src: GridId,
    pub dst: GridId,
    /// Ghost face of `dst` being written; `None` for restriction into the
    /// parent block covered by `src`.
    pub face: Option<Face>,
    pub relation: Relation,
    pub fields: Vec<Field>,
    /// Field-major values in face (or block) order.
    pub payload: Vec<f64>,
}

impl HaloMsg {
    pub fn apply(&self, forest: &mut Forest) -> Result<()> {
        let digit = match self.face {
            None => Some(*forest.grid(self.src)?.path.last().expect("non-empty path")),
            Some(_) => None,
        };
        let dst = forest.grid_mut(self.dst)?;
        let per_field = match self.face {
            Some(face) => dst.fields.face_len(face),
            None => block_len(dst),
        };
        if self.payload.len() != per_field * self.fields.len() {
            return Err(Error::Shape(format!(
                "halo message {} -> {} carries {} values, expected {}",
                self.src,
                self.dst,
                self.payload.len(),
                per_field * self.fields.len()
            )));
        }
        for (f, chunk) in self
            .fields
            .iter()
            .zip(self.payload.chunks(per_field.max(1)))
        {
            match self.face {
                Some(face) => dst.fields.write_face(*f, face, Layer::Ghost, chunk),
                None => {
                    let idx = block_indices(dst, digit.expect("restriction digit"));
                    let d = dst.fields.get_mut(*f);
                    for (&i, &v) in idx.iter().zip(chunk) {
                        d[i] = v;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExchangeStats {
    pub restricted: usize,
    pub same_level: usize,
    pub from_parent: usize,
}

/// Number of parent cells covered by one child.
fn block_len(parent: &GridNode) -> usize {
    (0..3).map(|a| parent.cells[a] / parent.subdiv[a]).product()
}

/// Parent linear indices of the block covered by child `digit`, x fastest.
fn block_indices(parent: &GridNode, digit: [u32; 3]) -> Vec<usize> {
    let m: [usize; 3] = std::array::from_fn(|a| parent.cells[a] / parent.subdiv[a]);
    let off: [usize; 3] = std::array::from_fn(|a| 1 + digit[a] as usize * m[a]);
    let mut out = Vec::with_capacity(m[0] * m[1] * m[2]);
    for k in 0..m[2] {
        for j in 0..m[1] {
            for i in 0..m[0] {
                out.push(parent.fields.idx(off[0] + i, off[1] + j, off[2] + k));
            }
        }
    }
    out
}

fn restriction_msg(parent: &GridNode, child: &GridNode, fields: &[Field]) -> HaloMsg {
    let s = parent.subdiv;
    let m: [usize; 3] = std::array::from_fn(|a| parent.cells[a] / s[a]);
    let inv = 1.0 / (s[0] * s[1] * s[2]) as f64;
    let cf = &child.fields;
    let mut payload = Vec::with_capacity(fields.len() * m[0] * m[1] * m[2]);
    for &f in fields {
        let d = cf.get(f);
        for k in 0..m[2] {
            for j in 0..m[1] {
                for i in 0..m[0] {
                    // averaged as offsets from the first child so that
                    // constants restrict exactly
                    let first = d[cf.idx(1 + i * s[0], 1 + j * s[1], 1 + k * s[2])];
                    let mut acc = 0.0;
                    for dk in 0..s[2] {
                        for dj in 0..s[1] {
                            for di in 0..s[0] {
                                acc += d[cf.idx(
                                    1 + i * s[0] + di,
                                    1 + j * s[1] + dj,
                                    1 + k * s[2] + dk,
                                )] - first;
                            }
                        }
                    }
                    payload.push(first + acc * inv);
                }
            }
        }
    }
    HaloMsg {
        src: child.id,
        dst: parent.id,
        face: None,
        relation: Relation::ChildToParent,
        fields: fields.to_vec(),
        payload,
    }
}

fn same_level_msg(src: &GridNode, dst: GridId, face: Face, fields: &[Field]) -> HaloMsg {
    let mut payload = Vec::with_capacity(fields.len() * src.fields.face_len(face));
    for &f in fields {
        src.fields
            .read_face(f, face.opposite(), Layer::Interior, &mut payload);
    }
    HaloMsg {
        src: src.id,
        dst,
        face: Some(face),
        relation: Relation::SameLevel,
        fields: fields.to_vec(),
        payload,
    }
}

/// Parent halo-inclusive coordinates of the cell under a child's halo-inclusive cell.
pub fn parent_cell(child: &GridNode, parent: &GridNode, ijk: [usize; 3]) -> [usize; 3] {
    let digit = *child.path.last().expect("non-empty path");
    std::array::from_fn(|a| {
        let t = digit[a] as i64 * child.cells[a] as i64 + ijk[a] as i64 - 1;
        (t.div_euclid(parent.subdiv[a] as i64) + 1) as usize
    })
}

fn parent_fill_msg(parent: &GridNode, child: &GridNode, face: Face, fields: &[Field]) -> HaloMsg {
    let coords = child.fields.face_coords(face, Layer::Ghost);
    let pidx: Vec<usize> = coords
        .iter()
        .map(|&c| {
            let p = parent_cell(child, parent, c);
            parent.fields.idx(p[0], p[1], p[2])
        })
        .collect();
    let mut payload = Vec::with_capacity(fields.len() * pidx.len());
    for &f in fields {
        let d = parent.fields.get(f);
        payload.extend(pidx.iter().map(|&i| d[i]));
    }
    HaloMsg {
        src: parent.id,
        dst: child.id,
        face: Some(face),
        relation: Relation::ParentToChild,
        fields: fields.to_vec(),
        payload,
    }
}

fn apply_all(forest: &mut Forest, msgs: &[HaloMsg]) -> Result<()> {
    for m in msgs {
        m.apply(forest)?;
    }
    Ok(())
}

/// Marks domain-boundary faces physical and every other face unfilled.
pub fn reset_halo_states(forest: &mut Forest) {
    let states: Vec<[HaloState; 6]> = forest
        .grids()
        .iter()
        .map(|g| {
            Face::ALL.map(|f| {
                if forest.on_domain_boundary(g, f) {
                    HaloState::Physical
                } else {
                    HaloState::Unfilled
                }
            })
        })
        .collect();
    for (g, s) in forest.grids_mut().iter_mut().zip(states) {
        g.halo = s;
    }
}

/// Averages the children of every refined grid on `level` into it.
pub fn restrict_level(
    forest: &mut Forest,
    topo: &TopologyIndex,
    level: u32,
    fields: &[Field],
) -> Result<usize> {
    let msgs: Vec<HaloMsg> = {
        let grids = forest.grids();
        topo.level(level)
            .par_iter()
            .flat_map_iter(|&pid| {
                let p = &grids[pid.0 as usize];
                p.children
                    .iter()
                    .map(move |&c| restriction_msg(p, &grids[c.0 as usize], fields))
            })
            .collect()
    };
    apply_all(forest, &msgs)?;
    Ok(msgs.len())
}

/// Restriction over the whole hierarchy, deepest level first.
pub fn restrict_up(forest: &mut Forest, topo: &TopologyIndex, fields: &[Field]) -> Result<usize> {
    let mut n = 0;
    for level in (0..topo.depth()).rev() {
        n += restrict_level(forest, topo, level, fields)?;
    }
    Ok(n)
}

/// Copies interior layers across full shared faces of same-level grids,
/// on one level or on all of them. Returns the number of faces filled.
pub fn exchange_horizontal(
    forest: &mut Forest,
    topo: &TopologyIndex,
    fields: &[Field],
    level: Option<u32>,
) -> Result<usize> {
    let levels: Vec<u32> = match level {
        Some(l) => vec![l],
        None => (0..=topo.depth()).collect(),
    };
    let mut total = 0;
    for l in levels {
        let msgs: Vec<HaloMsg> = {
            let grids = forest.grids();
            topo.level(l)
                .par_iter()
                .flat_map_iter(|&id| {
                    Face::ALL.into_iter().filter_map(move |face| {
                        let nb = topo.find_neighbor(id, face).ok().flatten()?;
                        Some(same_level_msg(&grids[nb.0 as usize], id, face, fields))
                    })
                })
                .collect()
        };
        apply_all(forest, &msgs)?;
        for m in &msgs {
            forest.grid_mut(m.dst)?.halo[m.face.expect("face").index()] = HaloState::SameLevel;
        }
        total += msgs.len();
    }
    Ok(total)
}

/// Faces of a level-`level` grid that have neither a same-level neighbour
/// nor the domain boundary behind them.
pub fn coarse_faces(forest: &Forest, topo: &TopologyIndex, id: GridId) -> Vec<Face> {
    let g = &forest.grids()[id.0 as usize];
    Face::ALL
        .into_iter()
        .filter(|&f| {
            g.parent.is_some()
                && !forest.on_domain_boundary(g, f)
                && topo.find_neighbor(id, f).ok().flatten().is_none()
        })
        .collect()
}

/// Injects parent values into the unfilled faces of every grid, root to leaf.
pub fn fill_topdown(forest: &mut Forest, topo: &TopologyIndex, fields: &[Field]) -> Result<usize> {
    let mut total = 0;
    for level in 1..=topo.depth() {
        let msgs: Vec<HaloMsg> = {
            let grids = forest.grids();
            topo.level(level)
                .par_iter()
                .flat_map_iter(|&id| {
                    let g = &grids[id.0 as usize];
                    let p = &grids[g.parent.expect("non-root").0 as usize];
                    Face::ALL
                        .into_iter()
                        .filter(|f| g.halo[f.index()] == HaloState::Unfilled)
                        .map(move |f| parent_fill_msg(p, g, f, fields))
                })
                .collect()
        };
        apply_all(forest, &msgs)?;
        for m in &msgs {
            forest.grid_mut(m.dst)?.halo[m.face.expect("face").index()] = HaloState::Parent;
        }
        total += msgs.len();
    }
    Ok(total)
}

/// Parent injection on the coarse faces of one level, regardless of halo state.
pub fn fill_level_from_parent(
    forest: &mut Forest,
    topo: &TopologyIndex,
    level: u32,
    fields: &[Field],
) -> Result<usize> {
    if level == 0 {
        return Ok(0);
    }
    let msgs: Vec<HaloMsg> = {
        let grids = forest.grids();
        let f: &Forest = forest;
        topo.level(level)
            .par_iter()
            .flat_map_iter(|&id| {
                let g = &grids[id.0 as usize];
                let p = &grids[g.parent.expect("non-root").0 as usize];
                coarse_faces(f, topo, id)
                    .into_iter()
                    .map(move |face| parent_fill_msg(p, g, face, fields))
            })
            .collect()
    };
    apply_all(forest, &msgs)?;
    Ok(msgs.len())
}

/// Sets the ghosts on the coarse faces of one level to zero.
pub fn zero_coarse_faces(forest: &mut Forest, topo: &TopologyIndex, level: u32, fields: &[Field]) {
    for &id in topo.level(level) {
        let faces = coarse_faces(forest, topo, id);
        let g = &mut forest.grids_mut()[id.0 as usize];
        for face in faces {
            let zeros = vec![0.0; g.fields.face_len(face)];
            for &f in fields {
                g.fields.write_face(f, face, Layer::Ghost, &zeros);
            }
        }
    }
}

/// Restriction, same-level exchange and parent injection, in that order.
pub fn run_exchange_cycle(
    forest: &mut Forest,
    topo: &TopologyIndex,
    fields: &[Field],
) -> Result<ExchangeStats> {
    topo.check_version(forest)?;
    reset_halo_states(forest);
    let restricted = restrict_up(forest, topo, fields)?;
    let same_level = exchange_horizontal(forest, topo, fields, None)?;
    let from_parent = fill_topdown(forest, topo, fields)?;
    Ok(ExchangeStats {
        restricted,
        same_level,
        from_parent,
    })
}

/// Checks that every value (interior and face ghosts) of `fields` is finite.
pub fn check_finite(fs: &FieldSet, fields: &[Field]) -> Option<Field> {
    fields
        .iter()
        .copied()
        .find(|&f| fs.get(f).iter().any(|v| !v.is_finite()))
}
