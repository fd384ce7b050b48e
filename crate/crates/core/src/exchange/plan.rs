use super::{coarse_faces, parent_cell, TopologyIndex};
use crate::error::Result;
use crate::geometry::Face;
use crate::hiergrid::{Field, Forest, Layer};

/// Precomputed ghost fills for the grids of one level, for loops that
/// refresh the same halos many times under a fixed topology.
#[derive(Debug, Clone, Default)]
pub struct LevelPlan {
    pub grids: Vec<usize>,
    /// (dst, ghost face of dst, src) for same-level neighbours.
    pub same: Vec<(usize, Face, usize)>,
    /// Coarse faces: (dst, parent, ghost index, parent index) per cell.
    pub coarse: Vec<(usize, usize, Vec<(usize, usize)>)>,
    /// Faces on the domain boundary.
    pub boundary: Vec<(usize, Face)>,
}

impl LevelPlan {
    pub fn build(forest: &Forest, topo: &TopologyIndex, level: u32) -> Result<Self> {
        topo.check_version(forest)?;
        let mut plan = LevelPlan::default();
        for &id in topo.level(level) {
            let gi = id.0 as usize;
            let g = &forest.grids()[gi];
            plan.grids.push(gi);
            for face in Face::ALL {
                if forest.on_domain_boundary(g, face) {
                    plan.boundary.push((gi, face));
                } else if let Some(nb) = topo.find_neighbor(id, face)? {
                    plan.same.push((gi, face, nb.0 as usize));
                }
            }
            if let Some(pid) = g.parent {
                let p = &forest.grids()[pid.0 as usize];
                for face in coarse_faces(forest, topo, id) {
                    let cells = g
                        .fields
                        .face_coords(face, Layer::Ghost)
                        .into_iter()
                        .map(|c| {
                            let pc = parent_cell(g, p, c);
                            (
                                g.fields.idx(c[0], c[1], c[2]),
                                p.fields.idx(pc[0], pc[1], pc[2]),
                            )
                        })
                        .collect();
                    plan.coarse.push((gi, pid.0 as usize, cells));
                }
            }
        }
        Ok(plan)
    }

    /// Copies same-level neighbour layers into the ghosts of `field`.
    pub fn exchange(&self, forest: &mut Forest, field: Field, buf: &mut Vec<f64>) {
        let grids = forest.grids_mut();
        for &(dst, face, src) in &self.same {
            buf.clear();
            grids[src]
                .fields
                .read_face(field, face.opposite(), Layer::Interior, buf);
            grids[dst].fields.write_face(field, face, Layer::Ghost, buf);
        }
    }

    /// Zeroes the coarse-face ghosts of `field`.
    pub fn zero_coarse(&self, forest: &mut Forest, field: Field) {
        let grids = forest.grids_mut();
        for (dst, _, cells) in &self.coarse {
            let d = grids[*dst].fields.get_mut(field);
            for &(gi, _) in cells {
                d[gi] = 0.0;
            }
        }
    }

    /// Injects the parent values of `field` into the coarse-face ghosts.
    pub fn fill_coarse(&self, forest: &mut Forest, field: Field, buf: &mut Vec<f64>) {
        let grids = forest.grids_mut();
        for (dst, parent, cells) in &self.coarse {
            buf.clear();
            let p = grids[*parent].fields.get(field);
            buf.extend(cells.iter().map(|&(_, pi)| p[pi]));
            let d = grids[*dst].fields.get_mut(field);
            for (&(gi, _), &v) in cells.iter().zip(buf.iter()) {
                d[gi] = v;
            }
        }
    }
}
