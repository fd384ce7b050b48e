//! Physical boundary conditions, written into the ghost layer of faces on
//! the domain boundary.

use rayon::prelude::*;

use super::params::{BoundaryKind, BoundarySpec};
use crate::geometry::Face;
use crate::hiergrid::{Field, Forest, GridId, GridNode, Layer};

fn for_grids<F>(forest: &mut Forest, only: Option<&[GridId]>, f: F)
where
    F: Fn(&mut GridNode, [bool; 6]) + Sync,
{
    let flags =
        |forest: &Forest, g: &GridNode| Face::ALL.map(|fc| forest.on_domain_boundary(g, fc));
    match only {
        None => {
            let all: Vec<[bool; 6]> = forest.grids().iter().map(|g| flags(forest, g)).collect();
            forest
                .grids_mut()
                .par_iter_mut()
                .zip(all)
                .for_each(|(g, fl)| f(g, fl));
        }
        Some(ids) => {
            for &id in ids {
                let fl = flags(forest, &forest.grids()[id.0 as usize]);
                if fl.iter().any(|&b| b) {
                    f(&mut forest.grids_mut()[id.0 as usize], fl);
                }
            }
        }
    }
}

/// ghost = a * interior + b (per component b).
fn affine_face(g: &mut GridNode, field: Field, face: Face, a: f64, b: impl Fn(usize) -> f64) {
    let fs = &mut g.fields;
    let tables = fs.index_tables();
    let gi = tables.face(face, Layer::Ghost);
    let ii = tables.face(face, Layer::Interior);
    let d = fs.get_mut(field);
    for (k, (&dst, &src)) in gi.iter().zip(ii).enumerate() {
        d[dst] = a * d[src] + b(k);
    }
}

fn velocity_on_face(
    g: &mut GridNode,
    fields: [Field; 3],
    face: Face,
    bc: &BoundarySpec,
    planar: bool,
) {
    if planar && face.axis() == 2 {
        for f in fields {
            affine_face(g, f, face, 1.0, |_| 0.0);
        }
        return;
    }
    match bc.get(face) {
        BoundaryKind::NoSlip => {
            for f in fields {
                affine_face(g, f, face, -1.0, |_| 0.0);
            }
        }
        BoundaryKind::MovingWall { velocity } | BoundaryKind::Inflow { velocity } => {
            for (c, f) in fields.into_iter().enumerate() {
                let v = velocity[c];
                affine_face(g, f, face, -1.0, |_| 2.0 * v);
            }
        }
        BoundaryKind::Outflow => {
            for f in fields {
                affine_face(g, f, face, 1.0, |_| 0.0);
            }
        }
        BoundaryKind::Prescribed => {
            let data = bc.prescribed.get(&(g.id, face)).cloned();
            for (c, f) in fields.into_iter().enumerate() {
                match &data {
                    Some(d) => affine_face(g, f, face, -1.0, |k| 2.0 * d[k][c]),
                    None => affine_face(g, f, face, -1.0, |_| 0.0),
                }
            }
        }
    }
}

/// Velocity ghosts on every domain-boundary face (or only on `only`).
pub fn apply_velocity_bc(
    forest: &mut Forest,
    bc: &BoundarySpec,
    fields: [Field; 3],
    only: Option<&[GridId]>,
) {
    let planar = forest.is_planar();
    for_grids(forest, only, |g, flags| {
        for face in Face::ALL {
            if flags[face.index()] {
                velocity_on_face(g, fields, face, bc, planar);
            }
        }
    });
}

/// Homogeneous pressure condition on one boundary face: zero normal
/// gradient on walls and inflows, zero value on outflows. No stencil reads
/// the z ghosts of a planar domain, so those are left alone.
pub(crate) fn pressure_face(
    g: &mut GridNode,
    field: Field,
    face: Face,
    bc: &BoundarySpec,
    planar: bool,
) {
    if planar && face.axis() == 2 {
        return;
    }
    let a = if bc.get(face) == BoundaryKind::Outflow {
        -1.0
    } else {
        1.0
    };
    affine_face(g, field, face, a, |_| 0.0);
}

/// Pressure conditions on every domain-boundary face (or only on `only`).
pub fn apply_pressure_bc(
    forest: &mut Forest,
    bc: &BoundarySpec,
    field: Field,
    only: Option<&[GridId]>,
) {
    let planar = forest.is_planar();
    for_grids(forest, only, |g, flags| {
        for face in Face::ALL {
            if flags[face.index()] {
                pressure_face(g, field, face, bc, planar);
            }
        }
    });
}
