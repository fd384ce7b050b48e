//! Pressure Poisson solve on the composite leaf grid.
//!
//! Each outer iteration refreshes the pressure halos with a full exchange
//! cycle, measures the composite residual on the leaves and applies one
//! multilevel V-cycle: damped Jacobi smoothing on every level of the forest,
//! finest first, with the level-0 tiling solved by uniform multigrid.
//! Corrections on faces without a same-level neighbour see zero on the way
//! down and the parent correction on the way up.

use log::warn;
use rayon::prelude::*;

use super::bc::{apply_pressure_bc, pressure_face};
use super::params::{BoundaryKind, BoundarySpec, FluidParams};
use super::uniform::UniformPoisson;
use crate::error::{Error, Result};
use crate::exchange::{run_exchange_cycle, LevelPlan, TopologyIndex};
use crate::geometry::Face;
use crate::hiergrid::{Field, FieldSet, Forest, GridNode};

const OMEGA: f64 = 0.8;
const PRE: usize = 2;
const POST: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonReport {
    /// Multilevel cycles performed.
    pub iterations: usize,
    /// Max composite residual on exit.
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy)]
enum CoarseGhost {
    Zero,
    Parent,
}

fn inv_h2(g: &GridNode) -> [f64; 3] {
    let h = g.cell_width();
    h.map(|x| 1.0 / (x * x))
}

/// Five/seven-point Laplacian of one grid with strides resolved up front.
#[derive(Clone, Copy)]
struct Stencil {
    off: [usize; 3],
    w: [f64; 3],
    count: usize,
    diag: f64,
}

impl Stencil {
    fn new(fs: &FieldSet, ih2: [f64; 3], axes: &[usize]) -> Self {
        let mut st = Stencil {
            off: [0; 3],
            w: [0.0; 3],
            count: axes.len(),
            diag: 0.0,
        };
        for (k, &a) in axes.iter().enumerate() {
            st.off[k] = fs.stride(a);
            st.w[k] = ih2[a];
            st.diag += 2.0 * ih2[a];
        }
        st
    }

    #[inline(always)]
    fn apply(&self, x: &[f64], i: usize) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.count {
            let s = self.off[k];
            acc += (x[i + s] - 2.0 * x[i] + x[i - s]) * self.w[k];
        }
        acc
    }
}

/// Volume-weighted mean of `field` over all leaf cells.
pub fn leaf_mean(forest: &Forest, field: Field) -> f64 {
    let (mut s, mut v) = (0.0, 0.0);
    for g in forest.leaves() {
        let vol = g.cell_volume();
        let d = g.fields.get(field);
        for i in g.fields.interior_indices() {
            s += d[i] * vol;
            v += vol;
        }
    }
    if v > 0.0 {
        s / v
    } else {
        0.0
    }
}

fn shift_leaves(forest: &mut Forest, field: Field, by: f64) {
    forest
        .grids_mut()
        .par_iter_mut()
        .filter(|g| g.active)
        .for_each(|g| {
            let t = g.fields.index_tables();
            let d = g.fields.get_mut(field);
            for &i in t.interior() {
                d[i] -= by;
            }
        });
}

/// Res = Rhs - L P on the leaves; returns the max norm.
fn composite_residual(forest: &mut Forest, axes: &[usize]) -> f64 {
    forest
        .grids_mut()
        .par_iter_mut()
        .filter(|g| g.active)
        .map(|g| {
            let st = Stencil::new(&g.fields, inv_h2(g), axes);
            let t = g.fields.index_tables();
            let (r, rhs, p) = g.fields.split3(Field::Res, Field::Rhs, Field::P);
            let mut m = 0.0f64;
            for &i in t.interior() {
                r[i] = rhs[i] - st.apply(p, i);
                m = m.max(r[i].abs());
            }
            m
        })
        .reduce(|| 0.0, f64::max)
}

/// Per-level halo plans plus a scratch buffer, built once per solve.
struct Ctx<'a> {
    plans: Vec<LevelPlan>,
    bc: &'a BoundarySpec,
    planar: bool,
    axes: &'a [usize],
    buf: Vec<f64>,
}

fn refresh(forest: &mut Forest, ctx: &mut Ctx, level: u32, field: Field, coarse: CoarseGhost) {
    let plan = &ctx.plans[level as usize];
    plan.exchange(forest, field, &mut ctx.buf);
    match coarse {
        CoarseGhost::Zero => plan.zero_coarse(forest, field),
        CoarseGhost::Parent => plan.fill_coarse(forest, field, &mut ctx.buf),
    }
    let grids = forest.grids_mut();
    for &(g, face) in &plan.boundary {
        pressure_face(&mut grids[g], field, face, ctx.bc, ctx.planar);
    }
}

fn smooth_level(
    forest: &mut Forest,
    ctx: &mut Ctx,
    level: u32,
    sweeps: usize,
    coarse: CoarseGhost,
) {
    let axes = ctx.axes;
    for _ in 0..sweeps {
        refresh(forest, ctx, level, Field::Corr, coarse);
        forest
            .grids_mut()
            .par_iter_mut()
            .filter(|g| g.level == level)
            .for_each(|g| {
                let st = Stencil::new(&g.fields, inv_h2(g), axes);
                let t = g.fields.index_tables();
                let (tmp, c, res) = g.fields.split3(Field::Tmp, Field::Corr, Field::Res);
                for &i in t.interior() {
                    tmp[i] = c[i] + OMEGA * (st.apply(c, i) - res[i]) / st.diag;
                }
                g.fields.copy_interior(Field::Corr, Field::Tmp);
            });
    }
}

/// Restricts the level's updated residual `Res - L Corr` into the refined
/// grids one level up, which take it as their right-hand side.
fn restrict_residual(
    forest: &mut Forest,
    topo: &TopologyIndex,
    ctx: &mut Ctx,
    level: u32,
) -> Result<()> {
    let axes = ctx.axes;
    refresh(forest, ctx, level, Field::Corr, CoarseGhost::Zero);
    forest
        .grids_mut()
        .par_iter_mut()
        .filter(|g| g.level == level)
        .for_each(|g| {
            let st = Stencil::new(&g.fields, inv_h2(g), axes);
            let t = g.fields.index_tables();
            let (tmp, res, c) = g.fields.split3(Field::Tmp, Field::Res, Field::Corr);
            for &i in t.interior() {
                tmp[i] = res[i] - st.apply(c, i);
            }
        });
    crate::exchange::restrict_level(forest, topo, level - 1, &[Field::Tmp])?;
    for &id in topo.level(level - 1) {
        let g = &mut forest.grids_mut()[id.0 as usize];
        if !g.active {
            g.fields.copy_field(Field::Res, Field::Tmp);
        }
    }
    Ok(())
}

fn dirichlet_faces(bc: &BoundarySpec, axes: &[usize]) -> [bool; 6] {
    Face::ALL.map(|f| axes.contains(&f.axis()) && bc.get(f) == BoundaryKind::Outflow)
}

/// Solves the level-0 correction equation on the assembled root tiling.
fn coarse_solve(forest: &mut Forest, topo: &TopologyIndex, bc: &BoundarySpec, axes: &[usize]) {
    let tiles = forest.config().level0_subdiv;
    let cells = forest.config().cells;
    let n: [usize; 3] = std::array::from_fn(|a| tiles[a] * cells[a]);
    let h = forest.grids()[topo.level(0)[0].0 as usize].cell_width();
    let up = UniformPoisson::new(n, h, axes, dirichlet_faces(bc, axes));
    let mut b = vec![0.0; up.len()];
    let mut x = vec![0.0; up.len()];
    let map = |g: &GridNode, ijk: [usize; 3]| -> [usize; 3] {
        let t = g.path[0];
        std::array::from_fn(|a| t[a] as usize * cells[a] + ijk[a])
    };
    for &id in topo.level(0) {
        let g = &forest.grids()[id.0 as usize];
        for ijk in g.fields.interior_coords() {
            b[up.idx(map(g, ijk))] = g.fields.get(Field::Res)[g.fields.idx(ijk[0], ijk[1], ijk[2])];
        }
    }
    if up.pure_neumann() {
        let cnt = (n[0] * n[1] * n[2]) as f64;
        let mut sum = 0.0;
        for &id in topo.level(0) {
            let g = &forest.grids()[id.0 as usize];
            for ijk in g.fields.interior_coords() {
                sum += b[up.idx(map(g, ijk))];
            }
        }
        let mean = sum / cnt;
        for &id in topo.level(0) {
            let g = &forest.grids()[id.0 as usize];
            for ijk in g.fields.interior_coords() {
                b[up.idx(map(g, ijk))] -= mean;
            }
        }
    }
    up.solve(&mut x, &b, 1e-4, 30);
    for &id in topo.level(0) {
        let g = &mut forest.grids_mut()[id.0 as usize];
        let coords: Vec<[usize; 3]> = g.fields.interior_coords().collect();
        for ijk in coords {
            let v = x[up.idx(map(g, ijk))];
            let i = g.fields.idx(ijk[0], ijk[1], ijk[2]);
            g.fields.get_mut(Field::Corr)[i] = v;
        }
    }
}

/// Per-axis parent coordinate and centre offset (in parent cell widths)
/// of each child cell along that axis.
fn axis_map(child: &GridNode, parent: &GridNode, axis: usize) -> Vec<(usize, f64)> {
    let digit = child.path.last().expect("non-empty path")[axis] as usize;
    let s = parent.subdiv[axis];
    (0..child.cells[axis])
        .map(|c| {
            let t = digit * child.cells[axis] + c;
            (t / s + 1, ((t % s) as f64 + 0.5) / s as f64 - 0.5)
        })
        .collect()
}

/// Adds the linear interpolant of the parent correction to every grid on `level`.
fn prolong_level(forest: &mut Forest, level: u32, axes: &[usize]) {
    let adds: Vec<(usize, Vec<f64>)> = {
        let grids = forest.grids();
        grids
            .par_iter()
            .filter(|g| g.level == level)
            .map(|g| {
                let p = &grids[g.parent.expect("non-root").0 as usize];
                let pc = p.fields.get(Field::Corr);
                let maps: [Vec<(usize, f64)>; 3] = std::array::from_fn(|a| axis_map(g, p, a));
                let ps: [usize; 3] = std::array::from_fn(|a| p.fields.stride(a));
                let mut v = Vec::with_capacity(g.fields.interior_len());
                for &(pk, ok) in &maps[2] {
                    for &(pj, oj) in &maps[1] {
                        for &(pi, oi) in &maps[0] {
                            let c = pi + pj * ps[1] + pk * ps[2];
                            let off = [oi, oj, ok];
                            let mut val = pc[c];
                            for &a in axes {
                                val += 0.5 * (pc[c + ps[a]] - pc[c - ps[a]]) * off[a];
                            }
                            v.push(val);
                        }
                    }
                }
                (g.id.0 as usize, v)
            })
            .collect()
    };
    let grids = forest.grids_mut();
    for (gid, v) in adds {
        let t = grids[gid].fields.index_tables();
        let c = grids[gid].fields.get_mut(Field::Corr);
        for (&i, val) in t.interior().iter().zip(v) {
            c[i] += val;
        }
    }
}

fn vcycle(forest: &mut Forest, topo: &TopologyIndex, ctx: &mut Ctx) -> Result<()> {
    forest
        .grids_mut()
        .par_iter_mut()
        .for_each(|g| g.fields.fill(Field::Corr, 0.0));
    let depth = topo.depth();
    for level in (1..=depth).rev() {
        smooth_level(forest, ctx, level, PRE, CoarseGhost::Zero);
        restrict_residual(forest, topo, ctx, level)?;
    }
    coarse_solve(forest, topo, ctx.bc, ctx.axes);
    refresh(forest, ctx, 0, Field::Corr, CoarseGhost::Parent);
    for level in 1..=depth {
        prolong_level(forest, level, ctx.axes);
        smooth_level(forest, ctx, level, POST, CoarseGhost::Parent);
        refresh(forest, ctx, level, Field::Corr, CoarseGhost::Parent);
    }
    forest
        .grids_mut()
        .par_iter_mut()
        .filter(|g| g.active)
        .for_each(|g| {
            let t = g.fields.index_tables();
            let (p, c) = g.fields.split_mut(Field::P, Field::Corr);
            for &i in t.interior() {
                p[i] += c[i];
            }
        });
    Ok(())
}

/// Fills pressure halos (exchange cycle plus boundary conditions).
pub fn refresh_pressure(
    forest: &mut Forest,
    topo: &TopologyIndex,
    bc: &BoundarySpec,
) -> Result<()> {
    run_exchange_cycle(forest, topo, &[Field::P])?;
    apply_pressure_bc(forest, bc, Field::P, None);
    Ok(())
}

/// Solves `lap p = Rhs` on the leaves, warm-started from the current `P`.
///
/// For pure Neumann problems the right-hand side is projected onto zero
/// mean and the pressure is shifted to zero mean after every cycle.
pub fn solve_pressure_poisson(
    forest: &mut Forest,
    topo: &TopologyIndex,
    bc: &BoundarySpec,
    params: &FluidParams,
) -> Result<PoissonReport> {
    topo.check_version(forest)?;
    let axes = forest.active_axes();
    let neumann = bc.pure_neumann(axes);
    for g in forest.leaves() {
        if g.fields.get(Field::Rhs).iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                grid: g.id,
                field: Field::Rhs.name(),
            });
        }
    }
    if neumann {
        let m = leaf_mean(forest, Field::Rhs);
        shift_leaves(forest, Field::Rhs, m);
    }
    let mut ctx = Ctx {
        plans: (0..=topo.depth())
            .map(|l| LevelPlan::build(forest, topo, l))
            .collect::<Result<_>>()?,
        bc,
        planar: forest.is_planar(),
        axes,
        buf: Vec::new(),
    };
    let mut iterations = 0;
    let residual = loop {
        refresh_pressure(forest, topo, bc)?;
        let r = composite_residual(forest, axes);
        if r <= params.poisson_tol || iterations >= params.poisson_max_iter || !r.is_finite() {
            break r;
        }
        vcycle(forest, topo, &mut ctx)?;
        if neumann {
            let m = leaf_mean(forest, Field::P);
            shift_leaves(forest, Field::P, m);
        }
        iterations += 1;
    };
    let converged = residual <= params.poisson_tol;
    if !converged {
        warn!(
            "pressure solve stopped after {iterations} cycles with residual {residual:.3e} (tol {:.1e})",
            params.poisson_tol
        );
    }
    Ok(PoissonReport {
        iterations,
        residual,
        converged,
    })
}
