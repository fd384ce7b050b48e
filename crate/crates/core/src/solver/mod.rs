//! Fractional-step solver for incompressible flow on the leaf grids.
//!
//! A step computes an intermediate velocity without pressure (two-stage
//! explicit scheme), solves a pressure Poisson equation whose divergence
//! source is built from it, and subtracts the pressure gradient.
//!
//! The Poisson operator is the compact five/seven-point Laplacian rather
//! than the divergence of the cell-centred gradient. The difference is an
//! `h^2`-scaled fourth difference of pressure, which damps the odd-even
//! modes of the collocated arrangement; the matching divergence is the one
//! of face-interpolated fluxes (see [`face_divergence`]).

mod bc;
mod momentum;
mod params;
mod poisson;
mod uniform;

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

pub use bc::{apply_pressure_bc, apply_velocity_bc};
pub use momentum::{advance, momentum_rhs};
pub use params::{BoundaryKind, BoundarySpec, FluidParams};
pub use poisson::{leaf_mean, refresh_pressure, solve_pressure_poisson, PoissonReport};
pub use uniform::UniformPoisson;

use crate::error::{Error, Result};
use crate::exchange::{run_exchange_cycle, TopologyIndex};
use crate::geometry::{Aabb, Face};
use crate::hiergrid::{Field, Forest, GridId, GridNode};

/// Exchange plus boundary conditions for one velocity triple.
pub fn refresh_velocity(
    forest: &mut Forest,
    topo: &TopologyIndex,
    bc: &BoundarySpec,
    fields: [Field; 3],
) -> Result<()> {
    run_exchange_cycle(forest, topo, &fields)?;
    apply_velocity_bc(forest, bc, fields, None);
    Ok(())
}

fn leaves_mut(forest: &mut Forest) -> impl ParallelIterator<Item = &mut GridNode> {
    forest.grids_mut().par_iter_mut().filter(|g| g.active)
}

/// Two-stage (midpoint) explicit update into `Us, Vs, Ws`. Expects velocity
/// halos to be current.
pub fn compute_intermediate_velocity(
    forest: &mut Forest,
    topo: &TopologyIndex,
    bc: &BoundarySpec,
    params: &FluidParams,
    dt: f64,
) -> Result<()> {
    let axes = forest.active_axes();
    let nu = params.nu;
    leaves_mut(forest).for_each(|g| {
        let h = g.cell_width();
        advance(
            &mut g.fields,
            Field::VELOCITY,
            Field::VELOCITY,
            Field::INTERMEDIATE,
            0.5 * dt,
            h,
            nu,
            axes,
        );
    });
    refresh_velocity(forest, topo, bc, Field::INTERMEDIATE)?;
    leaves_mut(forest).for_each(|g| {
        let h = g.cell_width();
        advance(
            &mut g.fields,
            Field::INTERMEDIATE,
            Field::VELOCITY,
            Field::INTERMEDIATE,
            dt,
            h,
            nu,
            axes,
        );
    });
    refresh_velocity(forest, topo, bc, Field::INTERMEDIATE)
}

/// `Rhs = rho/dt * div(u*)` with central differences.
pub fn pressure_rhs(forest: &mut Forest, params: &FluidParams, dt: f64) {
    let axes = forest.active_axes();
    let scale = params.rho / dt;
    leaves_mut(forest).for_each(|g| {
        let h = g.cell_width();
        let fs = &mut g.fields;
        let idx: Vec<usize> = fs.interior_indices().collect();
        let vals: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let mut d = 0.0;
                for &a in axes {
                    let s = fs.stride(a);
                    let u = fs.get(Field::INTERMEDIATE[a]);
                    d += (u[i + s] - u[i - s]) / (2.0 * h[a]);
                }
                scale * d
            })
            .collect();
        let r = fs.get_mut(Field::Rhs);
        for (&i, v) in idx.iter().zip(vals) {
            r[i] = v;
        }
    });
}

/// `u = u* - dt/rho grad p` with the central gradient; solid cells stay at rest.
/// Expects pressure halos to be current.
pub fn correct_velocity(forest: &mut Forest, params: &FluidParams, dt: f64) {
    let axes = forest.active_axes();
    let scale = dt / params.rho;
    leaves_mut(forest).for_each(|g| {
        let h = g.cell_width();
        let fs = &mut g.fields;
        let idx: Vec<usize> = fs.interior_indices().collect();
        for &a in axes {
            let s = fs.stride(a);
            let vals: Vec<f64> = idx
                .iter()
                .map(|&i| {
                    if fs.solid()[i] {
                        return 0.0;
                    }
                    let p = fs.get(Field::P);
                    fs.get(Field::INTERMEDIATE[a])[i] - scale * (p[i + s] - p[i - s]) / (2.0 * h[a])
                })
                .collect();
            let u = fs.get_mut(Field::VELOCITY[a]);
            for (&i, v) in idx.iter().zip(vals) {
                u[i] = v;
            }
        }
    });
}

/// Max over leaf cells of the divergence of face fluxes
/// `(u*_L + u*_R)/2 - dt/rho (p_R - p_L)/h`, the discrete divergence the
/// pressure solve drives to zero. Expects `Us` and `P` halos to be current.
pub fn face_divergence(forest: &Forest, params: &FluidParams, dt: f64) -> f64 {
    let axes = forest.active_axes();
    let scale = dt / params.rho;
    forest
        .grids()
        .par_iter()
        .filter(|g| g.active)
        .map(|g| {
            let h = g.cell_width();
            let fs = &g.fields;
            let p = fs.get(Field::P);
            let mut m = 0.0f64;
            for i in fs.interior_indices() {
                let mut d = 0.0;
                for &a in axes {
                    let s = fs.stride(a);
                    let u = fs.get(Field::INTERMEDIATE[a]);
                    let fp = 0.5 * (u[i] + u[i + s]) - scale * (p[i + s] - p[i]) / h[a];
                    let fm = 0.5 * (u[i - s] + u[i]) - scale * (p[i] - p[i - s]) / h[a];
                    d += (fp - fm) / h[a];
                }
                m = m.max(d.abs());
            }
            m
        })
        .reduce(|| 0.0, f64::max)
}

/// Largest stable step: `cfl * min(h/|u|, h^2/(4 nu))` over the leaves,
/// capped by `params.dt`.
pub fn stable_dt(forest: &Forest, params: &FluidParams) -> f64 {
    if !params.adaptive {
        return params.dt;
    }
    let axes = forest.active_axes();
    let limit = forest
        .grids()
        .par_iter()
        .filter(|g| g.active)
        .map(|g| {
            let w = g.cell_width();
            let h = axes.iter().map(|&a| w[a]).fold(f64::INFINITY, f64::min);
            let mut umax = 0.0f64;
            for i in g.fields.interior_indices() {
                for &a in axes {
                    umax = umax.max(g.fields.get(Field::VELOCITY[a])[i].abs());
                }
            }
            let adv = if umax > 0.0 { h / umax } else { f64::INFINITY };
            let diff = if params.nu > 0.0 {
                h * h / (4.0 * params.nu)
            } else {
                f64::INFINITY
            };
            adv.min(diff)
        })
        .reduce(|| f64::INFINITY, f64::min);
    (params.cfl * limit).min(params.dt)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: u64,
    pub t: f64,
    pub dt: f64,
    pub max_div: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Advances the forest by one step of size `dt`.
pub fn step(
    forest: &mut Forest,
    topo: &TopologyIndex,
    params: &FluidParams,
    bc: &BoundarySpec,
    dt: f64,
) -> Result<(PoissonReport, f64)> {
    refresh_velocity(forest, topo, bc, Field::VELOCITY)?;
    compute_intermediate_velocity(forest, topo, bc, params, dt)?;
    pressure_rhs(forest, params, dt);
    let report = solve_pressure_poisson(forest, topo, bc, params)?;
    refresh_pressure(forest, topo, bc)?;
    correct_velocity(forest, params, dt);
    let div = face_divergence(forest, params, dt);
    refresh_velocity(forest, topo, bc, Field::VELOCITY)?;
    check_finite(forest)?;
    Ok((report, div))
}

fn check_finite(forest: &Forest) -> Result<()> {
    for g in forest.leaves() {
        if let Some(f) = crate::exchange::check_finite(&g.fields, &Field::FLOW) {
            return Err(Error::NonFinite {
                grid: g.id,
                field: f.name(),
            });
        }
    }
    Ok(())
}

/// A forest with its topology snapshot, parameters, boundaries and clock.
#[derive(Debug, Clone)]
pub struct Simulation {
    forest: Forest,
    topo: Arc<TopologyIndex>,
    pub params: FluidParams,
    pub bc: BoundarySpec,
    time: f64,
    steps: u64,
    metrics: Vec<StepMetrics>,
}

impl Simulation {
    pub fn new(forest: Forest, params: FluidParams, bc: BoundarySpec) -> Result<Self> {
        params.validate()?;
        bc.validate()?;
        let topo = Arc::new(TopologyIndex::build(&forest));
        let mut sim = Self {
            forest,
            topo,
            params,
            bc,
            time: 0.0,
            steps: 0,
            metrics: Vec::new(),
        };
        sim.refresh_halos()?;
        Ok(sim)
    }

    pub fn forest(&self) -> &Forest {
        &self.forest
    }

    /// Direct field access; structural changes must go through [`Simulation::refine`].
    pub fn forest_mut(&mut self) -> &mut Forest {
        &mut self.forest
    }

    pub fn topology(&self) -> Arc<TopologyIndex> {
        Arc::clone(&self.topo)
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn metrics(&self) -> &[StepMetrics] {
        &self.metrics
    }

    /// Rebuilds halos of the flow fields from the current data.
    pub fn refresh_halos(&mut self) -> Result<()> {
        refresh_velocity(&mut self.forest, &self.topo, &self.bc, Field::VELOCITY)?;
        refresh_pressure(&mut self.forest, &self.topo, &self.bc)
    }

    pub fn refine(&mut self, id: GridId) -> Result<Vec<GridId>> {
        let kids = self.forest.refine_default(id)?;
        self.topo = Arc::new(TopologyIndex::build(&self.forest));
        self.refresh_halos()?;
        Ok(kids)
    }

    /// Refines every leaf intersecting `region` with positive measure.
    /// Fails without changes if any such leaf is at maximum depth.
    pub fn refine_region(&mut self, region: &Aabb) -> Result<Vec<GridId>> {
        let targets = self.leaves_in(region);
        let max = self.forest.config().max_depth;
        if let Some(g) = targets
            .iter()
            .map(|&id| &self.forest.grids()[id.0 as usize])
            .find(|g| g.level >= max)
        {
            return Err(Error::MaxDepth {
                id: g.id,
                max_depth: max,
            });
        }
        let mut out = Vec::new();
        for id in targets {
            out.extend(self.forest.refine_default(id)?);
        }
        self.topo = Arc::new(TopologyIndex::build(&self.forest));
        self.refresh_halos()?;
        Ok(out)
    }

    pub fn leaves_in(&self, region: &Aabb) -> Vec<GridId> {
        let axes = self.forest.active_axes();
        self.forest
            .leaves()
            .filter(|g| {
                g.bbox
                    .intersection(region)
                    .is_some_and(|i| i.measure(axes) > 0.0)
            })
            .map(|g| g.id)
            .collect()
    }

    pub fn set_boundary(&mut self, face: Face, kind: BoundaryKind) -> Result<()> {
        self.bc.set(face, kind)
    }

    pub fn set_viscosity(&mut self, nu: f64) -> Result<()> {
        let mut p = self.params.clone();
        p.nu = nu;
        p.validate()?;
        self.params = p;
        Ok(())
    }

    /// Marks cells as solid or fluid; solid cells are held at rest.
    pub fn set_solid(&mut self, region: &Aabb, solid: bool) -> usize {
        let n = self.forest.set_solid(region, solid);
        if solid {
            for g in self.forest.grids_mut() {
                let idx: Vec<usize> = g.fields.interior_indices().collect();
                for i in idx {
                    if g.fields.solid()[i] {
                        for f in Field::VELOCITY {
                            g.fields.get_mut(f)[i] = 0.0;
                        }
                    }
                }
            }
        }
        n
    }

    pub fn stable_dt(&self) -> f64 {
        stable_dt(&self.forest, &self.params)
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        let dt = self.stable_dt();
        self.step_with(dt)
    }

    pub fn step_with(&mut self, dt: f64) -> Result<StepMetrics> {
        let (report, max_div) = step(&mut self.forest, &self.topo, &self.params, &self.bc, dt)?;
        self.time += dt;
        self.steps += 1;
        let m = StepMetrics {
            step: self.steps,
            t: self.time,
            dt,
            max_div,
            iterations: report.iterations,
            residual: report.residual,
        };
        self.metrics.push(m);
        Ok(m)
    }

    pub fn run(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        for m in &self.metrics {
            w.serialize(m).map_err(|e| Error::Parse(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Largest absolute value of a field over the leaves.
    pub fn max_abs(&self, field: Field) -> f64 {
        self.forest
            .leaves()
            .flat_map(|g| {
                g.fields
                    .interior_indices()
                    .map(move |i| g.fields.get(field)[i].abs())
            })
            .fold(0.0, f64::max)
    }
}
