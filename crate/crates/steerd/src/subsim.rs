//! Fine-scale re-computation of a region, driven one way by the coarse run:
//! after every coarse step the coarse velocity is interpolated onto the
//! sub-domain's interior faces and imposed there as a Dirichlet condition.

use slwn_core::geometry::{Aabb, Face};
use slwn_core::hiergrid::{Field, Forest, GridConfig, GridId, Layer};
use slwn_core::solver::{BoundaryKind, Simulation};
use slwn_core::window::{extract, select, CellStream, WindowQuery};

use crate::error::Result;
use crate::protocol::{Code, Rejection};

/// Largest sub-domain accepted, in cells.
pub const MAX_SUB_CELLS: usize = 1 << 22;
pub const MAX_SUB_DEPTH: u32 = 4;
/// Substeps per coarse step beyond which a coupling is refused.
pub const MAX_SUBSTEPS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubLayout {
    pub bbox: Aabb,
    pub cells: [usize; 3],
}

/// Where a sub-simulation over `region` at `depth` extra levels would sit.
/// Its cell width is that of the finest coarse leaf it overlaps, halved
/// `depth` times; the region must be aligned to that lattice.
pub fn layout(coarse: &Simulation, region: &Aabb, depth: u32) -> Result<SubLayout, Rejection> {
    let forest = coarse.forest();
    let domain = forest.domain();
    let tol = forest.geometric_tol();
    let bad = |m: String| Rejection::new(Code::InvalidParam, m);
    if depth > MAX_SUB_DEPTH {
        return Err(bad(format!("depth {depth} exceeds {MAX_SUB_DEPTH}")));
    }
    let mut bbox = *region;
    if forest.is_planar() {
        bbox.min[2] = domain.min[2];
        bbox.max[2] = domain.max[2];
    }
    let axes = forest.active_axes();
    for &a in axes {
        if bbox.min[a] < domain.min[a] - tol || bbox.max[a] > domain.max[a] + tol {
            return Err(Rejection::new(
                Code::InvalidTarget,
                "region leaves the domain",
            ));
        }
        if bbox.max[a] - bbox.min[a] <= tol {
            return Err(bad("region has zero extent".into()));
        }
    }
    let leaves = coarse.leaves_in(&bbox);
    if leaves.is_empty() {
        return Err(Rejection::new(
            Code::InvalidTarget,
            "no coarse cells under the region",
        ));
    }
    let mut h = [f64::INFINITY; 3];
    for id in leaves {
        let w = forest.grids()[id.0 as usize].cell_width();
        for a in 0..3 {
            h[a] = h[a].min(w[a]);
        }
    }
    let mut cells = [1usize; 3];
    for &a in axes {
        h[a] /= (1u64 << depth) as f64;
        let snap = |x: f64| {
            let s = (x - domain.min[a]) / h[a];
            let r = s.round();
            ((s - r).abs() <= 1e-6).then_some(domain.min[a] + r * h[a])
        };
        let (Some(lo), Some(hi)) = (snap(bbox.min[a]), snap(bbox.max[a])) else {
            return Err(bad(format!(
                "region is not aligned to cells of width {} along axis {a}",
                h[a]
            )));
        };
        bbox.min[a] = lo.max(domain.min[a]);
        bbox.max[a] = hi.min(domain.max[a]);
        cells[a] = ((bbox.max[a] - bbox.min[a]) / h[a]).round() as usize;
    }
    if !forest.is_planar() && cells[2] < 2 {
        return Err(bad("region is thinner than two cells in z".into()));
    }
    let total: usize = cells.iter().product();
    if total > MAX_SUB_CELLS {
        return Err(Rejection::new(
            Code::ResourceCap,
            format!("{total} cells exceed the cap of {MAX_SUB_CELLS}"),
        ));
    }
    Ok(SubLayout { bbox, cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledFace {
    pub face: Face,
    /// Ghost-face centres in the order of the face's ghost indices.
    pub points: Vec<[f64; 3]>,
    /// Face area per point.
    pub area: f64,
}

/// The points at which the coarse run feeds a sub-simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CouplingPlan {
    pub faces: Vec<CoupledFace>,
}

pub type FaceData = Vec<Vec<[f64; 3]>>;

impl CouplingPlan {
    /// Coarse velocity at every coupling point, face by face.
    pub fn sample(&self, coarse: &Forest) -> Result<FaceData> {
        self.faces
            .iter()
            .map(|f| f.points.iter().map(|&p| velocity_at(coarse, p)).collect())
            .collect()
    }
}

fn velocity_at(forest: &Forest, p: [f64; 3]) -> Result<[f64; 3]> {
    let mut v = [0.0; 3];
    for (c, field) in Field::VELOCITY.into_iter().enumerate() {
        v[c] = forest.sample(field, p).ok_or_else(|| {
            slwn_core::Error::InvalidGeometry(format!(
                "coupling point {p:?} lies outside the coarse domain"
            ))
        })?;
    }
    Ok(v)
}

/// What the coarse side hands over after one of its steps.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingInput {
    pub coarse_step: u64,
    pub coarse_time: f64,
    pub dt: f64,
    pub raw: FaceData,
    /// Current coarse conditions, used on faces shared with the coarse domain boundary.
    pub faces: [BoundaryKind; 6],
    pub nu: f64,
}

/// One coupling instant as seen by the sub-simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingRecord {
    pub coarse_step: u64,
    /// Interpolated coarse values.
    pub raw: FaceData,
    /// Values imposed after removing the net boundary flux.
    pub applied: FaceData,
    /// Normal velocity subtracted on every coupled face.
    pub correction: f64,
    pub substeps: usize,
}

#[derive(Debug, Clone)]
pub struct SubSimulation {
    pub id: u32,
    pub layout: SubLayout,
    sim: Simulation,
    plan: CouplingPlan,
    coarse_step: u64,
    coarse_time: f64,
    prev: Option<FaceData>,
}

const ROOT: GridId = GridId(0);

impl SubSimulation {
    /// Builds the sub-forest, initializes it from the coarse state and
    /// imposes the current coarse boundary values.
    pub fn spawn(id: u32, coarse: &Simulation, region: &Aabb, depth: u32) -> Result<Self> {
        let layout = layout(coarse, region, depth).map_err(crate::error::Error::Rejected)?;
        let cfg = GridConfig::new(layout.bbox, [1, 1, 1], layout.cells).with_max_depth(0);
        let mut forest = Forest::new(cfg)?;
        let cf = coarse.forest();
        let axes = cf.active_axes();
        let domain = cf.domain();
        let tol = cf.geometric_tol();

        let mut bc = coarse.bc.clone();
        bc.prescribed.clear();
        let mut plan = CouplingPlan::default();
        {
            let g = &forest.grids()[0];
            let h = g.cell_width();
            for face in Face::ALL {
                let a = face.axis();
                if !axes.contains(&a) {
                    continue;
                }
                let (pos, edge) = if face.is_plus() {
                    (layout.bbox.max[a], domain.max[a])
                } else {
                    (layout.bbox.min[a], domain.min[a])
                };
                if (pos - edge).abs() <= tol {
                    continue;
                }
                bc.faces[face.index()] = BoundaryKind::Prescribed;
                let points = g
                    .fields
                    .face_coords(face, Layer::Ghost)
                    .into_iter()
                    .map(|ijk| {
                        let mut p = g.cell_center(ijk);
                        p[a] = pos;
                        p
                    })
                    .collect();
                let area = (0..3).filter(|&b| b != a).map(|b| h[b]).product();
                plan.faces.push(CoupledFace { face, points, area });
            }
        }

        for g in forest.grids_mut() {
            for ijk in g.fields.interior_coords().collect::<Vec<_>>() {
                let p = g.cell_center(ijk);
                let i = g.fields.idx(ijk[0], ijk[1], ijk[2]);
                for field in [Field::U, Field::V, Field::W, Field::P] {
                    let v = cf.sample(field, p).unwrap_or(0.0);
                    g.fields.get_mut(field)[i] = v;
                }
            }
        }

        let mut sub = SubSimulation {
            id,
            layout,
            sim: Simulation::new(forest, coarse.params.clone(), bc)?,
            plan,
            coarse_step: coarse.steps(),
            coarse_time: coarse.time(),
            prev: None,
        };
        let raw = sub.plan.sample(cf)?;
        let (applied, _) = sub.balance(&raw);
        sub.impose(&applied);
        sub.sim.refresh_halos()?;
        sub.prev = Some(applied);
        Ok(sub)
    }

    pub fn plan(&self) -> &CouplingPlan {
        &self.plan
    }

    pub fn simulation(&self) -> &Simulation {
        &self.sim
    }

    pub fn coarse_step(&self) -> u64 {
        self.coarse_step
    }

    /// Removes the net outward flux through the boundary by shifting the
    /// normal velocity on the coupled faces. Needed for a solvable pressure
    /// problem whenever no face has a fixed pressure.
    pub fn balance(&self, raw: &FaceData) -> (FaceData, f64) {
        let mut applied = raw.clone();
        let bc = &self.sim.bc;
        let axes = self.sim.forest().active_axes();
        if self.plan.faces.is_empty()
            || Face::ALL
                .iter()
                .any(|&f| bc.get(f) == BoundaryKind::Outflow)
        {
            return (applied, 0.0);
        }
        let ext = self.layout.bbox.extent();
        let mut net = 0.0;
        let mut area = 0.0;
        for (cf, vals) in self.plan.faces.iter().zip(raw) {
            let (a, sign) = (cf.face.axis(), cf.face.normal()[cf.face.axis()]);
            net += vals.iter().map(|v| sign * v[a]).sum::<f64>() * cf.area;
            area += cf.area * vals.len() as f64;
        }
        for face in Face::ALL {
            let a = face.axis();
            if !axes.contains(&a) || self.plan.faces.iter().any(|c| c.face == face) {
                continue;
            }
            if let BoundaryKind::Inflow { velocity } = bc.get(face) {
                let fa: f64 = (0..3).filter(|&b| b != a).map(|b| ext[b]).product();
                net += face.normal()[a] * velocity[a] * fa;
            }
        }
        let c = net / area;
        for (cf, vals) in self.plan.faces.iter().zip(&mut applied) {
            let (a, sign) = (cf.face.axis(), cf.face.normal()[cf.face.axis()]);
            for v in vals {
                v[a] -= sign * c;
            }
        }
        (applied, c)
    }

    fn impose(&mut self, data: &FaceData) {
        for (cf, vals) in self.plan.faces.iter().zip(data) {
            self.sim.bc.prescribed.insert((ROOT, cf.face), vals.clone());
        }
    }

    /// Advances to the coarse instant in `input`, substepping when the fine
    /// grid needs a shorter step. Boundary values are interpolated linearly
    /// in time across the substeps and equal the new coarse values at the end.
    pub fn advance(&mut self, input: CouplingInput) -> Result<CouplingRecord> {
        for face in Face::ALL {
            if self.sim.bc.get(face) != BoundaryKind::Prescribed {
                self.sim.bc.faces[face.index()] = input.faces[face.index()];
            }
        }
        if self.sim.params.nu != input.nu {
            self.sim.set_viscosity(input.nu)?;
        }
        let (applied, correction) = self.balance(&input.raw);
        let prev = self.prev.take().unwrap_or_else(|| applied.clone());
        let ratio = input.dt / self.sim.stable_dt();
        let substeps = ((ratio - 1e-9).ceil().max(1.0)) as usize;
        if substeps > MAX_SUBSTEPS {
            return Err(slwn_core::Error::InvalidParam(format!(
                "coupling step needs {substeps} substeps"
            ))
            .into());
        }
        let h = input.dt / substeps as f64;
        for j in 1..=substeps {
            let t = j as f64 / substeps as f64;
            let data: FaceData = prev
                .iter()
                .zip(&applied)
                .map(|(p, c)| {
                    p.iter()
                        .zip(c)
                        .map(|(p, c)| std::array::from_fn(|k| (1.0 - t) * p[k] + t * c[k]))
                        .collect()
                })
                .collect();
            self.impose(&data);
            self.sim.step_with(h)?;
        }
        self.coarse_step = input.coarse_step;
        self.coarse_time = input.coarse_time;
        self.prev = Some(applied.clone());
        Ok(CouplingRecord {
            coarse_step: input.coarse_step,
            raw: input.raw,
            applied,
            correction,
            substeps,
        })
    }

    /// Couples directly to an in-process coarse simulation that has just
    /// completed a step of size `dt`.
    pub fn follow(&mut self, coarse: &Simulation, dt: f64) -> Result<CouplingRecord> {
        let raw = self.plan.sample(coarse.forest())?;
        self.advance(CouplingInput {
            coarse_step: coarse.steps(),
            coarse_time: coarse.time(),
            dt,
            raw,
            faces: coarse.bc.faces,
            nu: coarse.params.nu,
        })
    }

    /// A window query against the sub-forest; the header carries the coarse step.
    pub fn stream(&self, q: &WindowQuery) -> Result<CellStream> {
        let forest = self.sim.forest();
        let sel = select(&self.sim.topology(), q)?;
        let mut s = extract(forest, &sel, q.quantity)?;
        s.step = self.coarse_step;
        s.time = self.coarse_time;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use slwn_core::solver::{BoundarySpec, FluidParams};

    fn coarse(cells: usize) -> Simulation {
        let f = Forest::create_root(
            Aabb::new([0.0; 3], [1.0, 1.0, 0.1]),
            [1, 1, 1],
            [cells, cells, 1],
        )
        .unwrap();
        Simulation::new(f, FluidParams::default(), BoundarySpec::cavity(1.0)).unwrap()
    }

    fn quad(x0: f64, y0: f64, x1: f64, y1: f64) -> Aabb {
        Aabb::new([x0, y0, 0.0], [x1, y1, 0.1])
    }

    #[test]
    fn layout_snaps_and_counts() {
        let c = coarse(16);
        let l = layout(&c, &quad(0.0, 0.0, 0.5, 0.5), 1).unwrap();
        assert_eq!(l.cells, [16, 16, 1]);
        assert_eq!(l.bbox, quad(0.0, 0.0, 0.5, 0.5));
        let full = layout(&c, &quad(0.0, 0.0, 1.0, 1.0), 0).unwrap();
        assert_eq!(full.cells, [16, 16, 1]);
    }

    #[test]
    fn layout_rejections() {
        let c = coarse(16);
        assert_eq!(
            layout(&c, &quad(0.5, 0.5, 1.5, 1.0), 0).unwrap_err().code,
            Code::InvalidTarget
        );
        assert_eq!(
            layout(&c, &quad(0.0, 0.0, 0.51, 0.5), 0).unwrap_err().code,
            Code::InvalidParam
        );
        assert_eq!(
            layout(&c, &quad(0.0, 0.0, 0.5, 0.5), 9).unwrap_err().code,
            Code::InvalidParam
        );
        assert_eq!(
            layout(&c, &quad(0.0, 0.0, 1.0, 1.0), 4).map(|l| l.cells),
            Ok([256, 256, 1])
        );
    }

    #[test]
    fn corner_couples_on_interior_faces_only() {
        let c = coarse(16);
        let s = SubSimulation::spawn(1, &c, &quad(0.0, 0.0, 0.5, 0.5), 1).unwrap();
        let faces: Vec<Face> = s.plan().faces.iter().map(|f| f.face).collect();
        assert_eq!(faces, vec![Face::XPlus, Face::YPlus]);
        for f in &s.plan().faces {
            assert_eq!(f.points.len(), 16);
            assert!(f.points.iter().all(|p| p[f.face.axis()] == 0.5));
        }
        let full = SubSimulation::spawn(2, &c, &quad(0.0, 0.0, 1.0, 1.0), 0).unwrap();
        assert!(full.plan().faces.is_empty());
    }

    #[test]
    fn balance_removes_net_flux() {
        let c = coarse(8);
        let s = SubSimulation::spawn(1, &c, &quad(0.0, 0.0, 0.5, 0.5), 0).unwrap();
        let raw: FaceData = s
            .plan()
            .faces
            .iter()
            .map(|f| f.points.iter().map(|p| [p[1], p[0], 0.0]).collect())
            .collect();
        let (applied, corr) = s.balance(&raw);
        assert!(corr > 0.0);
        let mut net = 0.0;
        for (f, vals) in s.plan().faces.iter().zip(&applied) {
            let a = f.face.axis();
            net += vals.iter().map(|v| f.face.normal()[a] * v[a]).sum::<f64>() * f.area;
        }
        assert!(net.abs() < 1e-15, "{net}");
    }

    #[test]
    fn finer_sub_substeps() {
        let mut c = coarse(16);
        let mut s = SubSimulation::spawn(1, &c, &quad(0.0, 0.5, 0.5, 1.0), 1).unwrap();
        for _ in 0..3 {
            let dt = c.stable_dt();
            c.step_with(dt).unwrap();
            let rec = s.follow(&c, dt).unwrap();
            assert!(rec.substeps >= 1);
            assert_eq!(rec.coarse_step, c.steps());
        }
        assert!(s.simulation().max_abs(Field::U) > 0.0);
    }
}
