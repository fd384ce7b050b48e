use slwn_core::geometry::{Aabb, Face};
use slwn_core::hiergrid::{Field, Forest, GridId};
use slwn_core::solver::{BoundarySpec, FluidParams, Simulation};
use slwn_core::window::{Quantity, WindowQuery};
use slwn_steerd::subsim::SubSimulation;

fn domain() -> Aabb {
    Aabb::new([0.0; 3], [1.0, 1.0, 0.1])
}

fn coarse(n: usize) -> Simulation {
    let f = Forest::create_root(domain(), [1, 1, 1], [n, n, 1]).unwrap();
    Simulation::new(f, FluidParams::default(), BoundarySpec::cavity(1.0)).unwrap()
}

/// Cell-centred values of the single root grid, halo included, as a
/// (n+2)x(n+2) lattice.
fn lattice(sim: &Simulation, field: Field) -> (Vec<f64>, usize, f64) {
    let g = &sim.forest().grids()[0];
    let n = g.cells[0];
    let mut out = vec![0.0; (n + 2) * (n + 2)];
    for j in 0..n + 2 {
        for i in 0..n + 2 {
            out[j * (n + 2) + i] = g.value_at(field, [i, j, 1]);
        }
    }
    (out, n, 1.0 / n as f64)
}

/// Bilinear interpolation on the lattice, written out independently.
fn bilinear(lat: &(Vec<f64>, usize, f64), x: f64, y: f64) -> f64 {
    let (v, n, h) = lat;
    let m = n + 2;
    // lattice index k sits at (k - 0.5) h
    let fx = x / h + 0.5;
    let fy = y / h + 0.5;
    let i = (fx.floor() as usize).min(m - 2);
    let j = (fy.floor() as usize).min(m - 2);
    let tx = fx - i as f64;
    let ty = fy - j as f64;
    let at = |i: usize, j: usize| v[j * m + i];
    (1.0 - ty) * ((1.0 - tx) * at(i, j) + tx * at(i + 1, j))
        + ty * ((1.0 - tx) * at(i, j + 1) + tx * at(i + 1, j + 1))
}

#[test]
fn full_domain_sub_tracks_the_coarse_run() {
    let mut c = coarse(32);
    let mut sub = SubSimulation::spawn(1, &c, &domain(), 0).unwrap();
    assert!(sub.plan().faces.is_empty());
    let tol = c.params.poisson_tol;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let m = c.step().unwrap();
        let rec = sub.follow(&c, m.dt).unwrap();
        assert_eq!(rec.substeps, 1);
        assert_eq!(rec.coarse_step, c.steps());
        let (a, b) = (
            &c.forest().grids()[0],
            &sub.simulation().forest().grids()[0],
        );
        for ijk in a.fields.interior_coords() {
            assert_eq!(a.cell_center(ijk), b.cell_center(ijk));
            for f in [Field::U, Field::V] {
                worst = worst.max((a.value_at(f, ijk) - b.value_at(f, ijk)).abs());
            }
        }
        assert!(worst <= 10.0 * tol, "step {}: {worst:e}", c.steps());
    }
    println!("full-domain sub vs coarse: {worst:.3e}");
    assert!(c.max_abs(Field::U) > 0.1);
    let s = sub
        .stream(&WindowQuery::new(domain(), 400, Quantity::Velocity))
        .unwrap();
    assert_eq!((s.step, s.time), (c.steps(), c.time()));
}

#[test]
fn corner_sub_boundary_is_the_coarse_interpolation() {
    let mut c = coarse(16);
    for _ in 0..5 {
        c.step().unwrap();
    }
    let region = Aabb::new([0.0, 0.0, 0.0], [0.5, 0.5, 0.1]);
    let mut sub = SubSimulation::spawn(7, &c, &region, 1).unwrap();
    let faces: Vec<Face> = sub.plan().faces.iter().map(|f| f.face).collect();
    assert_eq!(faces, [Face::XPlus, Face::YPlus]);
    let mut substeps = 0;
    for _ in 0..20 {
        let m = c.step().unwrap();
        let u = lattice(&c, Field::U);
        let v = lattice(&c, Field::V);
        let rec = sub.follow(&c, m.dt).unwrap();
        substeps = substeps.max(rec.substeps);
        let mut net = 0.0;
        for ((cf, raw), applied) in sub.plan().faces.iter().zip(&rec.raw).zip(&rec.applied) {
            let a = cf.face.axis();
            let sign = cf.face.normal()[a];
            assert_eq!(cf.points.len(), 16);
            for ((p, r), q) in cf.points.iter().zip(raw).zip(applied) {
                assert_eq!(p[a], 0.5);
                let want = [bilinear(&u, p[0], p[1]), bilinear(&v, p[0], p[1])];
                for k in 0..2 {
                    assert!((r[k] - want[k]).abs() <= 1e-14, "{p:?} {r:?} {want:?}");
                }
                assert_eq!(q[1 - a], r[1 - a]);
                assert!((q[a] - (r[a] - sign * rec.correction)).abs() <= 1e-15);
                net += sign * q[a] * cf.area;
            }
            // the last substep imposes exactly the balanced values
            assert_eq!(
                &sub.simulation().bc.prescribed[&(GridId(0), cf.face)],
                applied
            );
        }
        assert!(net.abs() <= 1e-15, "{net:e}");
    }
    assert!(substeps >= 1);
    assert!(sub.simulation().max_abs(Field::U) > 0.0);
    for f in [Field::U, Field::V, Field::P] {
        assert!(sub.simulation().max_abs(f).is_finite());
    }
}
