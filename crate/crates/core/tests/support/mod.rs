//! Random forests and independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slwn_core::geometry::Aabb;
use slwn_core::hiergrid::{Forest, GridConfig, GridId, GridNode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A forest with random domain, tiling, cell counts and per-level splits,
/// refined leaf by leaf with a random probability.
pub fn random_forest(rng: &mut ChaCha8Rng, max_depth: u32, three_d: bool) -> Forest {
    let min: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    let ext: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.5..2.0));
    let domain = Aabb::new(min, std::array::from_fn(|a| min[a] + ext[a]));
    let level0 = [
        rng.gen_range(1..=3),
        rng.gen_range(1..=3),
        if three_d { rng.gen_range(1..=2) } else { 1 },
    ];
    let cells = [
        2 * rng.gen_range(1..=3),
        2 * rng.gen_range(1..=3),
        if three_d { 2 } else { 1 },
    ];
    let splits: &[[usize; 3]] = if three_d {
        &[[2, 2, 2], [2, 2, 1], [1, 2, 2]]
    } else {
        &[[2, 2, 1], [2, 1, 1], [1, 2, 1]]
    };
    let mut cfg = GridConfig::new(domain, level0, cells).with_max_depth(max_depth);
    cfg.subdiv = (0..max_depth.max(1))
        .map(|_| splits[rng.gen_range(0..splits.len())])
        .collect();
    let mut f = Forest::new(cfg).unwrap();
    let p = rng.gen_range(0.2..0.7);
    for level in 0..max_depth {
        for id in f.level_ids(level) {
            if rng.gen_bool(p) {
                f.refine_default(id).unwrap();
            }
        }
    }
    f
}

/// A window that usually overlaps the domain, sometimes pokes out of it and
/// now and then misses it entirely.
pub fn random_window(rng: &mut ChaCha8Rng, domain: &Aabb) -> Aabb {
    let mut min = [0.0; 3];
    let mut max = [0.0; 3];
    for a in 0..3 {
        let (lo, hi) = (domain.min[a], domain.max[a]);
        let e = hi - lo;
        let x0 = rng.gen_range(lo - 0.3 * e..hi);
        let x1 = rng.gen_range(x0 + 0.05 * e..hi + 0.3 * e);
        min[a] = x0;
        max[a] = x1;
    }
    Aabb::new(min, max)
}

/// Z-order comparison of integer coordinates: the axis holding the most
/// significant differing bit decides, z over y over x on ties.
pub fn zcmp(a: [u64; 3], b: [u64; 3]) -> Ordering {
    fn less_msb(x: u64, y: u64) -> bool {
        x < y && x < (x ^ y)
    }
    let mut axis = 2;
    let mut best = 0;
    for d in [2, 1, 0] {
        let x = a[d] ^ b[d];
        if less_msb(best, x) {
            best = x;
            axis = d;
        }
    }
    a[axis].cmp(&b[axis])
}

/// Lexicographic over levels, Z-order within a level.
pub fn path_cmp(a: &[[u32; 3]], b: &[[u32; 3]]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        let o = zcmp(x.map(u64::from), y.map(u64::from));
        if o != Ordering::Equal {
            return o;
        }
    }
    a.len().cmp(&b.len())
}

fn overlap(a: &Aabb, b: &Aabb) -> f64 {
    (0..3)
        .map(|k| (a.max[k].min(b.max[k]) - a.min[k].max(b.min[k])).max(0.0))
        .product()
}

/// Cells of `g` meeting the window with positive volume, counted one by one.
pub fn brute_count(g: &GridNode, window: &Aabb) -> usize {
    let mut n = 0;
    // cell_box takes halo-inclusive indices
    for k in 1..=g.cells[2] {
        for j in 1..=g.cells[1] {
            for i in 1..=g.cells[0] {
                if overlap(&g.cell_box([i, j, k]), window) > 0.0 {
                    n += 1;
                }
            }
        }
    }
    n
}

/// Expected selection: grids in emission order with their cell counts.
#[derive(Debug, PartialEq, Eq)]
pub struct OracleSelection {
    pub blocks: Vec<(GridId, usize)>,
    pub cuts: usize,
}

/// Number of ways to cut the intersecting part of the forest, saturating.
pub fn cut_count(forest: &Forest, window: &Aabb) -> u128 {
    fn n(forest: &Forest, id: GridId, window: &Aabb) -> u128 {
        let kids: Vec<GridId> = live_children(forest, id, window);
        if kids.is_empty() {
            1
        } else {
            kids.iter()
                .fold(1u128, |acc, &k| acc.saturating_mul(n(forest, k, window)))
                .saturating_add(1)
        }
    }
    live_roots(forest, window)
        .iter()
        .fold(1u128, |acc, &r| acc.saturating_mul(n(forest, r, window)))
}

fn live_children(forest: &Forest, id: GridId, window: &Aabb) -> Vec<GridId> {
    let mut kids: Vec<GridId> = forest.grid(id).unwrap().children.clone();
    kids.retain(|&k| brute_count(forest.grid(k).unwrap(), window) > 0);
    kids.sort_by(|&a, &b| path_cmp(&forest.grid(a).unwrap().path, &forest.grid(b).unwrap().path));
    kids
}

fn live_roots(forest: &Forest, window: &Aabb) -> Vec<GridId> {
    let mut roots: Vec<GridId> = forest
        .roots()
        .iter()
        .copied()
        .filter(|&r| brute_count(forest.grid(r).unwrap(), window) > 0)
        .collect();
    roots.sort_by(|&a, &b| path_cmp(&forest.grid(a).unwrap().path, &forest.grid(b).unwrap().path));
    roots
}

/// Enumerates every cut of the intersecting grids, keeps those within the
/// budget and returns the one whose expansion vector, read in breadth-first
/// replacement order, is lexicographically largest. `None` when even the
/// roots exceed the budget.
pub fn selection_oracle(forest: &Forest, window: &Aabb, budget: usize) -> Option<OracleSelection> {
    let roots = live_roots(forest, window);
    // breadth-first order of every expandable grid
    let mut order: Vec<GridId> = Vec::new();
    let mut frontier = roots.clone();
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &g in &frontier {
            let kids = live_children(forest, g, window);
            if !kids.is_empty() {
                order.push(g);
            }
            next.extend(kids);
        }
        frontier = next;
    }
    let pos: BTreeMap<GridId, usize> = order.iter().enumerate().map(|(i, &g)| (g, i)).collect();

    fn cuts_of(forest: &Forest, id: GridId, window: &Aabb) -> Vec<BTreeSet<GridId>> {
        let kids = live_children(forest, id, window);
        let mut out = vec![BTreeSet::new()];
        if kids.is_empty() {
            return out;
        }
        let mut combos = vec![BTreeSet::from([id])];
        for k in kids {
            let sub = cuts_of(forest, k, window);
            combos = combos
                .iter()
                .flat_map(|c| {
                    sub.iter().map(move |s| {
                        let mut m = c.clone();
                        m.extend(s.iter().copied());
                        m
                    })
                })
                .collect();
        }
        out.extend(combos);
        out
    }
    let mut all = vec![BTreeSet::new()];
    for &r in &roots {
        let sub = cuts_of(forest, r, window);
        all = all
            .iter()
            .flat_map(|c| {
                sub.iter().map(move |s| {
                    let mut m: BTreeSet<GridId> = c.clone();
                    m.extend(s.iter().copied());
                    m
                })
            })
            .collect();
    }

    let emit = |expanded: &BTreeSet<GridId>| -> Vec<(GridId, usize)> {
        fn walk(
            forest: &Forest,
            id: GridId,
            window: &Aabb,
            expanded: &BTreeSet<GridId>,
            out: &mut Vec<(GridId, usize)>,
        ) {
            if expanded.contains(&id) {
                for k in live_children(forest, id, window) {
                    walk(forest, k, window, expanded, out);
                }
            } else {
                out.push((id, brute_count(forest.grid(id).unwrap(), window)));
            }
        }
        let mut out = Vec::new();
        for &r in &roots {
            walk(forest, r, window, expanded, &mut out);
        }
        out
    };

    let cuts = all.len();
    let mut best: Option<(Vec<bool>, Vec<(GridId, usize)>)> = None;
    for expanded in &all {
        let blocks = emit(expanded);
        let cost: usize = blocks.iter().map(|b| b.1).sum();
        if cost > budget {
            continue;
        }
        let mut v = vec![false; order.len()];
        for g in expanded {
            v[pos[g]] = true;
        }
        if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
            best = Some((v, blocks));
        }
    }
    best.map(|(_, blocks)| OracleSelection { blocks, cuts })
}

/// Sum of the selected cell boxes' overlaps with the window.
pub fn covered_volume(
    forest: &Forest,
    blocks: &[slwn_core::window::SelectedBlock],
    window: &Aabb,
) -> f64 {
    blocks
        .iter()
        .map(|b| {
            let g = forest.grid(b.grid).unwrap();
            let h = g.cell_width();
            let bx = Aabb::new(
                std::array::from_fn(|a| g.bbox.min[a] + b.lo[a] as f64 * h[a]),
                std::array::from_fn(|a| g.bbox.min[a] + b.hi[a] as f64 * h[a]),
            );
            overlap(&bx, window)
        })
        .sum()
}

pub fn overlap_volume(a: &Aabb, b: &Aabb) -> f64 {
    overlap(a, b)
}

/// Steady lid-driven cavity on an `n`×`n` node lattice, stream function and
/// vorticity, central differences, wall vorticity from Thom's formula.
/// Returns the stream function, row-major with x fastest.
pub fn cavity_stream_function(n: usize, nu: f64, lid: f64, tol: f64) -> Vec<f64> {
    let h = 1.0 / (n - 1) as f64;
    let idx = |i: usize, j: usize| j * n + i;
    let mut psi = vec![0.0; n * n];
    let mut w = vec![0.0; n * n];
    let sor = 1.7;
    let relax = 0.9;
    for iter in 0..200_000 {
        for i in 0..n {
            w[idx(i, 0)] = -2.0 * psi[idx(i, 1)] / (h * h);
            w[idx(i, n - 1)] = -2.0 * (psi[idx(i, n - 2)] + h * lid) / (h * h);
        }
        for j in 0..n {
            w[idx(0, j)] = -2.0 * psi[idx(1, j)] / (h * h);
            w[idx(n - 1, j)] = -2.0 * psi[idx(n - 2, j)] / (h * h);
        }
        let mut change = 0.0f64;
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let k = idx(i, j);
                let g = 0.25 * (psi[k + 1] + psi[k - 1] + psi[k + n] + psi[k - n] + h * h * w[k]);
                let d = sor * (g - psi[k]);
                psi[k] += d;
                change = change.max(d.abs());
            }
        }
        for j in 1..n - 1 {
            for i in 1..n - 1 {
                let k = idx(i, j);
                let u = (psi[k + n] - psi[k - n]) / (2.0 * h);
                let v = -(psi[k + 1] - psi[k - 1]) / (2.0 * h);
                let g = (nu * (w[k + 1] + w[k - 1] + w[k + n] + w[k - n])
                    - 0.5 * h * (u * (w[k + 1] - w[k - 1]) + v * (w[k + n] - w[k - n])))
                    / (4.0 * nu);
                let d = relax * (g - w[k]);
                w[k] += d;
                change = change.max(d.abs() * h * h);
            }
        }
        if iter > 100 && change < tol {
            return psi;
        }
    }
    panic!("cavity oracle did not converge");
}

/// Location of the minimum of a lattice function, refined by a parabola
/// through the neighbours along each axis.
pub fn lattice_minimum(
    f: &[f64],
    nx: usize,
    ny: usize,
    x: impl Fn(usize) -> f64,
    y: impl Fn(usize) -> f64,
) -> [f64; 2] {
    let (mut bi, mut bj) = (1, 1);
    for j in 1..ny - 1 {
        for i in 1..nx - 1 {
            if f[j * nx + i] < f[bj * nx + bi] {
                bi = i;
                bj = j;
            }
        }
    }
    let vertex = |m: f64, c: f64, p: f64| {
        let den = m - 2.0 * c + p;
        if den > 0.0 {
            0.5 * (m - p) / den
        } else {
            0.0
        }
    };
    let k = bj * nx + bi;
    let sx = vertex(f[k - 1], f[k], f[k + 1]);
    let sy = vertex(f[k - nx], f[k], f[k + nx]);
    let hx = x(bi + 1) - x(bi);
    let hy = y(bj + 1) - y(bj);
    [x(bi) + sx * hx, y(bj) + sy * hy]
}

/// Primary vortex centre of a planar unit-square forest whose leaves form a
/// uniform lattice: the stream function is integrated upward from the
/// bottom wall through the cell-centred u values.
pub fn forest_vortex_center(forest: &Forest) -> [f64; 2] {
    use slwn_core::hiergrid::Field;
    let h = forest.leaves().next().unwrap().cell_width();
    let n = (1.0 / h[0]).round() as usize;
    let mut u = vec![f64::NAN; n * n];
    for g in forest.leaves() {
        for ijk in g.fields.interior_coords() {
            let c = g.cell_center(ijk);
            let i = (c[0] / h[0]).floor() as usize;
            let j = (c[1] / h[1]).floor() as usize;
            u[j * n + i] = g.value_at(Field::U, ijk);
        }
    }
    assert!(
        u.iter().all(|v| v.is_finite()),
        "leaves are not a uniform lattice"
    );
    let mut psi = vec![0.0; n * n];
    for i in 0..n {
        let mut below = 0.0;
        for j in 0..n {
            psi[j * n + i] = below + 0.5 * h[1] * u[j * n + i];
            below += h[1] * u[j * n + i];
        }
    }
    lattice_minimum(
        &psi,
        n,
        n,
        |i| (i as f64 + 0.5) * h[0],
        |j| (j as f64 + 0.5) * h[1],
    )
}
