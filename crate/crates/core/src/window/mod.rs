//! Sliding-window selection: pick the grids covering a box, coarse to fine
//! in Morton order, so that the number of transmitted cells never exceeds a
//! fixed budget.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exchange::TopologyIndex;
use crate::geometry::Aabb;
use crate::hiergrid::{Field, Forest, GridId, GridNode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    Velocity,
    Pressure,
    VelocityMagnitude,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [
        Quantity::Velocity,
        Quantity::Pressure,
        Quantity::VelocityMagnitude,
    ];

    pub fn code(self) -> u8 {
        match self {
            Quantity::Velocity => 0,
            Quantity::Pressure => 1,
            Quantity::VelocityMagnitude => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Quantity> {
        Self::ALL.into_iter().find(|q| q.code() == c)
    }

    /// Values per cell.
    pub fn arity(self) -> usize {
        match self {
            Quantity::Velocity => 3,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Velocity => "velocity",
            Quantity::Pressure => "pressure",
            Quantity::VelocityMagnitude => "velocity_magnitude",
        }
    }
}

impl std::str::FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|q| q.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown quantity {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowQuery {
    pub bbox: Aabb,
    pub max_cells: u32,
    pub quantity: Quantity,
}

impl WindowQuery {
    pub fn new(bbox: Aabb, max_cells: u32, quantity: Quantity) -> Self {
        Self {
            bbox,
            max_cells,
            quantity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_cells == 0 {
            return Err(Error::InvalidParam("max_cells must be at least 1".into()));
        }
        if (0..3).any(|a| !(self.bbox.min[a] <= self.bbox.max[a])) {
            return Err(Error::InvalidGeometry(format!(
                "inverted window {:?}",
                self.bbox
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlap {
    /// The grid lies completely inside the window.
    Inside,
    /// Partial overlap, including touching boundaries.
    Overlaps,
    Outside,
}

/// Per-axis interval test with inclusive bounds.
pub fn intersects(grid: &Aabb, window: &Aabb) -> Overlap {
    if (0..3).any(|a| grid.max[a] < window.min[a] || grid.min[a] > window.max[a]) {
        Overlap::Outside
    } else if window.contains_box(grid) {
        Overlap::Inside
    } else {
        Overlap::Overlaps
    }
}

/// One grid's contribution: a clipped cell-index range, possibly read with
/// a stride (each emitted cell then aggregates a block of grid cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedBlock {
    pub grid: GridId,
    pub level: u32,
    /// Zero-based interior cell range, `lo` inclusive, `hi` exclusive.
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub stride: usize,
}

impl SelectedBlock {
    pub fn cells(&self) -> usize {
        (0..3)
            .map(|a| (self.hi[a] - self.lo[a]).div_ceil(self.stride))
            .product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub version: u64,
    pub query: WindowQuery,
    pub blocks: Vec<SelectedBlock>,
    pub total_cells: usize,
}

impl Selection {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("selection serialises")
    }

    /// Levels present, with cell counts.
    pub fn level_histogram(&self) -> Vec<(u32, usize)> {
        let mut h: std::collections::BTreeMap<u32, usize> = Default::default();
        for b in &self.blocks {
            *h.entry(b.level).or_default() += b.cells();
        }
        h.into_iter().collect()
    }
}

const REL_EPS: f64 = 1e-9;

/// Cells of `bbox` (split into `cells`) overlapping the window with
/// positive measure. A window axis of zero thickness selects the slab of
/// cells containing it, half-open except at the domain's upper end.
pub fn clip_range(
    bbox: &Aabb,
    cells: [usize; 3],
    window: &Aabb,
    domain: &Aabb,
) -> Option<([usize; 3], [usize; 3])> {
    let mut lo = [0; 3];
    let mut hi = [0; 3];
    for a in 0..3 {
        let n = cells[a];
        let h = (bbox.max[a] - bbox.min[a]) / n as f64;
        let (w0, w1) = (window.min[a], window.max[a]);
        let tol = REL_EPS * (domain.max[a] - domain.min[a]);
        if w1 - w0 <= tol {
            let p = w0;
            let at_top = (bbox.max[a] - domain.max[a]).abs() <= tol;
            let inside = p >= bbox.min[a] - tol
                && (p < bbox.max[a] - tol || (at_top && p <= bbox.max[a] + tol));
            if !inside {
                return None;
            }
            let i = (((p - bbox.min[a]) / h).floor().max(0.0) as usize).min(n - 1);
            lo[a] = i;
            hi[a] = i + 1;
        } else {
            let l = ((w0 - bbox.min[a]) / h + REL_EPS).floor();
            let u = ((w1 - bbox.min[a]) / h - REL_EPS).ceil();
            let l = l.max(0.0) as usize;
            let u = (u.max(0.0) as usize).min(n);
            if u <= l {
                return None;
            }
            lo[a] = l;
            hi[a] = u;
        }
    }
    Some((lo, hi))
}

fn block_for(topo: &TopologyIndex, id: GridId, window: &Aabb) -> Option<SelectedBlock> {
    let e = topo.entry(id).ok()?;
    let (lo, hi) = clip_range(&e.bbox, e.cells, window, &topo.domain())?;
    Some(SelectedBlock {
        grid: id,
        level: e.level,
        lo,
        hi,
        stride: 1,
    })
}

/// Children of `id` in Morton order.
pub fn children_in_order(topo: &TopologyIndex, id: GridId) -> Vec<GridId> {
    let Ok(e) = topo.entry(id) else {
        return Vec::new();
    };
    let mut kids = e.children.clone();
    kids.sort_by_key(|&k| topo.morton_rank(k).unwrap_or(usize::MAX));
    kids
}

/// Budgeted coarse-to-fine selection.
///
/// Starting from the intersecting level-0 grids, grids are visited
/// breadth-first (Morton order within a level) and each is replaced by its
/// intersecting children whenever that keeps the total within budget.
/// Deltas are never negative, so a replacement that fails once would fail
/// later too and one pass is maximal. When even the level-0 grids exceed
/// the budget they are read with the smallest common stride that fits.
pub fn select(topo: &TopologyIndex, q: &WindowQuery) -> Result<Selection> {
    q.validate()?;
    let budget = q.max_cells as usize;
    let window = q.bbox;
    let mut sel = Selection {
        version: topo.version(),
        query: *q,
        blocks: Vec::new(),
        total_cells: 0,
    };
    let roots: Vec<SelectedBlock> = topo
        .level(0)
        .iter()
        .filter(|&&id| {
            topo.entry(id)
                .map(|e| intersects(&e.bbox, &window) != Overlap::Outside)
                .unwrap_or(false)
        })
        .filter_map(|&id| block_for(topo, id, &window))
        .collect();
    let root_total: usize = roots.iter().map(SelectedBlock::cells).sum();
    if root_total > budget {
        sel.blocks = strided_roots(roots, budget);
        sel.total_cells = sel.blocks.iter().map(SelectedBlock::cells).sum();
        return Ok(sel);
    }

    // slot list in traversal order; a replaced grid's slot becomes its children
    let mut current: HashMap<GridId, SelectedBlock> = HashMap::new();
    let mut replaced: HashMap<GridId, Vec<GridId>> = HashMap::new();
    let mut queue: VecDeque<GridId> = VecDeque::new();
    let mut total = root_total;
    for b in &roots {
        current.insert(b.grid, *b);
        queue.push_back(b.grid);
    }
    while let Some(id) = queue.pop_front() {
        let kids: Vec<SelectedBlock> = children_in_order(topo, id)
            .into_iter()
            .filter(|&k| {
                topo.entry(k)
                    .map(|e| intersects(&e.bbox, &window) != Overlap::Outside)
                    .unwrap_or(false)
            })
            .filter_map(|k| block_for(topo, k, &window))
            .collect();
        if kids.is_empty() {
            continue;
        }
        let before = current[&id].cells();
        let after: usize = kids.iter().map(SelectedBlock::cells).sum();
        let next = total - before + after;
        if next > budget {
            continue;
        }
        total = next;
        current.remove(&id);
        replaced.insert(id, kids.iter().map(|k| k.grid).collect());
        for k in kids {
            current.insert(k.grid, k);
            queue.push_back(k.grid);
        }
    }

    // emit depth-first along the original root order so that children
    // follow the position of the grid they replaced
    fn emit(
        id: GridId,
        current: &HashMap<GridId, SelectedBlock>,
        replaced: &HashMap<GridId, Vec<GridId>>,
        out: &mut Vec<SelectedBlock>,
    ) {
        if let Some(kids) = replaced.get(&id) {
            for &k in kids {
                emit(k, current, replaced, out);
            }
        } else if let Some(b) = current.get(&id) {
            out.push(*b);
        }
    }
    for b in &roots {
        emit(b.grid, &current, &replaced, &mut sel.blocks);
    }
    sel.total_cells = total;
    debug_assert_eq!(
        total,
        sel.blocks.iter().map(SelectedBlock::cells).sum::<usize>()
    );
    Ok(sel)
}

/// Level-0 blocks read with the smallest common stride that fits the
/// budget. With more intersecting roots than budget, only the leading
/// roots (Morton order) are kept, one aggregate cell each.
fn strided_roots(roots: Vec<SelectedBlock>, budget: usize) -> Vec<SelectedBlock> {
    let span = |b: &SelectedBlock| (0..3).map(|a| b.hi[a] - b.lo[a]).max().unwrap_or(1);
    let max_span = roots.iter().map(span).max().unwrap_or(1);
    for s in 2..=max_span {
        let total: usize = roots
            .iter()
            .map(|b| SelectedBlock { stride: s, ..*b }.cells())
            .sum();
        if total <= budget {
            return roots
                .into_iter()
                .map(|b| SelectedBlock { stride: s, ..b })
                .collect();
        }
    }
    roots
        .into_iter()
        .take(budget)
        .map(|b| SelectedBlock {
            stride: max_span,
            ..b
        })
        .collect()
}

/// One transmitted cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub center: [f64; 3],
    pub width: [f64; 3],
    pub level: u8,
    /// The first `quantity.arity()` entries are meaningful, the rest zero.
    pub values: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStream {
    pub quantity: Quantity,
    pub version: u64,
    pub step: u64,
    pub time: f64,
    pub cells: Vec<CellRecord>,
}

impl CellStream {
    pub fn empty(quantity: Quantity, version: u64) -> Self {
        Self {
            quantity,
            version,
            step: 0,
            time: 0.0,
            cells: Vec::new(),
        }
    }
}

fn cell_values(g: &GridNode, i: usize, q: Quantity) -> [f64; 3] {
    let f = &g.fields;
    match q {
        Quantity::Pressure => [f.get(Field::P)[i], 0.0, 0.0],
        Quantity::Velocity => [f.get(Field::U)[i], f.get(Field::V)[i], f.get(Field::W)[i]],
        Quantity::VelocityMagnitude => {
            let (u, v, w) = (f.get(Field::U)[i], f.get(Field::V)[i], f.get(Field::W)[i]);
            [(u * u + v * v + w * w).sqrt(), 0.0, 0.0]
        }
    }
}

/// Records of one block, x fastest. Strided cells average their block
/// (the magnitude is averaged after evaluation per cell).
pub fn extract_block(g: &GridNode, b: &SelectedBlock, q: Quantity) -> Vec<CellRecord> {
    let h = g.cell_width();
    let s = b.stride;
    let mut out = Vec::with_capacity(b.cells());
    let mut k0 = b.lo[2];
    while k0 < b.hi[2] {
        let k1 = (k0 + s).min(b.hi[2]);
        let mut j0 = b.lo[1];
        while j0 < b.hi[1] {
            let j1 = (j0 + s).min(b.hi[1]);
            let mut i0 = b.lo[0];
            while i0 < b.hi[0] {
                let i1 = (i0 + s).min(b.hi[0]);
                let mut acc = [0.0; 3];
                let mut n = 0.0;
                for k in k0..k1 {
                    for j in j0..j1 {
                        for i in i0..i1 {
                            let v = cell_values(g, g.fields.idx(i + 1, j + 1, k + 1), q);
                            for c in 0..3 {
                                acc[c] += v[c];
                            }
                            n += 1.0;
                        }
                    }
                }
                let lo = [i0, j0, k0];
                let hi = [i1, j1, k1];
                out.push(CellRecord {
                    center: std::array::from_fn(|a| {
                        g.bbox.min[a] + 0.5 * (lo[a] + hi[a]) as f64 * h[a]
                    }),
                    width: std::array::from_fn(|a| (hi[a] - lo[a]) as f64 * h[a]),
                    level: g.level.min(u8::MAX as u32) as u8,
                    values: acc.map(|x| x / n),
                });
                i0 = i1;
            }
            j0 = j1;
        }
        k0 = k1;
    }
    out
}

/// Reads the selected cells out of the forest. Non-leaf grids supply their
/// restricted values.
pub fn extract(forest: &Forest, sel: &Selection, q: Quantity) -> Result<CellStream> {
    if sel.version != forest.version() {
        return Err(Error::StaleSelection {
            selected: sel.version,
            current: forest.version(),
        });
    }
    let mut stream = CellStream::empty(q, sel.version);
    stream.cells.reserve(sel.total_cells);
    for b in &sel.blocks {
        stream
            .cells
            .extend(extract_block(forest.grid(b.grid)?, b, q));
    }
    Ok(stream)
}
