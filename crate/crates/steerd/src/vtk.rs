//! Legacy VTK unstructured-grid export of a cell stream. Every cell gets its
//! own corner points; single-layer streams become quads, others voxels.

use std::io::Write;

use slwn_core::window::{CellStream, Quantity};

const VTK_QUAD: u8 = 9;
const VTK_VOXEL: u8 = 11;

/// True when all cells share one z layer.
pub fn is_single_layer(s: &CellStream) -> bool {
    s.cells
        .windows(2)
        .all(|w| w[0].center[2] == w[1].center[2] && w[0].width[2] == w[1].width[2])
}

pub fn write_cell_stream<W: Write>(s: &CellStream, mut out: W) -> std::io::Result<()> {
    let quads = is_single_layer(s);
    let (corners, cell_type) = if quads { (4, VTK_QUAD) } else { (8, VTK_VOXEL) };
    let n = s.cells.len();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(
        out,
        "slwn {} step {} time {}",
        s.quantity.name(),
        s.step,
        s.time
    )?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", n * corners)?;
    for c in &s.cells {
        let lo: [f64; 3] = std::array::from_fn(|a| c.center[a] - 0.5 * c.width[a]);
        let hi: [f64; 3] = std::array::from_fn(|a| c.center[a] + 0.5 * c.width[a]);
        // voxel order: x fastest, then y, then z
        for k in 0..corners / 4 {
            for j in 0..2 {
                for i in 0..2 {
                    let x = if i == 0 { lo[0] } else { hi[0] };
                    let y = if j == 0 { lo[1] } else { hi[1] };
                    let z = if quads {
                        c.center[2]
                    } else if k == 0 {
                        lo[2]
                    } else {
                        hi[2]
                    };
                    writeln!(out, "{x} {y} {z}")?;
                }
            }
        }
    }
    writeln!(out, "CELLS {} {}", n, n * (corners + 1))?;
    for i in 0..n {
        let b = i * corners;
        if quads {
            // quads go round the boundary
            writeln!(out, "4 {} {} {} {}", b, b + 1, b + 3, b + 2)?;
        } else {
            let ids: Vec<String> = (b..b + 8).map(|p| p.to_string()).collect();
            writeln!(out, "8 {}", ids.join(" "))?;
        }
    }
    writeln!(out, "CELL_TYPES {n}")?;
    for _ in 0..n {
        writeln!(out, "{cell_type}")?;
    }
    writeln!(out, "CELL_DATA {n}")?;
    match s.quantity {
        Quantity::Velocity => {
            writeln!(out, "VECTORS velocity double")?;
            for c in &s.cells {
                writeln!(out, "{} {} {}", c.values[0], c.values[1], c.values[2])?;
            }
        }
        q => {
            writeln!(out, "SCALARS {} double 1", q.name())?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for c in &s.cells {
                writeln!(out, "{}", c.values[0])?;
            }
        }
    }
    writeln!(out, "SCALARS level int 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for c in &s.cells {
        writeln!(out, "{}", c.level)?;
    }
    Ok(())
}
