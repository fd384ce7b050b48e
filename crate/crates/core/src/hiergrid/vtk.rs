use std::io::Write;

use super::{Field, GridNode};

/// Writes one grid's interior as a legacy VTK structured-points dataset
/// with pressure, velocity and the level as cell data.
pub fn write_structured_points<W: Write>(grid: &GridNode, mut out: W) -> std::io::Result<()> {
    let [nx, ny, nz] = grid.cells;
    let h = grid.cell_width();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "grid {} level {}", grid.id.0, grid.level)?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET STRUCTURED_POINTS")?;
    writeln!(out, "DIMENSIONS {} {} {}", nx + 1, ny + 1, nz + 1)?;
    writeln!(
        out,
        "ORIGIN {} {} {}",
        grid.bbox.min[0], grid.bbox.min[1], grid.bbox.min[2]
    )?;
    writeln!(out, "SPACING {} {} {}", h[0], h[1], h[2])?;
    writeln!(out, "CELL_DATA {}", nx * ny * nz)?;
    writeln!(out, "SCALARS p double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    let fs = &grid.fields;
    for i in fs.interior_indices() {
        writeln!(out, "{}", fs.get(Field::P)[i])?;
    }
    writeln!(out, "VECTORS velocity double")?;
    for i in fs.interior_indices() {
        writeln!(
            out,
            "{} {} {}",
            fs.get(Field::U)[i],
            fs.get(Field::V)[i],
            fs.get(Field::W)[i]
        )?;
    }
    Ok(())
}
