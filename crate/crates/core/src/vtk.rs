//! Legacy ASCII VTK snapshots of the adaptive solution: one VTK_QUAD per
//! active cell with duplicated corner points (hanging interfaces render as
//! conforming cell boundaries), per-cell level and indicator, and per-point
//! conserved components.

use std::io::{self, Write};
use std::path::Path;

use crate::adapt::Discretization;
use crate::mesh::MeshForest;
use crate::state::StateVector;
use crate::systems::System;

fn component_names(sys: &System) -> &'static [&'static str] {
    match sys {
        System::ShallowWater { .. } => &["depth", "discharge_x", "discharge_y"],
        System::Euler { .. } => &["density", "momentum_x", "momentum_y", "energy"],
    }
}

/// Write a snapshot. `alpha` is the nodal indicator field (may be empty to
/// skip the cell indicator array).
pub fn write_vtk(
    path: &Path,
    mesh: &MeshForest,
    disc: &Discretization,
    sys: &System,
    u: &StateVector,
    alpha: &[f64],
) -> io::Result<()> {
    let mut f = io::BufWriter::new(std::fs::File::create(path)?);
    let cells = &disc.dofs.active_cells;
    let n_cells = cells.len();
    let nn1 = disc.elem.n_nodes_1d();
    // local node indices of the four corners in tensor order
    let corners = [0, nn1 - 1, nn1 * nn1 - 1, nn1 * (nn1 - 1)];

    writeln!(f, "# vtk DataFile Version 2.0")?;
    writeln!(f, "adaptive solution snapshot")?;
    writeln!(f, "ASCII")?;
    writeln!(f, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(f, "POINTS {} double", 4 * n_cells)?;
    for &cell in cells {
        let verts = mesh.geometry(cell).verts;
        // VTK_QUAD wants counterclockwise corner order
        for k in [0, 1, 3, 2] {
            writeln!(f, "{} {} 0", verts[k][0], verts[k][1])?;
        }
    }
    writeln!(f, "CELLS {} {}", n_cells, 5 * n_cells)?;
    for c in 0..n_cells {
        writeln!(f, "4 {} {} {} {}", 4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3)?;
    }
    writeln!(f, "CELL_TYPES {n_cells}")?;
    for _ in 0..n_cells {
        writeln!(f, "9")?;
    }

    writeln!(f, "CELL_DATA {n_cells}")?;
    writeln!(f, "SCALARS level int 1")?;
    writeln!(f, "LOOKUP_TABLE default")?;
    for &cell in cells {
        writeln!(f, "{}", mesh.level(cell))?;
    }
    if !alpha.is_empty() {
        writeln!(f, "SCALARS indicator double 1")?;
        writeln!(f, "LOOKUP_TABLE default")?;
        for &cell in cells {
            let gd = disc.dofs.dofs_of(cell);
            let mean: f64 = gd.iter().map(|&g| alpha[g]).sum::<f64>() / gd.len() as f64;
            writeln!(f, "{mean}")?;
        }
    }

    writeln!(f, "POINT_DATA {}", 4 * n_cells)?;
    for (c, name) in component_names(sys).iter().enumerate() {
        writeln!(f, "SCALARS {name} double 1")?;
        writeln!(f, "LOOKUP_TABLE default")?;
        for &cell in cells {
            let gd = disc.dofs.dofs_of(cell);
            // corner order must match the point order written above
            for k in [corners[0], corners[1], corners[2], corners[3]] {
                writeln!(f, "{}", u.get(gd[k])[c])?;
            }
        }
    }
    Ok(())
}
