//! Global mass/transport assembly: per-cell consistent masses, global lumped
//! masses, the condensed transport vectors `c_ij` driving the low-order
//! solver, and the constrained discrete Laplacian feeding the indicator.

use std::collections::HashMap;

use crate::element::{local_matrices, LocalMass, ReferenceElement};
use crate::mesh::MeshForest;
use crate::space::{ConstraintSet, DofMap};

/// Sparse row-major matrix of small per-entry payloads.
#[derive(Clone, Debug)]
pub struct SparseRows<T> {
    pub rows: Vec<Vec<(usize, T)>>,
}

impl<T: Copy> SparseRows<T> {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, T)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .ok()
            .map(|k| self.rows[i][k].1)
    }
}

pub struct MassData {
    /// Per active-cell slot: local consistent + lumped mass.
    pub cell_mass: Vec<LocalMass>,
    /// Global lumped masses of the intermediate space (all DoFs).
    pub global_lumped: Vec<f64>,
    /// Condensed lumped masses absorbing the constrained DoFs' mass into
    /// their constraining DoFs; equals `global_lumped` where no constraint
    /// touches a DoF. Constrained DoFs keep their raw lumped mass here.
    pub solver_lumped: Vec<f64>,
    /// Condensed, pairwise-antisymmetric transport vectors
    /// `c_ij = int psi_i grad(psi_j)` over the continuous basis; off-diagonal
    /// only, unconstrained DoFs only.
    pub cij: SparseRows<[f64; 2]>,
    /// Discrete Laplacian assembled with constraints distributed; rows and
    /// columns of constrained DoFs are identically zero.
    pub beta: SparseRows<f64>,
}

/// Distribution target list of a global DoF under the constraint set.
fn dist(cons: &ConstraintSet, g: usize) -> Vec<(usize, f64)> {
    if cons.is_constrained(g) {
        cons.entries
            .iter()
            .find(|c| c.dof == g)
            .unwrap()
            .coeffs
            .clone()
    } else {
        vec![(g, 1.0)]
    }
}

pub fn assemble(
    mesh: &MeshForest,
    elem: &ReferenceElement,
    dofs: &DofMap,
    cons: &ConstraintSet,
) -> MassData {
    let n = dofs.n_dofs;
    let nn = elem.n_nodes();
    let mut cell_mass = Vec::with_capacity(dofs.active_cells.len());
    let mut global_lumped = vec![0.0; n];
    let mut c_acc: Vec<HashMap<usize, [f64; 2]>> = vec![HashMap::new(); n];
    let mut b_acc: Vec<HashMap<usize, f64>> = vec![HashMap::new(); n];

    let dist_of: Vec<Vec<(usize, f64)>> = (0..n).map(|g| dist(cons, g)).collect();

    for &cell in &dofs.active_cells {
        let geo = mesh.geometry(cell);
        let m = local_matrices(elem, &geo).expect("degenerate active cell");
        let gd = dofs.dofs_of(cell);
        for a in 0..nn {
            global_lumped[gd[a]] += m.lumped[a];
        }
        for a in 0..nn {
            for b in 0..nn {
                let t = m.transport[a * nn + b];
                let s = m.stiffness[(a, b)];
                for &(i, wi) in &dist_of[gd[a]] {
                    for &(j, wj) in &dist_of[gd[b]] {
                        let w = wi * wj;
                        let e = c_acc[i].entry(j).or_insert([0.0; 2]);
                        e[0] += w * t[0];
                        e[1] += w * t[1];
                        *b_acc[i].entry(j).or_insert(0.0) += w * s;
                    }
                }
            }
        }
        cell_mass.push(LocalMass {
            consistent: m.mass,
            lumped: m.lumped,
        });
    }

    // condensed lumped masses: each constraint moves the constrained DoF's
    // intermediate mass onto its stencil
    let mut solver_lumped = global_lumped.clone();
    for c in &cons.entries {
        for &(j, w) in &c.coeffs {
            solver_lumped[j] += w * global_lumped[c.dof];
        }
        solver_lumped[c.dof] = global_lumped[c.dof];
    }
    for (i, &m) in solver_lumped.iter().enumerate() {
        assert!(
            m > 0.0,
            "nonpositive condensed lumped mass {m} at DoF {i}"
        );
    }

    // exact pairwise antisymmetrization of the transport vectors; for a
    // conforming periodic space this only removes roundoff, for a bounded
    // domain it removes the boundary surface term (closed-box semantics)
    let mut cij_rows: Vec<Vec<(usize, [f64; 2])>> = vec![Vec::new(); n];
    for i in 0..n {
        let cols: Vec<usize> = c_acc[i].keys().copied().collect();
        for j in cols {
            if j <= i {
                continue;
            }
            let a = c_acc[i][&j];
            let b = c_acc[j].get(&i).copied().unwrap_or([0.0; 2]);
            let v = [0.5 * (a[0] - b[0]), 0.5 * (a[1] - b[1])];
            if v[0] != 0.0 || v[1] != 0.0 {
                cij_rows[i].push((j, v));
                cij_rows[j].push((i, [-v[0], -v[1]]));
            }
        }
    }
    for r in &mut cij_rows {
        r.sort_by_key(|&(c, _)| c);
    }

    let mut beta_rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in b_acc.into_iter().enumerate() {
        let mut r: Vec<(usize, f64)> = row.into_iter().collect();
        r.sort_by_key(|&(c, _)| c);
        beta_rows[i] = r;
    }

    MassData {
        cell_mass,
        global_lumped,
        solver_lumped,
        cij: SparseRows { rows: cij_rows },
        beta: SparseRows { rows: beta_rows },
    }
}
