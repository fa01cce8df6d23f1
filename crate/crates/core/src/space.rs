//! Global DoF enumeration over the active cells and the closed hanging-node
//! constraint set restoring continuity across refinement-level jumps.

use std::collections::HashMap;

use crate::element::ReferenceElement;
use crate::mesh::{CellId, Dir, MeshForest, DIRS};
use crate::state::StateVector;

/// Global enumeration of Lagrange nodes. Nodes collocated on a shared
/// subobject of equal-level cells share one index; nodes on a hanging
/// interface stay distinct (the fine-side ones become constrained).
pub struct DofMap {
    pub n_dofs: usize,
    /// Active cells in ascending id order.
    pub active_cells: Vec<CellId>,
    cell_slot: HashMap<CellId, usize>,
    /// Per active-cell slot, the (p+1)^2 global indices in local node order.
    pub cell_dofs: Vec<Vec<usize>>,
    pub positions: Vec<[f64; 2]>,
}

impl DofMap {
    pub fn cell_slot(&self, cell: CellId) -> usize {
        self.cell_slot[&cell]
    }

    pub fn dofs_of(&self, cell: CellId) -> &[usize] {
        &self.cell_dofs[self.cell_slot[&cell]]
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        // keep the smaller index as representative (deterministic ownership)
        if ra < rb {
            self.parent[rb] = ra;
        } else if rb < ra {
            self.parent[ra] = rb;
        }
    }
}

fn quantize(mesh: &MeshForest, p: [f64; 2]) -> (i64, i64) {
    let [x0, x1, y0, y1] = mesh.domain;
    let s = 1i64 << 40;
    let mut kx = ((p[0] - x0) / (x1 - x0) * s as f64).round() as i64;
    let mut ky = ((p[1] - y0) / (y1 - y0) * s as f64).round() as i64;
    if mesh.periodic {
        // the two seam copies of a node are the same node on the torus
        kx = kx.rem_euclid(s);
        ky = ky.rem_euclid(s);
    }
    (kx, ky)
}

/// Enumerate the global DoFs of the intermediate (unconstrained) space.
pub fn build_dof_map(mesh: &MeshForest, elem: &ReferenceElement) -> DofMap {
    let active = mesh.active_cells();
    let nn = elem.n_nodes();
    let n_inst = active.len() * nn;
    let mut uf = UnionFind::new(n_inst);

    // instance index -> (level, is_vertex); grouped by quantized position
    let mut groups: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut positions = vec![[0.0; 2]; n_inst];
    for (slot, &cell) in active.iter().enumerate() {
        let geo = mesh.geometry(cell);
        for ln in 0..nn {
            let inst = slot * nn + ln;
            let p = geo.map(elem.node_ref(ln));
            positions[inst] = p;
            groups.entry(quantize(mesh, p)).or_default().push(inst);
        }
    }
    let level = |inst: usize| mesh.level(active[inst / nn]);
    let vertex = |inst: usize| elem.is_vertex_node(inst % nn);
    for insts in groups.values() {
        for (k, &a) in insts.iter().enumerate() {
            for &b in &insts[..k] {
                let merge = if level(a) == level(b) {
                    true
                } else {
                    // across levels only where the node is a vertex of both
                    // cells (hanging nodes must stay distinct)
                    vertex(a) && vertex(b)
                };
                if merge {
                    uf.union(a, b);
                }
            }
        }
    }

    // global numbering by first appearance of each class representative
    let mut global_of_root: HashMap<usize, usize> = HashMap::new();
    let mut cell_dofs = vec![vec![0usize; nn]; active.len()];
    let mut dof_pos = Vec::new();
    for inst in 0..n_inst {
        let root = uf.find(inst);
        let g = *global_of_root.entry(root).or_insert_with(|| {
            dof_pos.push(positions[root]);
            dof_pos.len() - 1
        });
        cell_dofs[inst / nn][inst % nn] = g;
    }
    let cell_slot = active
        .iter()
        .enumerate()
        .map(|(s, &c)| (c, s))
        .collect();
    DofMap {
        n_dofs: dof_pos.len(),
        active_cells: active,
        cell_slot,
        cell_dofs,
        positions: dof_pos,
    }
}

/// One algebraic constraint: `U[dof] = sum_k coeffs[k].1 * U[coeffs[k].0]`.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub dof: usize,
    pub coeffs: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct ConstraintSet {
    pub entries: Vec<Constraint>,
    constrained: Vec<bool>,
}

impl ConstraintSet {
    pub fn empty(n_dofs: usize) -> Self {
        Self {
            entries: Vec::new(),
            constrained: vec![false; n_dofs],
        }
    }

    pub fn from_entries(n_dofs: usize, entries: Vec<Constraint>) -> Self {
        let mut constrained = vec![false; n_dofs];
        for c in &entries {
            constrained[c.dof] = true;
        }
        Self {
            entries,
            constrained,
        }
    }

    pub fn is_constrained(&self, dof: usize) -> bool {
        self.constrained[dof]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Stencil map `I^AC(j)`: for each unconstrained DoF `j`, the constraints
    /// whose coefficient list contains `j` (as indices into `entries`).
    pub fn reverse_stencil(&self, n_dofs: usize) -> Vec<Vec<usize>> {
        let mut rev = vec![Vec::new(); n_dofs];
        for (e, c) in self.entries.iter().enumerate() {
            for &(j, _) in &c.coeffs {
                rev[j].push(e);
            }
        }
        rev
    }

    /// Overwrite every constrained entry with its interpolated value.
    /// Evaluated in offset form `u_ref + sum_j w_j (u_j - u_ref)` (row sums
    /// are 1) so that constant fields are reproduced bitwise.
    pub fn enforce(&self, state: &mut StateVector) {
        for c in &self.entries {
            let uref = state.get(c.coeffs[0].0);
            let mut u = uref;
            for &(j, w) in &c.coeffs {
                let uj = state.get(j);
                for comp in 0..state.n_comp {
                    u[comp] += w * (uj[comp] - uref[comp]);
                }
            }
            state.set(c.dof, u);
        }
    }

    /// Same for a plain per-DoF scalar field.
    pub fn enforce_scalar(&self, field: &mut [f64]) {
        for c in &self.entries {
            let fref = field[c.coeffs[0].0];
            field[c.dof] = fref
                + c.coeffs
                    .iter()
                    .map(|&(j, w)| w * (field[j] - fref))
                    .sum::<f64>();
        }
    }
}

fn face_local_nodes(elem: &ReferenceElement, dir: Dir) -> Vec<usize> {
    let n = elem.n_nodes_1d();
    (0..elem.n_nodes())
        .filter(|&i| {
            let (ix, iy) = (i % n, i / n);
            match dir {
                Dir::XLow => ix == 0,
                Dir::XHigh => ix == n - 1,
                Dir::YLow => iy == 0,
                Dir::YHigh => iy == n - 1,
            }
        })
        .collect()
}

fn opposite(dir: Dir) -> Dir {
    match dir {
        Dir::XLow => Dir::XHigh,
        Dir::XHigh => Dir::XLow,
        Dir::YLow => Dir::YHigh,
        Dir::YHigh => Dir::YLow,
    }
}

/// Build the hanging-node constraints by evaluating the coarse-side face
/// basis at each fine-side node position. Closed by construction under 2:1
/// balance (verified structurally before returning).
pub fn build_constraints(
    mesh: &MeshForest,
    dofs: &DofMap,
    elem: &ReferenceElement,
) -> ConstraintSet {
    let mut set = ConstraintSet::empty(dofs.n_dofs);
    let mut seen: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    for &cell in &dofs.active_cells {
        for dir in DIRS {
            let Some(coarse) = mesh.coarser_face_neighbor(cell, dir) else {
                continue;
            };
            let fine_nodes = face_local_nodes(elem, dir);
            let coarse_nodes = face_local_nodes(elem, opposite(dir));
            let coarse_dofs = dofs.dofs_of(coarse);
            let cell_dofs = dofs.dofs_of(cell);
            // coarse edge endpoints for the 1D parameterization
            let cgeo = mesh.geometry(coarse);
            let e0 = cgeo.map(elem.node_ref(coarse_nodes[0]));
            let e1 = cgeo.map(elem.node_ref(*coarse_nodes.last().unwrap()));
            let len2 = (e1[0] - e0[0]).powi(2) + (e1[1] - e0[1]).powi(2);
            let coarse_globals: Vec<usize> =
                coarse_nodes.iter().map(|&ln| coarse_dofs[ln]).collect();
            for &ln in &fine_nodes {
                let g = cell_dofs[ln];
                if coarse_globals.contains(&g) {
                    continue; // shared endpoint vertex, not hanging
                }
                let p = dofs.positions[g];
                let t = ((p[0] - e0[0]) * (e1[0] - e0[0]) + (p[1] - e0[1]) * (e1[1] - e0[1]))
                    / len2;
                let coeffs: Vec<(usize, f64)> = coarse_nodes
                    .iter()
                    .enumerate()
                    .map(|(k, _)| (coarse_globals[k], elem.lagrange_1d(k, t)))
                    .filter(|&(_, w)| w.abs() > 1e-14)
                    .collect();
                if let Some(prev) = seen.get(&g) {
                    debug_assert_eq!(prev.len(), coeffs.len());
                } else {
                    seen.insert(g, coeffs);
                }
            }
        }
    }
    let mut entries: Vec<Constraint> = seen
        .into_iter()
        .map(|(dof, coeffs)| Constraint { dof, coeffs })
        .collect();
    entries.sort_by_key(|c| c.dof);
    for c in &entries {
        set.constrained[c.dof] = true;
    }
    // closedness: no constrained index may appear in any coefficient list
    for c in &entries {
        assert!(
            c.coeffs.iter().all(|&(j, _)| !set.constrained[j]),
            "constraint chain detected; mesh is not 2:1 balanced"
        );
        assert!(c.coeffs.iter().all(|&(j, _)| j != c.dof));
    }
    set.entries = entries;
    set
}
