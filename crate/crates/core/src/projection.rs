//! Conservative, admissibility-preserving solution transfer between locally
//! refined/coarsened spaces: element-wise limited mass projection, nodal
//! averaging, and hanging-node mass redistribution.

use nalgebra::DMatrix;

use crate::element::{child_in_parent_mass, parent_shape_at_child_nodes, CellGeometry, LocalMass, ReferenceElement};
use crate::state::{state_axpy, State, StateVector};
use crate::space::ConstraintSet;
use crate::systems::{Bounds, System};

/// Element-wise projection: given the moments `r_i = int_K u phi_i` of the
/// old-space function against the target basis, produce nodal states on the
/// target cell that conserve `int_K u` exactly and stay within `bounds`.
///
/// With `limit = false` the unlimited consistent-mass solution is returned
/// (conservative but not bound-preserving).
pub fn element_project(
    sys: &System,
    lm: &LocalMass,
    r: &[State],
    bounds: &Bounds,
    limit: bool,
) -> Vec<State> {
    let n = r.len();
    assert_eq!(lm.lumped.len(), n);
    let nc = sys.n_comp();

    // low-order states: lumped-mass solve
    let low: Vec<State> = (0..n)
        .map(|i| {
            let mut u = [0.0; 4];
            for c in 0..nc {
                u[c] = r[i][c] / lm.lumped[i];
            }
            u
        })
        .collect();

    let minv = lm
        .consistent
        .clone()
        .try_inverse()
        .expect("singular local mass matrix");

    // high-order states: consistent-mass solve
    let high: Vec<State> = (0..n)
        .map(|i| {
            let mut u = [0.0; 4];
            for j in 0..n {
                for c in 0..nc {
                    u[c] += minv[(i, j)] * r[j][c];
                }
            }
            u
        })
        .collect();

    if !limit {
        return high;
    }

    // if the unlimited solution already satisfies the bounds we may take all
    // limiter coefficients equal to one; in particular, input already in the
    // target space passes through exactly
    if high.iter().all(|&u| within_bounds(sys, bounds, u)) {
        return high;
    }

    // the low-order states are only a true convex average of the input for
    // degree 1; widen the bounds by them so the limiter base is always
    // feasible
    let mut b = *bounds;
    for u in &low {
        sys.accumulate_bounds(&mut b, *u);
    }

    // antisymmetric correction directions; kappa = 1 / (nodes per cell)
    let b_ij = |i: usize, j: usize| {
        lm.lumped[i] * minv[(i, j)] - if i == j { 1.0 } else { 0.0 }
    };
    let kappa_inv = n as f64;
    let mut p = vec![[0.0; 4]; n * n];
    for i in 0..n {
        for j in 0..n {
            let (bij, bji) = (b_ij(i, j), b_ij(j, i));
            for c in 0..nc {
                p[i * n + j][c] = (bij * r[j][c] - bji * r[i][c]) * kappa_inv / lm.lumped[i];
            }
        }
    }

    let mut l = vec![1.0; n * n];
    for i in 0..n {
        for j in 0..n {
            l[i * n + j] = sys.limit_line(&b, low[i], p[i * n + j]);
        }
    }

    let mut out = low;
    for i in 0..n {
        for j in 0..n {
            let lij = l[i * n + j].min(l[j * n + i]);
            state_axpy(&mut out[i], lij / kappa_inv, p[i * n + j]);
        }
    }
    out
}

pub(crate) fn within_bounds(sys: &System, b: &Bounds, u: State) -> bool {
    let scale = u[0].abs().max(b.lin_min.abs()).max(b.lin_max.abs());
    let tol = 1e-12 * scale.max(1e-300);
    if u[0] < b.lin_min - tol || u[0] > b.lin_max + tol {
        return false;
    }
    if let System::Euler { .. } = sys {
        if b.concave_min.is_finite() {
            let e = sys.specific_internal_energy(u);
            let etol = 1e-12 * e.abs().max(b.concave_min.abs()).max(1e-300);
            if e < b.concave_min - etol {
                return false;
            }
        }
    }
    true
}

/// Moments of a function given by nodal states on the SAME cell/space:
/// `r = M u` (used for persisting cells and tests).
pub fn moments_identity(lm: &LocalMass, states: &[State]) -> Vec<State> {
    let n = states.len();
    (0..n)
        .map(|i| {
            let mut r = [0.0; 4];
            for j in 0..n {
                state_axpy(&mut r, lm.consistent[(i, j)], states[j]);
            }
            r
        })
        .collect()
}

/// Moments of the four children's fields against the parent basis
/// (coarsening): `r_i = sum_q sum_j U_j^q int_{C_q} phi_i^P phi_j^C`.
pub fn moments_from_children(
    elem: &ReferenceElement,
    parent: &CellGeometry,
    child_states: &[Vec<State>; 4],
) -> Vec<State> {
    let n = elem.n_nodes();
    let mut r = vec![[0.0; 4]; n];
    for q in 0..4 {
        let a = child_in_parent_mass(elem, parent, q).expect("degenerate cell");
        for i in 0..n {
            for j in 0..n {
                state_axpy(&mut r[i], a[(i, j)], child_states[q][j]);
            }
        }
    }
    r
}

/// Moments of the parent field against child `q`'s basis (refinement):
/// `r_i = sum_j U_j^P int_{C_q} phi_j^P phi_i^C`.
pub fn moments_from_parent(
    elem: &ReferenceElement,
    parent: &CellGeometry,
    q: usize,
    parent_states: &[State],
) -> Vec<State> {
    let n = elem.n_nodes();
    let a = child_in_parent_mass(elem, parent, q).expect("degenerate cell");
    let mut r = vec![[0.0; 4]; n];
    for i in 0..n {
        for j in 0..n {
            state_axpy(&mut r[i], a[(j, i)], parent_states[j]);
        }
    }
    r
}

/// Exact nodal interpolation of the parent field at child `q`'s nodes. Valid
/// as the refinement path because the child spaces contain the parent space.
pub fn interpolate_to_child(
    elem: &ReferenceElement,
    q: usize,
    parent_states: &[State],
) -> Vec<State> {
    let b: DMatrix<f64> = parent_shape_at_child_nodes(elem, q);
    let n = elem.n_nodes();
    (0..n)
        .map(|i| {
            let mut u = [0.0; 4];
            for j in 0..n {
                state_axpy(&mut u, b[(i, j)], parent_states[j]);
            }
            u
        })
        .collect()
}

/// Mass-weighted average of per-cell contributions to one shared node.
pub fn nodal_average(contribs: &[(f64, State)]) -> State {
    let total: f64 = contribs.iter().map(|&(m, _)| m).sum();
    let mut u = [0.0; 4];
    for &(m, s) in contribs {
        state_axpy(&mut u, m / total, s);
    }
    u
}

/// Hanging-node mass redistribution: move each constrained DoF's mass onto
/// its constraining DoFs (with convex limiting), then enforce the
/// constraints. Conservative: `sum_i m~_i U~_i = sum_{i unconstrained} m_i
/// U_i` exactly up to roundoff. Returns the modified masses and the
/// conforming states.
pub fn redistribute(
    sys: &System,
    global_lumped: &[f64],
    pre: &StateVector,
    cons: &ConstraintSet,
    limit: bool,
) -> (Vec<f64>, StateVector) {
    let n = pre.n_dofs;
    let nc = sys.n_comp();
    let mut m = global_lumped.to_vec();

    // conforming values and mismatches per constraint; redistributed masses
    let mut conforming: Vec<State> = Vec::with_capacity(cons.entries.len());
    for e in &cons.entries {
        let mut v = [0.0; 4];
        for &(k, c) in &e.coeffs {
            state_axpy(&mut v, c, pre.get(k));
        }
        conforming.push(v);
        for &(k, c) in &e.coeffs {
            m[k] += c * global_lumped[e.dof];
        }
    }

    // per unconstrained DoF: the constraints touching it, its bounds (its own
    // preliminary value and those of the constrained DoFs it serves), and the
    // low-/high-order redistribution solutions
    let rev = cons.reverse_stencil(n);
    let mut low: Vec<State> = (0..n).map(|i| pre.get(i)).collect();
    let mut high = low.clone();
    let mut bounds: Vec<Bounds> = Vec::with_capacity(n);
    for i in 0..n {
        let mut b = Bounds::empty();
        sys.accumulate_bounds(&mut b, pre.get(i));
        if cons.is_constrained(i) || rev[i].is_empty() {
            bounds.push(b);
            continue;
        }
        let ui = pre.get(i);
        let mut num_low = [0.0; 4];
        let mut num_high = [0.0; 4];
        state_axpy(&mut num_low, global_lumped[i], ui);
        state_axpy(&mut num_high, global_lumped[i], ui);
        for &e in &rev[i] {
            let entry = &cons.entries[e];
            let uj = pre.get(entry.dof);
            sys.accumulate_bounds(&mut b, uj);
            let c = entry
                .coeffs
                .iter()
                .find(|&&(k, _)| k == i)
                .unwrap()
                .1;
            let w = c * global_lumped[entry.dof];
            state_axpy(&mut num_low, w, uj);
            // high-order: U_i + D_j with D_j the constraint mismatch
            let mut probe = ui;
            for comp in 0..nc {
                probe[comp] += uj[comp] - conforming[e][comp];
            }
            state_axpy(&mut num_high, w, probe);
        }
        for comp in 0..nc {
            low[i][comp] = num_low[comp] / m[i];
            high[i][comp] = num_high[comp] / m[i];
        }
        bounds.push(b);
    }

    // if the high-order solution satisfies every local bound we may take all
    // limiter coefficients equal to one; conforming input passes through
    // exactly (the mismatches vanish and high == pre). With `limit = false`
    // the high-order solution is used unconditionally.
    let fast = !limit
        || (0..n).all(|i| {
            cons.is_constrained(i) || rev[i].is_empty() || within_bounds(sys, &bounds[i], high[i])
        });

    let mut out = StateVector::zeros(nc, n);
    if fast {
        for i in 0..n {
            if !cons.is_constrained(i) {
                out.set(i, high[i]);
            }
        }
    } else {
        // limited update: per-constraint factor l^j = min over its stencil of
        // the line limiter from the low-order base along kappa_i * w * (U_i -
        // V_j); the base widens the bounds so the search is always feasible
        let card: Vec<f64> = rev.iter().map(|r| r.len() as f64).collect();
        let mut l = vec![1.0f64; cons.entries.len()];
        for (e, entry) in cons.entries.iter().enumerate() {
            for &(k, c) in &entry.coeffs {
                let w = c * global_lumped[entry.dof] / m[k];
                let mut dir = [0.0; 4];
                for comp in 0..nc {
                    dir[comp] = card[k] * w * (pre.get(k)[comp] - conforming[e][comp]);
                }
                let mut b = bounds[k];
                sys.accumulate_bounds(&mut b, low[k]);
                l[e] = l[e].min(sys.limit_line(&b, low[k], dir));
            }
        }
        for i in 0..n {
            if cons.is_constrained(i) {
                continue;
            }
            let mut u = low[i];
            for &e in &rev[i] {
                let entry = &cons.entries[e];
                let c = entry
                    .coeffs
                    .iter()
                    .find(|&&(k, _)| k == i)
                    .unwrap()
                    .1;
                let w = c * global_lumped[entry.dof] / m[i];
                for comp in 0..nc {
                    u[comp] += l[e] * w * (pre.get(i)[comp] - conforming[e][comp]);
                }
            }
            out.set(i, u);
        }
    }
    cons.enforce(&mut out);
    for e in &cons.entries {
        m[e.dof] = 0.0;
    }
    (m, out)
}

/// What happened to a cell during adaptation, as carried by its transfer
/// payload.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferStatus {
    Persist = 0,
    Refine = 1,
    Coarsen = 2,
}

/// Per-cell transfer payload with a defined little-endian binary layout:
/// cell id (u64), status (u8), state count (u16), then `count * 4` doubles.
#[derive(Clone, Debug, PartialEq)]
pub struct CellTransferRecord {
    pub cell_id: u64,
    pub status: TransferStatus,
    pub states: Vec<State>,
}

impl CellTransferRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(11 + self.states.len() * 32);
        out.extend_from_slice(&self.cell_id.to_le_bytes());
        out.push(self.status as u8);
        out.extend_from_slice(&(self.states.len() as u16).to_le_bytes());
        for s in &self.states {
            for c in s {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out
    }

    /// Decode one record from the front of `buf`; returns the record and the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Option<(Self, usize)> {
        if buf.len() < 11 {
            return None;
        }
        let cell_id = u64::from_le_bytes(buf[0..8].try_into().unwrap());
        let status = match buf[8] {
            0 => TransferStatus::Persist,
            1 => TransferStatus::Refine,
            2 => TransferStatus::Coarsen,
            _ => return None,
        };
        let count = u16::from_le_bytes(buf[9..11].try_into().unwrap()) as usize;
        let need = 11 + count * 32;
        if buf.len() < need {
            return None;
        }
        let mut states = Vec::with_capacity(count);
        for k in 0..count {
            let mut s = [0.0; 4];
            for c in 0..4 {
                let off = 11 + k * 32 + c * 8;
                s[c] = f64::from_le_bytes(buf[off..off + 8].try_into().unwrap());
            }
            states.push(s);
        }
        Some((
            Self {
                cell_id,
                status,
                states,
            },
            need,
        ))
    }
}
