//! Low-order invariant-domain-preserving graph-viscosity solver with
//! strong-stability-preserving (SSP-RK3) time stepping.

use thiserror::Error;

use crate::mass::MassData;
use crate::space::ConstraintSet;
use crate::state::{State, StateVector};
use crate::systems::System;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("inadmissible state at DoF {dof} after update (value {value:?})")]
    InadmissibleState { dof: usize, value: State },
    #[error("time step {0} is not positive and finite")]
    BadTimeStep(f64),
}

/// Dirichlet data applied by overwriting listed DoFs after every stage.
#[derive(Clone, Debug, Default)]
pub struct DirichletSet {
    pub entries: Vec<(usize, State)>,
}

impl DirichletSet {
    pub fn apply(&self, u: &mut StateVector) {
        for &(dof, s) in &self.entries {
            u.set(dof, s);
        }
    }
}

/// Graph viscosities `d_ij` in the sparsity of the transport graph
/// (symmetric, nonnegative; guaranteed upper wave-speed bound times |c_ij|).
pub fn assemble_viscosity(sys: &System, mass: &MassData, u: &StateVector) -> Vec<Vec<f64>> {
    let n = mass.cij.n_rows();
    let mut d: Vec<Vec<f64>> = (0..n)
        .map(|i| vec![0.0; mass.cij.row(i).len()])
        .collect();
    for i in 0..n {
        for (s, &(j, c)) in mass.cij.row(i).iter().enumerate() {
            if j < i {
                continue; // handled from the smaller index
            }
            let norm = (c[0] * c[0] + c[1] * c[1]).sqrt();
            if norm == 0.0 {
                continue;
            }
            let nij = [c[0] / norm, c[1] / norm];
            let ui = u.get(i);
            let uj = u.get(j);
            let lam = sys
                .max_wave_speed(ui, uj, nij)
                .max(sys.max_wave_speed(uj, ui, [-nij[0], -nij[1]]));
            let dij = lam * norm;
            d[i][s] = dij;
            // mirror into row j
            let back = mass.cij.row(j)
                .binary_search_by_key(&i, |&(col, _)| col)
                .expect("antisymmetric sparsity");
            d[j][back] = dij;
        }
    }
    d
}

/// Largest admissible forward-Euler step: `cfl * min_i m_i / (2 sum_j d_ij)`
/// over unconstrained DoFs. Infinite if nothing moves (e.g. all-dry state).
pub fn compute_dt(
    mass: &MassData,
    cons: &ConstraintSet,
    visc: &[Vec<f64>],
    cfl: f64,
) -> f64 {
    let mut dt = f64::INFINITY;
    for i in 0..mass.cij.n_rows() {
        if cons.is_constrained(i) {
            continue;
        }
        let dsum: f64 = visc[i].iter().sum();
        if dsum > 0.0 {
            dt = dt.min(cfl * mass.solver_lumped[i] / (2.0 * dsum));
        }
    }
    dt
}

/// One forward-Euler graph-viscosity update:
/// `U'_i = U_i - dt/m_i [ sum_j (f_j - f_i)*c_ij - sum_j d_ij (U_j - U_i) ]`.
/// Constant states are exact fixed points; totals of all components are
/// conserved up to roundoff (pairwise-antisymmetric transport with zero row
/// sums). Constrained DoFs are filled from the constraint set afterwards.
pub fn forward_euler_step(
    sys: &System,
    mass: &MassData,
    cons: &ConstraintSet,
    u: &StateVector,
    visc: &[Vec<f64>],
    dt: f64,
) -> Result<StateVector, SolverError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SolverError::BadTimeStep(dt));
    }
    let n = u.n_dofs;
    let nc = sys.n_comp();
    let flux: Vec<[[f64; 2]; 4]> = (0..n).map(|i| sys.flux(u.get(i))).collect();
    let mut out = u.clone();
    let mut update = vec![[0.0f64; 4]; n];
    for i in 0..n {
        if cons.is_constrained(i) {
            continue;
        }
        let ui = u.get(i);
        for (s, &(j, c)) in mass.cij.row(i).iter().enumerate() {
            let uj = u.get(j);
            let d = visc[i][s];
            for comp in 0..nc {
                let df = [
                    flux[j][comp][0] - flux[i][comp][0],
                    flux[j][comp][1] - flux[i][comp][1],
                ];
                update[i][comp] += -(df[0] * c[0] + df[1] * c[1]) + d * (uj[comp] - ui[comp]);
            }
        }
    }
    let mut scale = [0.0f64; 4];
    for i in 0..n {
        let ui = u.get(i);
        for comp in 0..nc {
            scale[comp] = scale[comp].max(ui[comp].abs());
        }
    }
    for i in 0..n {
        if cons.is_constrained(i) {
            continue;
        }
        let mut v = u.get(i);
        for comp in 0..nc {
            v[comp] += dt / mass.solver_lumped[i] * update[i][comp];
        }
        if !admissible_with_slack(sys, v, &scale) {
            return Err(SolverError::InadmissibleState { dof: i, value: v });
        }
        out.set(i, v);
    }
    cons.enforce(&mut out);
    Ok(out)
}

/// Admissibility up to a tiny roundoff slack (the update is a convex
/// combination of admissible bar states; exact zeros may dip below by ulps).
pub fn admissible_with_slack(sys: &System, v: State, scale: &[f64; 4]) -> bool {
    match sys {
        System::ShallowWater { .. } => {
            v.iter().all(|x| x.is_finite()) && v[0] >= -1e-12 * scale[0].max(1e-300)
        }
        System::Euler { .. } => {
            let e = sys.specific_internal_energy(v);
            v.iter().all(|x| x.is_finite()) && v[0] > 0.0 && e.is_finite() && e > 0.0
        }
    }
}

/// Three-stage SSP Runge-Kutta step (Shu-Osher): convex combinations of
/// forward-Euler updates, inheriting the invariant-domain property.
pub fn ssp_step(
    sys: &System,
    mass: &MassData,
    cons: &ConstraintSet,
    u: &StateVector,
    dt: f64,
    dirichlet: &DirichletSet,
) -> Result<StateVector, SolverError> {
    let stage = |v: &StateVector| -> Result<StateVector, SolverError> {
        let visc = assemble_viscosity(sys, mass, v);
        let mut w = forward_euler_step(sys, mass, cons, v, &visc, dt)?;
        dirichlet.apply(&mut w);
        cons.enforce(&mut w);
        Ok(w)
    };
    let u1 = stage(u)?;
    let mut u2 = stage(&u1)?;
    blend(&mut u2, 0.25, u, 0.75);
    dirichlet.apply(&mut u2);
    let mut u3 = stage(&u2)?;
    blend(&mut u3, 2.0 / 3.0, u, 1.0 / 3.0);
    dirichlet.apply(&mut u3);
    cons.enforce(&mut u3);
    Ok(u3)
}

/// `a = wa * a + wb * b` componentwise.
fn blend(a: &mut StateVector, wa: f64, b: &StateVector, wb: f64) {
    for c in 0..a.n_comp {
        let bc = b.component(c).to_vec();
        for (x, y) in a.component_mut(c).iter_mut().zip(bc) {
            *x = wa * *x + wb * y;
        }
    }
}
