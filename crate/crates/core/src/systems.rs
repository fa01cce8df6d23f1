//! Hyperbolic systems (shallow water, ideal-gas Euler): fluxes, admissibility
//! constraints, guaranteed wave-speed estimates, and the line limiter used by
//! the conservative projection.

use crate::state::State;

const VACUUM_RHO: f64 = 1e-14;

/// The conserved system being solved. Shallow water carries `(h, q_x, q_y)`,
/// Euler `(rho, m_x, m_y, E)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum System {
    ShallowWater { gravity: f64, h_cutoff: f64 },
    Euler { gamma: f64 },
}

/// Local convex-hull descriptor for the limiter: two-sided bounds on the
/// linearly boundable quantity (depth resp. density) and a lower bound on the
/// concave quantity (specific internal energy; unused for shallow water).
#[derive(Clone, Copy, Debug)]
pub struct Bounds {
    pub lin_min: f64,
    pub lin_max: f64,
    pub concave_min: f64,
}

impl Bounds {
    pub fn empty() -> Self {
        Self {
            lin_min: f64::INFINITY,
            lin_max: f64::NEG_INFINITY,
            concave_min: f64::INFINITY,
        }
    }

    pub fn merge(&mut self, other: &Bounds) {
        self.lin_min = self.lin_min.min(other.lin_min);
        self.lin_max = self.lin_max.max(other.lin_max);
        self.concave_min = self.concave_min.min(other.concave_min);
    }
}

impl System {
    pub fn shallow_water(h_cutoff: f64) -> Self {
        System::ShallowWater {
            gravity: 9.81,
            h_cutoff,
        }
    }

    pub fn n_comp(&self) -> usize {
        match self {
            System::ShallowWater { .. } => 3,
            System::Euler { .. } => 4,
        }
    }

    /// Regularized velocity. For shallow water, dry and near-dry states get
    /// `v = 2 h q / (h^2 + max(h, h_cut)^2)`; Euler states below the vacuum
    /// threshold get zero velocity.
    pub fn velocity(&self, u: State) -> [f64; 2] {
        match *self {
            System::ShallowWater { h_cutoff, .. } => {
                let h = u[0];
                let denom = h * h + h.max(h_cutoff).powi(2);
                if denom <= 0.0 {
                    [0.0, 0.0]
                } else {
                    [2.0 * h * u[1] / denom, 2.0 * h * u[2] / denom]
                }
            }
            System::Euler { .. } => {
                if u[0] < VACUUM_RHO {
                    [0.0, 0.0]
                } else {
                    [u[1] / u[0], u[2] / u[0]]
                }
            }
        }
    }

    pub fn pressure(&self, u: State) -> f64 {
        match *self {
            System::ShallowWater { gravity, .. } => 0.5 * gravity * u[0] * u[0],
            System::Euler { gamma } => {
                let v = self.velocity(u);
                (gamma - 1.0) * (u[3] - 0.5 * (u[1] * v[0] + u[2] * v[1]))
            }
        }
    }

    /// Flux `f(U)`, one spatial 2-vector per conserved component. The mass
    /// flux is assembled from the regularized velocity (`h v` resp. `rho v`)
    /// so that it stays consistent with the wave-speed estimate near dry and
    /// vacuum states; this is what makes the first-component bar states
    /// provably nonnegative under the viscous CFL condition.
    pub fn flux(&self, u: State) -> [[f64; 2]; 4] {
        let v = self.velocity(u);
        match *self {
            System::ShallowWater { gravity, .. } => {
                let h = u[0];
                let p = 0.5 * gravity * h * h;
                let q = [h * v[0], h * v[1]];
                [
                    [q[0], q[1]],
                    [v[0] * q[0] + p, v[1] * q[0]],
                    [v[0] * q[1], v[1] * q[1] + p],
                    [0.0, 0.0],
                ]
            }
            System::Euler { .. } => {
                let p = self.pressure(u);
                let m = [u[0] * v[0], u[0] * v[1]];
                [
                    [m[0], m[1]],
                    [v[0] * m[0] + p, v[1] * m[0]],
                    [v[0] * m[1], v[1] * m[1] + p],
                    [v[0] * (u[3] + p), v[1] * (u[3] + p)],
                ]
            }
        }
    }

    /// Admissibility constraint values `Psi^l(U)`: shallow water `[h]`, Euler
    /// `[rho, e]` with `e` the specific internal energy.
    pub fn constraint_values(&self, u: State) -> Vec<f64> {
        match self {
            System::ShallowWater { .. } => vec![u[0]],
            System::Euler { .. } => vec![u[0], self.specific_internal_energy(u)],
        }
    }

    pub fn specific_internal_energy(&self, u: State) -> f64 {
        debug_assert!(matches!(self, System::Euler { .. }));
        if u[0] < VACUUM_RHO {
            return 0.0;
        }
        (u[3] - 0.5 * (u[1] * u[1] + u[2] * u[2]) / u[0]) / u[0]
    }

    pub fn is_admissible(&self, u: State) -> bool {
        match self {
            System::ShallowWater { .. } => u[0] >= 0.0 && u.iter().all(|x| x.is_finite()),
            System::Euler { .. } => {
                u[0] > 0.0
                    && self.specific_internal_energy(u) > 0.0
                    && u.iter().all(|x| x.is_finite())
            }
        }
    }

    /// The scalar fed to the smoothness indicator (depth resp. density).
    pub fn indicator_quantity(&self, u: State) -> f64 {
        u[0]
    }

    pub fn sound_speed(&self, u: State) -> f64 {
        match *self {
            System::ShallowWater { gravity, .. } => (gravity * u[0].max(0.0)).sqrt(),
            System::Euler { gamma } => {
                if u[0] < VACUUM_RHO {
                    0.0
                } else {
                    (gamma * self.pressure(u).max(0.0) / u[0]).sqrt()
                }
            }
        }
    }

    /// Guaranteed upper bound on the fastest wave speed of the 1D Riemann
    /// problem `(U_L, U_R)` in direction `n` (unit vector): two-rarefaction
    /// intermediate-state estimate with shock correction, floored at the
    /// normal material speeds (the floor is what guarantees nonnegative
    /// first-component bar states; the two-sided estimate alone can dip
    /// below `|v_n|` for co-moving states with small sound speed).
    pub fn max_wave_speed(&self, ul: State, ur: State, n: [f64; 2]) -> f64 {
        let vl = self.velocity(ul);
        let vr = self.velocity(ur);
        let vnl = vl[0] * n[0] + vl[1] * n[1];
        let vnr = vr[0] * n[0] + vr[1] * n[1];
        let floor = vnl.abs().max(vnr.abs());
        let base = self.wave_speed_estimate(ul, ur, vnl, vnr);
        base.max(floor)
    }

    fn wave_speed_estimate(&self, ul: State, ur: State, vnl: f64, vnr: f64) -> f64 {
        match *self {
            System::ShallowWater { gravity, h_cutoff } => {
                let (hl, hr) = (ul[0].max(0.0), ur[0].max(0.0));
                let al = (gravity * hl).sqrt();
                let ar = (gravity * hr).sqrt();
                // Depths below the desingularization cutoff count as dry:
                // the wet-branch shock correction scales like 1/sqrt(h) and
                // would blow the estimate up on vanishing residual films.
                let dry = |h: f64| h <= h_cutoff;
                if dry(hl) && dry(hr) {
                    return 0.0;
                }
                if dry(hr) {
                    // dry-front speed v + 2a on the right, left-going wave v - a
                    return (vnl - al).abs().max((vnl + 2.0 * al).abs());
                }
                if dry(hl) {
                    return (vnr + ar).abs().max((vnr - 2.0 * ar).abs());
                }
                let a_star = (0.5 * (al + ar) - 0.25 * (vnr - vnl)).max(0.0);
                let h_star = a_star * a_star / gravity;
                let shock = |a: f64, h: f64| {
                    if h_star > h {
                        let z = h_star / h;
                        a * (0.5 * z * (1.0 + z)).sqrt()
                    } else {
                        a
                    }
                };
                let lam_l = vnl - shock(al, hl);
                let lam_r = vnr + shock(ar, hr);
                lam_l.abs().max(lam_r.abs())
            }
            System::Euler { gamma } => {
                let vac = |u: State| u[0] < VACUUM_RHO;
                if vac(ul) && vac(ur) {
                    return 0.0;
                }
                let al = self.sound_speed(ul);
                let ar = self.sound_speed(ur);
                let gm = gamma - 1.0;
                if vac(ur) {
                    return (vnl - al).abs().max((vnl + 2.0 * al / gm).abs());
                }
                if vac(ul) {
                    return (vnr + ar).abs().max((vnr - 2.0 * ar / gm).abs());
                }
                let pl = self.pressure(ul).max(f64::MIN_POSITIVE);
                let pr = self.pressure(ur).max(f64::MIN_POSITIVE);
                // two-rarefaction intermediate pressure estimate
                let expo = gm / (2.0 * gamma);
                let num = (al + ar - 0.5 * gm * (vnr - vnl)).max(0.0);
                let den = al / pl.powf(expo) + ar / pr.powf(expo);
                let p_star = (num / den).powf(1.0 / expo);
                let shock = |a: f64, p: f64| {
                    if p_star > p {
                        a * (1.0 + (gamma + 1.0) / (2.0 * gamma) * (p_star - p) / p).sqrt()
                    } else {
                        a
                    }
                };
                let lam_l = vnl - shock(al, pl);
                let lam_r = vnr + shock(ar, pr);
                lam_l.abs().max(lam_r.abs())
            }
        }
    }

    /// Widen `bounds` to contain the state `u`.
    pub fn accumulate_bounds(&self, bounds: &mut Bounds, u: State) {
        let q = u[0];
        bounds.lin_min = bounds.lin_min.min(q);
        bounds.lin_max = bounds.lin_max.max(q);
        if let System::Euler { .. } = self {
            bounds.concave_min = bounds.concave_min.min(self.specific_internal_energy(u));
        }
    }

    /// Largest `l` in `[0,1]` such that `base + l*dir` satisfies `bounds`:
    /// closed form for the two-sided linear quantity, a quadratic root for the
    /// Euler internal-energy lower bound.
    pub fn limit_line(&self, bounds: &Bounds, base: State, dir: State) -> f64 {
        let mut l = limit_linear(base[0], dir[0], bounds.lin_min, bounds.lin_max);
        if let System::Euler { .. } = self {
            if bounds.concave_min.is_finite() {
                l = l.min(limit_energy(base, dir, bounds.concave_min));
            }
        }
        l
    }
}

/// Largest `l` in `[0,1]` with `qmin <= q0 + l*dq <= qmax`, given `q0` within
/// the bounds up to roundoff.
fn limit_linear(q0: f64, dq: f64, qmin: f64, qmax: f64) -> f64 {
    let scale = q0.abs().max(dq.abs()).max(1e-300);
    if dq.abs() <= 1e-15 * scale {
        return 1.0;
    }
    let target = if dq > 0.0 { qmax } else { qmin };
    if !target.is_finite() {
        return 1.0;
    }
    ((target - q0) / dq).clamp(0.0, 1.0)
}

/// Largest `l` in `[0,1]` keeping the specific internal energy of
/// `base + l*dir` at or above `e_min`, via the quadratic
/// `G(l) = 2 rho E - |m|^2 - 2 e_min rho^2 >= 0` (equivalent for `rho > 0`).
fn limit_energy(base: State, dir: State, e_min: f64) -> f64 {
    let (r0, e0) = (base[0], base[3]);
    let (dr, de) = (dir[0], dir[3]);
    let m0 = [base[1], base[2]];
    let dm = [dir[1], dir[2]];
    let a = 2.0 * dr * de - (dm[0] * dm[0] + dm[1] * dm[1]) - 2.0 * e_min * dr * dr;
    let b = 2.0 * (r0 * de + dr * e0)
        - 2.0 * (m0[0] * dm[0] + m0[1] * dm[1])
        - 4.0 * e_min * r0 * dr;
    let c = 2.0 * r0 * e0 - (m0[0] * m0[0] + m0[1] * m0[1]) - 2.0 * e_min * r0 * r0;
    let g = |l: f64| (a * l + b) * l + c;
    let scale = a.abs().max(b.abs()).max(c.abs()).max(1e-300);
    let tol = 1e-14 * scale;
    if c < -tol {
        // base already violates the bound (roundoff): do not move
        return 0.0;
    }
    // smallest root in (0, 1]; G(0) = c >= 0 so the feasible interval from 0
    // extends to that root
    let root = if a.abs() <= 1e-15 * scale {
        if b >= 0.0 {
            return 1.0;
        }
        -c / b
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            // no real root: sign of G never changes; G(0) >= 0 everywhere
            return 1.0;
        }
        let sq = disc.sqrt();
        // numerically stable pair of roots
        let q = -0.5 * (b + b.signum() * sq);
        let (r1, r2) = (q / a, if q.abs() > 0.0 { c / q } else { f64::INFINITY });
        let mut smallest = f64::INFINITY;
        for r in [r1, r2] {
            if r > 1e-15 && r < smallest {
                smallest = r;
            }
        }
        if smallest.is_infinite() {
            return 1.0;
        }
        smallest
    };
    let mut l = root.clamp(0.0, 1.0);
    // safeguard against roundoff in the closed form
    let mut guard = 0;
    while g(l) < -tol && l > 0.0 && guard < 60 {
        l *= 0.5;
        guard += 1;
    }
    l
}
