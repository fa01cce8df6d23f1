//! Nodal conserved states in struct-of-arrays layout.

/// A single conserved state. Components beyond the system's count are zero.
pub type State = [f64; 4];

pub const MAX_COMP: usize = 4;

pub fn state_add(a: State, b: State) -> State {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

pub fn state_sub(a: State, b: State) -> State {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

pub fn state_scale(s: f64, a: State) -> State {
    [s * a[0], s * a[1], s * a[2], s * a[3]]
}

pub fn state_axpy(acc: &mut State, s: f64, a: State) {
    for c in 0..MAX_COMP {
        acc[c] += s * a[c];
    }
}

/// Per-node conserved states, one contiguous array per component.
#[derive(Clone, Debug)]
pub struct StateVector {
    pub n_comp: usize,
    pub n_dofs: usize,
    comps: Vec<Vec<f64>>,
}

impl StateVector {
    pub fn zeros(n_comp: usize, n_dofs: usize) -> Self {
        assert!(n_comp >= 1 && n_comp <= MAX_COMP);
        Self {
            n_comp,
            n_dofs,
            comps: vec![vec![0.0; n_dofs]; n_comp],
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> State {
        let mut u = [0.0; 4];
        for c in 0..self.n_comp {
            u[c] = self.comps[c][i];
        }
        u
    }

    #[inline]
    pub fn set(&mut self, i: usize, u: State) {
        for c in 0..self.n_comp {
            self.comps[c][i] = u[c];
        }
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.comps[c]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.comps[c]
    }

    pub fn fill_with(&mut self, u: State) {
        for i in 0..self.n_dofs {
            self.set(i, u);
        }
    }

    /// Componentwise weighted totals `sum_i w_i U_i`.
    pub fn weighted_totals(&self, w: &[f64]) -> State {
        assert_eq!(w.len(), self.n_dofs);
        let mut tot = [0.0; 4];
        for c in 0..self.n_comp {
            tot[c] = self.comps[c]
                .iter()
                .zip(w)
                .map(|(u, wi)| wi * u)
                .sum();
        }
        tot
    }
}
