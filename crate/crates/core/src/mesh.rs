//! Quadtree forest over a structured coarse grid: refinement, sibling-only
//! coarsening, 2:1 face balance, and cell geometry queries.

use std::collections::HashMap;

use crate::element::CellGeometry;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct CellId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Mark {
    Refine,
    Coarsen,
    Keep,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Rel {
    Same,
    Finer,
    Coarser,
}

/// Face direction in reference orientation.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Dir {
    XLow,
    XHigh,
    YLow,
    YHigh,
}

pub const DIRS: [Dir; 4] = [Dir::XLow, Dir::XHigh, Dir::YLow, Dir::YHigh];

#[derive(Clone, Debug)]
struct CellNode {
    level: u8,
    parent: Option<CellId>,
    child_index: u8,
    children: Option<[CellId; 4]>,
    verts: [[f64; 2]; 4],
    active: bool,
}

/// What happened to a previously active cell in an adaptation commit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CellOutcome {
    Persist,
    Refined([CellId; 4]),
    CoarsenedInto(CellId),
}

/// Resolved, balance-repaired marks ready to commit.
pub struct AdaptationPlan {
    /// Per old active cell, in active-cell order.
    pub resolved: Vec<(CellId, Mark)>,
}

pub struct MeshForest {
    pub domain: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    /// Torus topology: coarse-grid adjacency wraps in both directions and
    /// there is no domain boundary.
    pub periodic: bool,
    cells: Vec<CellNode>,
    roots: Vec<CellId>,
    pub adaptation_epoch: u64,
}

impl MeshForest {
    /// Structured `nx` x `ny` coarse grid on `[x0,x1] x [y0,y1]`.
    pub fn new(domain: [f64; 4], nx: usize, ny: usize) -> Self {
        assert!(nx > 0 && ny > 0 && domain[1] > domain[0] && domain[3] > domain[2]);
        let [x0, x1, y0, y1] = domain;
        let mut cells = Vec::with_capacity(nx * ny);
        let mut roots = Vec::with_capacity(nx * ny);
        let xc = |i: usize| x0 + (x1 - x0) * i as f64 / nx as f64;
        let yc = |j: usize| y0 + (y1 - y0) * j as f64 / ny as f64;
        for j in 0..ny {
            for i in 0..nx {
                roots.push(CellId(cells.len() as u32));
                cells.push(CellNode {
                    level: 0,
                    parent: None,
                    child_index: 0,
                    children: None,
                    verts: [
                        [xc(i), yc(j)],
                        [xc(i + 1), yc(j)],
                        [xc(i), yc(j + 1)],
                        [xc(i + 1), yc(j + 1)],
                    ],
                    active: true,
                });
            }
        }
        Self {
            domain,
            nx,
            ny,
            periodic: false,
            cells,
            roots,
            adaptation_epoch: 0,
        }
    }

    /// Same grid with wrap-around adjacency (no boundary).
    pub fn new_periodic(domain: [f64; 4], nx: usize, ny: usize) -> Self {
        let mut m = Self::new(domain, nx, ny);
        m.periodic = true;
        m
    }

    fn node(&self, id: CellId) -> &CellNode {
        &self.cells[id.0 as usize]
    }

    pub fn level(&self, id: CellId) -> usize {
        self.node(id).level as usize
    }

    pub fn is_active(&self, id: CellId) -> bool {
        self.node(id).active
    }

    pub fn parent(&self, id: CellId) -> Option<CellId> {
        self.node(id).parent
    }

    /// Quadrant of this cell within its parent (0 if it is a root).
    pub fn child_index(&self, id: CellId) -> usize {
        self.node(id).child_index as usize
    }

    pub fn children(&self, id: CellId) -> Option<[CellId; 4]> {
        self.node(id).children
    }

    pub fn geometry(&self, id: CellId) -> CellGeometry {
        CellGeometry {
            verts: self.node(id).verts,
        }
    }

    pub fn area(&self, id: CellId) -> f64 {
        self.geometry(id).area()
    }

    /// Active (leaf) cells in ascending id order.
    pub fn active_cells(&self) -> Vec<CellId> {
        (0..self.cells.len() as u32)
            .map(CellId)
            .filter(|&id| self.node(id).active)
            .collect()
    }

    pub fn n_active(&self) -> usize {
        self.cells.iter().filter(|c| c.active).count()
    }

    /// Characteristic size (min edge length) over active cells.
    pub fn min_cell_size(&self) -> f64 {
        self.active_cells()
            .iter()
            .map(|&id| {
                let v = self.node(id).verts;
                let ex = ((v[1][0] - v[0][0]).powi(2) + (v[1][1] - v[0][1]).powi(2)).sqrt();
                let ey = ((v[2][0] - v[0][0]).powi(2) + (v[2][1] - v[0][1]).powi(2)).sqrt();
                ex.min(ey)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn root_index(&self, id: CellId) -> usize {
        self.roots.iter().position(|&r| r == id).unwrap()
    }

    /// Same-level-or-coarser tree neighbor in direction `dir`, or None at the
    /// domain boundary. The returned node may be inactive (then its children
    /// hold the active leaves on the shared face).
    fn neighbor_same_or_coarser(&self, id: CellId, dir: Dir) -> Option<CellId> {
        let n = self.node(id);
        match n.parent {
            None => {
                let idx = self.root_index(id);
                let (i, j) = (idx as i64 % self.nx as i64, idx as i64 / self.nx as i64);
                let (mut ni, mut nj) = match dir {
                    Dir::XLow => (i - 1, j),
                    Dir::XHigh => (i + 1, j),
                    Dir::YLow => (i, j - 1),
                    Dir::YHigh => (i, j + 1),
                };
                if self.periodic {
                    ni = ni.rem_euclid(self.nx as i64);
                    nj = nj.rem_euclid(self.ny as i64);
                } else if ni < 0 || ni >= self.nx as i64 || nj < 0 || nj >= self.ny as i64 {
                    return None;
                }
                Some(self.roots[(nj * self.nx as i64 + ni) as usize])
            }
            Some(parent) => {
                let q = n.child_index as usize;
                let (qx, qy) = (q & 1, q >> 1);
                // sibling within the same parent?
                let sibling = match dir {
                    Dir::XLow if qx == 1 => Some(qy * 2),
                    Dir::XHigh if qx == 0 => Some(qy * 2 + 1),
                    Dir::YLow if qy == 1 => Some(qx),
                    Dir::YHigh if qy == 0 => Some(2 + qx),
                    _ => None,
                };
                if let Some(s) = sibling {
                    return Some(self.node(parent).children.unwrap()[s]);
                }
                let pn = self.neighbor_same_or_coarser(parent, dir)?;
                let pn_node = self.node(pn);
                if pn_node.active {
                    return Some(pn);
                }
                match pn_node.children {
                    Some(ch) => {
                        // mirrored quadrant across the face
                        let m = match dir {
                            Dir::XLow => qy * 2 + 1,
                            Dir::XHigh => qy * 2,
                            Dir::YLow => 2 + qx,
                            Dir::YHigh => qx,
                        };
                        Some(ch[m])
                    }
                    None => Some(pn),
                }
            }
        }
    }

    fn collect_face_leaves(&self, id: CellId, facing: Dir, out: &mut Vec<CellId>) {
        let n = self.node(id);
        if n.active {
            out.push(id);
            return;
        }
        let ch = n.children.expect("inactive non-leaf must have children");
        // children touching face `facing` of this node
        let idxs = match facing {
            Dir::XLow => [0, 2],
            Dir::XHigh => [1, 3],
            Dir::YLow => [0, 1],
            Dir::YHigh => [2, 3],
        };
        for k in idxs {
            self.collect_face_leaves(ch[k], facing, out);
        }
    }

    /// The active neighbor across face `dir` if it is one level coarser than
    /// `cell` (the hanging-interface case), else None.
    pub fn coarser_face_neighbor(&self, cell: CellId, dir: Dir) -> Option<CellId> {
        let n = self.neighbor_same_or_coarser(cell, dir)?;
        if self.node(n).active && self.level(n) + 1 == self.level(cell) {
            Some(n)
        } else {
            None
        }
    }

    /// All active cells sharing a face with `cell`. A coarser neighbor appears
    /// once; finer neighbors appear as the children abutting the face.
    pub fn face_neighbors(&self, cell: CellId) -> Vec<(CellId, Rel)> {
        assert!(self.is_active(cell), "face_neighbors requires an active cell");
        let mut out = Vec::new();
        for dir in DIRS {
            let Some(n) = self.neighbor_same_or_coarser(cell, dir) else {
                continue;
            };
            if self.node(n).active {
                let rel = if self.node(n).level == self.node(cell).level {
                    Rel::Same
                } else {
                    Rel::Coarser
                };
                out.push((n, rel));
            } else {
                let facing = match dir {
                    Dir::XLow => Dir::XHigh,
                    Dir::XHigh => Dir::XLow,
                    Dir::YLow => Dir::YHigh,
                    Dir::YHigh => Dir::YLow,
                };
                let mut leaves = Vec::new();
                self.collect_face_leaves(n, facing, &mut leaves);
                for l in leaves {
                    out.push((l, Rel::Finer));
                }
            }
        }
        out
    }

    /// Resolve marks into a balanced, committable plan: coarsen marks are
    /// vetoed where they would break sibling completeness or 2:1 balance,
    /// refine marks propagate where needed. Fixed-point iteration; refine
    /// always wins over coarsen.
    pub fn plan_adaptation(&self, marks: &[(CellId, Mark)], l_max: usize) -> AdaptationPlan {
        let active = self.active_cells();
        let mut idx_of: HashMap<CellId, usize> = HashMap::new();
        for (k, &id) in active.iter().enumerate() {
            idx_of.insert(id, k);
        }
        let mut m: Vec<Mark> = vec![Mark::Keep; active.len()];
        for &(id, mk) in marks {
            if let Some(&k) = idx_of.get(&id) {
                m[k] = mk;
            }
        }
        // refine marks above l_max are ignored; roots cannot coarsen
        for (k, &id) in active.iter().enumerate() {
            if m[k] == Mark::Refine && self.level(id) >= l_max {
                m[k] = Mark::Keep;
            }
            if m[k] == Mark::Coarsen && self.parent(id).is_none() {
                m[k] = Mark::Keep;
            }
        }
        let adjacency: Vec<Vec<usize>> = active
            .iter()
            .map(|&id| {
                self.face_neighbors(id)
                    .into_iter()
                    .map(|(n, _)| idx_of[&n])
                    .collect()
            })
            .collect();
        let final_level = |lvl: usize, mk: Mark| -> i32 {
            lvl as i32
                + match mk {
                    Mark::Refine => 1,
                    Mark::Coarsen => -1,
                    Mark::Keep => 0,
                }
        };
        loop {
            let mut changed = false;
            // sibling completeness: a coarsen group must be 4 active siblings
            // all marked coarsen
            for k in 0..active.len() {
                if m[k] != Mark::Coarsen {
                    continue;
                }
                let parent = self.parent(active[k]).unwrap();
                let ok = self.node(parent).children.unwrap().iter().all(|&s| {
                    self.is_active(s) && idx_of.get(&s).is_some_and(|&sk| m[sk] == Mark::Coarsen)
                });
                if !ok {
                    m[k] = Mark::Keep;
                    changed = true;
                }
            }
            // 2:1 balance on final levels
            for k in 0..active.len() {
                let fk = final_level(self.level(active[k]), m[k]);
                for &nk in &adjacency[k] {
                    let fnv = final_level(self.level(active[nk]), m[nk]);
                    if fk - fnv > 1 {
                        match m[nk] {
                            Mark::Coarsen => m[nk] = Mark::Keep,
                            Mark::Keep => m[nk] = Mark::Refine,
                            Mark::Refine => unreachable!("refined neighbor cannot lag two levels"),
                        }
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        AdaptationPlan {
            resolved: active.into_iter().zip(m).collect(),
        }
    }

    /// Execute a resolved plan. Returns per old active cell what happened.
    pub fn commit(&mut self, plan: &AdaptationPlan) -> Vec<(CellId, CellOutcome)> {
        let mut outcomes = Vec::with_capacity(plan.resolved.len());
        for &(id, mk) in &plan.resolved {
            match mk {
                Mark::Keep => outcomes.push((id, CellOutcome::Persist)),
                Mark::Coarsen => {
                    let parent = self.parent(id).unwrap();
                    self.cells[id.0 as usize].active = false;
                    self.cells[parent.0 as usize].active = true;
                    outcomes.push((id, CellOutcome::CoarsenedInto(parent)));
                }
                Mark::Refine => {
                    let children = match self.node(id).children {
                        Some(ch) => {
                            for c in ch {
                                self.cells[c.0 as usize].active = true;
                            }
                            ch
                        }
                        None => {
                            let geo = self.geometry(id);
                            let mut ch = [CellId(0); 4];
                            for q in 0..4 {
                                let cid = CellId(self.cells.len() as u32);
                                ch[q] = cid;
                                self.cells.push(CellNode {
                                    level: self.node(id).level + 1,
                                    parent: Some(id),
                                    child_index: q as u8,
                                    children: None,
                                    verts: geo.child(q).verts,
                                    active: true,
                                });
                            }
                            self.cells[id.0 as usize].children = Some(ch);
                            ch
                        }
                    };
                    self.cells[id.0 as usize].active = false;
                    outcomes.push((id, CellOutcome::Refined(children)));
                }
            }
        }
        self.adaptation_epoch += 1;
        outcomes
    }

    /// Plan-and-commit in one call.
    pub fn apply_marks(
        &mut self,
        marks: &[(CellId, Mark)],
        l_max: usize,
    ) -> Vec<(CellId, CellOutcome)> {
        let plan = self.plan_adaptation(marks, l_max);
        self.commit(&plan)
    }

    /// 1-irregularity check via the neighbor machinery.
    pub fn is_one_irregular(&self) -> bool {
        self.active_cells().iter().all(|&id| {
            self.face_neighbors(id)
                .iter()
                .all(|&(n, _)| (self.level(id) as i64 - self.level(n) as i64).abs() <= 1)
        })
    }

    pub fn domain_area(&self) -> f64 {
        (self.domain[1] - self.domain[0]) * (self.domain[3] - self.domain[2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mark_all(mesh: &MeshForest, mk: Mark) -> Vec<(CellId, Mark)> {
        mesh.active_cells().into_iter().map(|id| (id, mk)).collect()
    }

    /// Brute-force adjacency oracle from vertex coordinates: two active cells
    /// are face-adjacent iff their boundaries overlap on a segment of
    /// positive length.
    fn geometric_neighbors(mesh: &MeshForest, cell: CellId) -> Vec<CellId> {
        let eps = 1e-12;
        let vb = mesh.geometry(cell).verts;
        let (ax0, ax1) = (vb[0][0], vb[3][0]);
        let (ay0, ay1) = (vb[0][1], vb[3][1]);
        let mut out = Vec::new();
        for other in mesh.active_cells() {
            if other == cell {
                continue;
            }
            let v = mesh.geometry(other).verts;
            let (bx0, bx1) = (v[0][0], v[3][0]);
            let (by0, by1) = (v[0][1], v[3][1]);
            let x_overlap = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
            let y_overlap = (ay1.min(by1) - ay0.max(by0)).max(0.0);
            let x_touch = (ax0 - bx1).abs() < eps || (ax1 - bx0).abs() < eps;
            let y_touch = (ay0 - by1).abs() < eps || (ay1 - by0).abs() < eps;
            if (x_touch && y_overlap > eps) || (y_touch && x_overlap > eps) {
                out.push(other);
            }
        }
        out
    }

    #[test]
    fn single_refine_gives_four_children() {
        let mut mesh = MeshForest::new([0.0, 1.0, 0.0, 1.0], 1, 1);
        mesh.apply_marks(&mark_all(&mesh, Mark::Refine), 5);
        assert_eq!(mesh.n_active(), 4);
        assert!(mesh.active_cells().iter().all(|&c| mesh.level(c) == 1));
    }

    #[test]
    fn coarsen_siblings_restores_parent() {
        let mut mesh = MeshForest::new([0.0, 1.0, 0.0, 1.0], 1, 1);
        mesh.apply_marks(&mark_all(&mesh, Mark::Refine), 5);
        mesh.apply_marks(&mark_all(&mesh, Mark::Coarsen), 5);
        assert_eq!(mesh.n_active(), 1);
        assert_eq!(mesh.level(mesh.active_cells()[0]), 0);
    }

    #[test]
    fn refine_then_coarsen_is_identity_on_active_set() {
        let mut mesh = MeshForest::new([0.0, 2.0, 0.0, 1.0], 2, 1);
        let before = mesh.active_cells();
        mesh.apply_marks(&mark_all(&mesh, Mark::Refine), 5);
        mesh.apply_marks(&mark_all(&mesh, Mark::Coarsen), 5);
        assert_eq!(mesh.active_cells(), before);
    }

    #[test]
    fn two_level_jump_forces_neighbor_refinement() {
        // 2x1 grid; refine the left cell twice in its right half
        let mut mesh = MeshForest::new([0.0, 2.0, 0.0, 1.0], 2, 1);
        let left = mesh.active_cells()[0];
        mesh.apply_marks(&[(left, Mark::Refine)], 5);
        // now refine the two right children of the left cell
        let to_refine: Vec<_> = mesh
            .active_cells()
            .into_iter()
            .filter(|&c| mesh.level(c) == 1 && {
                let v = mesh.geometry(c).verts;
                v[0][0] >= 0.5 - 1e-12 && v[3][0] <= 1.0 + 1e-12
            })
            .map(|c| (c, Mark::Refine))
            .collect();
        assert_eq!(to_refine.len(), 2);
        mesh.apply_marks(&to_refine, 5);
        // the untouched right coarse cell must have been force-refined once
        assert!(mesh.is_one_irregular());
        // fixed-point balance oracle: enumerate face level differences by geometry
        for c in mesh.active_cells() {
            for n in geometric_neighbors(&mesh, c) {
                assert!((mesh.level(c) as i64 - mesh.level(n) as i64).abs() <= 1);
            }
        }
        // specifically, no remaining level-0 cell
        assert!(mesh.active_cells().iter().all(|&c| mesh.level(c) >= 1));
    }

    #[test]
    fn coarsen_vetoed_when_balance_would_break() {
        let mut mesh = MeshForest::new([0.0, 2.0, 0.0, 1.0], 2, 1);
        mesh.apply_marks(&mark_all(&mesh, Mark::Refine), 5);
        // refine the children of the left cell once more
        let fine: Vec<_> = mesh
            .active_cells()
            .into_iter()
            .filter(|&c| mesh.geometry(c).verts[3][0] <= 1.0 + 1e-12)
            .map(|c| (c, Mark::Refine))
            .collect();
        mesh.apply_marks(&fine, 5);
        // marking the right-side level-1 cells for coarsening must be vetoed
        // (it would create a 2-level jump against the level-2 cells)
        let n_before = mesh.n_active();
        let coarsen: Vec<_> = mesh
            .active_cells()
            .into_iter()
            .filter(|&c| mesh.level(c) == 1)
            .map(|c| (c, Mark::Coarsen))
            .collect();
        mesh.apply_marks(&coarsen, 5);
        assert_eq!(mesh.n_active(), n_before);
        assert!(mesh.is_one_irregular());
    }

    #[test]
    fn l_max_caps_refinement() {
        let mut mesh = MeshForest::new([0.0, 1.0, 0.0, 1.0], 1, 1);
        for _ in 0..4 {
            mesh.apply_marks(&mark_all(&mesh, Mark::Refine), 2);
        }
        assert!(mesh.active_cells().iter().all(|&c| mesh.level(c) <= 2));
        assert_eq!(mesh.n_active(), 16);
    }

    #[test]
    fn face_neighbors_uniform_and_corner() {
        let mesh = MeshForest::new([0.0, 3.0, 0.0, 3.0], 3, 3);
        let active = mesh.active_cells();
        let interior = active[4]; // center of 3x3
        assert_eq!(mesh.face_neighbors(interior).len(), 4);
        let corner = active[0];
        assert_eq!(mesh.face_neighbors(corner).len(), 2);
    }

    #[test]
    fn face_neighbors_match_geometric_oracle_on_random_mesh() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut mesh = MeshForest::new([0.0, 2.0, 0.0, 2.0], 2, 2);
        for _ in 0..3 {
            let marks: Vec<_> = mesh
                .active_cells()
                .into_iter()
                .filter(|_| rng.gen_bool(0.5))
                .map(|c| (c, Mark::Refine))
                .collect();
            mesh.apply_marks(&marks, 4);
        }
        assert!(mesh.is_one_irregular());
        for c in mesh.active_cells() {
            let mut got: Vec<_> = mesh.face_neighbors(c).into_iter().map(|(n, _)| n).collect();
            let mut want = geometric_neighbors(&mesh, c);
            got.sort();
            got.dedup();
            want.sort();
            assert_eq!(got, want, "neighbor mismatch for cell {c:?}");
        }
    }

    #[test]
    fn finer_neighbors_reported_as_two_children() {
        let mut mesh = MeshForest::new([0.0, 2.0, 0.0, 1.0], 2, 1);
        let left = mesh.active_cells()[0];
        mesh.apply_marks(&[(left, Mark::Refine)], 5);
        let right = mesh
            .active_cells()
            .into_iter()
            .find(|&c| mesh.level(c) == 0)
            .unwrap();
        let finer: Vec<_> = mesh
            .face_neighbors(right)
            .into_iter()
            .filter(|&(_, r)| r == Rel::Finer)
            .collect();
        assert_eq!(finer.len(), 2);
    }

    #[test]
    fn active_areas_tile_domain() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut mesh = MeshForest::new([0.0, 0.75, 0.0, 0.3], 5, 2);
        for _ in 0..4 {
            let marks: Vec<_> = mesh
                .active_cells()
                .into_iter()
                .map(|c| {
                    let mk = match rng.gen_range(0..3) {
                        0 => Mark::Refine,
                        1 => Mark::Coarsen,
                        _ => Mark::Keep,
                    };
                    (c, mk)
                })
                .collect();
            mesh.apply_marks(&marks, 4);
            assert!(mesh.is_one_irregular());
        }
        let total: f64 = mesh.active_cells().iter().map(|&c| mesh.area(c)).sum();
        let exact = mesh.domain_area();
        assert!(((total - exact) / exact).abs() < 1e-14);
    }

    #[test]
    fn periodic_adjacency_wraps() {
        let mesh = MeshForest::new_periodic([0.0, 3.0, 0.0, 3.0], 3, 3);
        for c in mesh.active_cells() {
            assert_eq!(mesh.face_neighbors(c).len(), 4);
        }
        // refinement across the seam still balances
        let mut mesh = MeshForest::new_periodic([0.0, 2.0, 0.0, 2.0], 2, 2);
        let first = mesh.active_cells()[0];
        mesh.apply_marks(&[(first, Mark::Refine)], 5);
        let deeper: Vec<_> = mesh
            .active_cells()
            .into_iter()
            .filter(|&c| mesh.level(c) == 1)
            .map(|c| (c, Mark::Refine))
            .collect();
        mesh.apply_marks(&deeper, 5);
        assert!(mesh.is_one_irregular());
        let total: f64 = mesh.active_cells().iter().map(|&c| mesh.area(c)).sum();
        assert!((total - 4.0).abs() < 1e-13);
    }

    #[test]
    fn plan_is_idempotent() {
        let mut mesh = MeshForest::new([0.0, 2.0, 0.0, 2.0], 2, 2);
        mesh.apply_marks(&mark_all(&mesh, Mark::Refine), 5);
        let first = mesh.active_cells()[0];
        let marks = vec![(first, Mark::Refine)];
        let plan = mesh.plan_adaptation(&marks, 5);
        let replan = mesh.plan_adaptation(&plan.resolved, 5);
        assert_eq!(plan.resolved, replan.resolved);
    }
}
