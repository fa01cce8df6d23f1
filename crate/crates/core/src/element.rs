//! Tensor-product Lagrange elements at Gauss-Lobatto points on the unit
//! square, plus the bilinear cell mapping and the local integrals built on
//! top of it (mass, stiffness, transport).

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ElementError {
    #[error("unsupported polynomial degree {0} (supported: 1, 2)")]
    UnsupportedDegree(usize),
    #[error("degenerate cell: nonpositive Jacobian determinant {0:e}")]
    DegenerateCell(f64),
}

/// 1D Gauss-Legendre rule on [0,1] with `n` points (exact through degree 2n-1).
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    // Tabulated rules on [-1,1], mapped to [0,1].
    let (pts, wts): (Vec<f64>, Vec<f64>) = match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0f64 / 5.0).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let a = (3.0 / 7.0 - 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let b = (3.0 / 7.0 + 2.0 / 7.0 * (6.0f64 / 5.0).sqrt()).sqrt();
            let wa = (18.0 + 30f64.sqrt()) / 36.0;
            let wb = (18.0 - 30f64.sqrt()) / 36.0;
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        5 => {
            let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
            let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
            let wa = (322.0 + 13.0 * 70f64.sqrt()) / 900.0;
            let wb = (322.0 - 13.0 * 70f64.sqrt()) / 900.0;
            (
                vec![-b, -a, 0.0, a, b],
                vec![wb, wa, 128.0 / 225.0, wa, wb],
            )
        }
        _ => panic!("Gauss-Legendre rule with {n} points not tabulated"),
    };
    (
        pts.iter().map(|x| 0.5 * (x + 1.0)).collect(),
        wts.iter().map(|w| 0.5 * w).collect(),
    )
}

/// Lagrange basis on Gauss-Lobatto points of `[0,1]^2`, lexicographic node
/// ordering (x fastest). Quadrature is tensor Gauss-Legendre with p+1 points
/// per direction.
pub struct ReferenceElement {
    pub degree: usize,
    pub nodes_1d: Vec<f64>,
    quad_pts: Vec<f64>,
    quad_wts: Vec<f64>,
}

impl ReferenceElement {
    pub fn new(degree: usize) -> Result<Self, ElementError> {
        let nodes_1d = match degree {
            1 => vec![0.0, 1.0],
            2 => vec![0.0, 0.5, 1.0],
            _ => return Err(ElementError::UnsupportedDegree(degree)),
        };
        let (quad_pts, quad_wts) = gauss_legendre_unit(degree + 1);
        Ok(Self {
            degree,
            nodes_1d,
            quad_pts,
            quad_wts,
        })
    }

    pub fn n_nodes_1d(&self) -> usize {
        self.degree + 1
    }

    pub fn n_nodes(&self) -> usize {
        (self.degree + 1) * (self.degree + 1)
    }

    pub fn node_ref(&self, i: usize) -> [f64; 2] {
        let n = self.n_nodes_1d();
        [self.nodes_1d[i % n], self.nodes_1d[i / n]]
    }

    /// True if local node `i` sits at a corner of the reference cell.
    pub fn is_vertex_node(&self, i: usize) -> bool {
        let [x, y] = self.node_ref(i);
        (x == 0.0 || x == 1.0) && (y == 0.0 || y == 1.0)
    }

    pub fn lagrange_1d(&self, k: usize, x: f64) -> f64 {
        let mut v = 1.0;
        let xk = self.nodes_1d[k];
        for (j, &xj) in self.nodes_1d.iter().enumerate() {
            if j != k {
                v *= (x - xj) / (xk - xj);
            }
        }
        v
    }

    pub fn dlagrange_1d(&self, k: usize, x: f64) -> f64 {
        let xk = self.nodes_1d[k];
        let mut sum = 0.0;
        for (m, &xm) in self.nodes_1d.iter().enumerate() {
            if m == k {
                continue;
            }
            let mut term = 1.0 / (xk - xm);
            for (j, &xj) in self.nodes_1d.iter().enumerate() {
                if j != k && j != m {
                    term *= (x - xj) / (xk - xj);
                }
            }
            sum += term;
        }
        sum
    }

    pub fn shape(&self, i: usize, p: [f64; 2]) -> f64 {
        let n = self.n_nodes_1d();
        self.lagrange_1d(i % n, p[0]) * self.lagrange_1d(i / n, p[1])
    }

    pub fn grad_shape(&self, i: usize, p: [f64; 2]) -> [f64; 2] {
        let n = self.n_nodes_1d();
        let (ix, iy) = (i % n, i / n);
        [
            self.dlagrange_1d(ix, p[0]) * self.lagrange_1d(iy, p[1]),
            self.lagrange_1d(ix, p[0]) * self.dlagrange_1d(iy, p[1]),
        ]
    }

    /// Tensor quadrature points and weights on the reference cell.
    pub fn quadrature(&self) -> Vec<([f64; 2], f64)> {
        let mut out = Vec::with_capacity(self.quad_pts.len() * self.quad_pts.len());
        for (qy, wy) in self.quad_pts.iter().zip(&self.quad_wts) {
            for (qx, wx) in self.quad_pts.iter().zip(&self.quad_wts) {
                out.push(([*qx, *qy], wx * wy));
            }
        }
        out
    }
}

/// Bilinear map of the unit square onto a quadrilateral; vertex order is
/// reference-lexicographic: (0,0), (1,0), (0,1), (1,1).
#[derive(Clone, Copy, Debug)]
pub struct CellGeometry {
    pub verts: [[f64; 2]; 4],
}

impl CellGeometry {
    pub fn map(&self, p: [f64; 2]) -> [f64; 2] {
        let [x, y] = p;
        let w = [
            (1.0 - x) * (1.0 - y),
            x * (1.0 - y),
            (1.0 - x) * y,
            x * y,
        ];
        let mut out = [0.0; 2];
        for (wi, v) in w.iter().zip(&self.verts) {
            out[0] += wi * v[0];
            out[1] += wi * v[1];
        }
        out
    }

    /// Jacobian [[dx/dxi, dx/deta], [dy/dxi, dy/deta]] at a reference point.
    pub fn jacobian(&self, p: [f64; 2]) -> [[f64; 2]; 2] {
        let [x, y] = p;
        let v = &self.verts;
        let dxi = [
            (v[1][0] - v[0][0]) * (1.0 - y) + (v[3][0] - v[2][0]) * y,
            (v[1][1] - v[0][1]) * (1.0 - y) + (v[3][1] - v[2][1]) * y,
        ];
        let deta = [
            (v[2][0] - v[0][0]) * (1.0 - x) + (v[3][0] - v[1][0]) * x,
            (v[2][1] - v[0][1]) * (1.0 - x) + (v[3][1] - v[1][1]) * x,
        ];
        [[dxi[0], deta[0]], [dxi[1], deta[1]]]
    }

    /// Area by the shoelace formula (exact for straight-edged quads).
    pub fn area(&self) -> f64 {
        // counterclockwise corner order
        let p = [self.verts[0], self.verts[1], self.verts[3], self.verts[2]];
        let mut a = 0.0;
        for k in 0..4 {
            let q = p[(k + 1) % 4];
            a += p[k][0] * q[1] - q[0] * p[k][1];
        }
        0.5 * a
    }

    /// Vertices of the child occupying quadrant `q` (qx = q & 1, qy = q >> 1)
    /// under algebraic bisection of the reference cell.
    pub fn child(&self, q: usize) -> CellGeometry {
        let (qx, qy) = ((q & 1) as f64, (q >> 1) as f64);
        let corner = |dx: f64, dy: f64| self.map([0.5 * (qx + dx), 0.5 * (qy + dy)]);
        CellGeometry {
            verts: [
                corner(0.0, 0.0),
                corner(1.0, 0.0),
                corner(0.0, 1.0),
                corner(1.0, 1.0),
            ],
        }
    }
}

/// Local cell integrals: consistent mass, lumped mass (row sums), stiffness
/// (grad-grad), and transport vectors c_ij = int phi_i grad(phi_j).
pub struct LocalMats {
    pub mass: DMatrix<f64>,
    pub lumped: Vec<f64>,
    pub stiffness: DMatrix<f64>,
    /// c[i * n + j] = int_K phi_i grad(phi_j) dx
    pub transport: Vec<[f64; 2]>,
}

pub fn local_matrices(elem: &ReferenceElement, geo: &CellGeometry) -> Result<LocalMats, ElementError> {
    let n = elem.n_nodes();
    let mut mass = DMatrix::zeros(n, n);
    let mut stiff = DMatrix::zeros(n, n);
    let mut transport = vec![[0.0; 2]; n * n];

    for (q, w) in elem.quadrature() {
        let jac = geo.jacobian(q);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det <= 0.0 {
            return Err(ElementError::DegenerateCell(det));
        }
        // J^{-T} grad_hat
        let inv_t = |g: [f64; 2]| {
            [
                (jac[1][1] * g[0] - jac[1][0] * g[1]) / det,
                (-jac[0][1] * g[0] + jac[0][0] * g[1]) / det,
            ]
        };
        let vals: Vec<f64> = (0..n).map(|i| elem.shape(i, q)).collect();
        let grads: Vec<[f64; 2]> = (0..n).map(|i| inv_t(elem.grad_shape(i, q))).collect();
        let wj = w * det;
        for i in 0..n {
            for j in 0..n {
                mass[(i, j)] += wj * vals[i] * vals[j];
                stiff[(i, j)] += wj * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                transport[i * n + j][0] += wj * vals[i] * grads[j][0];
                transport[i * n + j][1] += wj * vals[i] * grads[j][1];
            }
        }
    }
    let lumped = (0..n).map(|i| mass.row(i).sum()).collect();
    Ok(LocalMats {
        mass,
        lumped,
        stiffness: stiff,
        transport,
    })
}

/// Consistent mass and lumped mass only (used for projection targets).
pub struct LocalMass {
    pub consistent: DMatrix<f64>,
    pub lumped: Vec<f64>,
}

pub fn local_mass(elem: &ReferenceElement, geo: &CellGeometry) -> Result<LocalMass, ElementError> {
    let m = local_matrices(elem, geo)?;
    Ok(LocalMass {
        consistent: m.mass,
        lumped: m.lumped,
    })
}

/// Mixed parent/child mass on child quadrant `q` of `parent`:
/// A[(i, j)] = int_{C_q} phi_i^parent phi_j^child dx.
pub fn child_in_parent_mass(
    elem: &ReferenceElement,
    parent: &CellGeometry,
    q: usize,
) -> Result<DMatrix<f64>, ElementError> {
    let n = elem.n_nodes();
    let child = parent.child(q);
    let (qx, qy) = ((q & 1) as f64, (q >> 1) as f64);
    let mut a = DMatrix::zeros(n, n);
    for (p, w) in elem.quadrature() {
        let jac = child.jacobian(p);
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if det <= 0.0 {
            return Err(ElementError::DegenerateCell(det));
        }
        let in_parent = [0.5 * (qx + p[0]), 0.5 * (qy + p[1])];
        let wj = w * det;
        for i in 0..n {
            let pi = elem.shape(i, in_parent);
            for j in 0..n {
                a[(i, j)] += wj * pi * elem.shape(j, p);
            }
        }
    }
    Ok(a)
}

/// Values of the parent basis at the nodes of child quadrant `q`:
/// B[(i, j)] = phi_j^parent(node_i of child), in parent reference coordinates.
pub fn parent_shape_at_child_nodes(elem: &ReferenceElement, q: usize) -> DMatrix<f64> {
    let n = elem.n_nodes();
    let (qx, qy) = ((q & 1) as f64, (q >> 1) as f64);
    let mut b = DMatrix::zeros(n, n);
    for i in 0..n {
        let node = elem.node_ref(i);
        let in_parent = [0.5 * (qx + node[0]), 0.5 * (qy + node[1])];
        for j in 0..n {
            b[(i, j)] = elem.shape(j, in_parent);
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_cell() -> CellGeometry {
        CellGeometry {
            verts: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
        }
    }

    #[test]
    fn lagrange_property() {
        for p in [1, 2] {
            let elem = ReferenceElement::new(p).unwrap();
            for i in 0..elem.n_nodes() {
                for j in 0..elem.n_nodes() {
                    let v = elem.shape(i, elem.node_ref(j));
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(v, expect, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_at_quadrature_points() {
        for p in [1, 2] {
            let elem = ReferenceElement::new(p).unwrap();
            for (q, _) in elem.quadrature() {
                let s: f64 = (0..elem.n_nodes()).map(|i| elem.shape(i, q)).sum();
                assert_abs_diff_eq!(s, 1.0, epsilon = 1e-14);
                let g: [f64; 2] = (0..elem.n_nodes()).fold([0.0; 2], |acc, i| {
                    let gi = elem.grad_shape(i, q);
                    [acc[0] + gi[0], acc[1] + gi[1]]
                });
                assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-13);
                assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn unsupported_degree_rejected() {
        assert!(ReferenceElement::new(3).is_err());
        assert!(ReferenceElement::new(0).is_err());
    }

    /// Independent oracle: high-order (5-point) quadrature of bilinear basis
    /// products on the unit cell, frozen against the assembled values.
    #[test]
    fn p1_unit_cell_mass_matches_quadrature_oracle() {
        let elem = ReferenceElement::new(1).unwrap();
        let m = local_matrices(&elem, &unit_cell()).unwrap();

        let (qp, qw) = gauss_legendre_unit(5);
        let mut oracle = [[0.0f64; 4]; 4];
        for (x, wx) in qp.iter().zip(&qw) {
            for (y, wy) in qp.iter().zip(&qw) {
                for i in 0..4 {
                    for j in 0..4 {
                        oracle[i][j] +=
                            wx * wy * elem.shape(i, [*x, *y]) * elem.shape(j, [*x, *y]);
                    }
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(m.mass[(i, j)], oracle[i][j], epsilon = 1e-15);
            }
        }
        // frozen values: diagonal 1/9, edge-neighbor 1/18, diagonal-neighbor 1/36
        assert_abs_diff_eq!(m.mass[(0, 0)], 1.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mass[(0, 1)], 1.0 / 18.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m.mass[(0, 3)], 1.0 / 36.0, epsilon = 1e-15);
        for i in 0..4 {
            assert_abs_diff_eq!(m.lumped[i], 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn scaled_cell_mass_scales_by_h_squared() {
        let elem = ReferenceElement::new(1).unwrap();
        let h = 0.37;
        let geo = CellGeometry {
            verts: [[0.0, 0.0], [h, 0.0], [0.0, h], [h, h]],
        };
        let unit = local_matrices(&elem, &unit_cell()).unwrap();
        let scaled = local_matrices(&elem, &geo).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(scaled.mass[(i, j)], h * h * unit.mass[(i, j)], epsilon = 1e-15);
            }
        }
        let total: f64 = scaled.lumped.iter().sum();
        assert_abs_diff_eq!(total, h * h, epsilon = 1e-15);
    }

    #[test]
    fn degenerate_cell_is_an_error() {
        let elem = ReferenceElement::new(1).unwrap();
        // flipped vertex ordering makes det J negative
        let geo = CellGeometry {
            verts: [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]],
        };
        assert!(local_matrices(&elem, &geo).is_err());
    }

    #[test]
    fn mass_row_sums_equal_lumped_and_symmetry() {
        for p in [1, 2] {
            let elem = ReferenceElement::new(p).unwrap();
            let geo = CellGeometry {
                verts: [[0.2, 0.1], [1.3, 0.2], [0.1, 1.1], [1.2, 1.4]],
            };
            let m = local_matrices(&elem, &geo).unwrap();
            for i in 0..elem.n_nodes() {
                assert_abs_diff_eq!(m.mass.row(i).sum(), m.lumped[i], epsilon = 1e-14);
                assert!(m.lumped[i] > 0.0);
                for j in 0..elem.n_nodes() {
                    assert_abs_diff_eq!(m.mass[(i, j)], m.mass[(j, i)], epsilon = 1e-14);
                    assert_abs_diff_eq!(
                        m.stiffness[(i, j)],
                        m.stiffness[(j, i)],
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn mixed_mass_consistent_with_partition_of_unity() {
        // summing the parent index of the mixed mass recovers the child lumped mass
        for p in [1, 2] {
            let elem = ReferenceElement::new(p).unwrap();
            let parent = unit_cell();
            for q in 0..4 {
                let a = child_in_parent_mass(&elem, &parent, q).unwrap();
                let child = local_matrices(&elem, &parent.child(q)).unwrap();
                for j in 0..elem.n_nodes() {
                    let col: f64 = a.column(j).sum();
                    assert_abs_diff_eq!(col, child.lumped[j], epsilon = 1e-14);
                }
            }
        }
    }
}
