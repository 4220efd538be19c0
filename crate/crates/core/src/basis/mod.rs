//! Reference-tetrahedron machinery: the orthonormal Dubiner-type modal basis,
//! its triangular face counterpart, and the stiffness and flux matrices.
//!
//! Reference tetrahedron vertices are `(0,0,0)`, `(1,0,0)`, `(0,1,0)` and
//! `(0,0,1)`. Faces are listed with vertex orders that are counter-clockwise
//! when seen from outside, so two elements sharing a face always see it with
//! opposite orientation:
//!
//! | face | vertices  | plane     |
//! |------|-----------|-----------|
//! | 0    | 0, 2, 1   | z = 0     |
//! | 1    | 0, 1, 3   | y = 0     |
//! | 2    | 0, 3, 2   | x = 0     |
//! | 3    | 1, 2, 3   | x+y+z = 1 |
//!
//! Both bases are orthonormal, so the mass matrices are identities and the
//! "premultiplied by the inverse mass matrix" convention is implicit.

pub mod poly;
pub mod quadrature;

use std::io::Write;

use thiserror::Error;

use crate::dense::Mat;
use poly::{scaled_jacobi, Poly3};
use quadrature::{tetrahedron_exactness, tetrahedron_rule, triangle_exactness, triangle_rule};

pub const MAX_ORDER: usize = 8;

/// Reference tetrahedron vertices.
pub const REF_VERTICES: [[f64; 3]; 4] =
    [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Local vertex ids of each face, counter-clockwise seen from outside.
pub const FACE_VERTICES: [[usize; 3]; 4] = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];

/// For orientation `h` (0-based here), positions in the neighbor's face vertex
/// list of the local face's vertices `(A, B, C)`.
///
/// Seen from the neighbor the shared face is traversed in reverse, so its
/// vertex list is a cyclic shift of `(A, C, B)`; `h` is the position of `A`.
pub const ORIENTATION_POSITIONS: [[usize; 3]; 3] = [[0, 2, 1], [1, 0, 2], [2, 1, 0]];

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("order {0} outside supported range 1..={MAX_ORDER}")]
    UnsupportedOrder(usize),
    #[error("quadrature with {points} points per direction is exact to degree {exactness}, need {needed}")]
    InsufficientQuadrature { points: usize, exactness: usize, needed: usize },
}

/// Basis sizes for convergence order `O`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BasisInfo {
    pub order: usize,
    /// Tetrahedral basis count `O(O+1)(O+2)/6`.
    pub nb3d: usize,
    /// Triangular basis count `O(O+1)/2`.
    pub nb2d: usize,
}

pub fn basis_counts(order: usize) -> Result<BasisInfo, BasisError> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(BasisError::UnsupportedOrder(order));
    }
    Ok(BasisInfo {
        order,
        nb3d: order * (order + 1) * (order + 2) / 6,
        nb2d: order * (order + 1) / 2,
    })
}

/// Maps 2D face coordinates `(s, t)` of face `face` to reference coordinates,
/// using the face's own vertex order.
pub fn face_point(face: usize, s: f64, t: f64) -> [f64; 3] {
    face_point_with_vertices(FACE_VERTICES[face], s, t)
}

fn face_point_with_vertices(v: [usize; 3], s: f64, t: f64) -> [f64; 3] {
    let p0 = REF_VERTICES[v[0]];
    let p1 = REF_VERTICES[v[1]];
    let p2 = REF_VERTICES[v[2]];
    std::array::from_fn(|d| p0[d] + s * (p1[d] - p0[d]) + t * (p2[d] - p0[d]))
}

/// Maps local face coordinates of a neighbor's face `face` seen under
/// orientation `h` (0-based) to the neighbor's reference coordinates.
pub fn neighbor_face_point(face: usize, h: usize, s: f64, t: f64) -> [f64; 3] {
    let pos = ORIENTATION_POSITIONS[h];
    let fv = FACE_VERTICES[face];
    face_point_with_vertices([fv[pos[0]], fv[pos[1]], fv[pos[2]]], s, t)
}

/// Orthonormal modal bases on the reference tetrahedron and triangle.
#[derive(Clone, Debug)]
pub struct Basis {
    pub info: BasisInfo,
    tet: Vec<Poly3>,
    tet_grad: Vec<[Poly3; 3]>,
    tri: Vec<Poly3>,
    /// Total polynomial degree of each tetrahedral mode.
    pub mode_degree: Vec<usize>,
}

impl Basis {
    pub fn new(order: usize) -> Result<Self, BasisError> {
        let info = basis_counts(order)?;
        let n = order + 2;
        let rule3 = tetrahedron_rule(n);
        let rule2 = triangle_rule(n);

        let u = Poly3::linear(1.0, 0.0, -1.0, -1.0); // 1 - y - z
        let a_u = Poly3::linear(-1.0, 2.0, 1.0, 1.0); // 2x + y + z - 1
        let w = Poly3::linear(1.0, 0.0, 0.0, -1.0); // 1 - z
        let b_w = Poly3::linear(-1.0, 0.0, 2.0, 1.0); // 2y + z - 1
        let c = Poly3::linear(-1.0, 0.0, 0.0, 2.0); // 2z - 1
        let one = Poly3::constant(1.0);

        let mut tet = Vec::with_capacity(info.nb3d);
        let mut mode_degree = Vec::with_capacity(info.nb3d);
        for p in 0..order {
            for i in 0..=p {
                for j in 0..=(p - i) {
                    let k = p - i - j;
                    let f1 = scaled_jacobi(i, 0.0, &a_u, &u);
                    let f2 = scaled_jacobi(j, (2 * i + 1) as f64, &b_w, &w);
                    let f3 = scaled_jacobi(k, (2 * i + 2 * j + 2) as f64, &c, &one);
                    let phi = &(&f1 * &f2) * &f3;
                    let norm: f64 = rule3
                        .points
                        .iter()
                        .zip(&rule3.weights)
                        .map(|(x, wq)| wq * phi.eval(x[0], x[1], x[2]).powi(2))
                        .sum();
                    tet.push(phi.scale(1.0 / norm.sqrt()));
                    mode_degree.push(p);
                }
            }
        }

        // Triangle in (s, t) stored as a polynomial in the first two variables.
        let u2 = Poly3::linear(1.0, 0.0, -1.0, 0.0); // 1 - t
        let a_u2 = Poly3::linear(-1.0, 2.0, 1.0, 0.0); // 2s + t - 1
        let b2 = Poly3::linear(-1.0, 0.0, 2.0, 0.0); // 2t - 1
        let mut tri = Vec::with_capacity(info.nb2d);
        for p in 0..order {
            for i in 0..=p {
                let j = p - i;
                let f1 = scaled_jacobi(i, 0.0, &a_u2, &u2);
                let f2 = scaled_jacobi(j, (2 * i + 1) as f64, &b2, &one);
                let psi = &f1 * &f2;
                let norm: f64 = rule2
                    .points
                    .iter()
                    .zip(&rule2.weights)
                    .map(|(x, wq)| wq * psi.eval(x[0], x[1], 0.0).powi(2))
                    .sum();
                tri.push(psi.scale(1.0 / norm.sqrt()));
            }
        }

        let tet_grad = tet.iter().map(|p| [p.derivative(0), p.derivative(1), p.derivative(2)]).collect();
        Ok(Self { info, tet, tet_grad, tri, mode_degree })
    }

    pub fn order(&self) -> usize {
        self.info.order
    }

    pub fn nb(&self) -> usize {
        self.info.nb3d
    }

    pub fn nf(&self) -> usize {
        self.info.nb2d
    }

    pub fn tet_poly(&self, mode: usize) -> &Poly3 {
        &self.tet[mode]
    }

    /// All tetrahedral modes at a reference point.
    pub fn eval(&self, xi: [f64; 3]) -> Vec<f64> {
        self.tet.iter().map(|p| p.eval(xi[0], xi[1], xi[2])).collect()
    }

    /// Gradients (w.r.t. reference coordinates) of all modes at a point.
    pub fn eval_grad(&self, xi: [f64; 3]) -> Vec<[f64; 3]> {
        self.tet_grad
            .iter()
            .map(|g| std::array::from_fn(|d| g[d].eval(xi[0], xi[1], xi[2])))
            .collect()
    }

    /// All triangular modes at face coordinates `(s, t)`.
    pub fn eval_face(&self, s: f64, t: f64) -> Vec<f64> {
        self.tri.iter().map(|p| p.eval(s, t, 0.0)).collect()
    }

    /// Evaluates a modal expansion `coeffs[mode]` at a reference point.
    pub fn evaluate_expansion(&self, coeffs: &[f64], xi: [f64; 3]) -> f64 {
        self.eval(xi).iter().zip(coeffs).map(|(p, c)| p * c).sum()
    }

    /// L2 projection of `f` (given in reference coordinates) onto the basis.
    pub fn project(&self, mut f: impl FnMut([f64; 3]) -> f64, quad_points: usize) -> Vec<f64> {
        let rule = tetrahedron_rule(quad_points);
        let mut out = vec![0.0; self.nb()];
        for (x, w) in rule.points.iter().zip(&rule.weights) {
            let fx = f(*x);
            for (o, p) in out.iter_mut().zip(self.eval(*x)) {
                *o += w * fx * p;
            }
        }
        out
    }
}

/// Reference matrices shared by all elements.
#[derive(Clone, Debug)]
pub struct ReferenceMatrices {
    pub info: BasisInfo,
    /// Diagonal of the reference mass matrix (identity for this basis).
    pub mass_diag: Vec<f64>,
    /// `K_c[b][a] = int phi_b d_c phi_a`, inverse-mass premultiplied, `B x B`.
    /// Used as `T K_c` in the volume kernel.
    pub stiffness: [Mat; 3],
    /// `K_c^T`, used as `Q K_c^T` in the Cauchy-Kowalevski recursion.
    pub stiffness_t: [Mat; 3],
    /// Local flux matrices `B x F`, projecting a volume expansion onto face `i`.
    pub flux_local: [Mat; 4],
    /// Transposed flux matrices `F x B` (inverse-mass premultiplied).
    pub flux_local_t: [Mat; 4],
    /// Neighboring flux matrices `B x F`, index `3 * j + h` (both 0-based).
    pub flux_neighbor: Vec<Mat>,
}

impl ReferenceMatrices {
    pub fn fbar(&self, neighbor_face: usize, orientation: usize) -> &Mat {
        &self.flux_neighbor[3 * neighbor_face + orientation]
    }

    /// Writes every matrix as `name rows cols` followed by row-major values.
    pub fn dump(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut put = |name: String, m: &Mat| -> std::io::Result<()> {
            writeln!(w, "{name} {} {}", m.rows(), m.cols())?;
            for r in 0..m.rows() {
                let row: Vec<String> = (0..m.cols()).map(|c| format!("{:.17e}", m[(r, c)])).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
            Ok(())
        };
        for c in 0..3 {
            put(format!("K{}", c + 1), &self.stiffness[c])?;
        }
        for i in 0..4 {
            put(format!("Ftilde{}", i + 1), &self.flux_local[i])?;
        }
        for i in 0..4 {
            put(format!("Fhat{}", i + 1), &self.flux_local_t[i])?;
        }
        for j in 0..4 {
            for h in 0..3 {
                put(format!("Fbar{}_{}", j + 1, h + 1), self.fbar(j, h))?;
            }
        }
        Ok(())
    }
}

/// Assembles all reference matrices with a quadrature that is exact for the
/// bilinear forms involved.
pub fn assemble_reference_matrices(basis: &Basis) -> Result<ReferenceMatrices, BasisError> {
    assemble_with_quadrature(basis, basis.order() + 2)
}

/// Same as [`assemble_reference_matrices`] with an explicit number of
/// Gauss points per collapsed direction.
pub fn assemble_with_quadrature(basis: &Basis, points: usize) -> Result<ReferenceMatrices, BasisError> {
    let order = basis.order();
    let needed = 2 * order;
    let exact3 = tetrahedron_exactness(points);
    let exact2 = triangle_exactness(points);
    if exact3 < needed || exact2 < needed {
        return Err(BasisError::InsufficientQuadrature { points, exactness: exact3.min(exact2), needed });
    }
    let nb = basis.nb();
    let nf = basis.nf();
    let rule3 = tetrahedron_rule(points);
    let rule2 = triangle_rule(points);
    const CLEAN: f64 = 1e-13;

    let mut mass = Mat::zeros(nb, nb);
    let mut stiff = [Mat::zeros(nb, nb), Mat::zeros(nb, nb), Mat::zeros(nb, nb)];
    for (x, w) in rule3.points.iter().zip(&rule3.weights) {
        let phi = basis.eval(*x);
        let grad = basis.eval_grad(*x);
        for b in 0..nb {
            for a in 0..nb {
                mass[(b, a)] += w * phi[b] * phi[a];
                for (c, s) in stiff.iter_mut().enumerate() {
                    s[(b, a)] += w * phi[b] * grad[a][c];
                }
            }
        }
    }
    let mass_diag: Vec<f64> = (0..nb).map(|b| mass[(b, b)]).collect();
    let stiffness = stiff.map(|s| {
        // Premultiply by the inverse (diagonal) mass matrix.
        Mat::from_fn(nb, nb, |b, a| s[(b, a)] / mass_diag[b]).cleaned(CLEAN)
    });
    let stiffness_t = std::array::from_fn(|c| stiffness[c].transpose());

    let face_matrix = |map: &dyn Fn(f64, f64) -> [f64; 3]| -> Mat {
        let mut m = Mat::zeros(nb, nf);
        for (x, w) in rule2.points.iter().zip(&rule2.weights) {
            let phi = basis.eval(map(x[0], x[1]));
            let psi = basis.eval_face(x[0], x[1]);
            for b in 0..nb {
                for f in 0..nf {
                    m[(b, f)] += w * phi[b] * psi[f];
                }
            }
        }
        m.cleaned(CLEAN)
    };

    let flux_local: [Mat; 4] = std::array::from_fn(|i| face_matrix(&|s, t| face_point(i, s, t)));
    let flux_local_t = std::array::from_fn(|i| {
        let ft = flux_local[i].transpose();
        Mat::from_fn(nf, nb, |f, b| ft[(f, b)] / mass_diag[b])
    });
    let mut flux_neighbor = Vec::with_capacity(12);
    for j in 0..4 {
        for h in 0..3 {
            flux_neighbor.push(face_matrix(&|s, t| neighbor_face_point(j, h, s, t)));
        }
    }

    Ok(ReferenceMatrices {
        info: basis.info,
        mass_diag,
        stiffness,
        stiffness_t,
        flux_local,
        flux_local_t,
        flux_neighbor,
    })
}
