//! Structured box meshes split into six tetrahedra per cell (Kuhn
//! subdivision), with optional grading and periodic identification.

use std::collections::HashMap;

use super::{BoundaryKind, MeshError, TetMesh};
use crate::basis::FACE_VERTICES;
use crate::equations::Material;

#[derive(Clone, Debug)]
pub struct BoxSpec {
    /// Grid coordinates per axis, strictly increasing.
    pub coords: [Vec<f64>; 3],
    pub periodic: [bool; 3],
    /// Boundary kind of the `-x, +x, -y, +y, -z, +z` sides.
    pub sides: [BoundaryKind; 6],
}

impl BoxSpec {
    /// Uniform `n x n x n` grid over `[0, len]^3`.
    pub fn cube(n: usize, len: f64) -> Self {
        let c: Vec<f64> = (0..=n).map(|i| len * i as f64 / n as f64).collect();
        Self { coords: [c.clone(), c.clone(), c], periodic: [false; 3], sides: [BoundaryKind::Outflow; 6] }
    }

    pub fn periodic_cube(n: usize, len: f64) -> Self {
        Self { periodic: [true; 3], ..Self::cube(n, len) }
    }

    pub fn with_sides(mut self, sides: [BoundaryKind; 6]) -> Self {
        self.sides = sides;
        self
    }
}

/// Coordinates from a start value and successive cell widths.
pub fn coords_from_widths(start: f64, widths: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(widths.len() + 1);
    out.push(start);
    let mut x = start;
    for w in widths {
        x += w;
        out.push(x);
    }
    out
}

// Paths from corner 000 to 111 through the unit cube, one per axis permutation.
const KUHN: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

pub fn box_mesh(spec: &BoxSpec, material: impl Fn([f64; 3]) -> Material) -> Result<TetMesh, MeshError> {
    let n: [usize; 3] = std::array::from_fn(|d| spec.coords[d].len().saturating_sub(1));
    for d in 0..3 {
        if n[d] == 0 || spec.coords[d].windows(2).any(|w| !(w[1] > w[0])) {
            return Err(MeshError::Parse { line: 0, msg: format!("axis {d}: coordinates must increase") });
        }
        if spec.periodic[d] && n[d] < 3 {
            return Err(MeshError::Parse { line: 0, msg: format!("axis {d}: periodic grids need at least 3 cells") });
        }
    }
    let np = [n[0] + 1, n[1] + 1, n[2] + 1];
    let vid = |i: usize, j: usize, k: usize| i + np[0] * (j + np[1] * k);
    let mut vertices = Vec::with_capacity(np[0] * np[1] * np[2]);
    for k in 0..np[2] {
        for j in 0..np[1] {
            for i in 0..np[0] {
                vertices.push([spec.coords[0][i], spec.coords[1][j], spec.coords[2][k]]);
            }
        }
    }
    let any_periodic = spec.periodic.iter().any(|&p| p);
    let canon: Vec<usize> = (0..vertices.len())
        .map(|v| {
            let mut idx = [v % np[0], (v / np[0]) % np[1], v / (np[0] * np[1])];
            for d in 0..3 {
                if spec.periodic[d] && idx[d] == n[d] {
                    idx[d] = 0;
                }
            }
            vid(idx[0], idx[1], idx[2])
        })
        .collect();

    let mut elements = Vec::with_capacity(6 * n[0] * n[1] * n[2]);
    let mut materials = Vec::with_capacity(elements.capacity());
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                for path in KUHN {
                    let mut idx = [i, j, k];
                    let mut tet = [vid(i, j, k), 0, 0, 0];
                    for (s, &axis) in path.iter().enumerate() {
                        idx[axis] += 1;
                        tet[s + 1] = vid(idx[0], idx[1], idx[2]);
                    }
                    let c: [f64; 3] = std::array::from_fn(|d| tet.iter().map(|&v| vertices[v][d]).sum::<f64>() / 4.0);
                    elements.push(tet);
                    materials.push(material(c));
                }
            }
        }
    }

    // Tag faces lying on non-periodic sides.
    let mut boundary = HashMap::new();
    for tet in &elements {
        for fv in FACE_VERTICES {
            let f = fv.map(|l| tet[l]);
            for d in 0..3 {
                if spec.periodic[d] {
                    continue;
                }
                let ax = |v: usize| [v % np[0], (v / np[0]) % np[1], v / (np[0] * np[1])][d];
                for (side, at) in [(0, 0), (1, n[d])] {
                    if f.iter().all(|&v| ax(v) == at) {
                        let mut key = f.map(|v| canon[v]);
                        key.sort_unstable();
                        boundary.insert(key, spec.sides[2 * d + side]);
                    }
                }
            }
        }
    }
    TetMesh::new(vertices, elements, materials, boundary, any_periodic.then_some(canon))
}
