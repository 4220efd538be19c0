//! Conforming unstructured tetrahedral meshes: connectivity, face adjacency
//! with orientation indices, geometry and boundary tagging.

pub mod generate;
pub mod msh;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::basis::{FACE_VERTICES, ORIENTATION_POSITIONS};
use crate::equations::Material;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("element {element}: {msg}")]
    Element { element: usize, msg: String },
    #[error("nonconforming mesh: face {face:?} shared by {count} elements")]
    Nonconforming { face: [usize; 3], count: usize },
    #[error("boundary face {face} of element {element} has no boundary tag")]
    UntaggedBoundary { element: usize, face: usize },
    #[error("unknown boundary tag '{0}'")]
    UnknownTag(String),
    #[error("boundary triangle {0:?} is not a boundary face of the mesh")]
    StrayBoundaryTriangle([usize; 3]),
    #[error("face {face} of element {element}: {msg}")]
    Orientation { element: usize, face: usize, msg: String },
    #[error("material table: {0}")]
    Material(String),
    #[error("mesh has no elements")]
    Empty,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundaryKind {
    FreeSurface,
    Outflow,
}

impl BoundaryKind {
    pub fn from_tag(name: &str) -> Result<Self, MeshError> {
        match name {
            "free-surface" => Ok(Self::FreeSurface),
            "outflow" => Ok(Self::Outflow),
            other => Err(MeshError::UnknownTag(other.to_string())),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::FreeSurface => "free-surface",
            Self::Outflow => "outflow",
        }
    }
}

#[derive(Clone, Debug)]
pub struct TetMesh {
    pub vertices: Vec<[f64; 3]>,
    /// Vertex ids per element, ordered so that the signed volume is positive.
    pub elements: Vec<[usize; 4]>,
    /// External element ids (MSH element tags).
    pub element_ids: Vec<u64>,
    pub materials: Vec<Material>,
    /// Boundary tags keyed by the sorted (canonical) vertex triple.
    pub boundary: HashMap<[usize; 3], BoundaryKind>,
    /// Periodic vertex identification: canonical representative per vertex.
    pub periodic: Option<Vec<usize>>,
}

/// Neighbor relation of one element face.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceLink {
    /// Neighbor element, its local face `j` and orientation `h` (0-based).
    Neighbor { element: usize, face: usize, orientation: usize },
    Boundary(BoundaryKind),
}

impl FaceLink {
    pub fn neighbor(&self) -> Option<usize> {
        match self {
            FaceLink::Neighbor { element, .. } => Some(*element),
            FaceLink::Boundary(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FaceAdjacency {
    pub links: Vec<[FaceLink; 4]>,
}

impl FaceAdjacency {
    pub fn neighbors(&self, k: usize) -> impl Iterator<Item = usize> + '_ {
        self.links[k].iter().filter_map(|l| l.neighbor())
    }

    /// Number of distinct faces and of interior faces.
    pub fn face_counts(&self) -> (usize, usize) {
        let mut interior2 = 0;
        let mut boundary = 0;
        for l in self.links.iter().flatten() {
            match l {
                FaceLink::Neighbor { .. } => interior2 += 1,
                FaceLink::Boundary(_) => boundary += 1,
            }
        }
        (interior2 / 2 + boundary, interior2 / 2)
    }
}

/// Affine geometry of one tetrahedron.
#[derive(Clone, Debug)]
pub struct ElementGeometry {
    pub vertices: [[f64; 3]; 4],
    /// Columns are `x1 - x0, x2 - x0, x3 - x0`.
    pub jac: [[f64; 3]; 3],
    /// `jac_inv[c][d] = d xi_c / d x_d`.
    pub jac_inv: [[f64; 3]; 3],
    pub volume: f64,
    pub face_area: [f64; 4],
    /// Outward unit normals.
    pub face_normal: [[f64; 3]; 4],
    /// Orthonormal tangents `(s, t)` with `n x s = t`.
    pub face_tangents: [[[f64; 3]; 2]; 4],
    pub insphere_diameter: f64,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn signed_volume(v: &[[f64; 3]; 4]) -> f64 {
    dot(sub(v[1], v[0]), cross(sub(v[2], v[0]), sub(v[3], v[0]))) / 6.0
}

impl ElementGeometry {
    pub fn new(vertices: [[f64; 3]; 4]) -> Result<Self, String> {
        let e1 = sub(vertices[1], vertices[0]);
        let e2 = sub(vertices[2], vertices[0]);
        let e3 = sub(vertices[3], vertices[0]);
        let jac = [[e1[0], e2[0], e3[0]], [e1[1], e2[1], e3[1]], [e1[2], e2[2], e3[2]]];
        let det = dot(e1, cross(e2, e3));
        let scale = norm(e1).max(norm(e2)).max(norm(e3));
        if !(det > 1e-14 * scale.powi(3)) {
            return Err(format!("signed volume {} is not positive", det / 6.0));
        }
        // Rows of the inverse are the reciprocal basis vectors.
        let r0 = cross(e2, e3).map(|v| v / det);
        let r1 = cross(e3, e1).map(|v| v / det);
        let r2 = cross(e1, e2).map(|v| v / det);
        let jac_inv = [r0, r1, r2];

        let mut face_area = [0.0; 4];
        let mut face_normal = [[0.0; 3]; 4];
        let mut face_tangents = [[[0.0; 3]; 2]; 4];
        for (i, fv) in FACE_VERTICES.iter().enumerate() {
            let p0 = vertices[fv[0]];
            let a = sub(vertices[fv[1]], p0);
            let b = sub(vertices[fv[2]], p0);
            let c = cross(a, b);
            let len = norm(c);
            face_area[i] = 0.5 * len;
            let n = c.map(|v| v / len);
            let s = a.map(|v| v / norm(a));
            face_normal[i] = n;
            face_tangents[i] = [s, cross(n, s)];
        }
        let volume = det / 6.0;
        let insphere_diameter = 6.0 * volume / face_area.iter().sum::<f64>();
        Ok(Self { vertices, jac, jac_inv, volume, face_area, face_normal, face_tangents, insphere_diameter })
    }

    pub fn to_physical(&self, xi: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|d| self.vertices[0][d] + (0..3).map(|c| self.jac[d][c] * xi[c]).sum::<f64>())
    }

    pub fn to_reference(&self, x: [f64; 3]) -> [f64; 3] {
        let r = sub(x, self.vertices[0]);
        std::array::from_fn(|c| dot(self.jac_inv[c], r))
    }

    pub fn centroid(&self) -> [f64; 3] {
        std::array::from_fn(|d| self.vertices.iter().map(|v| v[d]).sum::<f64>() / 4.0)
    }

    /// Whether `x` lies inside (barycentric coordinates above `-tol`).
    pub fn contains(&self, x: [f64; 3], tol: f64) -> bool {
        let xi = self.to_reference(x);
        xi.iter().all(|&v| v >= -tol) && xi.iter().sum::<f64>() <= 1.0 + tol
    }
}

fn sorted3(mut f: [usize; 3]) -> [usize; 3] {
    f.sort_unstable();
    f
}

impl TetMesh {
    /// Builds a mesh, reordering element vertices to positive orientation.
    pub fn new(
        vertices: Vec<[f64; 3]>,
        elements: Vec<[usize; 4]>,
        materials: Vec<Material>,
        boundary: HashMap<[usize; 3], BoundaryKind>,
        periodic: Option<Vec<usize>>,
    ) -> Result<Self, MeshError> {
        if elements.is_empty() {
            return Err(MeshError::Empty);
        }
        if materials.len() != elements.len() {
            return Err(MeshError::Material(format!(
                "{} materials for {} elements",
                materials.len(),
                elements.len()
            )));
        }
        let mut elements = elements;
        for (k, e) in elements.iter_mut().enumerate() {
            if e.iter().any(|&v| v >= vertices.len()) {
                return Err(MeshError::Element { element: k, msg: "vertex id out of range".into() });
            }
            let coords = e.map(|v| vertices[v]);
            let vol = signed_volume(&coords);
            if vol < 0.0 {
                e.swap(2, 3);
            }
            ElementGeometry::new(e.map(|v| vertices[v]))
                .map_err(|msg| MeshError::Element { element: k, msg: format!("inverted or degenerate: {msg}") })?;
        }
        let element_ids = (1..=elements.len() as u64).collect();
        let mesh = Self { vertices, elements, element_ids, materials, boundary, periodic };
        Ok(mesh)
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    fn canon(&self, v: usize) -> usize {
        self.periodic.as_ref().map_or(v, |p| p[v])
    }

    /// Canonical vertex ids of local face `i` of element `k`, in face order.
    pub fn face_vertices(&self, k: usize, i: usize) -> [usize; 3] {
        FACE_VERTICES[i].map(|lv| self.canon(self.elements[k][lv]))
    }

    pub fn geometry(&self, k: usize) -> ElementGeometry {
        ElementGeometry::new(self.elements[k].map(|v| self.vertices[v])).expect("validated at construction")
    }

    pub fn compute_geometry(&self) -> Vec<ElementGeometry> {
        (0..self.len()).map(|k| self.geometry(k)).collect()
    }

    pub fn build_adjacency(&self) -> Result<FaceAdjacency, MeshError> {
        let mut owners: HashMap<[usize; 3], Vec<(usize, usize)>> = HashMap::new();
        for k in 0..self.len() {
            for i in 0..4 {
                let fv = self.face_vertices(k, i);
                if fv[0] == fv[1] || fv[1] == fv[2] || fv[0] == fv[2] {
                    return Err(MeshError::Orientation {
                        element: k,
                        face: i,
                        msg: "face collapses under periodic identification".into(),
                    });
                }
                owners.entry(sorted3(fv)).or_default().push((k, i));
            }
        }
        let mut links = vec![[FaceLink::Boundary(BoundaryKind::Outflow); 4]; self.len()];
        let mut used_tags = 0;
        // Deterministic iteration over faces.
        let mut keys: Vec<_> = owners.keys().copied().collect();
        keys.sort_unstable();
        for key in keys {
            let list = &owners[&key];
            match list.as_slice() {
                [(k, i)] => {
                    let kind = self
                        .boundary
                        .get(&key)
                        .copied()
                        .ok_or(MeshError::UntaggedBoundary { element: *k, face: *i })?;
                    used_tags += 1;
                    links[*k][*i] = FaceLink::Boundary(kind);
                }
                [(k, i), (kn, j)] => {
                    if self.boundary.contains_key(&key) {
                        return Err(MeshError::StrayBoundaryTriangle(key));
                    }
                    let h = self.orientation(*k, *i, *kn, *j)?;
                    let hn = self.orientation(*kn, *j, *k, *i)?;
                    links[*k][*i] = FaceLink::Neighbor { element: *kn, face: *j, orientation: h };
                    links[*kn][*j] = FaceLink::Neighbor { element: *k, face: *i, orientation: hn };
                }
                _ => return Err(MeshError::Nonconforming { face: key, count: list.len() }),
            }
        }
        if used_tags != self.boundary.len() {
            let stray = self
                .boundary
                .keys()
                .find(|f| owners.get(*f).map_or(true, |o| o.len() != 1))
                .copied()
                .unwrap_or([0; 3]);
            return Err(MeshError::StrayBoundaryTriangle(stray));
        }
        Ok(FaceAdjacency { links })
    }

    /// Orientation of neighbor face `(kn, j)` relative to local face `(k, i)`.
    fn orientation(&self, k: usize, i: usize, kn: usize, j: usize) -> Result<usize, MeshError> {
        let local = self.face_vertices(k, i);
        let neigh = self.face_vertices(kn, j);
        for (h, pos) in ORIENTATION_POSITIONS.iter().enumerate() {
            if neigh[pos[0]] == local[0] && neigh[pos[1]] == local[1] && neigh[pos[2]] == local[2] {
                return Ok(h);
            }
        }
        Err(MeshError::Orientation {
            element: k,
            face: i,
            msg: format!("neighbor {kn} face {j} does not traverse the face in reverse"),
        })
    }

    /// Locates the element containing `x`; ties go to the lowest element index.
    pub fn locate(&self, geom: &[ElementGeometry], x: [f64; 3]) -> Option<(usize, [f64; 3])> {
        let tol = 1e-10;
        geom.iter().enumerate().find(|(_, g)| g.contains(x, tol)).map(|(k, g)| (k, g.to_reference(x)))
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.len()).map(|k| self.geometry(k).volume).sum()
    }

    /// Loads an MSH 4.1 ASCII mesh plus its material sidecar CSV.
    pub fn load(mesh_path: &Path, material_path: &Path) -> Result<Self, MeshError> {
        let raw = msh::read_msh(mesh_path)?;
        let materials = msh::read_materials(material_path, &raw.element_tags)?;
        let mut mesh = TetMesh::new(raw.vertices, raw.elements, materials, raw.boundary, raw.periodic)?;
        mesh.element_ids = raw.element_tags;
        Ok(mesh)
    }
}
