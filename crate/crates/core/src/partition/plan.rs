//! Per-partition element records, ghost copies and send plan.

use crate::equations::Material;
use crate::lts::{ClusterGraph, Clustering};
use crate::mesh::{BoundaryKind, FaceAdjacency, FaceLink, TetMesh};

use super::{reorder, roles, PartitionError, Role};

/// Fixed run parameters shared by every partition of one preprocessing run.
#[derive(Clone, Debug, PartialEq)]
pub struct PartitionHeader {
    pub partition: usize,
    pub partitions: usize,
    pub order: usize,
    pub precision_bits: u32,
    pub width: usize,
    pub nc: usize,
    pub lambda: f64,
    pub dt_min: f64,
    /// Relaxation mechanisms and the center frequency of their band.
    pub mechanisms: usize,
    pub center_freq: f64,
    /// Global cluster graph, identical in every partition.
    pub graph: ClusterGraph,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LinkRecord {
    /// Neighbor stored in this partition (local index), its face and the
    /// orientation seen from this element.
    Local { element: usize, face: usize, orientation: usize },
    /// Neighbor owned elsewhere (index into the ghost list).
    Ghost { ghost: usize, face: usize, orientation: usize },
    Boundary(BoundaryKind),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementRecord {
    pub global: u64,
    pub cluster: u8,
    pub role: Role,
    pub vertices: [[f64; 3]; 4],
    pub material: Material,
    pub links: [LinkRecord; 4],
}

/// Read-only copy of a remote neighbor.
#[derive(Clone, Debug, PartialEq)]
pub struct GhostRecord {
    pub global: u64,
    pub partition: usize,
    pub cluster: u8,
    pub material: Material,
}

/// One face payload this partition produces for a remote reader.
#[derive(Clone, Debug, PartialEq)]
pub struct SendRecord {
    pub element: usize,
    pub face: usize,
    pub dest_partition: usize,
    pub dest_element: u64,
    pub dest_face: usize,
    /// Orientation of the shared face seen from the reader.
    pub dest_orientation: usize,
    pub dest_cluster: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionData {
    pub header: PartitionHeader,
    /// Sorted by (cluster, role, global id).
    pub elements: Vec<ElementRecord>,
    pub ghosts: Vec<GhostRecord>,
    pub sends: Vec<SendRecord>,
}

impl PartitionData {
    /// Contiguous element range of every cluster.
    pub fn cluster_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut ranges = Vec::with_capacity(self.header.nc);
        let mut start = 0;
        for l in 0..self.header.nc {
            let mut end = start;
            while end < self.elements.len() && self.elements[end].cluster as usize == l {
                end += 1;
            }
            ranges.push(start..end);
            start = end;
        }
        ranges
    }
}

/// Run parameters the builder copies into every header.
#[derive(Clone, Debug)]
pub struct PlanParams {
    pub order: usize,
    pub precision_bits: u32,
    pub width: usize,
    pub mechanisms: usize,
    pub center_freq: f64,
}

/// Splits the mesh by `part` (partition per element) into worker inputs.
/// Element ids are the positions in `mesh`.
pub fn build_partitions(
    mesh: &TetMesh,
    adj: &FaceAdjacency,
    clustering: &Clustering,
    part: &[usize],
    parts: usize,
    params: &PlanParams,
) -> Result<Vec<PartitionData>, PartitionError> {
    let n = mesh.len();
    if part.len() != n || part.iter().any(|&p| p >= parts) {
        return Err(PartitionError::Format("partition vector does not match the mesh".into()));
    }
    let roles = roles(adj, part);
    let perm = reorder(&clustering.cluster, part, &roles);
    let graph = ClusterGraph::from_mesh(clustering, adj);

    // Local index of every element inside its partition.
    let mut local = vec![0usize; n];
    let mut next = vec![0usize; parts];
    for &k in &perm {
        local[k] = next[part[k]];
        next[part[k]] += 1;
    }

    let mut out: Vec<PartitionData> = (0..parts)
        .map(|p| PartitionData {
            header: PartitionHeader {
                partition: p,
                partitions: parts,
                order: params.order,
                precision_bits: params.precision_bits,
                width: params.width,
                nc: clustering.nc,
                lambda: clustering.lambda,
                dt_min: clustering.dt_min,
                mechanisms: params.mechanisms,
                center_freq: params.center_freq,
                graph: graph.clone(),
            },
            elements: Vec::with_capacity(next[p]),
            ghosts: Vec::new(),
            sends: Vec::new(),
        })
        .collect();
    let mut ghost_index: Vec<std::collections::HashMap<usize, usize>> = vec![Default::default(); parts];

    for &k in &perm {
        let p = part[k];
        let mut links = [LinkRecord::Boundary(BoundaryKind::Outflow); 4];
        for (i, link) in adj.links[k].iter().enumerate() {
            links[i] = match *link {
                FaceLink::Boundary(kind) => LinkRecord::Boundary(kind),
                FaceLink::Neighbor { element, face, orientation } if part[element] == p => {
                    LinkRecord::Local { element: local[element], face, orientation }
                }
                FaceLink::Neighbor { element, face, orientation } => {
                    let data = &mut out[p];
                    let ghost = *ghost_index[p].entry(element).or_insert_with(|| {
                        data.ghosts.push(GhostRecord {
                            global: element as u64,
                            partition: part[element],
                            cluster: clustering.cluster[element],
                            material: mesh.materials[element],
                        });
                        data.ghosts.len() - 1
                    });
                    let dest_orientation = match adj.links[element][face] {
                        FaceLink::Neighbor { orientation, .. } => orientation,
                        FaceLink::Boundary(_) => unreachable!("asymmetric face adjacency"),
                    };
                    data.sends.push(SendRecord {
                        element: local[k],
                        face: i,
                        dest_partition: part[element],
                        dest_element: element as u64,
                        dest_face: face,
                        dest_orientation,
                        dest_cluster: clustering.cluster[element],
                    });
                    LinkRecord::Ghost { ghost, face, orientation }
                }
            };
        }
        let vertices = std::array::from_fn(|v| mesh.vertices[mesh.elements[k][v]]);
        out[p].elements.push(ElementRecord {
            global: k as u64,
            cluster: clustering.cluster[k],
            role: roles[k],
            vertices,
            material: mesh.materials[k],
            links,
        });
    }
    Ok(out)
}
