//! Little-endian binary partition files.
//!
//! Layout: magic `ADLT`, format version, header fields, relaxation setup,
//! cluster graph, then element, ghost and send records.

use std::path::{Path, PathBuf};

use crate::equations::Material;
use crate::lts::ClusterGraph;
use crate::mesh::BoundaryKind;

use super::plan::{ElementRecord, GhostRecord, LinkRecord, PartitionData, PartitionHeader, SendRecord};
use super::{PartitionError, Role};

pub const MAGIC: &[u8; 4] = b"ADLT";
pub const FORMAT_VERSION: u32 = 1;

pub fn partition_file_name(p: usize) -> String {
    format!("partition_{p:04}.bin")
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn material(&mut self, m: &Material) {
        for v in [m.rho, m.vp, m.vs, m.qp, m.qs] {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PartitionError> {
        if self.pos + n > self.buf.len() {
            return Err(PartitionError::Format(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, PartitionError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize, PartitionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, PartitionError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, PartitionError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn material(&mut self) -> Result<Material, PartitionError> {
        let (rho, vp, vs, qp, qs) = (self.f64()?, self.f64()?, self.f64()?, self.f64()?, self.f64()?);
        Material::from_velocities(rho, vp, vs, qp, qs).map_err(|e| PartitionError::Format(e.to_string()))
    }
}

fn link_code(l: &LinkRecord) -> (u8, usize, usize, usize) {
    match *l {
        LinkRecord::Local { element, face, orientation } => (0, element, face, orientation),
        LinkRecord::Ghost { ghost, face, orientation } => (1, ghost, face, orientation),
        LinkRecord::Boundary(BoundaryKind::FreeSurface) => (2, 0, 0, 0),
        LinkRecord::Boundary(BoundaryKind::Outflow) => (3, 0, 0, 0),
    }
}

pub fn encode(data: &PartitionData) -> Vec<u8> {
    let h = &data.header;
    let mut w = Writer::default();
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION as usize);
    for v in [h.partition, h.partitions, h.order, h.precision_bits as usize, h.width, h.nc] {
        w.u32(v);
    }
    w.f64(h.lambda);
    w.f64(h.dt_min);
    w.u32(h.mechanisms);
    w.f64(h.center_freq);
    for l in 0..h.nc {
        w.u8(h.graph.present[l] as u8);
        w.u8(h.graph.adjacent[l] as u8);
    }
    w.u32(data.elements.len());
    w.u32(data.ghosts.len());
    w.u32(data.sends.len());
    for e in &data.elements {
        w.u64(e.global);
        w.u8(e.cluster);
        w.u8(e.role as u8);
        e.vertices.iter().flatten().for_each(|&x| w.f64(x));
        w.material(&e.material);
        for l in &e.links {
            let (kind, index, face, orientation) = link_code(l);
            w.u8(kind);
            w.u32(index);
            w.u8(face as u8);
            w.u8(orientation as u8);
        }
    }
    for g in &data.ghosts {
        w.u64(g.global);
        w.u32(g.partition);
        w.u8(g.cluster);
        w.material(&g.material);
    }
    for s in &data.sends {
        w.u32(s.element);
        w.u8(s.face as u8);
        w.u32(s.dest_partition);
        w.u64(s.dest_element);
        w.u8(s.dest_face as u8);
        w.u8(s.dest_orientation as u8);
        w.u8(s.dest_cluster);
    }
    w.0
}

pub fn decode(buf: &[u8]) -> Result<PartitionData, PartitionError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(PartitionError::Format("not a partition file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(PartitionError::Format(format!("unsupported format version {version}, expected {FORMAT_VERSION}")));
    }
    let (partition, partitions, order, precision_bits, width, nc) = (r.u32()?, r.u32()?, r.u32()?, r.u32()? as u32, r.u32()?, r.u32()?);
    if !(1..=32).contains(&nc) || partition >= partitions {
        return Err(PartitionError::Format("inconsistent header".into()));
    }
    let lambda = r.f64()?;
    let dt_min = r.f64()?;
    let mechanisms = r.u32()?;
    let center_freq = r.f64()?;
    let mut graph = ClusterGraph { nc, present: vec![false; nc], adjacent: vec![false; nc] };
    for l in 0..nc {
        graph.present[l] = r.u8()? != 0;
        graph.adjacent[l] = r.u8()? != 0;
    }
    let (ne, ng, ns) = (r.u32()?, r.u32()?, r.u32()?);
    let mut elements = Vec::with_capacity(ne);
    for _ in 0..ne {
        let global = r.u64()?;
        let cluster = r.u8()?;
        let role = if r.u8()? == 0 { Role::Interior } else { Role::Send };
        let mut vertices = [[0.0; 3]; 4];
        for v in vertices.iter_mut().flatten() {
            *v = r.f64()?;
        }
        let material = r.material()?;
        let mut links = [LinkRecord::Boundary(BoundaryKind::Outflow); 4];
        for l in links.iter_mut() {
            let (kind, index, face, orientation) = (r.u8()?, r.u32()?, r.u8()? as usize, r.u8()? as usize);
            *l = match kind {
                0 if index < ne => LinkRecord::Local { element: index, face, orientation },
                1 if index < ng => LinkRecord::Ghost { ghost: index, face, orientation },
                2 => LinkRecord::Boundary(BoundaryKind::FreeSurface),
                3 => LinkRecord::Boundary(BoundaryKind::Outflow),
                _ => return Err(PartitionError::Format(format!("bad link record of element {global}"))),
            };
        }
        if cluster as usize >= nc {
            return Err(PartitionError::Format(format!("element {global} has cluster {cluster} >= {nc}")));
        }
        elements.push(ElementRecord { global, cluster, role, vertices, material, links });
    }
    let mut ghosts = Vec::with_capacity(ng);
    for _ in 0..ng {
        ghosts.push(GhostRecord { global: r.u64()?, partition: r.u32()?, cluster: r.u8()?, material: r.material()? });
    }
    let mut sends = Vec::with_capacity(ns);
    for _ in 0..ns {
        let s = SendRecord {
            element: r.u32()?,
            face: r.u8()? as usize,
            dest_partition: r.u32()?,
            dest_element: r.u64()?,
            dest_face: r.u8()? as usize,
            dest_orientation: r.u8()? as usize,
            dest_cluster: r.u8()?,
        };
        if s.element >= ne {
            return Err(PartitionError::Format("send record references a missing element".into()));
        }
        sends.push(s);
    }
    if r.pos != buf.len() {
        return Err(PartitionError::Format(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(PartitionData {
        header: PartitionHeader { partition, partitions, order, precision_bits, width, nc, lambda, dt_min, mechanisms, center_freq, graph },
        elements,
        ghosts,
        sends,
    })
}

pub fn write(data: &PartitionData, dir: &Path) -> Result<PathBuf, PartitionError> {
    let path = dir.join(partition_file_name(data.header.partition));
    std::fs::write(&path, encode(data)).map_err(|source| PartitionError::Io { path: path.display().to_string(), source })?;
    Ok(path)
}

pub fn read(path: &Path) -> Result<PartitionData, PartitionError> {
    let buf = std::fs::read(path).map_err(|source| PartitionError::Io { path: path.display().to_string(), source })?;
    decode(&buf)
}
