//! Reader and writer for the subset of Gmsh MSH 4.1 ASCII used here: nodes,
//! 4-node tetrahedra, 3-node boundary triangles grouped by physical name,
//! and optional periodic node links. Materials live in a sidecar CSV.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{BoundaryKind, MeshError, TetMesh};
use crate::equations::Material;

const TRIANGLE: u32 = 2;
const TETRAHEDRON: u32 = 4;

/// Mesh contents as read from disk, before validation.
#[derive(Debug, Default)]
pub struct RawMesh {
    pub vertices: Vec<[f64; 3]>,
    pub elements: Vec<[usize; 4]>,
    pub element_tags: Vec<u64>,
    pub boundary: HashMap<[usize; 3], BoundaryKind>,
    pub periodic: Option<Vec<usize>>,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str, MeshError> {
        for (i, l) in self.inner.by_ref() {
            self.line = i + 1;
            let t = l.trim();
            if !t.is_empty() {
                return Ok(t);
            }
        }
        Err(MeshError::Parse { line: self.line, msg: "unexpected end of file".into() })
    }

    fn err(&self, msg: impl Into<String>) -> MeshError {
        MeshError::Parse { line: self.line, msg: msg.into() }
    }

    fn numbers<T: std::str::FromStr>(&mut self) -> Result<Vec<T>, MeshError> {
        let l = self.next()?;
        l.split_whitespace()
            .map(|tok| tok.parse::<T>().map_err(|_| self.err(format!("bad number '{tok}'"))))
            .collect()
    }

    fn expect(&mut self, what: &str) -> Result<(), MeshError> {
        let l = self.next()?;
        if l != what {
            return Err(self.err(format!("expected {what}, found '{l}'")));
        }
        Ok(())
    }
}

fn field<T: Copy>(v: &[T], i: usize, lines: &Lines<'_>) -> Result<T, MeshError> {
    v.get(i).copied().ok_or_else(|| lines.err("line too short"))
}

pub fn read_msh(path: &Path) -> Result<RawMesh, MeshError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| MeshError::Io { path: path.display().to_string(), source })?;
    parse_msh(&text)
}

pub fn parse_msh(text: &str) -> Result<RawMesh, MeshError> {
    let mut lines = Lines { inner: text.lines().enumerate(), line: 0 };
    let mut physical_names: HashMap<i64, String> = HashMap::new();
    // Surface entity tag -> physical tags.
    let mut surface_physicals: HashMap<i64, Vec<i64>> = HashMap::new();
    let mut node_index: HashMap<u64, usize> = HashMap::new();
    let mut raw = RawMesh::default();
    let mut triangles: Vec<([u64; 3], i64)> = Vec::new();
    let mut tets: Vec<(u64, [u64; 4])> = Vec::new();
    let mut periodic_pairs: Vec<(u64, u64)> = Vec::new();
    let mut seen_format = false;

    loop {
        let header = match lines.next() {
            Ok(h) => h,
            Err(_) => break,
        };
        match header {
            "$MeshFormat" => {
                let l = lines.next()?;
                let mut it = l.split_whitespace();
                let version = it.next().unwrap_or("");
                let file_type = it.next().unwrap_or("");
                if version != "4.1" || file_type != "0" {
                    return Err(lines.err(format!("unsupported format '{l}', need 4.1 ASCII")));
                }
                seen_format = true;
                lines.expect("$EndMeshFormat")?;
            }
            "$PhysicalNames" => {
                let n = field(&lines.numbers::<usize>()?, 0, &lines)?;
                for _ in 0..n {
                    let l = lines.next()?;
                    let mut parts = l.splitn(3, char::is_whitespace);
                    let _dim = parts.next();
                    let tag: i64 = parts
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| lines.err("bad physical tag"))?;
                    let name = parts.next().unwrap_or("").trim().trim_matches('"').to_string();
                    physical_names.insert(tag, name);
                }
                lines.expect("$EndPhysicalNames")?;
            }
            "$Entities" => {
                let counts = lines.numbers::<usize>()?;
                if counts.len() < 4 {
                    return Err(lines.err("entity counts need 4 values"));
                }
                for _ in 0..counts[0] + counts[1] {
                    lines.next()?;
                }
                for _ in 0..counts[2] {
                    let v = lines.numbers::<f64>()?;
                    let tag = field(&v, 0, &lines)? as i64;
                    let nphys = field(&v, 7, &lines)? as usize;
                    let phys = (0..nphys).map(|i| field(&v, 8 + i, &lines).map(|p| p as i64)).collect::<Result<_, _>>()?;
                    surface_physicals.insert(tag, phys);
                }
                for _ in 0..counts[3] {
                    lines.next()?;
                }
                lines.expect("$EndEntities")?;
            }
            "$Nodes" => {
                let head = lines.numbers::<u64>()?;
                let blocks = field(&head, 0, &lines)?;
                for _ in 0..blocks {
                    let b = lines.numbers::<u64>()?;
                    if field(&b, 2, &lines)? != 0 {
                        return Err(lines.err("parametric nodes are not supported"));
                    }
                    let n = field(&b, 3, &lines)? as usize;
                    let mut tags = Vec::with_capacity(n);
                    for _ in 0..n {
                        tags.push(field(&lines.numbers::<u64>()?, 0, &lines)?);
                    }
                    for tag in tags {
                        let c = lines.numbers::<f64>()?;
                        let xyz = [field(&c, 0, &lines)?, field(&c, 1, &lines)?, field(&c, 2, &lines)?];
                        if node_index.insert(tag, raw.vertices.len()).is_some() {
                            return Err(lines.err(format!("duplicate node tag {tag}")));
                        }
                        raw.vertices.push(xyz);
                    }
                }
                lines.expect("$EndNodes")?;
            }
            "$Elements" => {
                let head = lines.numbers::<u64>()?;
                let blocks = field(&head, 0, &lines)?;
                for _ in 0..blocks {
                    let b = lines.numbers::<i64>()?;
                    let entity = field(&b, 1, &lines)?;
                    let kind = field(&b, 2, &lines)? as u32;
                    let n = field(&b, 3, &lines)? as usize;
                    for _ in 0..n {
                        let e = lines.numbers::<u64>()?;
                        match kind {
                            TRIANGLE => triangles.push((
                                [field(&e, 1, &lines)?, field(&e, 2, &lines)?, field(&e, 3, &lines)?],
                                entity,
                            )),
                            TETRAHEDRON => tets.push((
                                field(&e, 0, &lines)?,
                                [field(&e, 1, &lines)?, field(&e, 2, &lines)?, field(&e, 3, &lines)?, field(&e, 4, &lines)?],
                            )),
                            _ => {}
                        }
                    }
                }
                lines.expect("$EndElements")?;
            }
            "$Periodic" => {
                let links = field(&lines.numbers::<usize>()?, 0, &lines)?;
                for _ in 0..links {
                    lines.next()?;
                    let affine = lines.numbers::<f64>()?;
                    if field(&affine, 0, &lines)? as usize > 0 && affine.len() == 1 {
                        // Affine values on their own line.
                        lines.next()?;
                    }
                    let n = field(&lines.numbers::<usize>()?, 0, &lines)?;
                    for _ in 0..n {
                        let p = lines.numbers::<u64>()?;
                        periodic_pairs.push((field(&p, 0, &lines)?, field(&p, 1, &lines)?));
                    }
                }
                lines.expect("$EndPeriodic")?;
            }
            other if other.starts_with("$") => {
                // Skip unknown sections.
                let end = format!("$End{}", &other[1..]);
                while lines.next()? != end {}
            }
            other => return Err(lines.err(format!("unexpected line '{other}'"))),
        }
    }
    if !seen_format {
        return Err(MeshError::Parse { line: 0, msg: "missing $MeshFormat".into() });
    }

    let lookup = |tag: u64| -> Result<usize, MeshError> {
        node_index
            .get(&tag)
            .copied()
            .ok_or(MeshError::Parse { line: 0, msg: format!("unknown node tag {tag}") })
    };
    for (tag, nodes) in tets {
        raw.element_tags.push(tag);
        raw.elements.push([lookup(nodes[0])?, lookup(nodes[1])?, lookup(nodes[2])?, lookup(nodes[3])?]);
    }
    if !periodic_pairs.is_empty() {
        let mut parent: Vec<usize> = (0..raw.vertices.len()).collect();
        fn root(parent: &mut [usize], mut v: usize) -> usize {
            while parent[v] != v {
                parent[v] = parent[parent[v]];
                v = parent[v];
            }
            v
        }
        for (slave, master) in periodic_pairs {
            let (a, b) = (root(&mut parent, lookup(slave)?), root(&mut parent, lookup(master)?));
            if a != b {
                let (lo, hi) = (a.min(b), a.max(b));
                parent[hi] = lo;
            }
        }
        let canon = (0..parent.len()).map(|v| root(&mut parent, v)).collect();
        raw.periodic = Some(canon);
    }
    for (nodes, entity) in triangles {
        let phys = surface_physicals.get(&entity).and_then(|p| p.first()).copied();
        let name = phys
            .and_then(|p| physical_names.get(&p))
            .ok_or_else(|| MeshError::UnknownTag(format!("surface entity {entity} without physical name")))?;
        let kind = BoundaryKind::from_tag(name)?;
        let mut key = [lookup(nodes[0])?, lookup(nodes[1])?, lookup(nodes[2])?];
        if let Some(c) = &raw.periodic {
            key = key.map(|v| c[v]);
        }
        key.sort_unstable();
        raw.boundary.insert(key, kind);
    }
    Ok(raw)
}

/// Serializes a mesh in the supported MSH subset.
pub fn write_msh(mesh: &TetMesh) -> String {
    let mut out = String::new();
    let kinds = [BoundaryKind::FreeSurface, BoundaryKind::Outflow];
    out.push_str("$MeshFormat\n4.1 0 8\n$EndMeshFormat\n");
    out.push_str("$PhysicalNames\n3\n");
    for (i, k) in kinds.iter().enumerate() {
        let _ = writeln!(out, "2 {} \"{}\"", i + 1, k.tag());
    }
    out.push_str("3 3 \"domain\"\n$EndPhysicalNames\n");
    out.push_str("$Entities\n0 0 2 1\n");
    for i in 0..kinds.len() {
        let _ = writeln!(out, "{} 0 0 0 0 0 0 1 {} 0", i + 1, i + 1);
    }
    out.push_str("1 0 0 0 0 0 0 1 3 0\n$EndEntities\n");

    let nv = mesh.vertices.len();
    let _ = writeln!(out, "$Nodes\n1 {nv} 1 {nv}\n3 1 0 {nv}");
    for v in 0..nv {
        let _ = writeln!(out, "{}", v + 1);
    }
    for p in &mesh.vertices {
        let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
    }
    out.push_str("$EndNodes\n");

    let mut by_kind: Vec<Vec<[usize; 3]>> = vec![Vec::new(); 2];
    let mut faces: Vec<(&[usize; 3], &BoundaryKind)> = mesh.boundary.iter().collect();
    faces.sort();
    for (f, k) in faces {
        by_kind[kinds.iter().position(|x| x == k).expect("known kind")].push(*f);
    }
    let blocks = 1 + by_kind.iter().filter(|b| !b.is_empty()).count();
    let total = mesh.len() + by_kind.iter().map(Vec::len).sum::<usize>();
    let _ = writeln!(out, "$Elements\n{blocks} {total} 1 {total}");
    let mut tag = 1;
    for (i, faces) in by_kind.iter().enumerate() {
        if faces.is_empty() {
            continue;
        }
        let _ = writeln!(out, "2 {} {TRIANGLE} {}", i + 1, faces.len());
        for f in faces {
            let _ = writeln!(out, "{tag} {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
            tag += 1;
        }
    }
    let _ = writeln!(out, "3 1 {TETRAHEDRON} {}", mesh.len());
    for e in &mesh.elements {
        let _ = writeln!(out, "{tag} {} {} {} {}", e[0] + 1, e[1] + 1, e[2] + 1, e[3] + 1);
        tag += 1;
    }
    out.push_str("$EndElements\n");

    if let Some(canon) = &mesh.periodic {
        let pairs: Vec<(usize, usize)> = canon.iter().enumerate().filter(|(v, c)| *v != **c).map(|(v, c)| (v, *c)).collect();
        let _ = writeln!(out, "$Periodic\n1\n2 1 1\n0\n{}", pairs.len());
        for (v, c) in pairs {
            let _ = writeln!(out, "{} {}", v + 1, c + 1);
        }
        out.push_str("$EndPeriodic\n");
    }
    out
}

/// Element tags written by [`write_msh`]: boundary triangles come first.
pub fn written_element_tags(mesh: &TetMesh) -> Vec<u64> {
    let first = mesh.boundary.len() as u64 + 1;
    (0..mesh.len() as u64).map(|k| first + k).collect()
}

#[derive(Debug, Deserialize)]
struct MaterialRow {
    elem_id: u64,
    rho: f64,
    vp: f64,
    vs: f64,
    qp: f64,
    qs: f64,
}

/// Reads `elem_id, rho, vp, vs, qp, qs` rows and orders them by `tags`.
pub fn read_materials(path: &Path, tags: &[u64]) -> Result<Vec<Material>, MeshError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| MeshError::Io { path: path.display().to_string(), source })?;
    parse_materials(&text, tags)
}

pub fn parse_materials(text: &str, tags: &[u64]) -> Result<Vec<Material>, MeshError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut by_tag = HashMap::new();
    for row in rdr.deserialize::<MaterialRow>() {
        let row = row.map_err(|e| MeshError::Material(e.to_string()))?;
        let mat = Material::from_velocities(row.rho, row.vp, row.vs, row.qp, row.qs)
            .map_err(|e| MeshError::Material(format!("element {}: {e}", row.elem_id)))?;
        if by_tag.insert(row.elem_id, mat).is_some() {
            return Err(MeshError::Material(format!("duplicate element {}", row.elem_id)));
        }
    }
    tags.iter()
        .map(|t| by_tag.get(t).copied().ok_or_else(|| MeshError::Material(format!("no material for element {t}"))))
        .collect()
}

pub fn write_materials(mesh: &TetMesh, tags: &[u64]) -> String {
    let mut out = String::from("elem_id,rho,vp,vs,qp,qs\n");
    for (m, t) in mesh.materials.iter().zip(tags) {
        let _ = writeln!(out, "{t},{},{},{},{},{}", m.rho, m.vp, m.vs, m.qp, m.qs);
    }
    out
}

/// Writes `mesh.msh` and `materials.csv` into `dir` and returns both paths.
pub fn save(mesh: &TetMesh, dir: &Path, stem: &str) -> Result<(std::path::PathBuf, std::path::PathBuf), MeshError> {
    let msh = dir.join(format!("{stem}.msh"));
    let csv = dir.join(format!("{stem}_materials.csv"));
    let io = |p: &Path| {
        let p = p.display().to_string();
        move |source| MeshError::Io { path: p, source }
    };
    std::fs::write(&msh, write_msh(mesh)).map_err(io(&msh))?;
    std::fs::write(&csv, write_materials(mesh, &written_element_tags(mesh))).map_err(io(&csv))?;
    Ok((msh, csv))
}
