//! The `SFMESH01` mesh container.
//!
//! Layout: the 8-byte magic, a little-endian `u32` header length, a JSON
//! [`MeshHeader`], then little-endian payloads in this order: `f64` vertex
//! coordinates `[V, 3]`, `u32` faces `[F, 3]`, `u32` edge pairs `[E, 2]`,
//! `u8` edge level tags `[E]`, `f32` node features `[V, 3]`, `f32` edge
//! features `[E, 4]`, and finally every extra section listed in the header,
//! in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::lam::LamConfig;
use super::multimesh::{LevelStats, MultiMesh, EDGE_CHANNELS, NODE_CHANNELS};
use crate::error::{Error, Result};

pub const MESH_MAGIC: &[u8; 8] = b"SFMESH01";

/// Typed payload of an extra section.
#[derive(Clone, Debug, PartialEq)]
pub enum SectionData {
    U8(Vec<u8>),
    U32(Vec<u32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl SectionData {
    fn dtype(&self) -> &'static str {
        match self {
            Self::U8(_) => "u8",
            Self::U32(_) => "u32",
            Self::F32(_) => "f32",
            Self::F64(_) => "f64",
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::U8(v) => v.len(),
            Self::U32(v) => v.len(),
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub name: String,
    /// Free-form metadata stored in the header next to the section entry.
    pub meta: serde_json::Value,
    pub data: SectionData,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectionInfo {
    pub name: String,
    pub dtype: String,
    pub len: usize,
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LamInfo {
    pub region: String,
    pub config: LamConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MeshHeader {
    pub kind: String,
    pub finest_level: u32,
    pub nodes: usize,
    pub faces: usize,
    pub edges: usize,
    pub length_scale: f64,
    pub level_max_arc: Vec<f64>,
    pub per_level: Vec<LevelStats>,
    pub node_channels: Vec<String>,
    pub edge_channels: Vec<String>,
    #[serde(default)]
    pub lam: Option<LamInfo>,
    pub sections: Vec<SectionInfo>,
    /// Configuration of the run that produced the file.
    #[serde(default)]
    pub run_config: serde_json::Value,
}

/// A mesh plus everything stored alongside it.
#[derive(Clone, Debug)]
pub struct MeshFile {
    pub mesh: MultiMesh,
    pub lam: Option<LamInfo>,
    pub sections: Vec<Section>,
    pub run_config: serde_json::Value,
}

impl MeshFile {
    pub fn new(mesh: MultiMesh) -> Self {
        Self {
            mesh,
            lam: None,
            sections: Vec::new(),
            run_config: serde_json::Value::Null,
        }
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    /// Adds a section, replacing any existing one of the same name.
    pub fn set_section(&mut self, section: Section) {
        self.sections.retain(|s| s.name != section.name);
        self.sections.push(section);
    }

    fn header(&self) -> MeshHeader {
        let m = &self.mesh;
        let mut sections = vec![
            SectionInfo {
                name: "face_levels".into(),
                dtype: "u8".into(),
                len: m.faces.len(),
                meta: serde_json::Value::Null,
            },
            SectionInfo {
                name: "node_levels".into(),
                dtype: "u8".into(),
                len: m.nodes.len(),
                meta: serde_json::Value::Null,
            },
        ];
        sections.extend(self.sections.iter().map(|s| SectionInfo {
            name: s.name.clone(),
            dtype: s.data.dtype().into(),
            len: s.data.len(),
            meta: s.meta.clone(),
        }));
        MeshHeader {
            kind: if self.lam.is_some() { "lam" } else { "uniform" }.into(),
            finest_level: m.finest_level,
            nodes: m.nodes.len(),
            faces: m.faces.len(),
            edges: m.edges.len(),
            length_scale: m.length_scale,
            level_max_arc: m.level_max_arc.clone(),
            per_level: m.per_level.clone(),
            node_channels: NODE_CHANNELS.iter().map(|s| s.to_string()).collect(),
            edge_channels: EDGE_CHANNELS.iter().map(|s| s.to_string()).collect(),
            lam: self.lam.clone(),
            sections,
            run_config: self.run_config.clone(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&self.header())?;
        let m = &self.mesh;
        w.write_all(MESH_MAGIC)?;
        w.write_all(&(header.len() as u32).to_le_bytes())?;
        w.write_all(&header)?;
        let mut buf = Vec::new();
        for p in &m.nodes {
            for c in p {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        for f in &m.faces {
            put_u32(&mut buf, f);
        }
        for e in &m.edges {
            put_u32(&mut buf, e);
        }
        buf.extend_from_slice(&m.edge_levels);
        put_f32(&mut buf, &m.node_features);
        put_f32(&mut buf, &m.edge_features);
        buf.extend_from_slice(&m.face_levels);
        buf.extend_from_slice(&m.node_levels);
        for s in &self.sections {
            match &s.data {
                SectionData::U8(v) => buf.extend_from_slice(v),
                SectionData::U32(v) => put_u32(&mut buf, v),
                SectionData::F32(v) => put_f32(&mut buf, v),
                SectionData::F64(v) => {
                    for x in v {
                        buf.extend_from_slice(&x.to_le_bytes());
                    }
                }
            }
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let header = read_header(&mut r)?;
        let (v, f, e) = (header.nodes, header.faces, header.edges);
        let mut p = Payload(&mut r);
        let coords = p.f64s(v * 3, "vertices")?;
        let nodes = coords.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let faces = p.u32s(f * 3, "faces")?;
        let faces = faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        let pairs = p.u32s(e * 2, "edges")?;
        let edges: Vec<[u32; 2]> = pairs.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let edge_levels = p.bytes(e, "edge levels")?;
        let node_features = p.f32s(v * 3, "node features")?;
        let edge_features = p.f32s(e * 4, "edge features")?;
        let mut face_levels = None;
        let mut node_levels = None;
        let mut sections = Vec::new();
        for info in &header.sections {
            let data = match info.dtype.as_str() {
                "u8" => SectionData::U8(p.bytes(info.len, &info.name)?),
                "u32" => SectionData::U32(p.u32s(info.len, &info.name)?),
                "f32" => SectionData::F32(p.f32s(info.len, &info.name)?),
                "f64" => SectionData::F64(p.f64s(info.len, &info.name)?),
                other => {
                    return Err(Error::Format(format!(
                        "section '{}' has unknown dtype '{other}'",
                        info.name
                    )))
                }
            };
            match (info.name.as_str(), data) {
                ("face_levels", SectionData::U8(d)) if d.len() == f => face_levels = Some(d),
                ("node_levels", SectionData::U8(d)) if d.len() == v => node_levels = Some(d),
                ("face_levels" | "node_levels", _) => {
                    return Err(Error::Format(format!("malformed section '{}'", info.name)))
                }
                (_, data) => sections.push(Section {
                    name: info.name.clone(),
                    meta: info.meta.clone(),
                    data,
                }),
            }
        }
        let n = v as u32;
        if edges.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Format("edge endpoint out of range".into()));
        }
        let mesh = MultiMesh {
            finest_level: header.finest_level,
            nodes,
            faces,
            face_levels: face_levels.ok_or_else(|| missing("face_levels"))?,
            edges,
            edge_levels,
            node_features,
            edge_features,
            length_scale: header.length_scale,
            level_max_arc: header.level_max_arc,
            node_levels: node_levels.ok_or_else(|| missing("node_levels"))?,
            per_level: header.per_level,
        };
        if mesh.faces.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Format("face vertex out of range".into()));
        }
        Ok(Self {
            mesh,
            lam: header.lam,
            sections,
            run_config: header.run_config,
        })
    }
}

fn missing(name: &str) -> Error {
    Error::Format(format!("mesh file lacks the '{name}' section"))
}

fn read_header<R: Read>(r: &mut R) -> Result<MeshHeader> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("mesh file too short: {e}")))?;
    if &magic != MESH_MAGIC {
        return Err(Error::Format("not an SFMESH01 mesh file".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut header)
        .map_err(|e| Error::Format(format!("truncated mesh header: {e}")))?;
    Ok(serde_json::from_slice(&header)?)
}

/// Reads only the JSON header of a mesh file.
pub fn read_mesh_header(path: impl AsRef<Path>) -> Result<MeshHeader> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_header(&mut f)
}

pub fn write_mesh_file(path: impl AsRef<Path>, file: &MeshFile) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    file.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_mesh_file(path: impl AsRef<Path>) -> Result<MeshFile> {
    let f = std::fs::File::open(path)?;
    MeshFile::read_from(std::io::BufReader::new(f))
}

fn put_u32(buf: &mut Vec<u8>, v: &[u32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_f32(buf: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Payload<'a, R>(&'a mut R);

impl<R: Read> Payload<'_, R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.0
            .read_exact(&mut buf)
            .map_err(|e| Error::Format(format!("truncated {what}: {e}")))?;
        Ok(buf)
    }

    fn u32s(&mut self, n: usize, what: &str) -> Result<Vec<u32>> {
        let b = self.bytes(n * 4, what)?;
        Ok(b.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let b = self.bytes(n * 4, what)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let b = self.bytes(n * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    }
}
