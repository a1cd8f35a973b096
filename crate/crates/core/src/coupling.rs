//! Bipartite graphs between a lat-lon grid and a mesh.
//!
//! The encoder graph links every grid cell to the mesh nodes within a radius
//! and the decoder graph links every grid cell to the three corners of the
//! leaf triangle that contains it. Edge features are `[|d| / s, d]` where `d`
//! is the receiver position minus the sender position on the unit sphere and
//! `s` is the mesh's [`MultiMesh::length_scale`].

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::grid::GridSpec;

use crate::error::{Error, Result};
use crate::geomesh::{
    arc, centroid, dot, edge_feature, norm, sub, triple, MeshFile, MultiMesh, Section, SectionData,
    Vec3,
};

/// Default encoder radius as a fraction of the longest local mesh edge.
pub const DEFAULT_RADIUS_FACTOR: f64 = 0.6;

const CONTAIN_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    GridToMesh,
    MeshToGrid,
}

/// Directed bipartite edges, ordered by grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingGraph {
    pub direction: Direction,
    pub grid: GridSpec,
    pub mesh_nodes: usize,
    pub senders: Vec<u32>,
    pub receivers: Vec<u32>,
    /// `[E, 4]` edge features.
    pub features: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
struct CouplingMeta {
    direction: Direction,
    grid: GridSpec,
    mesh_nodes: usize,
}

impl CouplingGraph {
    pub fn edge_count(&self) -> usize {
        self.senders.len()
    }

    /// Number of incoming edges per receiver.
    pub fn in_degrees(&self) -> Vec<usize> {
        let n = match self.direction {
            Direction::GridToMesh => self.mesh_nodes,
            Direction::MeshToGrid => self.grid.cells(),
        };
        let mut deg = vec![0; n];
        for &r in &self.receivers {
            deg[r as usize] += 1;
        }
        deg
    }

    /// Stores the graph as `<name>.senders`, `<name>.receivers` and
    /// `<name>.features` sections.
    pub fn store(&self, file: &mut MeshFile, name: &str) -> Result<()> {
        let meta = serde_json::to_value(CouplingMeta {
            direction: self.direction,
            grid: self.grid,
            mesh_nodes: self.mesh_nodes,
        })?;
        for (suffix, data) in [
            ("senders", SectionData::U32(self.senders.clone())),
            ("receivers", SectionData::U32(self.receivers.clone())),
            ("features", SectionData::F32(self.features.clone())),
        ] {
            file.set_section(Section {
                name: format!("{name}.{suffix}"),
                meta: meta.clone(),
                data,
            });
        }
        Ok(())
    }

    pub fn load(file: &MeshFile, name: &str) -> Result<Option<Self>> {
        let get = |suffix: &str| file.section(&format!("{name}.{suffix}"));
        let (Some(s), Some(r), Some(f)) = (get("senders"), get("receivers"), get("features")) else {
            return Ok(None);
        };
        let meta: CouplingMeta = serde_json::from_value(s.meta.clone())?;
        let (SectionData::U32(senders), SectionData::U32(receivers), SectionData::F32(features)) =
            (&s.data, &r.data, &f.data)
        else {
            return Err(Error::Format(format!("coupling '{name}' has wrong section types")));
        };
        if senders.len() != receivers.len() || features.len() != 4 * senders.len() {
            return Err(Error::Format(format!("coupling '{name}' sections disagree in length")));
        }
        Ok(Some(Self {
            direction: meta.direction,
            grid: meta.grid,
            mesh_nodes: meta.mesh_nodes,
            senders: senders.clone(),
            receivers: receivers.clone(),
            features: features.clone(),
        }))
    }
}

/// Uniform bucketing of unit-sphere points into cubes of side `cell`.
struct SpatialHash {
    cell: f64,
    buckets: HashMap<[i32; 3], Vec<u32>>,
}

impl SpatialHash {
    fn new(cell: f64, points: impl Iterator<Item = Vec3>) -> Self {
        let mut h = Self {
            cell: cell.max(1e-9),
            buckets: HashMap::new(),
        };
        for (i, p) in points.enumerate() {
            let k = h.key(p);
            h.buckets.entry(k).or_default().push(i as u32);
        }
        h
    }

    fn key(&self, p: Vec3) -> [i32; 3] {
        p.map(|c| (c / self.cell).floor() as i32)
    }

    /// Indices in the 27 buckets around `p`, ascending.
    fn near(&self, p: Vec3) -> Vec<u32> {
        let k = self.key(p);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(b) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        out.extend_from_slice(b);
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

fn chord(angle: f64) -> f64 {
    2.0 * (angle / 2.0).sin()
}

/// Encoder graph: each grid cell sends to every mesh node within
/// `radius_factor` times the longest leaf edge at that node's level.
pub fn grid_to_mesh_edges(
    grid: &GridSpec,
    mesh: &MultiMesh,
    radius_factor: f64,
) -> Result<CouplingGraph> {
    grid.validate()?;
    if !(radius_factor > 0.0 && radius_factor.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "radius factor must be positive, got {radius_factor}"
        )));
    }
    let radius: Vec<f64> = mesh
        .node_levels
        .iter()
        .map(|&l| radius_factor * mesh.level_max_arc[l as usize])
        .collect();
    let rmax = radius.iter().copied().fold(0.0, f64::max);
    let hash = SpatialHash::new(chord(rmax.min(std::f64::consts::PI)), mesh.nodes.iter().copied());
    let per_cell: Vec<Vec<u32>> = (0..grid.cells())
        .into_par_iter()
        .map(|cell| {
            let p = grid.cell_xyz(cell);
            hash.near(p)
                .into_iter()
                .filter(|&n| arc(p, mesh.nodes[n as usize]) <= radius[n as usize])
                .collect()
        })
        .collect();
    let mut g = CouplingGraph {
        direction: Direction::GridToMesh,
        grid: *grid,
        mesh_nodes: mesh.node_count(),
        senders: Vec::new(),
        receivers: Vec::new(),
        features: Vec::new(),
    };
    for (cell, nodes) in per_cell.into_iter().enumerate() {
        let p = grid.cell_xyz(cell);
        for n in nodes {
            g.senders.push(cell as u32);
            g.receivers.push(n);
            g.features
                .extend_from_slice(&edge_feature(p, mesh.nodes[n as usize], mesh.length_scale));
        }
    }
    Ok(g)
}

/// Index of the leaf face containing `p`. Faces on whose boundary `p` lies
/// tie, and the lowest index wins; if rounding leaves no face containing
/// `p`, the candidate with the least negative margin is used.
pub fn containing_face(mesh: &MultiMesh, candidates: &[u32], p: Vec3) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for &fi in candidates {
        let [a, b, c] = mesh.faces[fi as usize].map(|i| mesh.nodes[i as usize]);
        if dot(p, centroid(a, b, c)) <= 0.0 {
            continue;
        }
        let margin = triple(a, b, p).min(triple(b, c, p)).min(triple(c, a, p));
        if margin >= -CONTAIN_EPS {
            return Some(fi);
        }
        if best.is_none_or(|(_, m)| margin > m) {
            best = Some((fi, margin));
        }
    }
    best.map(|(f, _)| f)
}

/// Decoder graph: each grid cell receives from the three corners of its
/// containing leaf face, in the face's vertex order.
pub fn mesh_to_grid_edges(grid: &GridSpec, mesh: &MultiMesh) -> Result<CouplingGraph> {
    grid.validate()?;
    if mesh.faces.is_empty() {
        return Err(Error::Geometry("mesh has no leaf faces".into()));
    }
    let mut centres = Vec::with_capacity(mesh.faces.len());
    let mut reach = 0.0f64;
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| mesh.nodes[i as usize]);
        let m = centroid(a, b, c);
        for v in [a, b, c] {
            reach = reach.max(norm(sub(v, m)));
        }
        centres.push(m);
    }
    let hash = SpatialHash::new(reach * (1.0 + 1e-9), centres.into_iter());
    let faces: Vec<Result<u32>> = (0..grid.cells())
        .into_par_iter()
        .map(|cell| {
            let p = grid.cell_xyz(cell);
            containing_face(mesh, &hash.near(p), p).ok_or_else(|| {
                Error::Geometry(format!("no mesh face contains grid cell {cell}"))
            })
        })
        .collect();
    let mut g = CouplingGraph {
        direction: Direction::MeshToGrid,
        grid: *grid,
        mesh_nodes: mesh.node_count(),
        senders: Vec::with_capacity(3 * grid.cells()),
        receivers: Vec::with_capacity(3 * grid.cells()),
        features: Vec::with_capacity(12 * grid.cells()),
    };
    for (cell, face) in faces.into_iter().enumerate() {
        let p = grid.cell_xyz(cell);
        for v in mesh.faces[face? as usize] {
            g.senders.push(v);
            g.receivers.push(cell as u32);
            g.features
                .extend_from_slice(&edge_feature(mesh.nodes[v as usize], p, mesh.length_scale));
        }
    }
    Ok(g)
}
