use serde::{Deserialize, Serialize};

use super::trimesh::{face_edges, icosahedron, refine};
use super::{arc, norm, sub, xyz_to_latlon, Vec3};
use crate::error::{Error, Result};

pub const NODE_CHANNELS: [&str; 3] = ["cos_lat", "sin_lon", "cos_lon"];
pub const EDGE_CHANNELS: [&str; 4] = ["length", "dx", "dy", "dz"];

const MAX_LEVEL: u32 = 8;

/// Element counts of one refinement level.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelStats {
    pub level: u32,
    /// Vertices that exist once this level has been built.
    pub vertices: usize,
    /// Edges tagged with this level.
    pub edges: usize,
    /// Faces created at this level.
    pub faces: usize,
}

impl LevelStats {
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices as i64 - self.edges as i64 + self.faces as i64
    }
}

/// Finest-level node set with the union of edges from every level.
///
/// `faces` are the leaf triangles that tile the sphere (all of the finest
/// level for a uniform mesh, mixed levels for a local-area mesh). Edges are
/// undirected `(low, high)` pairs; the stored displacement runs from the low
/// to the high index.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiMesh {
    pub finest_level: u32,
    pub nodes: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub face_levels: Vec<u8>,
    pub edges: Vec<[u32; 2]>,
    pub edge_levels: Vec<u8>,
    /// `nodes.len() x 3`, channels [`NODE_CHANNELS`].
    pub node_features: Vec<f32>,
    /// `edges.len() x 4`, channels [`EDGE_CHANNELS`].
    pub edge_features: Vec<f32>,
    /// Chord length of the longest finest-level edge; divides every length
    /// feature in mesh and coupling graphs.
    pub length_scale: f64,
    /// Per level, the longest leaf-face edge as an angle in radians.
    pub level_max_arc: Vec<f64>,
    /// Highest level among the leaf faces touching each node.
    pub node_levels: Vec<u8>,
    pub per_level: Vec<LevelStats>,
}

pub fn node_feature(p: Vec3) -> [f32; 3] {
    let (lat, lon) = xyz_to_latlon(p);
    let (lat, lon) = (lat.to_radians(), lon.to_radians());
    [lat.cos() as f32, lon.sin() as f32, lon.cos() as f32]
}

/// `[|d| / scale, d]` with `d = to - from`.
pub fn edge_feature(from: Vec3, to: Vec3, scale: f64) -> [f32; 4] {
    let d = sub(to, from);
    [(norm(d) / scale) as f32, d[0] as f32, d[1] as f32, d[2] as f32]
}

impl MultiMesh {
    /// Assembles a mesh from the faces created at every level and the
    /// subset of them that are leaves.
    pub(crate) fn assemble(
        nodes: Vec<Vec3>,
        created: &[Vec<[u32; 3]>],
        leaves: Vec<[u32; 3]>,
        leaf_levels: Vec<u8>,
        per_level: Vec<LevelStats>,
    ) -> Result<Self> {
        let finest_level = leaf_levels.iter().copied().max().unwrap_or(0) as u32;
        let mut level_max_arc = vec![0.0f64; created.len()];
        let mut node_levels = vec![0u8; nodes.len()];
        for (f, &lvl) in leaves.iter().zip(&leaf_levels) {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let l = arc(nodes[a as usize], nodes[b as usize]);
                let slot = &mut level_max_arc[lvl as usize];
                *slot = slot.max(l);
            }
            for &v in f {
                let nl = &mut node_levels[v as usize];
                *nl = (*nl).max(lvl);
            }
        }
        let longest = level_max_arc[finest_level as usize];
        if !(longest > 0.0) {
            return Err(Error::Geometry("mesh has no finest-level edges".into()));
        }
        let length_scale = 2.0 * (longest / 2.0).sin();

        let mut edges = Vec::new();
        let mut edge_levels = Vec::new();
        for (lvl, faces) in created.iter().enumerate() {
            for e in face_edges(faces) {
                edges.push(e);
                edge_levels.push(lvl as u8);
            }
        }
        let node_features = nodes.iter().flat_map(|&p| node_feature(p)).collect();
        let edge_features = edges
            .iter()
            .flat_map(|e| edge_feature(nodes[e[0] as usize], nodes[e[1] as usize], length_scale))
            .collect();
        Ok(Self {
            finest_level,
            nodes,
            faces: leaves,
            face_levels: leaf_levels,
            edges,
            edge_levels,
            node_features,
            edge_features,
            length_scale,
            level_max_arc,
            node_levels,
            per_level,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Both directions of every edge: forward copies first, then reversed
    /// copies with negated displacement. Returns `(senders, receivers,
    /// features)`.
    pub fn directed_edges(&self) -> (Vec<u32>, Vec<u32>, Vec<f32>) {
        let n = self.edges.len();
        let mut senders = Vec::with_capacity(2 * n);
        let mut receivers = Vec::with_capacity(2 * n);
        let mut feats = Vec::with_capacity(8 * n);
        for e in &self.edges {
            senders.push(e[0]);
            receivers.push(e[1]);
        }
        for e in &self.edges {
            senders.push(e[1]);
            receivers.push(e[0]);
        }
        feats.extend_from_slice(&self.edge_features);
        for f in self.edge_features.chunks_exact(4) {
            feats.extend_from_slice(&[f[0], -f[1], -f[2], -f[3]]);
        }
        (senders, receivers, feats)
    }
}

/// Uniformly refined multi-mesh with every edge of levels `0..=finest_level`.
pub fn build_multimesh(finest_level: u32) -> Result<MultiMesh> {
    if finest_level > MAX_LEVEL {
        return Err(Error::InvalidArgument(format!(
            "mesh level {finest_level} out of range 0..={MAX_LEVEL}"
        )));
    }
    let mut mesh = icosahedron();
    let mut created = Vec::with_capacity(finest_level as usize + 1);
    let mut per_level = Vec::with_capacity(finest_level as usize + 1);
    loop {
        per_level.push(LevelStats {
            level: mesh.level,
            vertices: mesh.vertices.len(),
            edges: face_edges(&mesh.faces).len(),
            faces: mesh.faces.len(),
        });
        if mesh.level == finest_level {
            break;
        }
        let next = refine(&mesh);
        created.push(std::mem::take(&mut mesh.faces));
        mesh = next;
    }
    let leaves = mesh.faces.clone();
    created.push(mesh.faces);
    let levels = vec![finest_level as u8; leaves.len()];
    MultiMesh::assemble(mesh.vertices, &created, leaves, levels, per_level)
}
