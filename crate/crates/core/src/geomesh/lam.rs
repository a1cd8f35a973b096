use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::multimesh::{LevelStats, MultiMesh};
use super::trimesh::{children, face_edges, icosahedron};
use super::{arc, centroid, dot, normalize, xyz_to_latlon, Vec3, EARTH_RADIUS_KM};
use crate::data::RegionMask;
use crate::error::{Error, Result};

const MAX_LEVEL: u32 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LamConfig {
    pub fine_level: u32,
    pub coarse_level: u32,
    /// Inner and outer buffer distances in kilometres.
    pub buffer_km: (f64, f64),
}

impl Default for LamConfig {
    fn default() -> Self {
        Self {
            fine_level: 6,
            coarse_level: 3,
            buffer_km: (400.0, 800.0),
        }
    }
}

/// Target level as a function of distance to the region.
///
/// Within `buffer_km.0` the target is the fine level and beyond `buffer_km.1`
/// the coarse level. The band between is cut into `fine - coarse - 1` equal
/// rings; ring `i` (counting outward) targets level `fine - 1 - i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LamSchedule {
    pub fine: u32,
    pub coarse: u32,
    pub inner_km: f64,
    pub outer_km: f64,
}

impl LamSchedule {
    pub fn new(cfg: &LamConfig) -> Result<Self> {
        if cfg.fine_level < cfg.coarse_level {
            return Err(Error::InvalidArgument(format!(
                "fine level {} is below coarse level {}",
                cfg.fine_level, cfg.coarse_level
            )));
        }
        if cfg.fine_level > MAX_LEVEL {
            return Err(Error::InvalidArgument(format!(
                "fine level {} exceeds {MAX_LEVEL}",
                cfg.fine_level
            )));
        }
        let (inner, outer) = cfg.buffer_km;
        if !(inner > 0.0 && outer > inner && outer.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "buffer distances must be positive and increasing, got {inner},{outer}"
            )));
        }
        Ok(Self {
            fine: cfg.fine_level,
            coarse: cfg.coarse_level,
            inner_km: inner,
            outer_km: outer,
        })
    }

    pub fn rings(&self) -> u32 {
        self.fine.saturating_sub(self.coarse + 1)
    }

    fn ring_width(&self) -> f64 {
        (self.outer_km - self.inner_km) / self.rings().max(1) as f64
    }

    /// Largest distance at which `level` is still scheduled; infinite at or
    /// below the coarse level.
    pub fn threshold_km(&self, level: u32) -> f64 {
        if level <= self.coarse {
            f64::INFINITY
        } else if level > self.fine {
            f64::NEG_INFINITY
        } else {
            self.inner_km + (self.fine - level) as f64 * self.ring_width()
        }
    }

    pub fn level_at(&self, distance_km: f64) -> u32 {
        if distance_km <= self.inner_km {
            return self.fine;
        }
        if distance_km > self.outer_km || self.rings() == 0 {
            return self.coarse;
        }
        let step = ((distance_km - self.inner_km) / self.ring_width()).ceil() as u32;
        self.fine - step.clamp(1, self.rings())
    }
}

/// Great-circle distance to the nearest cell of a region.
pub struct RegionDistance<'a> {
    region: &'a RegionMask,
    centres: Vec<Vec3>,
}

impl<'a> RegionDistance<'a> {
    pub fn new(region: &'a RegionMask) -> Result<Self> {
        let centres: Vec<Vec3> = (0..region.grid.cells())
            .filter(|&c| region.mask[c])
            .map(|c| region.grid.cell_xyz(c))
            .collect();
        if centres.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "region '{}' selects no cells",
                region.name
            )));
        }
        Ok(Self { region, centres })
    }

    /// Zero inside the footprint of a region cell, otherwise the distance in
    /// kilometres to the nearest region cell centre.
    pub fn km(&self, p: Vec3) -> f64 {
        let (lat, lon) = xyz_to_latlon(p);
        if self.region.contains(lat, lon) {
            return 0.0;
        }
        let mut best = self.centres[0];
        let mut best_dot = f64::NEG_INFINITY;
        for &c in &self.centres {
            let d = dot(p, c);
            if d > best_dot {
                best_dot = d;
                best = c;
            }
        }
        arc(p, best) * EARTH_RADIUS_KM
    }
}

/// A multi-mesh refined to the fine level near a region and coarsening
/// outward through the buffer rings.
#[derive(Clone, Debug)]
pub struct LamMesh {
    pub region_name: String,
    pub config: LamConfig,
    pub mesh: MultiMesh,
}

/// Builds a local-area mesh.
///
/// Faces below the coarse level are always split. A face at level `L` at or
/// above the coarse level is split only when the centroids of all four
/// children lie within the scheduled distance for level `L + 1`. Every leaf
/// therefore has a level no higher than the schedule at its own centroid.
/// Hanging vertices are allowed; edges are the union over all faces ever
/// created, tagged with the face's level.
pub fn build_lam_mesh(region: &RegionMask, config: &LamConfig) -> Result<LamMesh> {
    let schedule = LamSchedule::new(config)?;
    let dist = RegionDistance::new(region)?;
    let base = icosahedron();
    let mut vertices = base.vertices;
    let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
    let mut created: Vec<Vec<[u32; 3]>> = vec![base.faces.clone()];
    let mut leaves = Vec::new();
    let mut leaf_levels = Vec::new();
    let mut per_level = Vec::new();

    let mut current = base.faces;
    for level in 0..schedule.fine {
        per_level.push(LevelStats {
            level,
            vertices: vertices.len(),
            edges: face_edges(&created[level as usize]).len(),
            faces: created[level as usize].len(),
        });
        let thr = schedule.threshold_km(level + 1);
        let mut next = Vec::new();
        for f in current {
            let split = level < schedule.coarse || {
                let [a, b, c] = f.map(|i| vertices[i as usize]);
                let [ab, bc, ca] = [mid(a, b), mid(b, c), mid(c, a)];
                [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
                    .into_iter()
                    .all(|(p, q, r)| dist.km(centroid(p, q, r)) <= thr)
            };
            if !split {
                leaves.push(f);
                leaf_levels.push(level as u8);
                continue;
            }
            let m = [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].map(|(a, b)| {
                *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                    vertices.push(mid(vertices[a as usize], vertices[b as usize]));
                    (vertices.len() - 1) as u32
                })
            });
            next.extend_from_slice(&children(f, m));
        }
        created.push(next.clone());
        current = next;
    }
    per_level.push(LevelStats {
        level: schedule.fine,
        vertices: vertices.len(),
        edges: face_edges(&created[schedule.fine as usize]).len(),
        faces: created[schedule.fine as usize].len(),
    });
    leaf_levels.extend(std::iter::repeat_n(schedule.fine as u8, current.len()));
    leaves.extend(current);
    // a region too small to reach the fine level leaves trailing empty levels
    while created.last().is_some_and(|f| f.is_empty()) {
        created.pop();
        per_level.pop();
    }
    let mesh = MultiMesh::assemble(vertices, &created, leaves, leaf_levels, per_level)?;
    Ok(LamMesh {
        region_name: region.name.clone(),
        config: *config,
        mesh,
    })
}

fn mid(a: Vec3, b: Vec3) -> Vec3 {
    normalize([a[0] + b[0], a[1] + b[1], a[2] + b[2]])
}
