use std::collections::HashMap;

use super::{normalize, sub, triple, Vec3};

/// A triangulated unit sphere at a uniform refinement depth.
///
/// Faces are wound counter-clockwise when seen from outside the sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub level: u32,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Undirected edges as `(low, high)` index pairs in order of first
    /// appearance while walking faces.
    pub fn edges(&self) -> Vec<[u32; 2]> {
        face_edges(&self.faces)
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges().len() as i64 + self.faces.len() as i64
    }
}

pub(crate) fn face_edges(faces: &[[u32; 3]]) -> Vec<[u32; 2]> {
    let mut seen = HashMap::with_capacity(faces.len() * 3 / 2);
    let mut out = Vec::with_capacity(faces.len() * 3 / 2);
    for f in faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            let key = [a.min(b), a.max(b)];
            if seen.insert(key, ()).is_none() {
                out.push(key);
            }
        }
    }
    out
}

/// Level-0 regular icosahedron.
///
/// Vertex 0 is the north pole `(0, 0, 1)`; vertices 1..=5 form the upper
/// ring at latitude `atan(1/2)` and longitudes `0, 72, ..., 288` degrees, so
/// vertex 1 lies in the x-z plane; vertices 6..=10 form the lower ring at
/// longitudes `36, 108, ...`; vertex 11 is the south pole.
pub fn icosahedron() -> TriMesh {
    let ring_lat = 0.5f64.atan();
    let mut vertices = Vec::with_capacity(12);
    vertices.push([0.0, 0.0, 1.0]);
    for (lat, lon0) in [(ring_lat, 0.0f64), (-ring_lat, 36.0)] {
        for i in 0..5 {
            let lon = (lon0 + 72.0 * i as f64).to_radians();
            vertices.push([lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]);
        }
    }
    vertices.push([0.0, 0.0, -1.0]);

    let mut faces = Vec::with_capacity(20);
    for i in 0..5u32 {
        let (u0, u1) = (1 + i, 1 + (i + 1) % 5);
        let (l0, l1) = (6 + i, 6 + (i + 1) % 5);
        faces.push([0, u0, u1]);
        faces.push([u0, l0, u1]);
        faces.push([u1, l0, l1]);
        faces.push([11, l1, l0]);
    }
    for f in &mut faces {
        let [a, b, c] = f.map(|i| vertices[i as usize]);
        if triple(a, sub(b, a), sub(c, a)) < 0.0 {
            f.swap(1, 2);
        }
    }
    TriMesh {
        level: 0,
        vertices,
        faces,
    }
}

/// One level of 1-to-4 subdivision.
///
/// Face `i` becomes faces `4i..4i+4`: the three corner triangles at its
/// vertices in order, then the middle triangle. Midpoints are shared through
/// the unordered parent pair and reprojected to the sphere; existing
/// vertices keep their indices.
pub fn refine(mesh: &TriMesh) -> TriMesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoints: HashMap<(u32, u32), u32> = HashMap::with_capacity(mesh.faces.len() * 3 / 2);
    let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
        *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
            let (pa, pb) = (vertices[a as usize], vertices[b as usize]);
            vertices.push(normalize([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]));
            (vertices.len() - 1) as u32
        })
    };
    let mut faces = Vec::with_capacity(mesh.faces.len() * 4);
    for &[a, b, c] in &mesh.faces {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        faces.extend_from_slice(&children([a, b, c], [ab, bc, ca]));
    }
    TriMesh {
        level: mesh.level + 1,
        vertices,
        faces,
    }
}

/// Children of face `[a, b, c]` given midpoints `[ab, bc, ca]`; winding is
/// preserved.
pub(crate) fn children(f: [u32; 3], m: [u32; 3]) -> [[u32; 3]; 4] {
    let [a, b, c] = f;
    let [ab, bc, ca] = m;
    [[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomesh::{arc, norm};
    use std::collections::BTreeSet;

    /// Independent count of a subdivision step: every old edge splits into
    /// two, and every face adds three interior edges and one vertex per edge.
    fn count_oracle(v: usize, e: usize, f: usize) -> (usize, usize, usize) {
        (v + e, 2 * e + 3 * f, 4 * f)
    }

    #[test]
    fn icosahedron_is_regular() {
        let m = icosahedron();
        assert_eq!(m.vertices.len(), 12);
        assert_eq!(m.faces.len(), 20);
        let edges = m.edges();
        assert_eq!(edges.len(), 30);
        assert_eq!(m.euler_characteristic(), 2);
        let len0 = arc(m.vertices[edges[0][0] as usize], m.vertices[edges[0][1] as usize]);
        for e in &edges {
            let l = arc(m.vertices[e[0] as usize], m.vertices[e[1] as usize]);
            assert!((l - len0).abs() < 1e-9);
        }
        assert_eq!(m.vertices[0], [0.0, 0.0, 1.0]);
        assert!(m.vertices[1][1].abs() < 1e-15);
    }

    #[test]
    fn faces_are_wound_outward() {
        let mut m = icosahedron();
        for _ in 0..3 {
            for f in &m.faces {
                let [a, b, c] = f.map(|i| m.vertices[i as usize]);
                assert!(triple(a, sub(b, a), sub(c, a)) > 0.0);
            }
            m = refine(&m);
        }
    }

    #[test]
    fn level_one_counts_match_oracle() {
        let m0 = icosahedron();
        let m1 = refine(&m0);
        let want = count_oracle(12, 30, 20);
        assert_eq!(want, (42, 120, 80));
        assert_eq!((m1.vertices.len(), m1.edges().len(), m1.faces.len()), want);
        // independent edge enumeration through an ordered set
        let set: BTreeSet<(u32, u32)> = m1
            .faces
            .iter()
            .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        assert_eq!(set.len(), 120);
    }

    #[test]
    fn counts_and_nesting_up_to_level_six() {
        let mut m = icosahedron();
        for k in 0..=6u32 {
            let p = 4usize.pow(k);
            assert_eq!(m.level, k);
            assert_eq!(m.vertices.len(), 10 * p + 2);
            assert_eq!(m.edges().len(), 30 * p);
            assert_eq!(m.faces.len(), 20 * p);
            assert_eq!(m.euler_characteristic(), 2);
            for v in &m.vertices {
                assert!((norm(*v) - 1.0).abs() < 1e-12);
            }
            if k < 6 {
                let next = refine(&m);
                assert_eq!(&next.vertices[..m.vertices.len()], &m.vertices[..]);
                m = next;
            }
        }
        assert_eq!(m.vertices.len(), 40_962);
    }

    #[test]
    fn refinement_is_deterministic_and_deduplicated() {
        let a = refine(&refine(&icosahedron()));
        let b = refine(&refine(&icosahedron()));
        assert_eq!(a, b);
        for i in 0..a.vertices.len() {
            for j in 0..i {
                assert!(norm(sub(a.vertices[i], a.vertices[j])) > 1e-9);
            }
        }
    }
}
