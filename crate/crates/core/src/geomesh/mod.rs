//! Icosahedral sphere meshes: uniform refinement, the flat multi-mesh edge
//! union, and region-focused local-area meshes.
//!
//! Positions live on the unit sphere. Latitude and longitude are in degrees
//! with `lat = asin(z)` and `lon = atan2(y, x)`.

mod io;
mod lam;
mod multimesh;
mod trimesh;

pub use io::{
    read_mesh_file, read_mesh_header, write_mesh_file, LamInfo, MeshFile, MeshHeader, Section,
    SectionData, SectionInfo,
};
pub use lam::{build_lam_mesh, LamConfig, LamMesh, LamSchedule, RegionDistance};
pub use multimesh::{
    build_multimesh, edge_feature, node_feature, LevelStats, MultiMesh, EDGE_CHANNELS,
    NODE_CHANNELS,
};
pub use trimesh::{icosahedron, refine, TriMesh};

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Scalar triple product `a . (b x c)`.
pub(crate) fn triple(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    dot(a, cross(b, c))
}

/// Angle between two unit vectors in radians, stable for tiny and near-pi
/// separations.
pub fn arc(a: Vec3, b: Vec3) -> f64 {
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Centroid of a spherical triangle, reprojected to the sphere.
pub fn centroid(a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    normalize([a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]])
}

pub fn latlon_to_xyz(lat_deg: f64, lon_deg: f64) -> Vec3 {
    let (lat, lon) = (lat_deg.to_radians(), lon_deg.to_radians());
    [lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]
}

pub fn xyz_to_latlon(p: Vec3) -> (f64, f64) {
    let lat = p[2].clamp(-1.0, 1.0).asin().to_degrees();
    let lon = p[1].atan2(p[0]).to_degrees();
    (lat, lon)
}

/// Great-circle distance in kilometres between two (lat, lon) points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (p1, p2) = (a.0.to_radians(), b.0.to_radians());
    let dphi = p2 - p1;
    let dl = (b.1 - a.1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn haversine_examples() {
        assert_eq!(haversine_km((0.0, 0.0), (0.0, 0.0)), 0.0);
        let quarter = 2.0 * std::f64::consts::PI * 6371.0 / 4.0;
        assert!((haversine_km((0.0, 0.0), (0.0, 90.0)) - quarter).abs() < 1e-6);
        assert!((haversine_km((0.0, 0.0), (0.0, 90.0)) - 10007.543).abs() < 1e-3);
        let half = std::f64::consts::PI * 6371.0;
        assert!((haversine_km((90.0, 0.0), (-90.0, 0.0)) - half).abs() < 1e-6);
        assert!((half - 20015.087).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn haversine_agrees_with_vector_arc(
            lat1 in -90.0f64..90.0, lon1 in -180.0f64..180.0,
            lat2 in -90.0f64..90.0, lon2 in -180.0f64..180.0,
        ) {
            let h = haversine_km((lat1, lon1), (lat2, lon2));
            let a = arc(latlon_to_xyz(lat1, lon1), latlon_to_xyz(lat2, lon2)) * EARTH_RADIUS_KM;
            prop_assert!((h - a).abs() < 1e-6);
            prop_assert!((h - haversine_km((lat2, lon2), (lat1, lon1))).abs() < 1e-9);
        }

        #[test]
        fn latlon_round_trip(lat in -89.9f64..89.9, lon in -179.9f64..179.9) {
            let (la, lo) = xyz_to_latlon(latlon_to_xyz(lat, lon));
            prop_assert!((la - lat).abs() < 1e-9 && (lo - lon).abs() < 1e-9);
        }
    }
}
