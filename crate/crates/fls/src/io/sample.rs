//! Uniform surface sampling of a triangle mesh: faces drawn by area,
//! positions by uniform barycentric coordinates.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::io::TriangleMesh;

/// Draws `n_points` uniformly over the mesh surface, deterministically per
/// seed.
pub fn sample_mesh(mesh: &TriangleMesh, n_points: usize, seed: u64) -> Result<PointCloud> {
    if mesh.faces.is_empty() {
        return Err(Error::DegenerateCloud("mesh has no faces".into()));
    }
    if n_points == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateCloud("mesh has zero total area".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n_points * 3);
    for _ in 0..n_points {
        let ticket = rng.random::<f64>() * total;
        let f = cumulative.partition_point(|&c| c <= ticket).min(mesh.faces.len() - 1);
        let [ia, ib, ic] = mesh.faces[f];
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        // sqrt trick: (u, v) uniform over the triangle.
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let u = 1.0 - s;
        let v = r2 * s;
        let w = 1.0 - u - v;
        for d in 0..3 {
            data.push(u * a[d] + v * b[d] + w * c[d]);
        }
    }
    PointCloud::new(3, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_triangle() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![[0.0, 0.0, 1.0], [2.0, 0.0, 1.0], [0.0, 3.0, 1.0]],
            faces: vec![[0, 1, 2]],
            dropped_degenerate: 0,
        }
    }

    #[test]
    fn points_stay_on_the_triangle() {
        let mesh = single_triangle();
        let cloud = sample_mesh(&mesh, 1000, 42).unwrap();
        for p in cloud.points() {
            // The triangle lives in the z=1 plane.
            assert!((p[2] - 1.0).abs() < 1e-12);
            assert!(p[0] >= -1e-12 && p[1] >= -1e-12);
            // Inside the hypotenuse x/2 + y/3 <= 1.
            assert!(p[0] / 2.0 + p[1] / 3.0 <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn area_weighting() {
        // Two triangles with area ratio 9:1, distinguished by z plane.
        let mesh = TriangleMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [9.0, 0.0, 0.0],
                [0.0, 2.0, 0.0],
                [0.0, 0.0, 5.0],
                [1.0, 0.0, 5.0],
                [0.0, 2.0, 5.0],
            ],
            faces: vec![[0, 1, 2], [3, 4, 5]],
            dropped_degenerate: 0,
        };
        let n = 100_000;
        let cloud = sample_mesh(&mesh, n, 7).unwrap();
        let big = cloud.points().filter(|p| p[2] < 2.5).count();
        let frac = big as f64 / n as f64;
        assert!((frac - 0.9).abs() < 0.02 * 0.9, "fraction {frac}");
    }

    #[test]
    fn deterministic_per_seed() {
        let mesh = single_triangle();
        let a = sample_mesh(&mesh, 500, 3).unwrap();
        let b = sample_mesh(&mesh, 500, 3).unwrap();
        let c = sample_mesh(&mesh, 500, 4).unwrap();
        assert_eq!(a.coords(), b.coords());
        assert_ne!(a.coords(), c.coords());
    }

    #[test]
    fn empty_mesh_rejected() {
        let mesh = TriangleMesh {
            vertices: vec![],
            faces: vec![],
            dropped_degenerate: 0,
        };
        assert!(sample_mesh(&mesh, 10, 0).is_err());
    }
}
