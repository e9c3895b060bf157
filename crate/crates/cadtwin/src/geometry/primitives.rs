//! Procedural closed meshes used by vehicle templates, fixtures, and tests.

use nalgebra::{Vector2, Vector3};
use std::collections::HashMap;

use super::TriMesh;

/// Icosphere: subdivided icosahedron projected to the unit sphere.
/// Level 0 is the icosahedron (20 faces); each level quadruples faces.
pub fn icosphere(level: usize) -> TriMesh {
    let t = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = vec![
        Vector3::new(-1.0, t, 0.0),
        Vector3::new(1.0, t, 0.0),
        Vector3::new(-1.0, -t, 0.0),
        Vector3::new(1.0, -t, 0.0),
        Vector3::new(0.0, -1.0, t),
        Vector3::new(0.0, 1.0, t),
        Vector3::new(0.0, -1.0, -t),
        Vector3::new(0.0, 1.0, -t),
        Vector3::new(t, 0.0, -1.0),
        Vector3::new(t, 0.0, 1.0),
        Vector3::new(-t, 0.0, -1.0),
        Vector3::new(-t, 0.0, 1.0),
    ]
    .into_iter()
    .map(|v| v.normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vector3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let m = (vertices[a as usize] + vertices[b as usize]).normalize();
                vertices.push(m);
                vertices.len() as u32 - 1
            })
        };
        for f in &faces {
            let ab = mid(f[0], f[1], &mut vertices);
            let bc = mid(f[1], f[2], &mut vertices);
            let ca = mid(f[2], f[0], &mut vertices);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    TriMesh {
        vertices,
        faces,
        uv: None,
    }
}

/// Closed cylinder: radius 1 in the xz plane, axis along +y spanning
/// [-0.5, 0.5], capped by triangle fans around hub center vertices.
/// Outward-facing CCW winding. Cylindrical UVs.
pub fn cylinder(radial_segments: usize) -> TriMesh {
    assert!(radial_segments >= 3);
    let n = radial_segments;
    let mut vertices = Vec::with_capacity(2 * n + 2);
    let mut uv = Vec::with_capacity(2 * n + 2);
    for ring in 0..2 {
        let y = if ring == 0 { -0.5 } else { 0.5 };
        for i in 0..n {
            let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            vertices.push(Vector3::new(a.cos(), y, a.sin()));
            uv.push(Vector2::new(i as f64 / n as f64, 0.25 + 0.5 * ring as f64));
        }
    }
    let c0 = vertices.len() as u32; // -y hub
    vertices.push(Vector3::new(0.0, -0.5, 0.0));
    uv.push(Vector2::new(0.5, 0.0));
    let c1 = vertices.len() as u32; // +y hub
    vertices.push(Vector3::new(0.0, 0.5, 0.0));
    uv.push(Vector2::new(0.5, 1.0));

    let mut faces = Vec::with_capacity(4 * n);
    for i in 0..n as u32 {
        let j = (i + 1) % n as u32;
        let (b0, b1) = (i, j); // bottom ring
        let (t0, t1) = (i + n as u32, j + n as u32); // top ring
        // Side quad, outward normals. Positions: angle grows toward +z from +x;
        // with y up, outward CCW ordering is (b0, t0, t1), (b0, t1, b1).
        faces.push([b0, t0, t1]);
        faces.push([b0, t1, b1]);
        // Caps: -y cap faces down, +y cap faces up.
        faces.push([c0, b0, b1]);
        faces.push([c1, t1, t0]);
    }
    TriMesh {
        vertices,
        faces,
        uv: Some(uv),
    }
}

/// Single quad in the z=0 plane spanning [-1,1]^2, facing +z.
pub fn quad() -> TriMesh {
    let mut m = TriMesh::new(
        vec![
            Vector3::new(-1.0, -1.0, 0.0),
            Vector3::new(1.0, -1.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(-1.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    );
    m.uv = Some(vec![
        Vector2::new(0.0, 0.0),
        Vector2::new(1.0, 0.0),
        Vector2::new(1.0, 1.0),
        Vector2::new(0.0, 1.0),
    ]);
    m
}
