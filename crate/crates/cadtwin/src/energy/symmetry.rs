//! Bilateral symmetry term: symmetric chamfer distance between the vertex
//! set and its mirror image across the plane through the origin normal to
//! the symmetry axis, averaged over both directions.

use nalgebra::Vector3;

use crate::{Error, Result};

fn mirror(v: &Vector3<f64>, axis: &Vector3<f64>) -> Vector3<f64> {
    v - axis * (2.0 * v.dot(axis))
}

/// Nearest-neighbor assignments from each vertex to the mirrored set and
/// back, frozen for exact finite differencing.
#[derive(Debug, Clone)]
pub struct SymmetryMatches {
    /// For each vertex, the index of its nearest mirrored vertex.
    pub to_mirrored: Vec<usize>,
    /// For each mirrored vertex, the index of its nearest vertex.
    pub from_mirrored: Vec<usize>,
}

/// Computes the symmetry energy; `axis` must be unit length. The gradient
/// accounts for each vertex appearing both directly and mirrored.
pub fn symmetry_energy(
    vertices: &[Vector3<f64>],
    axis: &Vector3<f64>,
    grad: Option<&mut [Vector3<f64>]>,
) -> Result<(f64, SymmetryMatches)> {
    if vertices.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if (axis.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid("symmetry axis must be unit length".into()));
    }
    let mirrored: Vec<Vector3<f64>> = vertices.iter().map(|v| mirror(v, axis)).collect();
    let nearest = |p: &Vector3<f64>, set: &[Vector3<f64>]| -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, q) in set.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        best
    };
    let n = vertices.len() as f64;
    let mut to_mirrored = Vec::with_capacity(vertices.len());
    let mut from_mirrored = Vec::with_capacity(vertices.len());
    let mut forward = 0.0;
    let mut backward = 0.0;
    for v in vertices {
        let (j, d2) = nearest(v, &mirrored);
        to_mirrored.push(j);
        forward += d2 / n;
    }
    for m in &mirrored {
        let (j, d2) = nearest(m, vertices);
        from_mirrored.push(j);
        backward += d2 / n;
    }
    let value = 0.5 * (forward + backward);
    if let Some(g) = grad {
        let scale = 1.0 / n; // 0.5 * 2 from the squared norm
        for (i, v) in vertices.iter().enumerate() {
            let j = to_mirrored[i];
            let d = v - mirrored[j];
            // Source side.
            g[i] += d * scale;
            // Target is vertex j mirrored; the mirror is an involution, so
            // its transpose is itself.
            g[j] -= mirror(&d, axis) * scale;
        }
        for (i, m) in mirrored.iter().enumerate() {
            let j = from_mirrored[i];
            let d = m - vertices[j];
            g[i] += mirror(&d, axis) * scale;
            g[j] -= d * scale;
        }
    }
    Ok((
        value,
        SymmetryMatches {
            to_mirrored,
            from_mirrored,
        },
    ))
}

/// Energy with frozen assignments, for finite-difference checks.
pub fn symmetry_energy_frozen(
    vertices: &[Vector3<f64>],
    axis: &Vector3<f64>,
    matches: &SymmetryMatches,
) -> f64 {
    let mirrored: Vec<Vector3<f64>> = vertices.iter().map(|v| mirror(v, axis)).collect();
    let n = vertices.len() as f64;
    let mut forward = 0.0;
    let mut backward = 0.0;
    for (i, v) in vertices.iter().enumerate() {
        forward += (v - mirrored[matches.to_mirrored[i]]).norm_squared() / n;
    }
    for (i, m) in mirrored.iter().enumerate() {
        backward += (m - vertices[matches.from_mirrored[i]]).norm_squared() / n;
    }
    0.5 * (forward + backward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;

    #[test]
    fn symmetric_shape_zero() {
        let mesh = icosphere(2);
        let (e, _) = symmetry_energy(&mesh.vertices, &Vector3::y(), None).unwrap();
        assert!(e < 1e-12, "e = {e}");
    }

    #[test]
    fn two_point_example() {
        // Single point at distance d from the plane: its mirror is 2d away,
        // both directions give (2d)^2.
        let d = 0.7;
        let pts = vec![Vector3::new(0.3, d, -0.2)];
        let (e, _) = symmetry_energy(&pts, &Vector3::y(), None).unwrap();
        assert!((e - 4.0 * d * d).abs() < 1e-12);
    }

    #[test]
    fn translation_along_axis_raises_energy() {
        let mesh = icosphere(1);
        let shifted: Vec<Vector3<f64>> = mesh
            .vertices
            .iter()
            .map(|v| v + Vector3::new(0.0, 0.4, 0.0))
            .collect();
        let (e, _) = symmetry_energy(&shifted, &Vector3::y(), None).unwrap();
        assert!(e > 0.01);
        // Translation perpendicular to the axis changes nothing.
        let slid: Vec<Vector3<f64>> = mesh
            .vertices
            .iter()
            .map(|v| v + Vector3::new(5.0, 0.0, 0.0))
            .collect();
        let (e2, _) = symmetry_energy(&slid, &Vector3::y(), None).unwrap();
        assert!(e2 < 1e-12);
    }

    #[test]
    fn gradient_matches_frozen_fd() {
        let mut pts: Vec<Vector3<f64>> = icosphere(1).vertices;
        // Break symmetry.
        for (i, p) in pts.iter_mut().enumerate() {
            p.y += 0.1 * crate::geometry::rng::normal(51, i as u64, 0);
            p.x += 0.1 * crate::geometry::rng::normal(51, i as u64, 1);
        }
        let axis = Vector3::y();
        let mut g = vec![Vector3::zeros(); pts.len()];
        let (e, matches) = symmetry_energy(&pts, &axis, Some(&mut g)).unwrap();
        assert!((symmetry_energy_frozen(&pts, &axis, &matches) - e).abs() < 1e-12);
        let h = 1e-6;
        for &(i, c) in &[(0usize, 0usize), (5, 1), (11, 2), (3, 1)] {
            let mut p = pts.clone();
            p[i][c] += h;
            let mut m = pts.clone();
            m[i][c] -= h;
            let fd = (symmetry_energy_frozen(&p, &axis, &matches)
                - symmetry_energy_frozen(&m, &axis, &matches))
                / (2.0 * h);
            assert!((fd - g[i][c]).abs() < 1e-6, "({i},{c}) fd {fd} an {}", g[i][c]);
        }
    }

    #[test]
    fn non_unit_axis_rejected() {
        let pts = vec![Vector3::zeros()];
        assert!(symmetry_energy(&pts, &Vector3::new(0.0, 2.0, 0.0), None).is_err());
    }
}
