//! Perspective rasterization with a hard z-buffer, perspective-correct
//! barycentrics, and a sigmoid-softened silhouette mask computed in a
//! narrow band around silhouette edges.

use nalgebra::{Vector2, Vector3};

use super::Camera;
use crate::geometry::{build_adjacency, TriMesh};
use crate::Result;

pub const NEAR_CLIP: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ProjVert {
    /// Camera-space position.
    pub cam: Vector3<f64>,
    /// Pixel coordinates.
    pub screen: Vector2<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    /// Winning face per pixel, -1 if empty.
    pub face: Vec<i32>,
    /// Screen-space barycentrics of the pixel center.
    pub b2: Vec<[f64; 3]>,
    /// Perspective-correct barycentrics.
    pub b3: Vec<[f64; 3]>,
    /// Camera-space depth of the hit, 0 if empty.
    pub depth: Vec<f64>,
}

/// Per-pixel nearest silhouette segment inside the softening band.
#[derive(Debug, Clone)]
pub struct SilhouetteBand {
    /// Silhouette segments as vertex index pairs.
    pub segs: Vec<(u32, u32)>,
    /// Nearest segment per pixel, -1 outside the band.
    pub pixel_seg: Vec<i32>,
    pub pixel_dist: Vec<f64>,
    /// Closest-point parameter along the segment.
    pub pixel_t: Vec<f64>,
    /// +1 for hard-covered pixels, -1 outside.
    pub pixel_sign: Vec<f64>,
}

pub fn project_vertices(mesh: &TriMesh, camera: &Camera) -> Result<Vec<ProjVert>> {
    let rot = camera.pose.rotation()?;
    let t = camera.pose.translation;
    Ok(mesh
        .vertices
        .iter()
        .map(|v| {
            let cam = rot * v + t;
            let valid = cam.z > NEAR_CLIP;
            let screen = if valid {
                Vector2::new(
                    camera.fx * cam.x / cam.z + camera.cx,
                    camera.fy * cam.y / cam.z + camera.cy,
                )
            } else {
                Vector2::zeros()
            };
            ProjVert { cam, screen, valid }
        })
        .collect())
}

#[inline]
fn cross2(u: Vector2<f64>, v: Vector2<f64>) -> f64 {
    u.x * v.y - u.y * v.x
}

/// Signed twice-area of (a, b, c).
#[inline]
pub fn tri_area2(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> f64 {
    cross2(b - a, c - a)
}

/// True when the face normal points toward the camera center.
pub fn face_front(mesh: &TriMesh, f: usize, center: &Vector3<f64>) -> bool {
    let [a, b, c] = mesh.face_vertices(f);
    let n = (b - a).cross(&(c - a));
    let to_cam = center - (a + b + c) / 3.0;
    n.dot(&to_cam) > 0.0
}

pub fn rasterize(
    mesh: &TriMesh,
    proj: &[ProjVert],
    camera: &Camera,
    center: &Vector3<f64>,
) -> FragmentBuffer {
    let (w, h) = (camera.width, camera.height);
    let mut fb = FragmentBuffer {
        width: w,
        height: h,
        face: vec![-1; w * h],
        b2: vec![[0.0; 3]; w * h],
        b3: vec![[0.0; 3]; w * h],
        depth: vec![0.0; w * h],
    };
    for (fi, f) in mesh.faces.iter().enumerate() {
        let [ia, ib, ic] = [f[0] as usize, f[1] as usize, f[2] as usize];
        if !(proj[ia].valid && proj[ib].valid && proj[ic].valid) {
            continue;
        }
        if !face_front(mesh, fi, center) {
            continue;
        }
        let (sa, sb, sc) = (proj[ia].screen, proj[ib].screen, proj[ic].screen);
        let area = tri_area2(sa, sb, sc);
        if area.abs() < 1e-12 {
            continue;
        }
        let inv_z = [
            1.0 / proj[ia].cam.z,
            1.0 / proj[ib].cam.z,
            1.0 / proj[ic].cam.z,
        ];
        let x0 = (sa.x.min(sb.x).min(sc.x).floor().max(0.0)) as usize;
        let x1 = (sa.x.max(sb.x).max(sc.x).ceil().min(w as f64 - 1.0)) as isize;
        let y0 = (sa.y.min(sb.y).min(sc.y).floor().max(0.0)) as usize;
        let y1 = (sa.y.max(sb.y).max(sc.y).ceil().min(h as f64 - 1.0)) as isize;
        if x1 < x0 as isize || y1 < y0 as isize {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let q = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let b2 = [
                    tri_area2(sb, sc, q) / area,
                    tri_area2(sc, sa, q) / area,
                    tri_area2(sa, sb, q) / area,
                ];
                if b2.iter().any(|&b| b < -1e-12) {
                    continue;
                }
                let wsum = b2[0] * inv_z[0] + b2[1] * inv_z[1] + b2[2] * inv_z[2];
                let depth = 1.0 / wsum;
                let i = y * w + x;
                if fb.face[i] >= 0 && fb.depth[i] <= depth {
                    continue;
                }
                fb.face[i] = fi as i32;
                fb.b2[i] = b2;
                fb.b3[i] = [
                    b2[0] * inv_z[0] / wsum,
                    b2[1] * inv_z[1] / wsum,
                    b2[2] * inv_z[2] / wsum,
                ];
                fb.depth[i] = depth;
            }
        }
    }
    fb
}

/// Edges whose two incident faces differ in facing, plus boundary edges of
/// front faces.
pub fn silhouette_segments(mesh: &TriMesh, center: &Vector3<f64>) -> Result<Vec<(u32, u32)>> {
    let adj = build_adjacency(mesh)?;
    let front: Vec<bool> = (0..mesh.faces.len())
        .map(|f| face_front(mesh, f, center))
        .collect();
    let mut segs = Vec::new();
    for (e, &(v0, v1)) in adj.edges.iter().enumerate() {
        let (f0, f1) = adj.edge_faces[e];
        let on = match f1 {
            Some(f1) => front[f0 as usize] != front[f1 as usize],
            None => front[f0 as usize],
        };
        if on {
            segs.push((v0, v1));
        }
    }
    Ok(segs)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Builds the soft mask. With `tau <= 0` the mask is the hard coverage and
/// the band is empty.
pub fn soft_mask(
    mesh: &TriMesh,
    proj: &[ProjVert],
    fb: &FragmentBuffer,
    center: &Vector3<f64>,
    tau: f64,
    band_factor: f64,
) -> Result<(super::Image, SilhouetteBand)> {
    let (w, h) = (fb.width, fb.height);
    let mut mask = super::Image::zeros(w, h, 1);
    for i in 0..w * h {
        mask.data[i] = if fb.face[i] >= 0 { 1.0 } else { 0.0 };
    }
    let mut band = SilhouetteBand {
        segs: Vec::new(),
        pixel_seg: vec![-1; w * h],
        pixel_dist: vec![f64::INFINITY; w * h],
        pixel_t: vec![0.0; w * h],
        pixel_sign: vec![0.0; w * h],
    };
    if tau <= 0.0 {
        return Ok((mask, band));
    }
    band.segs = silhouette_segments(mesh, center)?;
    let radius = band_factor * tau;
    for (si, &(va, vb)) in band.segs.iter().enumerate() {
        let (pa, pb) = (&proj[va as usize], &proj[vb as usize]);
        if !(pa.valid && pb.valid) {
            continue;
        }
        let (a, b) = (pa.screen, pb.screen);
        let x0 = ((a.x.min(b.x) - radius).floor().max(0.0)) as usize;
        let x1 = ((a.x.max(b.x) + radius).ceil().min(w as f64 - 1.0)) as isize;
        let y0 = ((a.y.min(b.y) - radius).floor().max(0.0)) as usize;
        let y1 = ((a.y.max(b.y) + radius).ceil().min(h as f64 - 1.0)) as isize;
        if x1 < x0 as isize || y1 < y0 as isize {
            continue;
        }
        let ab = b - a;
        let len2 = ab.norm_squared().max(1e-24);
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                let q = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                let t = ((q - a).dot(&ab) / len2).clamp(0.0, 1.0);
                let d = (q - (a + ab * t)).norm();
                if d > radius {
                    continue;
                }
                let i = y * w + x;
                if d < band.pixel_dist[i] {
                    band.pixel_dist[i] = d;
                    band.pixel_seg[i] = si as i32;
                    band.pixel_t[i] = t;
                }
            }
        }
    }
    for i in 0..w * h {
        if band.pixel_seg[i] >= 0 {
            let sign = if fb.face[i] >= 0 { 1.0 } else { -1.0 };
            band.pixel_sign[i] = sign;
            mask.data[i] = sigmoid(sign * band.pixel_dist[i] / tau);
        }
    }
    Ok((mask, band))
}

/// Gradients of the screen-space barycentrics of a fixed query point with
/// respect to the three screen vertices. Returns d b2[i] / d s[j] as
/// `out[i][j]`, each a Vector2.
pub fn b2_vertex_jacobian(
    s: [Vector2<f64>; 3],
    q: Vector2<f64>,
    b2: [f64; 3],
) -> [[Vector2<f64>; 3]; 3] {
    let perp = |v: Vector2<f64>| Vector2::new(-v.y, v.x);
    let area = tri_area2(s[0], s[1], s[2]);
    // Gradients of the signed area with respect to each vertex.
    let d_area = [perp(s[2] - s[1]), perp(s[0] - s[2]), perp(s[1] - s[0])];
    let mut out = [[Vector2::zeros(); 3]; 3];
    for i in 0..3 {
        // Numerator of b2[i] is the area of (s[i+1], s[i+2], q).
        let j1 = (i + 1) % 3;
        let j2 = (i + 2) % 3;
        // d numerator: vertex j1 plays role a, j2 role b, q role c.
        let dn_j1 = perp(q - s[j2]);
        let dn_j2 = perp(s[j1] - q);
        for j in 0..3 {
            let mut g = -b2[i] / area * d_area[j];
            if j == j1 {
                g += dn_j1 / area;
            } else if j == j2 {
                g += dn_j2 / area;
            }
            out[i][j] = g;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn b2_jacobian_matches_fd() {
        let s = [
            Vector2::new(3.0, 2.0),
            Vector2::new(9.0, 3.5),
            Vector2::new(5.0, 8.0),
        ];
        let q = Vector2::new(5.5, 4.5);
        let area = tri_area2(s[0], s[1], s[2]);
        let bary = |s: [Vector2<f64>; 3]| {
            let a = tri_area2(s[0], s[1], s[2]);
            [
                tri_area2(s[1], s[2], q) / a,
                tri_area2(s[2], s[0], q) / a,
                tri_area2(s[0], s[1], q) / a,
            ]
        };
        let b2 = bary(s);
        assert!((b2.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(area > 0.0);
        let jac = b2_vertex_jacobian(s, q, b2);
        let h = 1e-6;
        for j in 0..3 {
            for c in 0..2 {
                let mut sp = s;
                sp[j][c] += h;
                let mut sm = s;
                sm[j][c] -= h;
                let (bp, bm) = (bary(sp), bary(sm));
                for i in 0..3 {
                    let fd = (bp[i] - bm[i]) / (2.0 * h);
                    assert!(
                        (fd - jac[i][j][c]).abs() < 1e-6,
                        "b2[{i}]/s[{j}].{c}: fd {fd} an {}",
                        jac[i][j][c]
                    );
                }
            }
        }
    }
}
