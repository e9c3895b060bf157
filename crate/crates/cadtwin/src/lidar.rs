//! LiDAR simulation: BVH ray casting against fitted meshes, spinning-sensor
//! ray patterns, per-vertex intensity retrieval, voxel downsampling, and a
//! uniform-grid nearest-neighbor accelerator shared with the energy module.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::geometry::{Pose6D, TriMesh};
use crate::{Error, Result};

/// Spinning-sensor ray pattern: a set of beam elevations swept in azimuth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LidarPattern {
    /// Beam elevation angles in radians, sorted ascending.
    pub beams: Vec<f64>,
    /// Azimuth step in radians, in (0, 2pi).
    pub azimuth_step: f64,
    /// Sensor pose per frame (sensor -> scene frame).
    pub origins: Vec<Pose6D>,
    pub max_range: f64,
}

impl LidarPattern {
    pub fn validate(&self) -> Result<()> {
        if !(self.azimuth_step > 0.0 && self.azimuth_step < 2.0 * std::f64::consts::PI) {
            return Err(Error::Invalid(format!(
                "azimuth_step {} out of (0, 2pi)",
                self.azimuth_step
            )));
        }
        if self.beams.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Invalid("beams must be sorted".into()));
        }
        Ok(())
    }

    /// A 64-beam default approximating a spinning automotive sensor.
    pub fn default_64(origins: Vec<Pose6D>, azimuth_step: f64) -> Self {
        let beams = (0..64)
            .map(|i| (-25.0 + 40.0 * i as f64 / 63.0).to_radians())
            .collect();
        LidarPattern {
            beams,
            azimuth_step,
            origins,
            max_range: 120.0,
        }
    }
}

/// Point cloud with optional per-point intensity, ray origin, and frame id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub intensity: Option<Vec<f64>>,
    pub ray_origin: Option<Vec<Vector3<f64>>>,
    pub frame_id: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            points,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    lo: Vector3<f64>,
    hi: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vector3::repeat(f64::INFINITY),
            hi: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow_point(&mut self, p: &Vector3<f64>) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    /// Slab test; returns entry distance if the ray hits within [0, t_max].
    fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for k in 0..3 {
            let a = (self.lo[k] - origin[k]) * inv_dir[k];
            let b = (self.hi[k] - origin[k]) * inv_dir[k];
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            t0 = t0.max(lo);
            t1 = t1.min(hi);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Debug, Clone)]
enum BvhNode {
    Leaf {
        bounds: Aabb,
        start: usize,
        count: usize,
    },
    Inner {
        bounds: Aabb,
        left: usize,
        right: usize,
    },
}

/// Binary AABB hierarchy over triangles, median-split on the longest axis.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    /// Triangle order after build; indices into the source mesh faces.
    tri_order: Vec<u32>,
    tris: Vec<[Vector3<f64>; 3]>,
}

const LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Bvh {
        let n = mesh.faces.len();
        let tris_src: Vec<[Vector3<f64>; 3]> = (0..n).map(|f| mesh.face_vertices(f)).collect();
        let centroids: Vec<Vector3<f64>> = tris_src
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) / 3.0)
            .collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::new();
        if n > 0 {
            build_node(&tris_src, &centroids, &mut order, 0, n, &mut nodes);
        }
        let tris = order.iter().map(|&i| tris_src[i as usize]).collect();
        Bvh {
            nodes,
            tri_order: order,
            tris,
        }
    }

    /// Nearest intersection with t in (0, max_range]. Returns
    /// (t, face index in the source mesh, barycentric).
    pub fn cast_ray(
        &self,
        origin: &Vector3<f64>,
        direction: &Vector3<f64>,
        max_range: f64,
    ) -> Option<(f64, usize, Vector3<f64>)> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv_dir = Vector3::new(
            1.0 / direction.x,
            1.0 / direction.y,
            1.0 / direction.z,
        );
        let mut best: Option<(f64, usize, Vector3<f64>)> = None;
        let mut t_max = max_range;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let (bounds, node) = match &self.nodes[ni] {
                BvhNode::Leaf { bounds, .. } => (bounds, &self.nodes[ni]),
                BvhNode::Inner { bounds, .. } => (bounds, &self.nodes[ni]),
            };
            if bounds.hit(origin, &inv_dir, t_max).is_none() {
                continue;
            }
            match node {
                BvhNode::Leaf { start, count, .. } => {
                    for i in *start..*start + *count {
                        if let Some((t, bary)) =
                            ray_triangle(origin, direction, &self.tris[i], t_max)
                        {
                            t_max = t;
                            best = Some((t, self.tri_order[i] as usize, bary));
                        }
                    }
                }
                BvhNode::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best
    }
}

fn build_node(
    tris: &[[Vector3<f64>; 3]],
    centroids: &[Vector3<f64>],
    order: &mut [u32],
    start: usize,
    count: usize,
    nodes: &mut Vec<BvhNode>,
) -> usize {
    let mut bounds = Aabb::empty();
    for &i in &order[start..start + count] {
        for p in &tris[i as usize] {
            bounds.grow_point(p);
        }
    }
    let idx = nodes.len();
    if count <= LEAF_SIZE {
        nodes.push(BvhNode::Leaf {
            bounds,
            start,
            count,
        });
        return idx;
    }
    let mut cb = Aabb::empty();
    for &i in &order[start..start + count] {
        cb.grow_point(&centroids[i as usize]);
    }
    let ext = cb.hi - cb.lo;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    let slice = &mut order[start..start + count];
    slice.sort_unstable_by(|&a, &b| {
        centroids[a as usize][axis]
            .partial_cmp(&centroids[b as usize][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mid = count / 2;
    nodes.push(BvhNode::Inner {
        bounds,
        left: 0,
        right: 0,
    });
    let left = build_node(tris, centroids, order, start, mid, nodes);
    let right = build_node(tris, centroids, order, start + mid, count - mid, nodes);
    if let BvhNode::Inner {
        left: l, right: r, ..
    } = &mut nodes[idx]
    {
        *l = left;
        *r = right;
    }
    idx
}

/// Watertight-leaning Moller-Trumbore; hits on shared edges resolve to one
/// triangle through consistent strict/non-strict bounds.
fn ray_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    tri: &[Vector3<f64>; 3],
    t_max: f64,
) -> Option<(f64, Vector3<f64>)> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    if t > 1e-12 && t <= t_max {
        Some((t, Vector3::new(1.0 - u - v, u, v)))
    } else {
        None
    }
}

/// Brute-force all-triangle intersection; the correctness oracle for the BVH.
pub fn cast_ray_brute_force(
    mesh: &TriMesh,
    origin: &Vector3<f64>,
    direction: &Vector3<f64>,
    max_range: f64,
) -> Option<(f64, usize, Vector3<f64>)> {
    let mut best: Option<(f64, usize, Vector3<f64>)> = None;
    let mut t_max = max_range;
    for f in 0..mesh.faces.len() {
        let tri = mesh.face_vertices(f);
        if let Some((t, bary)) = ray_triangle(origin, direction, &tri, t_max) {
            t_max = t;
            best = Some((t, f, bary));
        }
    }
    best
}

/// Occlusion margin: a background point is removed if the actor intersects
/// its ray at least this much closer than the point (matches the 5 cm voxel
/// scale used for downsampling).
pub const OCCLUSION_EPS: f64 = 0.05;

/// Simulates a sweep of the pattern against the actor mesh and merges an
/// optional background cloud with occlusion removal. Output order is fixed
/// by (frame, beam, azimuth) for determinism.
pub fn simulate_sweep(
    actor: &TriMesh,
    actor_pose: &Pose6D,
    pattern: &LidarPattern,
    background: Option<&PointCloud>,
) -> Result<PointCloud> {
    pattern.validate()?;
    let placed = {
        let rot = actor_pose.rotation()?;
        actor.transformed(&rot, &actor_pose.translation)
    };
    let bvh = Bvh::build(&placed);
    let n_azimuth = (2.0 * std::f64::consts::PI / pattern.azimuth_step).floor() as usize;
    let mut out = PointCloud {
        points: Vec::new(),
        intensity: None,
        ray_origin: Some(Vec::new()),
        frame_id: Some(Vec::new()),
    };
    for (frame, origin_pose) in pattern.origins.iter().enumerate() {
        let rot = origin_pose.rotation()?;
        let origin = origin_pose.translation;
        for &elev in &pattern.beams {
            for a in 0..n_azimuth {
                let az = a as f64 * pattern.azimuth_step;
                let dir_local = Vector3::new(
                    elev.cos() * az.cos(),
                    elev.cos() * az.sin(),
                    elev.sin(),
                );
                let dir = rot * dir_local;
                if let Some((t, _, _)) = bvh.cast_ray(&origin, &dir, pattern.max_range) {
                    out.points.push(origin + dir * t);
                    out.ray_origin.as_mut().unwrap().push(origin);
                    out.frame_id.as_mut().unwrap().push(frame as u32);
                }
            }
        }
    }
    if let Some(bg) = background {
        let n_actor = out.points.len();
        let mut intensity = bg
            .intensity
            .as_ref()
            // Simulated actor points carry no physical intensity model; pad
            // with zeros so merged clouds keep the channel.
            .map(|_| vec![0.0; n_actor]);
        for (i, p) in bg.points.iter().enumerate() {
            let origin = bg
                .ray_origin
                .as_ref()
                .map(|o| o[i])
                .unwrap_or_else(Vector3::zeros);
            let to_p = p - origin;
            let dist = to_p.norm();
            let occluded = if dist > 1e-9 {
                let dir = to_p / dist;
                matches!(bvh.cast_ray(&origin, &dir, dist), Some((t, _, _)) if t < dist - OCCLUSION_EPS)
            } else {
                false
            };
            if !occluded {
                out.points.push(*p);
                out.ray_origin.as_mut().unwrap().push(origin);
                out.frame_id
                    .as_mut()
                    .unwrap()
                    .push(bg.frame_id.as_ref().map(|f| f[i]).unwrap_or(u32::MAX));
                if let (Some(dst), Some(src)) = (&mut intensity, &bg.intensity) {
                    dst.push(src[i]);
                }
            }
        }
        out.intensity = intensity;
    }
    Ok(out)
}

/// Uniform hash-grid nearest-neighbor index over a fixed point set.
pub struct NearestGrid {
    cell: f64,
    points: Vec<Vector3<f64>>,
    grid: BTreeMap<(i64, i64, i64), Vec<u32>>,
}

impl NearestGrid {
    pub fn build(points: &[Vector3<f64>], cell: f64) -> NearestGrid {
        let mut grid: BTreeMap<(i64, i64, i64), Vec<u32>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            grid.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        NearestGrid {
            cell,
            points: points.to_vec(),
            grid,
        }
    }

    fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    /// Index and squared distance of the nearest stored point. Ties break to
    /// the lowest index.
    pub fn nearest(&self, q: &Vector3<f64>) -> (usize, f64) {
        assert!(!self.points.is_empty());
        let (kx, ky, kz) = Self::key(q, self.cell);
        let mut best = (usize::MAX, f64::INFINITY);
        let mut ring = 0i64;
        loop {
            let mut found_any = false;
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(ids) = self.grid.get(&(kx + dx, ky + dy, kz + dz)) {
                            found_any = true;
                            for &i in ids {
                                let d = (self.points[i as usize] - q).norm_squared();
                                if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                                    best = (i as usize, d);
                                }
                            }
                        }
                    }
                }
            }
            // A candidate in ring r guarantees the true nearest lies within
            // ring r+1 (cells are cubes of side `cell`).
            if best.0 != usize::MAX {
                let safe_rings = (best.1.sqrt() / self.cell).ceil() as i64 + 1;
                if ring >= safe_rings {
                    return best;
                }
            }
            let _ = found_any;
            ring += 1;
            // Far queries would otherwise walk huge empty shells; fall back
            // to an exact linear scan instead.
            if ring > 16 {
                for (i, p) in self.points.iter().enumerate() {
                    let d = (p - q).norm_squared();
                    if d < best.1 || (d == best.1 && i < best.0) {
                        best = (i, d);
                    }
                }
                return best;
            }
        }
    }

    /// Indices of the k nearest stored points (brute force over expanding
    /// rings is overkill here; the clouds are small, so sort a candidate
    /// superset).
    pub fn k_nearest(&self, q: &Vector3<f64>, k: usize) -> Vec<(usize, f64)> {
        let mut all: Vec<(usize, f64)> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - q).norm_squared()))
            .collect();
        all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        all.truncate(k);
        all
    }
}

/// Per-vertex intensity: mean intensity of the 10 nearest cloud points
/// (all points when the cloud has fewer than 10).
pub fn retrieve_intensity(mesh: &TriMesh, cloud: &PointCloud) -> Result<Vec<f64>> {
    let intensities = cloud
        .intensity
        .as_ref()
        .ok_or_else(|| Error::Invalid("cloud has no intensity channel".into()))?;
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let k = 10.min(cloud.len());
    let grid = NearestGrid::build(&cloud.points, 0.25);
    Ok(mesh
        .vertices
        .iter()
        .map(|v| {
            let nn = grid.k_nearest(v, k);
            nn.iter().map(|&(i, _)| intensities[i]).sum::<f64>() / k as f64
        })
        .collect())
}

/// Voxel downsampling: one centroid per occupied voxel. Returns the
/// downsampled cloud and the indices of held-out points (those that were
/// not the first in their voxel do not exist as such under the centroid
/// convention, so held-out = all original indices not chosen as sole
/// occupants; see below).
///
/// The held-out set is defined as the complement of a one-representative
/// choice per voxel: for every voxel the lowest-index occupant is charged
/// to the input set and the remaining occupants are held out.
pub fn voxel_downsample(cloud: &PointCloud, resolution: f64) -> Result<(PointCloud, Vec<usize>)> {
    if resolution <= 0.0 {
        return Err(Error::Invalid("voxel resolution must be positive".into()));
    }
    let mut voxels: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.points.iter().enumerate() {
        let key = (
            (p.x / resolution).floor() as i64,
            (p.y / resolution).floor() as i64,
            (p.z / resolution).floor() as i64,
        );
        voxels.entry(key).or_default().push(i);
    }
    let mut out = PointCloud::default();
    let mut held_out = Vec::new();
    let has_intensity = cloud.intensity.is_some();
    let has_origin = cloud.ray_origin.is_some();
    if has_intensity {
        out.intensity = Some(Vec::new());
    }
    if has_origin {
        out.ray_origin = Some(Vec::new());
    }
    for ids in voxels.values() {
        let centroid: Vector3<f64> =
            ids.iter().map(|&i| cloud.points[i]).sum::<Vector3<f64>>() / ids.len() as f64;
        out.points.push(centroid);
        if let (Some(oi), Some(ci)) = (&mut out.intensity, &cloud.intensity) {
            oi.push(ids.iter().map(|&i| ci[i]).sum::<f64>() / ids.len() as f64);
        }
        if let (Some(oo), Some(co)) = (&mut out.ray_origin, &cloud.ray_origin) {
            oo.push(co[ids[0]]);
        }
        held_out.extend(ids.iter().skip(1).copied());
    }
    held_out.sort_unstable();
    Ok((out, held_out))
}

/// Binary little-endian PLY with x, y, z and optional intensity.
pub fn write_cloud_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    let has_i = cloud.intensity.is_some();
    let has_o = cloud.ray_origin.is_some();
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        cloud.len()
    )?;
    if has_i {
        write!(w, "property double intensity\n")?;
    }
    if has_o {
        write!(w, "property double ox\nproperty double oy\nproperty double oz\n")?;
    }
    write!(w, "end_header\n")?;
    for i in 0..cloud.len() {
        let p = cloud.points[i];
        for c in [p.x, p.y, p.z] {
            w.write_all(&c.to_le_bytes())?;
        }
        if let Some(int) = &cloud.intensity {
            w.write_all(&int[i].to_le_bytes())?;
        }
        if let Some(orig) = &cloud.ray_origin {
            for c in [orig[i].x, orig[i].y, orig[i].z] {
                w.write_all(&c.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_cloud_ply(path: &Path) -> Result<PointCloud> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut header = String::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                message: "unexpected EOF in header".into(),
            });
        }
        header.push_str(&line);
        if line.trim() == "end_header" {
            break;
        }
    }
    let mut n = 0usize;
    let mut props = Vec::new();
    for line in header.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["element", "vertex", c] => n = c.parse().unwrap_or(0),
            ["property", "double", name] => props.push((*name).to_string()),
            _ => {}
        }
    }
    let has_i = props.iter().any(|p| p == "intensity");
    let has_o = props.iter().any(|p| p == "ox");
    let mut cloud = PointCloud::default();
    if has_i {
        cloud.intensity = Some(Vec::with_capacity(n));
    }
    if has_o {
        cloud.ray_origin = Some(Vec::with_capacity(n));
    }
    let mut buf = [0u8; 8];
    let mut rd = |r: &mut BufReader<std::fs::File>| -> Result<f64> {
        r.read_exact(&mut buf)?;
        Ok(f64::from_le_bytes(buf))
    };
    for _ in 0..n {
        let x = rd(&mut r)?;
        let y = rd(&mut r)?;
        let z = rd(&mut r)?;
        cloud.points.push(Vector3::new(x, y, z));
        if has_i {
            let v = rd(&mut r)?;
            cloud.intensity.as_mut().unwrap().push(v);
        }
        if has_o {
            let ox = rd(&mut r)?;
            let oy = rd(&mut r)?;
            let oz = rd(&mut r)?;
            cloud.ray_origin.as_mut().unwrap().push(Vector3::new(ox, oy, oz));
        }
    }
    Ok(cloud)
}
