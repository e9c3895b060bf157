//! Differentiable mesh renderer: hard z-buffer visibility, perspective-
//! correct attribute interpolation, physically based shading against a
//! directional environment, and a sigmoid-softened silhouette mask. The
//! backward pass is hand-written and propagates image-space gradients to
//! world vertices, textures, environment radiance, and the camera pose.

pub mod image;
pub mod raster;
pub mod shade;

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{rot6d_to_matrix_with_jacobian, Pose6D, TriMesh};
use crate::{Error, Result};

pub use image::Image;
pub use raster::{FragmentBuffer, ProjVert, SilhouetteBand};

/// Pinhole camera; `pose` maps world points into the camera frame
/// (x right, y down, z forward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub pose: Pose6D,
}

impl Camera {
    /// Camera center in world coordinates.
    pub fn center(&self) -> Result<Vector3<f64>> {
        let r = self.pose.rotation()?;
        Ok(-(r.transpose() * self.pose.translation))
    }

    /// Camera at `eye` looking toward `target`.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Camera> {
        let z = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegenerateRotation("eye coincides with target".into()))?;
        let x = z
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegenerateRotation("view direction parallel to up".into()))?;
        let y = z.cross(&x);
        let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let fy = height as f64 * 0.5 / (fov_y_deg.to_radians() * 0.5).tan();
        Ok(Camera {
            fx: fy,
            fy,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
            pose: Pose6D::from_matrix(&rot, -(rot * eye)),
        })
    }
}

/// One directional environment sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSample {
    /// Unit direction from the surface toward the light.
    pub direction: Vector3<f64>,
    /// Solid-angle weight; a full sphere sums to 4 pi.
    pub weight: f64,
    pub radiance: Vector3<f64>,
}

/// Environment light as a small set of directional samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvLight {
    pub samples: Vec<EnvSample>,
}

impl EnvLight {
    /// Full-sphere grid of `n_az * n_el` directions with exact solid-angle
    /// weights and constant radiance.
    pub fn uniform_grid(n_az: usize, n_el: usize, radiance: Vector3<f64>) -> EnvLight {
        let mut samples = Vec::with_capacity(n_az * n_el);
        let dphi = 2.0 * std::f64::consts::PI / n_az as f64;
        for j in 0..n_el {
            let s_lo = -1.0 + 2.0 * j as f64 / n_el as f64;
            let s_hi = -1.0 + 2.0 * (j + 1) as f64 / n_el as f64;
            let elevation = ((s_lo + s_hi) * 0.5).asin();
            let weight = dphi * (s_hi - s_lo);
            for i in 0..n_az {
                let az = (i as f64 + 0.5) * dphi;
                samples.push(EnvSample {
                    direction: Vector3::new(
                        elevation.cos() * az.cos(),
                        elevation.cos() * az.sin(),
                        elevation.sin(),
                    ),
                    weight,
                    radiance,
                });
            }
        }
        EnvLight { samples }
    }

    pub fn mean_radiance(&self) -> Vector3<f64> {
        if self.samples.is_empty() {
            return Vector3::zeros();
        }
        self.samples.iter().map(|s| s.radiance).sum::<Vector3<f64>>() / self.samples.len() as f64
    }
}

/// Spatially varying appearance: diffuse albedo texture, a texture holding
/// (unused, roughness, metallic), and the environment light.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceParams {
    pub kd: Image,
    pub orm: Image,
    pub env: EnvLight,
}

pub const MIN_ROUGHNESS: f64 = 0.02;

impl AppearanceParams {
    pub fn flat(
        width: usize,
        height: usize,
        kd: Vector3<f64>,
        roughness: f64,
        metallic: f64,
        env: EnvLight,
    ) -> AppearanceParams {
        let mut kd_img = Image::zeros(width, height, 3);
        let mut orm = Image::zeros(width, height, 3);
        for p in 0..width * height {
            for c in 0..3 {
                kd_img.data[3 * p + c] = kd[c];
            }
            orm.data[3 * p + 1] = roughness.max(MIN_ROUGHNESS);
            orm.data[3 * p + 2] = metallic;
        }
        AppearanceParams {
            kd: kd_img,
            orm,
            env,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderConfig {
    /// Silhouette softness in pixels; 0 renders a hard mask.
    pub tau: f64,
    /// Half-width of the softening band, in units of tau.
    pub band_factor: f64,
    pub enable_specular: bool,
    /// When false, color is left black (mask/depth only); much cheaper for
    /// stages that do not use the photometric term.
    pub shade: bool,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            tau: 1.0,
            band_factor: 12.0,
            enable_specular: true,
            shade: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub color: Image,
    pub mask: Image,
    pub depth: Image,
}

/// Intermediate state reused by the backward pass.
pub struct RenderCache {
    pub proj: Vec<ProjVert>,
    pub frags: FragmentBuffer,
    pub band: SilhouetteBand,
    pub center: Vector3<f64>,
}

#[derive(Debug, Clone)]
pub struct RenderGrads {
    /// Gradient with respect to world-space mesh vertices.
    pub vertices: Vec<Vector3<f64>>,
    pub kd: Image,
    pub orm: Image,
    /// Per-sample radiance gradients.
    pub env_radiance: Vec<Vector3<f64>>,
    pub cam_rot6: [f64; 6],
    pub cam_trans: Vector3<f64>,
}

fn pixel_uv(mesh: &TriMesh, face: usize, b3: &[f64; 3]) -> Vector2<f64> {
    match &mesh.uv {
        Some(uv) => {
            let [a, b, c] = mesh.faces[face];
            uv[a as usize] * b3[0] + uv[b as usize] * b3[1] + uv[c as usize] * b3[2]
        }
        None => Vector2::new(0.5, 0.5),
    }
}

struct PixelGeom {
    normal: Vector3<f64>,
    view: Vector3<f64>,
    nv: f64,
    nv_clamped: bool,
    uv: Vector2<f64>,
    kd: [f64; 3],
    rough: f64,
    rough_clamped: bool,
    metal: f64,
    metal_clamped: bool,
}

fn pixel_geometry(
    mesh: &TriMesh,
    app: &AppearanceParams,
    center: &Vector3<f64>,
    face: usize,
    b3: &[f64; 3],
) -> PixelGeom {
    let [va, vb, vc] = mesh.face_vertices(face);
    let normal = (vb - va).cross(&(vc - va)).normalize();
    let p = va * b3[0] + vb * b3[1] + vc * b3[2];
    let view = (center - p).normalize();
    let nv_raw = normal.dot(&view);
    let nv = nv_raw.max(1e-4);
    let uv = pixel_uv(mesh, face, b3);
    let mut kd = [0.0; 3];
    app.kd.sample_bilinear(uv.x, uv.y, &mut kd);
    let mut orm = [0.0; 3];
    app.orm.sample_bilinear(uv.x, uv.y, &mut orm);
    let rough = orm[1].clamp(MIN_ROUGHNESS, 1.0);
    let metal = orm[2].clamp(0.0, 1.0);
    PixelGeom {
        normal,
        view,
        nv,
        nv_clamped: nv_raw < 1e-4,
        uv,
        kd,
        rough,
        rough_clamped: orm[1] < MIN_ROUGHNESS || orm[1] > 1.0,
        metal,
        metal_clamped: !(0.0..=1.0).contains(&orm[2]),
    }
}

fn shade_forward(geom: &PixelGeom, env: &EnvLight, specular: bool) -> [f64; 3] {
    let mut color = [0.0; 3];
    for s in &env.samples {
        let nl = geom.normal.dot(&s.direction);
        if nl <= 0.0 {
            continue;
        }
        let h = (s.direction + geom.view).normalize();
        let nh = geom.normal.dot(&h).clamp(0.0, 1.0);
        let hv = h.dot(&geom.view).clamp(0.0, 1.0);
        for c in 0..3 {
            let g = shade::brdf_cos(
                geom.kd[c], geom.rough, geom.metal, nl, geom.nv, nh, hv, specular,
            );
            color[c] += s.weight * s.radiance[c] * g.v;
        }
    }
    color
}

/// Renders color, soft mask, and depth.
pub fn render(
    mesh: &TriMesh,
    camera: &Camera,
    app: &AppearanceParams,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    Ok(render_with_cache(mesh, camera, app, cfg)?.0)
}

pub fn render_with_cache(
    mesh: &TriMesh,
    camera: &Camera,
    app: &AppearanceParams,
    cfg: &RenderConfig,
) -> Result<(RenderOutput, RenderCache)> {
    mesh.validate()?;
    let center = camera.center()?;
    let proj = raster::project_vertices(mesh, camera)?;
    let frags = raster::rasterize(mesh, &proj, camera, &center);
    let (mask, band) = raster::soft_mask(mesh, &proj, &frags, &center, cfg.tau, cfg.band_factor)?;
    let (w, h) = (camera.width, camera.height);
    let mut color = Image::zeros(w, h, 3);
    let mut depth = Image::zeros(w, h, 1);
    for i in 0..w * h {
        if frags.face[i] < 0 {
            continue;
        }
        depth.data[i] = frags.depth[i];
        if cfg.shade {
            let geom = pixel_geometry(mesh, app, &center, frags.face[i] as usize, &frags.b3[i]);
            let c = shade_forward(&geom, &app.env, cfg.enable_specular);
            color.data[3 * i..3 * i + 3].copy_from_slice(&c);
        }
    }
    Ok((
        RenderOutput { color, mask, depth },
        RenderCache {
            proj,
            frags,
            band,
            center,
        },
    ))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Jacobian of v / |v|.
fn normalize_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let n = v.norm();
    let u = v / n;
    (Matrix3::identity() - u * u.transpose()) / n
}

/// Pulls `d_color` and `d_mask` back to vertices, textures, environment,
/// and camera pose. Visibility (z-buffer face assignment) is treated as
/// fixed; geometric mask gradients flow through the softened silhouette.
pub fn render_backward(
    mesh: &TriMesh,
    camera: &Camera,
    app: &AppearanceParams,
    cfg: &RenderConfig,
    cache: &RenderCache,
    d_color: &Image,
    d_mask: Option<&Image>,
) -> Result<RenderGrads> {
    let (w, h) = (camera.width, camera.height);
    let nv_mesh = mesh.vertices.len();
    let mut g = RenderGrads {
        vertices: vec![Vector3::zeros(); nv_mesh],
        kd: Image::zeros(app.kd.width, app.kd.height, 3),
        orm: Image::zeros(app.orm.width, app.orm.height, 3),
        env_radiance: vec![Vector3::zeros(); app.env.samples.len()],
        cam_rot6: [0.0; 6],
        cam_trans: Vector3::zeros(),
    };
    let center = cache.center;
    // Screen-space and camera-depth gradients per vertex, chained to world
    // vertices and the camera pose at the end.
    let mut d_screen = vec![Vector2::zeros(); nv_mesh];
    let mut d_zcam = vec![0.0; nv_mesh];
    let mut d_center = Vector3::zeros();

    for pi in 0..w * h {
        let face = cache.frags.face[pi];
        if face >= 0 {
            let dc = [
                d_color.data[3 * pi],
                d_color.data[3 * pi + 1],
                d_color.data[3 * pi + 2],
            ];
            if dc.iter().any(|&v| v != 0.0) {
                self::pixel_backward(
                    mesh, app, cfg, cache, &center, pi, face as usize, &dc, &mut g,
                    &mut d_screen, &mut d_zcam, &mut d_center,
                );
            }
        }
        if let Some(dm) = d_mask {
            let si = cache.band.pixel_seg[pi];
            let dmv = dm.data[pi];
            if si >= 0 && dmv != 0.0 && cfg.tau > 0.0 {
                let (va, vb) = cache.band.segs[si as usize];
                let (pa, pb) = (&cache.proj[va as usize], &cache.proj[vb as usize]);
                if pa.valid && pb.valid {
                    let dist = cache.band.pixel_dist[pi];
                    if dist > 1e-9 {
                        let sign = cache.band.pixel_sign[pi];
                        let m = raster::sigmoid(sign * dist / cfg.tau);
                        let d_dist = dmv * m * (1.0 - m) * sign / cfg.tau;
                        let t = cache.band.pixel_t[pi];
                        let q = Vector2::new(
                            (pi % w) as f64 + 0.5,
                            (pi / w) as f64 + 0.5,
                        );
                        let closest = pa.screen + (pb.screen - pa.screen) * t;
                        let dir = (q - closest) / dist;
                        d_screen[va as usize] += -dir * ((1.0 - t) * d_dist);
                        d_screen[vb as usize] += -dir * (t * d_dist);
                    }
                }
            }
        }
    }

    // Chain screen/depth gradients through projection to world vertices and
    // the camera pose.
    let (rot, drot) = rot6d_to_matrix_with_jacobian(&camera.pose.rot6)?;
    for i in 0..nv_mesh {
        if d_screen[i] == Vector2::zeros() && d_zcam[i] == 0.0 {
            continue;
        }
        let cam = cache.proj[i].cam;
        if !cache.proj[i].valid {
            continue;
        }
        let z = cam.z;
        let d_cam = Vector3::new(
            camera.fx / z * d_screen[i].x,
            camera.fy / z * d_screen[i].y,
            -camera.fx * cam.x / (z * z) * d_screen[i].x
                - camera.fy * cam.y / (z * z) * d_screen[i].y
                + d_zcam[i],
        );
        g.vertices[i] += rot.transpose() * d_cam;
        g.cam_trans += d_cam;
        for j in 0..6 {
            g.cam_rot6[j] += d_cam.dot(&(drot[j] * mesh.vertices[i]));
        }
    }
    // Camera-center path (view directions): c = -R^T t.
    g.cam_trans += -(rot * d_center);
    for j in 0..6 {
        g.cam_rot6[j] += d_center.dot(&(-(drot[j].transpose() * camera.pose.translation)));
    }
    Ok(g)
}

#[allow(clippy::too_many_arguments)]
fn pixel_backward(
    mesh: &TriMesh,
    app: &AppearanceParams,
    cfg: &RenderConfig,
    cache: &RenderCache,
    center: &Vector3<f64>,
    pi: usize,
    face: usize,
    dc: &[f64; 3],
    g: &mut RenderGrads,
    d_screen: &mut [Vector2<f64>],
    d_zcam: &mut [f64],
    d_center: &mut Vector3<f64>,
) {
    let idx = mesh.faces[face];
    let vids = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
    let [va, vb, vc] = mesh.face_vertices(face);
    let b3 = cache.frags.b3[pi];
    let b2 = cache.frags.b2[pi];
    let geom = pixel_geometry(mesh, app, center, face, &b3);
    let p = va * b3[0] + vb * b3[1] + vc * b3[2];

    // Shading gradients.
    let mut d_kd_s = [0.0; 3];
    let mut d_rough = 0.0;
    let mut d_metal = 0.0;
    let mut d_n = Vector3::zeros();
    let mut d_view = Vector3::zeros();
    let mut d_nv = 0.0;
    for (si, s) in app.env.samples.iter().enumerate() {
        let nl = geom.normal.dot(&s.direction);
        if nl <= 0.0 {
            continue;
        }
        let h_raw = s.direction + geom.view;
        let h = h_raw.normalize();
        let nh_raw = geom.normal.dot(&h);
        let hv_raw = h.dot(&geom.view);
        let nh = nh_raw.clamp(0.0, 1.0);
        let hv = hv_raw.clamp(0.0, 1.0);
        let mut k_nl = 0.0;
        let mut k_nh = 0.0;
        let mut k_hv = 0.0;
        for c in 0..3 {
            let gg = shade::brdf_cos(
                geom.kd[c], geom.rough, geom.metal, nl, geom.nv, nh, hv,
                cfg.enable_specular,
            );
            let kc = dc[c] * s.weight * s.radiance[c];
            d_kd_s[c] += kc * gg.d[0];
            if !geom.rough_clamped {
                d_rough += kc * gg.d[1];
            }
            if !geom.metal_clamped {
                d_metal += kc * gg.d[2];
            }
            k_nl += kc * gg.d[3];
            if !geom.nv_clamped {
                d_nv += kc * gg.d[4];
            }
            if (0.0..=1.0).contains(&nh_raw) {
                k_nh += kc * gg.d[5];
            }
            if (0.0..=1.0).contains(&hv_raw) {
                k_hv += kc * gg.d[6];
            }
            g.env_radiance[si][c] += dc[c] * s.weight * gg.v;
        }
        d_n += s.direction * k_nl + h * k_nh;
        // h depends on the view direction.
        let jh = normalize_jacobian(&h_raw);
        d_view += jh.transpose() * (geom.normal * k_nh + geom.view * k_hv) + h * k_hv;
    }
    d_n += geom.view * d_nv;
    d_view += geom.normal * d_nv;

    // Texture sampling: scatter texel gradients, chain to uv.
    let mut d_uv = Vector2::zeros();
    let mut du = [0.0; 3];
    let mut dv = [0.0; 3];
    app.kd.sample_bilinear_grad_uv(geom.uv.x, geom.uv.y, &mut du, &mut dv);
    for c in 0..3 {
        d_uv.x += d_kd_s[c] * du[c];
        d_uv.y += d_kd_s[c] * dv[c];
    }
    g.kd.scatter_bilinear(geom.uv.x, geom.uv.y, &d_kd_s);
    app.orm
        .sample_bilinear_grad_uv(geom.uv.x, geom.uv.y, &mut du, &mut dv);
    d_uv.x += d_rough * du[1] + d_metal * du[2];
    d_uv.y += d_rough * dv[1] + d_metal * dv[2];
    g.orm
        .scatter_bilinear(geom.uv.x, geom.uv.y, &[0.0, d_rough, d_metal]);

    // Normal to the three face vertices (flat shading).
    let e1 = vb - va;
    let e2 = vc - va;
    let jn = normalize_jacobian(&e1.cross(&e2));
    let d_raw = jn.transpose() * d_n;
    g.vertices[vids[0]] += (skew(&e2) - skew(&e1)).transpose() * d_raw;
    g.vertices[vids[1]] += (-skew(&e2)).transpose() * d_raw;
    g.vertices[vids[2]] += skew(&e1).transpose() * d_raw;

    // View direction to camera center and surface point.
    let jv = normalize_jacobian(&(center - p));
    let dv_chain = jv.transpose() * d_view;
    *d_center += dv_chain;
    let d_p = -dv_chain;

    // Barycentric chain: position and uv both interpolate with b3.
    let uvs = match &mesh.uv {
        Some(uv) => [uv[vids[0]], uv[vids[1]], uv[vids[2]]],
        None => [Vector2::zeros(); 3],
    };
    let verts = [va, vb, vc];
    let mut d_b3 = [0.0; 3];
    for i in 0..3 {
        d_b3[i] = d_p.dot(&verts[i]) + d_uv.dot(&uvs[i]);
        g.vertices[vids[i]] += d_p * b3[i];
    }
    // b3 -> (b2, 1/z).
    let inv_z = [
        1.0 / cache.proj[vids[0]].cam.z,
        1.0 / cache.proj[vids[1]].cam.z,
        1.0 / cache.proj[vids[2]].cam.z,
    ];
    let wsum = b2[0] * inv_z[0] + b2[1] * inv_z[1] + b2[2] * inv_z[2];
    let s_dot: f64 = (0..3).map(|i| d_b3[i] * b3[i]).sum();
    let q = Vector2::new((pi % cache.frags.width) as f64 + 0.5, (pi / cache.frags.width) as f64 + 0.5);
    let screens = [
        cache.proj[vids[0]].screen,
        cache.proj[vids[1]].screen,
        cache.proj[vids[2]].screen,
    ];
    let jac = raster::b2_vertex_jacobian(screens, q, b2);
    for k in 0..3 {
        let d_wk = b2[k] * (d_b3[k] - s_dot) / wsum;
        d_zcam[vids[k]] += -d_wk * inv_z[k] * inv_z[k];
        let mut acc = Vector2::zeros();
        for i in 0..3 {
            let d_b2i = inv_z[i] * (d_b3[i] - s_dot) / wsum;
            acc += jac[i][k] * d_b2i;
        }
        d_screen[vids[k]] += acc;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;

    fn test_scene() -> (TriMesh, Camera, AppearanceParams) {
        let mut mesh = icosphere(1);
        // Give the sphere spherical UVs so texture gradients are exercised.
        let uv = mesh
            .vertices
            .iter()
            .map(|d| {
                Vector2::new(
                    0.5 + d.y.atan2(d.x) / (2.0 * std::f64::consts::PI),
                    0.5 + d.z.clamp(-1.0, 1.0).asin() / std::f64::consts::PI,
                )
            })
            .collect();
        mesh.uv = Some(uv);
        let camera = Camera::look_at(
            Vector3::new(3.0, 0.4, 0.6),
            Vector3::zeros(),
            Vector3::z(),
            40.0,
            16,
            16,
        )
        .unwrap();
        let mut app = AppearanceParams::flat(
            8,
            8,
            Vector3::new(0.6, 0.45, 0.3),
            0.4,
            0.2,
            EnvLight::uniform_grid(4, 3, Vector3::new(0.9, 0.85, 0.8)),
        );
        // Non-constant textures so uv gradients matter.
        for i in 0..app.kd.data.len() {
            app.kd.data[i] =
                0.2 + 0.6 * crate::geometry::rng::uniform(17, i as u64, 0);
        }
        for p in 0..64 {
            app.orm.data[3 * p + 1] =
                0.1 + 0.7 * crate::geometry::rng::uniform(18, p as u64, 0);
            app.orm.data[3 * p + 2] =
                0.1 + 0.8 * crate::geometry::rng::uniform(18, p as u64, 1);
        }
        (mesh, camera, app)
    }

    #[test]
    fn sphere_covers_center_not_corners() {
        let (mesh, camera, app) = test_scene();
        let cfg = RenderConfig {
            tau: 0.0,
            ..Default::default()
        };
        let out = render(&mesh, &camera, &app, &cfg).unwrap();
        assert!(out.mask.get(8, 8, 0) == 1.0);
        assert!(out.mask.get(0, 0, 0) == 0.0);
        assert!(out.depth.get(8, 8, 0) > 0.0);
        // Center pixel nearer than the sphere center distance.
        let dist = camera.center().unwrap().norm();
        assert!(out.depth.get(8, 8, 0) < dist);
        assert!(out.color.get(8, 8, 0) > 0.0);
    }

    #[test]
    fn hard_mask_zero_exactly_where_depth_zero() {
        let (mesh, camera, app) = test_scene();
        let cfg = RenderConfig {
            tau: 0.0,
            ..Default::default()
        };
        let out = render(&mesh, &camera, &app, &cfg).unwrap();
        for i in 0..out.mask.data.len() {
            assert_eq!(out.mask.data[i] == 0.0, out.depth.data[i] == 0.0);
        }
    }

    #[test]
    fn soft_mask_transitions_across_silhouette() {
        let (mesh, camera, app) = test_scene();
        let cfg = RenderConfig {
            tau: 0.5,
            ..Default::default()
        };
        let out = render(&mesh, &camera, &app, &cfg).unwrap();
        let vals: Vec<f64> = out.mask.data.clone();
        // Some strictly intermediate values exist near the silhouette.
        assert!(vals.iter().any(|&v| v > 0.05 && v < 0.95));
        // Deep interior is ~1, far exterior ~0.
        assert!(out.mask.get(8, 8, 0) > 0.99);
        assert!(out.mask.get(0, 0, 0) < 0.01);
    }

    #[test]
    fn white_furnace_matches_direct_sum() {
        // Pure white Lambertian albedo under unit radiance: each covered
        // pixel must equal (1/pi) * sum of cos-weighted solid angles, which
        // an independent loop over the environment reproduces from the
        // pixel's normal.
        let (mesh, camera, _) = test_scene();
        let env = EnvLight::uniform_grid(16, 8, Vector3::new(1.0, 1.0, 1.0));
        let app = AppearanceParams::flat(4, 4, Vector3::new(1.0, 1.0, 1.0), 0.5, 0.0, env.clone());
        let cfg = RenderConfig {
            tau: 0.0,
            band_factor: 12.0,
            enable_specular: false,
            shade: true,
        };
        let (out, cache) = render_with_cache(&mesh, &camera, &app, &cfg).unwrap();
        let mut checked = 0;
        for pi in 0..16 * 16 {
            if cache.frags.face[pi] < 0 {
                continue;
            }
            let [a, b, c] = mesh.face_vertices(cache.frags.face[pi] as usize);
            let n = (b - a).cross(&(c - a)).normalize();
            let mut expect = 0.0;
            for s in &env.samples {
                let cos = n.dot(&s.direction);
                if cos > 0.0 {
                    expect += cos * s.weight / std::f64::consts::PI;
                }
            }
            for ch in 0..3 {
                assert!((out.color.data[3 * pi + ch] - expect).abs() < 1e-6);
            }
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn env_weights_cover_sphere() {
        let env = EnvLight::uniform_grid(16, 8, Vector3::zeros());
        assert_eq!(env.samples.len(), 128);
        let total: f64 = env.samples.iter().map(|s| s.weight).sum();
        assert!((total - 4.0 * std::f64::consts::PI).abs() < 1e-9);
        for s in &env.samples {
            assert!((s.direction.norm() - 1.0).abs() < 1e-12);
        }
    }

    /// Scalar loss for finite differencing: color weighted only on pixels
    /// well inside the silhouette (stable visibility), mask weighted in the
    /// soft band.
    fn fd_loss_weights(
        mesh: &TriMesh,
        camera: &Camera,
        app: &AppearanceParams,
        cfg: &RenderConfig,
    ) -> (Image, Image) {
        let (out, cache) = render_with_cache(mesh, camera, app, cfg).unwrap();
        let mut wc = Image::zeros(camera.width, camera.height, 3);
        let mut wm = Image::zeros(camera.width, camera.height, 1);
        for pi in 0..camera.width * camera.height {
            let covered = cache.frags.face[pi] >= 0;
            let near_edge =
                cache.band.pixel_seg[pi] >= 0 && cache.band.pixel_dist[pi] < 2.5;
            if covered && !near_edge {
                for c in 0..3 {
                    wc.data[3 * pi + c] =
                        crate::geometry::rng::normal(33, pi as u64, c as u64);
                }
            }
            if out.mask.data[pi] > 0.02 && out.mask.data[pi] < 0.98 {
                wm.data[pi] = crate::geometry::rng::normal(34, pi as u64, 0);
            }
        }
        (wc, wm)
    }

    fn fd_loss(
        mesh: &TriMesh,
        camera: &Camera,
        app: &AppearanceParams,
        cfg: &RenderConfig,
        wc: &Image,
        wm: &Image,
    ) -> f64 {
        let out = render(mesh, camera, app, cfg).unwrap();
        let mut l = 0.0;
        for (a, b) in out.color.data.iter().zip(&wc.data) {
            l += a * b;
        }
        for (a, b) in out.mask.data.iter().zip(&wm.data) {
            l += a * b;
        }
        l
    }

    #[test]
    fn backward_matches_fd() {
        let (mesh, camera, app) = test_scene();
        let cfg = RenderConfig {
            tau: 1.0,
            ..Default::default()
        };
        let (wc, wm) = fd_loss_weights(&mesh, &camera, &app, &cfg);
        let (_, cache) = render_with_cache(&mesh, &camera, &app, &cfg).unwrap();
        let g = render_backward(&mesh, &camera, &app, &cfg, &cache, &wc, Some(&wm)).unwrap();
        let h = 1e-5;
        let base_tol = 1e-3;
        // Vertex gradients: directional derivative along a random direction.
        let dir: Vec<Vector3<f64>> = (0..mesh.vertices.len())
            .map(|i| {
                Vector3::new(
                    crate::geometry::rng::normal(41, i as u64, 0),
                    crate::geometry::rng::normal(41, i as u64, 1),
                    crate::geometry::rng::normal(41, i as u64, 2),
                )
            })
            .collect();
        let mut mp = mesh.clone();
        let mut mm = mesh.clone();
        for i in 0..mesh.vertices.len() {
            mp.vertices[i] += dir[i] * h;
            mm.vertices[i] -= dir[i] * h;
        }
        let fd = (fd_loss(&mp, &camera, &app, &cfg, &wc, &wm)
            - fd_loss(&mm, &camera, &app, &cfg, &wc, &wm))
            / (2.0 * h);
        let an: f64 = g.vertices.iter().zip(&dir).map(|(a, b)| a.dot(b)).sum();
        let scale = fd.abs().max(an.abs()).max(1.0);
        assert!(
            (fd - an).abs() / scale < 1e-2,
            "vertex direction: fd {fd} an {an}"
        );

        // Camera pose gradients.
        for j in 0..6 {
            let mut cp = camera.clone();
            cp.pose.rot6[j] += h;
            let mut cm = camera.clone();
            cm.pose.rot6[j] -= h;
            let fd = (fd_loss(&mesh, &cp, &app, &cfg, &wc, &wm)
                - fd_loss(&mesh, &cm, &app, &cfg, &wc, &wm))
                / (2.0 * h);
            let an = g.cam_rot6[j];
            assert!(
                (fd - an).abs() / fd.abs().max(an.abs()).max(1.0) < 1e-2,
                "rot6[{j}]: fd {fd} an {an}"
            );
        }
        for c in 0..3 {
            let mut cp = camera.clone();
            cp.pose.translation[c] += h;
            let mut cm = camera.clone();
            cm.pose.translation[c] -= h;
            let fd = (fd_loss(&mesh, &cp, &app, &cfg, &wc, &wm)
                - fd_loss(&mesh, &cm, &app, &cfg, &wc, &wm))
                / (2.0 * h);
            let an = g.cam_trans[c];
            assert!(
                (fd - an).abs() / fd.abs().max(an.abs()).max(1.0) < 1e-2,
                "cam t[{c}]: fd {fd} an {an}"
            );
        }

        // Texture gradients (exact path, tight tolerance) on a spot-check
        // of texels with nonzero gradient.
        let mut checked = 0;
        for ti in 0..g.kd.data.len() {
            if g.kd.data[ti].abs() < 1e-6 || checked >= 5 {
                continue;
            }
            let mut ap = app.clone();
            ap.kd.data[ti] += h;
            let mut am = app.clone();
            am.kd.data[ti] -= h;
            let fd = (fd_loss(&mesh, &camera, &ap, &cfg, &wc, &wm)
                - fd_loss(&mesh, &camera, &am, &cfg, &wc, &wm))
                / (2.0 * h);
            assert!(
                (fd - g.kd.data[ti]).abs() / fd.abs().max(1.0) < base_tol,
                "kd[{ti}]: fd {fd} an {}",
                g.kd.data[ti]
            );
            checked += 1;
        }
        assert!(checked > 0);

        // Environment radiance gradient (linear, very tight).
        let si = app
            .env
            .samples
            .iter()
            .position(|s| g.env_radiance[0].norm() >= 0.0 && s.weight > 0.0)
            .unwrap();
        let mut ap = app.clone();
        ap.env.samples[si].radiance[1] += h;
        let mut am = app.clone();
        am.env.samples[si].radiance[1] -= h;
        let fd = (fd_loss(&mesh, &camera, &ap, &cfg, &wc, &wm)
            - fd_loss(&mesh, &camera, &am, &cfg, &wc, &wm))
            / (2.0 * h);
        assert!((fd - g.env_radiance[si][1]).abs() < 1e-6 * fd.abs().max(1.0) + 1e-8);
    }

    #[test]
    fn deterministic_render() {
        let (mesh, camera, app) = test_scene();
        let cfg = RenderConfig::default();
        let a = render(&mesh, &camera, &app, &cfg).unwrap();
        let b = render(&mesh, &camera, &app, &cfg).unwrap();
        assert_eq!(a.color.data, b.color.data);
        assert_eq!(a.mask.data, b.mask.data);
    }
}
