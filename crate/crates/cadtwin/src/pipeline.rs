//! Scene ingestion, synthetic fixture generation, asset persistence and
//! compositing.
//!
//! Scenes are described by a single JSON manifest with relative paths, so a
//! fixture directory is portable. Fitted assets persist in a `.cta`
//! container: named binary entries, each with a SHA-256 checksum, behind a
//! versioned header.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::energy::Observations;
use crate::geometry::{rng, sample_surface, Pose6D};
use crate::lidar::{Bvh, PointCloud};
use crate::render::{
    render, AppearanceParams, Camera, EnvLight, Image, RenderConfig, RenderOutput,
};
use crate::vehicle::{assemble, ShapeSpace, VehicleMesh};
use crate::{Error, Result};

pub const MANIFEST_MAJOR: u32 = 1;
pub const MANIFEST_MINOR: u32 = 0;
pub const ASSET_MAJOR: u16 = 1;
pub const ASSET_MINOR: u16 = 0;

// ---------------------------------------------------------------------------
// Scene manifests

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectBox {
    pub pose: Pose6D,
    pub dimensions: Vector3<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame_id: String,
    pub image: String,
    pub mask: String,
    pub camera: Camera,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    /// "major.minor"; loading rejects a different major.
    pub version: String,
    pub scene_id: String,
    pub frames: Vec<FrameEntry>,
    /// Relative PLY path; omitted means an empty cloud.
    pub cloud: Option<String>,
    pub object_box: ObjectBox,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct SceneFrame {
    pub frame_id: String,
    pub image: Image,
    pub mask: Image,
    /// World-frame camera, as stored in the manifest.
    pub camera: Camera,
}

#[derive(Debug, Clone)]
pub struct SceneObservations {
    pub scene_id: String,
    pub frames: Vec<SceneFrame>,
    /// Aggregated cloud in the actor frame.
    pub cloud: PointCloud,
    pub object_box: ObjectBox,
    pub metadata: BTreeMap<String, String>,
}

impl SceneObservations {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() && self.cloud.is_empty() {
            return Err(Error::Manifest(
                "scene needs at least one frame or a non-empty cloud".into(),
            ));
        }
        for f in &self.frames {
            if f.image.width != f.camera.width || f.image.height != f.camera.height {
                return Err(Error::Manifest(format!(
                    "frame {}: image {}x{} does not match camera {}x{}",
                    f.frame_id, f.image.width, f.image.height, f.camera.width, f.camera.height
                )));
            }
            if f.mask.width != f.image.width || f.mask.height != f.image.height {
                return Err(Error::Manifest(format!(
                    "frame {}: mask {}x{} does not match image {}x{}",
                    f.frame_id, f.mask.width, f.mask.height, f.image.width, f.image.height
                )));
            }
        }
        Ok(())
    }

    /// Re-expresses the cameras in the actor frame defined by the object
    /// box, yielding the observation set the fit consumes. The cloud is
    /// already actor-frame.
    pub fn to_observations(&self) -> Result<Observations> {
        let rb = self.object_box.pose.rotation()?;
        let tb = self.object_box.pose.translation;
        let mut cameras = Vec::with_capacity(self.frames.len());
        let mut images = Vec::new();
        let mut masks = Vec::new();
        for f in &self.frames {
            let rc = f.camera.pose.rotation()?;
            let mut cam = f.camera.clone();
            cam.pose = Pose6D::from_matrix(&(rc * rb), rc * tb + f.camera.pose.translation);
            cameras.push(cam);
            images.push(f.image.clone());
            masks.push(f.mask.clone());
        }
        Ok(Observations {
            cameras,
            images,
            masks,
            cloud: self.cloud.points.clone(),
        })
    }
}

fn parse_version(v: &str) -> Result<(u32, u32)> {
    let mut it = v.split('.');
    let major = it.next().and_then(|s| s.parse().ok());
    let minor = it.next().and_then(|s| s.parse().ok());
    match (major, minor) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::Manifest(format!("unparseable version '{v}'"))),
    }
}

fn load_image_any(path: &Path) -> Result<Image> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("raw") => Image::load_raw(path),
        _ => Image::load_png(path),
    }
}

pub fn load_scene(manifest_path: &Path) -> Result<SceneObservations> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::Parse {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let manifest: SceneManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;
    let (major, minor) = parse_version(&manifest.version)?;
    if major != MANIFEST_MAJOR {
        return Err(Error::Version {
            found_major: major,
            found_minor: minor,
            supported_major: MANIFEST_MAJOR,
        });
    }
    if minor > MANIFEST_MINOR {
        log::warn!(
            "manifest minor version {minor} is newer than supported {MANIFEST_MINOR}; continuing"
        );
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for e in &manifest.frames {
        let ctx = |what: &str, err: Error| {
            Error::Manifest(format!("frame {}: {what}: {err}", e.frame_id))
        };
        let image = load_image_any(&dir.join(&e.image)).map_err(|err| ctx("image", err))?;
        let mask = load_image_any(&dir.join(&e.mask)).map_err(|err| ctx("mask", err))?;
        if mask.channels != 1 {
            return Err(Error::Manifest(format!(
                "frame {}: mask must be single-channel, got {}",
                e.frame_id, mask.channels
            )));
        }
        frames.push(SceneFrame {
            frame_id: e.frame_id.clone(),
            image,
            mask,
            camera: e.camera.clone(),
        });
    }
    let cloud = match &manifest.cloud {
        Some(rel) => crate::lidar::read_cloud_ply(&dir.join(rel))?,
        None => PointCloud::from_points(Vec::new()),
    };
    let scene = SceneObservations {
        scene_id: manifest.scene_id,
        frames,
        cloud,
        object_box: manifest.object_box,
        metadata: manifest.metadata,
    };
    scene.validate()?;
    Ok(scene)
}

/// Writes a scene to `dir` as manifest + raw float images + PLY cloud.
pub fn save_scene(scene: &SceneObservations, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut frames = Vec::new();
    for f in &scene.frames {
        let image = format!("{}_image.raw", f.frame_id);
        let mask = format!("{}_mask.raw", f.frame_id);
        f.image.save_raw(&dir.join(&image))?;
        f.mask.save_raw(&dir.join(&mask))?;
        frames.push(FrameEntry {
            frame_id: f.frame_id.clone(),
            image,
            mask,
            camera: f.camera.clone(),
        });
    }
    let cloud = if scene.cloud.is_empty() {
        None
    } else {
        crate::lidar::write_cloud_ply(&scene.cloud, &dir.join("cloud.ply"))?;
        Some("cloud.ply".to_string())
    };
    let manifest = SceneManifest {
        version: format!("{MANIFEST_MAJOR}.{MANIFEST_MINOR}"),
        scene_id: scene.scene_id.clone(),
        frames,
        cloud,
        object_box: scene.object_box.clone(),
        metadata: scene.metadata.clone(),
    };
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Synthetic fixtures

#[derive(Debug, Clone)]
pub struct FixtureConfig {
    pub seed: u64,
    pub views: usize,
    pub image_size: usize,
    pub lidar_points: usize,
    /// Std-dev of the Gaussian perturbation of the object box center (m).
    pub sigma_pose: f64,
    /// Std-dev of the contour displacement applied to each mask (px).
    pub sigma_mask_px: f64,
    pub texture_size: usize,
    pub env_azimuths: usize,
    pub env_elevations: usize,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            seed: 0,
            views: 20,
            image_size: 128,
            lidar_points: 5000,
            sigma_pose: 0.0,
            sigma_mask_px: 0.0,
            texture_size: 64,
            env_azimuths: 4,
            env_elevations: 2,
        }
    }
}

fn fixture_appearance(cfg: &FixtureConfig) -> AppearanceParams {
    let n = cfg.texture_size;
    let mut app = AppearanceParams::flat(
        n,
        n,
        Vector3::new(0.6, 0.25, 0.2),
        0.4,
        0.0,
        EnvLight::uniform_grid(cfg.env_azimuths, cfg.env_elevations, Vector3::new(0.9, 0.9, 1.0)),
    );
    // Two-tone paint with a smooth band so the photometric term has texture
    // signal, and a mild sky/ground radiance split.
    for y in 0..n {
        let t = y as f64 / (n - 1) as f64;
        let band = 0.5 + 0.5 * (std::f64::consts::TAU * 2.0 * t).sin();
        for x in 0..n {
            let base = [0.6, 0.25, 0.2];
            let alt = [0.2, 0.3, 0.55];
            for c in 0..3 {
                app.kd.set(x, y, c, base[c] * (1.0 - band) + alt[c] * band);
            }
        }
    }
    for s in &mut app.env.samples {
        let up = 0.5 + 0.5 * s.direction.z;
        s.radiance = Vector3::new(0.55, 0.6, 0.75) * up + Vector3::new(0.45, 0.4, 0.3) * (1.0 - up);
    }
    app
}

/// Displaces the mask boundary: every contour pixel gets a Gaussian normal
/// offset (clamped to 3 sigma) and the mask is painted along that offset,
/// outward strokes filling and inward strokes clearing. Total area change
/// is bounded by roughly perimeter x 3 sigma.
pub fn perturb_mask_contour(mask: &mut Image, sigma_px: f64, seed: u64) {
    if sigma_px <= 0.0 {
        return;
    }
    let (w, h) = (mask.width, mask.height);
    let src = mask.clone();
    let fg = |x: i64, y: i64| -> bool {
        x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && src.get(x as usize, y as usize, 0) > 0.5
    };
    let mut k = 0u64;
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            if !fg(x, y) {
                continue;
            }
            let mut normal = Vector3::zeros();
            for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
                if !fg(x + dx, y + dy) {
                    normal += Vector3::new(dx as f64, dy as f64, 0.0);
                }
            }
            if normal.norm() < 0.5 {
                continue; // interior pixel
            }
            let normal = normal.normalize();
            let g = (rng::normal(seed, k, 0) * sigma_px).clamp(-3.0 * sigma_px, 3.0 * sigma_px);
            k += 1;
            let steps = (g.abs() * 2.0).ceil() as usize;
            for s in 0..=steps {
                let d = g.signum() * (s as f64) * 0.5;
                if d.abs() > g.abs() {
                    break;
                }
                let px = x + (normal.x * d).round() as i64;
                let py = y + (normal.y * d).round() as i64;
                if px < 0 || py < 0 || px >= w as i64 || py >= h as i64 {
                    continue;
                }
                mask.set(px as usize, py as usize, 0, if g > 0.0 { 1.0 } else { 0.0 });
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub asset: FittedAsset,
    pub code: DVector<f64>,
    pub pose: Pose6D,
}

/// Renders a decoded ground-truth vehicle from a ring of viewpoints,
/// simulates a LiDAR cloud on its surface, and applies the configured pose
/// and mask noise. Returns the observations plus the generating asset.
pub fn generate_fixture(space: &ShapeSpace, cfg: &FixtureConfig) -> Result<(SceneObservations, GroundTruth)> {
    if space.codes.is_empty() {
        return Err(Error::Invalid("shape space has no training codes".into()));
    }
    let code = space.codes[(cfg.seed as usize) % space.codes.len()].clone();
    let vehicle = space.decode(&code);
    let mesh = assemble(&vehicle);
    let appearance = fixture_appearance(cfg);

    // Bounding sphere for framing.
    let center = mesh.vertices.iter().sum::<Vector3<f64>>() / mesh.vertices.len() as f64;
    let radius = mesh
        .vertices
        .iter()
        .map(|v| (v - center).norm())
        .fold(0.0f64, f64::max);

    let rcfg = RenderConfig {
        tau: 0.0,
        ..Default::default()
    };
    let mut frames = Vec::with_capacity(cfg.views);
    for i in 0..cfg.views {
        let az = i as f64 / cfg.views as f64 * std::f64::consts::TAU
            + 0.2 * rng::uniform(cfg.seed, i as u64, 1);
        let el = 0.15 + 0.35 * rng::uniform(cfg.seed, i as u64, 2);
        let dist = radius * (2.6 + 0.6 * rng::uniform(cfg.seed, i as u64, 3));
        let eye = center
            + Vector3::new(
                dist * el.cos() * az.cos(),
                dist * el.cos() * az.sin(),
                dist * el.sin(),
            );
        let camera = Camera::look_at(
            eye,
            center,
            Vector3::z(),
            45.0,
            cfg.image_size,
            cfg.image_size,
        )?;
        let out = render(&mesh, &camera, &appearance, &rcfg)?;
        let mut mask = out.mask;
        perturb_mask_contour(&mut mask, cfg.sigma_mask_px, cfg.seed.wrapping_add(i as u64));
        frames.push(SceneFrame {
            frame_id: format!("view{i:03}"),
            image: out.color,
            mask,
            camera,
        });
    }

    // LiDAR: rays from a sensor ring toward surface samples; the recorded
    // point is the first surface the ray meets, so every point lies on the
    // ground-truth surface.
    let bvh = Bvh::build(&mesh);
    let samples = sample_surface(&mesh, cfg.lidar_points, cfg.seed.wrapping_add(77))?;
    let n_origins = 6;
    let mut points = Vec::with_capacity(samples.len());
    let mut origins = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let a = (i % n_origins) as f64 / n_origins as f64 * std::f64::consts::TAU;
        let o = center + Vector3::new(4.0 * radius * a.cos(), 4.0 * radius * a.sin(), 0.8 * radius);
        let d = s.position - o;
        let dir = d / d.norm();
        if let Some((t, _, _)) = bvh.cast_ray(&o, &dir, 100.0 * radius) {
            points.push(o + dir * t);
            origins.push(o);
        }
    }
    let cloud = PointCloud {
        points,
        intensity: None,
        ray_origin: Some(origins),
        frame_id: None,
    };

    let noise = Vector3::new(
        rng::normal(cfg.seed, 1000, 0),
        rng::normal(cfg.seed, 1000, 1),
        rng::normal(cfg.seed, 1000, 2),
    ) * cfg.sigma_pose;
    let object_box = ObjectBox {
        pose: Pose6D {
            rot6: Pose6D::identity().rot6,
            translation: noise,
        },
        dimensions: Vector3::new(2.0 * radius, 2.0 * radius, 2.0 * radius),
    };

    let scene = SceneObservations {
        scene_id: format!("fixture{:04}", cfg.seed),
        frames,
        cloud,
        object_box,
        metadata: BTreeMap::new(),
    };
    scene.validate()?;
    let gt = GroundTruth {
        asset: FittedAsset {
            vehicle,
            appearance,
            vertex_intensity: None,
            provenance: Provenance {
                scene_id: scene.scene_id.clone(),
                config_digest: format!("fixture-seed-{}", cfg.seed),
                trace_digest: String::new(),
            },
        },
        code,
        pose: Pose6D::identity(),
    };
    Ok((scene, gt))
}

// ---------------------------------------------------------------------------
// Fit orchestration

/// Runs the full curriculum against a loaded scene and packages the result.
pub fn fit_scene(
    scene: &SceneObservations,
    space: &ShapeSpace,
    cfg: &crate::optim::FitConfig,
    texture_size: usize,
    env_azimuths: usize,
    env_elevations: usize,
) -> Result<(FittedAsset, crate::energy::FitState, crate::optim::FitTrace)> {
    let obs = scene.to_observations()?;
    let state0 = crate::optim::fit_driver::initial_state(
        space,
        &obs,
        Pose6D::identity(),
        texture_size,
        env_azimuths,
        env_elevations,
    );
    let (s1, _z, mut trace) = crate::optim::run_stage1_init(space, &obs, &state0, cfg)?;
    let (fitted, t2) = crate::optim::run_full_fit(&s1, &obs, cfg)?;
    trace.rows.extend(t2.rows);
    let mut hasher = Sha256::new();
    for r in &trace.rows {
        hasher.update(r.report.total.to_le_bytes());
    }
    let trace_digest = format!("{:x}", hasher.finalize());
    let config_digest = format!("{:x}", Sha256::digest(format!("{cfg:?}").as_bytes()));
    let asset = FittedAsset {
        vehicle: fitted.vehicle.clone(),
        appearance: fitted.appearance.clone(),
        vertex_intensity: None,
        provenance: Provenance {
            scene_id: scene.scene_id.clone(),
            config_digest,
            trace_digest,
        },
    };
    Ok((asset, fitted, trace))
}

// ---------------------------------------------------------------------------
// Compositing

/// Alpha-composites a render over a background: mask*color + (1-mask)*bg.
pub fn composite_insert(background: &Image, rendered: &RenderOutput) -> Result<Image> {
    let bg = background;
    if bg.width != rendered.color.width
        || bg.height != rendered.color.height
        || bg.channels != rendered.color.channels
    {
        return Err(Error::Invalid("background/render dimensions differ".into()));
    }
    let mut out = bg.clone();
    for y in 0..bg.height {
        for x in 0..bg.width {
            let a = rendered.mask.get(x, y, 0);
            for c in 0..bg.channels {
                let v = a * rendered.color.get(x, y, c) + (1.0 - a) * bg.get(x, y, c);
                out.set(x, y, c, v);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Fitted assets and the .cta container

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene_id: String,
    pub config_digest: String,
    pub trace_digest: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedAsset {
    pub vehicle: VehicleMesh,
    pub appearance: AppearanceParams,
    pub vertex_intensity: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl FittedAsset {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        if self.appearance.kd.data.is_empty() || self.appearance.orm.data.is_empty() {
            return Err(Error::Invalid("asset is missing textures".into()));
        }
        if self.provenance.scene_id.is_empty() {
            return Err(Error::Invalid("asset provenance is empty".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct AssetJson {
    vehicle: VehicleMesh,
    env: EnvLight,
    vertex_intensity: Option<Vec<f64>>,
    provenance: Provenance,
}

const ASSET_MAGIC: &[u8; 4] = b"CTA1";

/// Lossless float64 image entry payload: u64 width/height/channels then
/// little-endian f64 data.
fn encode_image_f64(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * img.data.len());
    for d in [img.width as u64, img.height as u64, img.channels as u64] {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_image_f64(bytes: &[u8]) -> Result<Image> {
    if bytes.len() < 24 {
        return Err(Error::Archive("image entry too short".into()));
    }
    let mut d = [0u64; 3];
    for (i, di) in d.iter_mut().enumerate() {
        *di = u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().unwrap());
    }
    let n = (d[0] * d[1] * d[2]) as usize;
    if bytes.len() != 24 + 8 * n {
        return Err(Error::Archive("image entry size mismatch".into()));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Image {
        width: d[0] as usize,
        height: d[1] as usize,
        channels: d[2] as usize,
        data,
    })
}

fn write_entry<W: Write>(w: &mut W, name: &str, payload: &[u8]) -> Result<()> {
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    let digest = Sha256::digest(payload);
    w.write_all(&digest)?;
    w.write_all(payload)?;
    Ok(())
}

pub fn save_asset(asset: &FittedAsset, path: &Path) -> Result<()> {
    asset.validate()?;
    let json = serde_json::to_vec(&AssetJson {
        vehicle: asset.vehicle.clone(),
        env: asset.appearance.env.clone(),
        vertex_intensity: asset.vertex_intensity.clone(),
        provenance: asset.provenance.clone(),
    })?;
    let entries: [(&str, Vec<u8>); 3] = [
        ("asset.json", json),
        ("kd.f64", encode_image_f64(&asset.appearance.kd)),
        ("orm.f64", encode_image_f64(&asset.appearance.orm)),
    ];
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(ASSET_MAGIC)?;
    w.write_all(&ASSET_MAJOR.to_le_bytes())?;
    w.write_all(&ASSET_MINOR.to_le_bytes())?;
    w.write_all(&(entries.len() as u64).to_le_bytes())?;
    for (name, payload) in &entries {
        write_entry(&mut w, name, payload)?;
    }
    Ok(())
}

fn read_exact_or(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checksum(format!("truncated archive while reading {what}")))
}

pub fn load_asset(path: &Path) -> Result<FittedAsset> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != ASSET_MAGIC {
        return Err(Error::Archive("not a .cta asset archive".into()));
    }
    let mut b2 = [0u8; 2];
    read_exact_or(&mut r, &mut b2, "version")?;
    let major = u16::from_le_bytes(b2);
    read_exact_or(&mut r, &mut b2, "version")?;
    let minor = u16::from_le_bytes(b2);
    if major != ASSET_MAJOR {
        return Err(Error::Version {
            found_major: major as u32,
            found_minor: minor as u32,
            supported_major: ASSET_MAJOR as u32,
        });
    }
    if minor > ASSET_MINOR {
        log::warn!("asset minor version {minor} is newer than supported {ASSET_MINOR}; continuing");
    }
    let mut b8 = [0u8; 8];
    read_exact_or(&mut r, &mut b8, "entry count")?;
    let n = u64::from_le_bytes(b8) as usize;
    let mut entries: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    for _ in 0..n {
        read_exact_or(&mut r, &mut b8, "entry name length")?;
        let mut name = vec![0u8; u64::from_le_bytes(b8) as usize];
        read_exact_or(&mut r, &mut name, "entry name")?;
        let name = String::from_utf8(name).map_err(|_| Error::Archive("bad entry name".into()))?;
        read_exact_or(&mut r, &mut b8, "entry length")?;
        let mut digest = [0u8; 32];
        read_exact_or(&mut r, &mut digest, "entry checksum")?;
        let mut payload = vec![0u8; u64::from_le_bytes(b8) as usize];
        read_exact_or(&mut r, &mut payload, "entry payload")?;
        let actual = Sha256::digest(&payload);
        if actual[..] != digest[..] {
            return Err(Error::Checksum(format!("entry '{name}' failed its checksum")));
        }
        entries.insert(name, payload);
    }
    let take = |name: &str| -> Result<&Vec<u8>> {
        entries
            .get(name)
            .ok_or_else(|| Error::Archive(format!("missing entry '{name}'")))
    };
    let meta: AssetJson = serde_json::from_slice(take("asset.json")?)?;
    let kd = decode_image_f64(take("kd.f64")?)?;
    let orm = decode_image_f64(take("orm.f64")?)?;
    let asset = FittedAsset {
        vehicle: meta.vehicle,
        appearance: AppearanceParams {
            kd,
            orm,
            env: meta.env,
        },
        vertex_intensity: meta.vertex_intensity,
        provenance: meta.provenance,
    };
    asset.validate()?;
    Ok(asset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{build_shape_space, templates, VehicleTemplate};

    fn small_space() -> ShapeSpace {
        let ex: Vec<VehicleTemplate> = (0..4).map(templates::synthetic_exemplar).collect();
        build_shape_space(&ex, 3).unwrap()
    }

    fn small_fixture_cfg() -> FixtureConfig {
        FixtureConfig {
            views: 3,
            image_size: 24,
            lidar_points: 150,
            texture_size: 8,
            ..Default::default()
        }
    }

    #[test]
    fn fixture_scene_round_trips_through_manifest() {
        let space = small_space();
        let (scene, _) = generate_fixture(&space, &small_fixture_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(&manifest).unwrap();
        assert_eq!(loaded.frames.len(), scene.frames.len());
        for (a, b) in loaded.frames.iter().zip(&scene.frames) {
            assert_eq!(a.frame_id, b.frame_id);
            assert_eq!(a.camera, b.camera);
            // Raw images are stored at f32 precision.
            for (x, y) in a.image.data.iter().zip(&b.image.data) {
                assert!((x - y).abs() < 1e-6);
            }
        }
        assert_eq!(loaded.cloud.len(), scene.cloud.len());
        let obs = loaded.to_observations().unwrap();
        assert_eq!(obs.cameras.len(), 3);
    }

    #[test]
    fn minimal_manifest_loads_with_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::filled(4, 4, 3, 0.5);
        let mask = Image::filled(4, 4, 1, 1.0);
        img.save_raw(&dir.path().join("f_image.raw")).unwrap();
        mask.save_raw(&dir.path().join("f_mask.raw")).unwrap();
        let camera = Camera::look_at(
            Vector3::new(4.0, 0.0, 0.0),
            Vector3::zeros(),
            Vector3::z(),
            45.0,
            4,
            4,
        )
        .unwrap();
        let manifest = SceneManifest {
            version: "1.0".into(),
            scene_id: "s".into(),
            frames: vec![FrameEntry {
                frame_id: "f".into(),
                image: "f_image.raw".into(),
                mask: "f_mask.raw".into(),
                camera,
            }],
            cloud: None,
            object_box: ObjectBox {
                pose: Pose6D::identity(),
                dimensions: Vector3::new(1.0, 1.0, 1.0),
            },
            metadata: BTreeMap::new(),
        };
        let p = dir.path().join("scene.json");
        std::fs::write(&p, serde_json::to_vec(&manifest).unwrap()).unwrap();
        let scene = load_scene(&p).unwrap();
        assert!(scene.cloud.is_empty());
        assert_eq!(scene.frames.len(), 1);
    }

    #[test]
    fn corrupt_mask_dimensions_name_the_frame() {
        let space = small_space();
        let (scene, _) = generate_fixture(&space, &small_fixture_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_scene(&scene, dir.path()).unwrap();
        // Replace one mask with the wrong size.
        Image::filled(5, 5, 1, 1.0)
            .save_raw(&dir.path().join("view001_mask.raw"))
            .unwrap();
        let err = load_scene(&manifest).unwrap_err();
        assert!(err.to_string().contains("view001"), "{err}");
    }

    #[test]
    fn wrong_major_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("scene.json");
        std::fs::write(
            &p,
            br#"{"version":"2.0","scene_id":"s","frames":[],"cloud":null,
                "object_box":{"pose":{"rot6":[1,0,0,0,1,0],"translation":[0,0,0]},
                "dimensions":[1,1,1]}}"#,
        )
        .unwrap();
        assert!(matches!(load_scene(&p), Err(Error::Version { .. })));
    }

    #[test]
    fn pose_noise_statistics() {
        let space = small_space();
        let mut cfg = small_fixture_cfg();
        cfg.sigma_pose = 0.5;
        cfg.views = 1;
        cfg.lidar_points = 20;
        let mut sum2 = 0.0;
        let n = 100;
        for seed in 0..n {
            cfg.seed = seed;
            let (scene, _) = generate_fixture(&space, &cfg).unwrap();
            sum2 += scene.object_box.pose.translation.norm_squared();
        }
        // E[|noise|^2] = 3 sigma^2; loose bound over 100 seeds.
        let mean2 = sum2 / n as f64;
        assert!((mean2 - 3.0 * 0.25).abs() < 0.25, "mean square {mean2}");
    }

    #[test]
    fn mask_noise_bounded_by_perimeter() {
        let mut mask = Image::zeros(64, 64, 1);
        for y in 16..48 {
            for x in 16..48 {
                mask.set(x, y, 0, 1.0);
            }
        }
        let area0: f64 = mask.data.iter().sum();
        let perimeter = 4.0 * 32.0;
        let sigma = 3.0;
        let mut noisy = mask.clone();
        perturb_mask_contour(&mut noisy, sigma, 9);
        let area1: f64 = noisy.data.iter().sum();
        assert!(area1 != area0);
        assert!(
            (area1 - area0).abs() <= perimeter * 3.0 * sigma,
            "area moved {}",
            area1 - area0
        );
    }

    #[test]
    fn fixture_lidar_points_lie_on_surface() {
        let space = small_space();
        let (scene, gt) = generate_fixture(&space, &small_fixture_cfg()).unwrap();
        let mesh = assemble(&gt.asset.vehicle);
        let bvh = Bvh::build(&mesh);
        assert!(scene.cloud.len() > 100);
        let origins = scene.cloud.ray_origin.as_ref().unwrap();
        for (p, o) in scene.cloud.points.iter().zip(origins).step_by(13) {
            let d = p - o;
            let dir = d / d.norm();
            let (t, _, _) = bvh.cast_ray(o, &dir, 1e4).unwrap();
            assert!((t - d.norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn composite_blend_is_exact() {
        let bg = Image::filled(4, 4, 3, 0.8);
        let mut out = RenderOutput {
            color: Image::filled(4, 4, 3, 0.2),
            mask: Image::zeros(4, 4, 1),
            depth: Image::zeros(4, 4, 1),
        };
        // mask 0 -> background unchanged
        let c = composite_insert(&bg, &out).unwrap();
        assert_eq!(c.data, bg.data);
        // mask 1 -> render only
        out.mask = Image::filled(4, 4, 1, 1.0);
        let c = composite_insert(&bg, &out).unwrap();
        assert_eq!(c.data, out.color.data);
        // half mask -> exact convex blend
        out.mask = Image::filled(4, 4, 1, 0.25);
        let c = composite_insert(&bg, &out).unwrap();
        for v in &c.data {
            assert!((v - (0.25 * 0.2 + 0.75 * 0.8)).abs() < 1e-15);
        }
    }

    #[test]
    fn asset_round_trip_bit_identical() {
        let space = small_space();
        let (_, gt) = generate_fixture(&space, &small_fixture_cfg()).unwrap();
        let mut asset = gt.asset;
        asset.vertex_intensity = Some(vec![0.25; asset.vehicle.body.vertices.len()]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cta");
        save_asset(&asset, &p).unwrap();
        let loaded = load_asset(&p).unwrap();
        assert_eq!(loaded, asset);
    }

    #[test]
    fn truncated_asset_fails_checksum() {
        let space = small_space();
        let (_, gt) = generate_fixture(&space, &small_fixture_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cta");
        save_asset(&gt.asset, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(load_asset(&p), Err(Error::Checksum(_))));
        // Flipped payload byte also fails.
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 1] ^= 0xff;
        std::fs::write(&p, &flipped).unwrap();
        assert!(matches!(load_asset(&p), Err(Error::Checksum(_))));
    }

    #[test]
    fn newer_minor_version_loads() {
        let space = small_space();
        let (_, gt) = generate_fixture(&space, &small_fixture_cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cta");
        save_asset(&gt.asset, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[6] = (ASSET_MINOR + 1) as u8; // minor version field
        std::fs::write(&p, &bytes).unwrap();
        assert!(load_asset(&p).is_ok());
    }
}
