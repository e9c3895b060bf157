//! Total fitting energy over the full reconstruction state: multi-view
//! photometric and mask terms, the trimmed lidar chamfer, surface
//! smoothness, appearance regularizers, and bilateral symmetry, with
//! analytic gradients chained back to every optimizable block.

use nalgebra::{DVector, Vector3};
use serde::Serialize;

use crate::energy::{
    appearance, lidar_term, photometric, shape_energy, symmetry,
};
use crate::geometry::{
    build_adjacency, rot6d_to_matrix_with_jacobian, sample_surface, Adjacency, Pose6D,
};
use crate::render::{
    render_backward, render_with_cache, AppearanceParams, Camera, Image, RenderConfig,
};
use crate::vehicle::{assemble, assemble_backward, ShapeSpace, VehicleMesh};
use crate::{Error, Result};

pub use lidar_term::LidarEnergyConfig;

/// Fixed inputs of a fit: calibrated views and the aggregated point cloud.
#[derive(Debug, Clone)]
pub struct Observations {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub masks: Vec<Image>,
    /// Aggregated lidar points in world coordinates.
    pub cloud: Vec<Vector3<f64>>,
}

impl Observations {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.images.len() || self.cameras.len() != self.masks.len() {
            return Err(Error::Invalid(
                "observation counts (cameras, images, masks) disagree".into(),
            ));
        }
        if self.cameras.is_empty() {
            return Err(Error::Invalid("need at least one view".into()));
        }
        Ok(())
    }
}

/// Everything the optimizer is allowed to move.
#[derive(Debug, Clone)]
pub struct FitState {
    pub vehicle: VehicleMesh,
    /// Vehicle-to-world pose.
    pub object_pose: Pose6D,
    /// Per-view world-to-camera poses (override the calibration poses).
    pub cam_poses: Vec<Pose6D>,
    pub appearance: AppearanceParams,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyWeights {
    pub mask: f64,
    pub lidar: f64,
    pub shape: f64,
    pub sym: f64,
    pub app: f64,
    /// Material-smoothness sub-weight inside the appearance term.
    pub mat: f64,
    /// Gray-light sub-weight inside the appearance term.
    pub light: f64,
}

impl Default for EnergyWeights {
    fn default() -> Self {
        EnergyWeights {
            mask: 0.5,
            lidar: 0.5,
            shape: 0.1,
            sym: 0.5,
            app: 1.0,
            mat: 1e-9,
            light: 1e-2,
        }
    }
}

/// Per-term energies of one evaluation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyReport {
    pub color: f64,
    pub mask: f64,
    pub lidar: f64,
    pub shape: f64,
    pub app: f64,
    pub sym: f64,
    pub total: f64,
    pub empty_foreground: bool,
}

/// Gradients of the total energy for every optimizable block. Geometry
/// gradients are expressed in the vehicle (template) frame.
#[derive(Debug, Clone)]
pub struct StateGrads {
    pub body: Vec<Vector3<f64>>,
    pub wheel_template: Vec<Vector3<f64>>,
    pub wheel_radius: f64,
    pub wheel_thickness: f64,
    pub axle_offset_front: Vector3<f64>,
    pub axle_offset_back: Vector3<f64>,
    pub object_rot6: [f64; 6],
    pub object_trans: Vector3<f64>,
    pub cam_rot6: Vec<[f64; 6]>,
    pub cam_trans: Vec<Vector3<f64>>,
    pub kd: Image,
    pub orm: Image,
    pub env: Vec<Vector3<f64>>,
}

impl StateGrads {
    pub fn zeros(state: &FitState) -> StateGrads {
        StateGrads {
            body: vec![Vector3::zeros(); state.vehicle.body.vertices.len()],
            wheel_template: vec![Vector3::zeros(); state.vehicle.wheel_template.vertices.len()],
            wheel_radius: 0.0,
            wheel_thickness: 0.0,
            axle_offset_front: Vector3::zeros(),
            axle_offset_back: Vector3::zeros(),
            object_rot6: [0.0; 6],
            object_trans: Vector3::zeros(),
            cam_rot6: vec![[0.0; 6]; state.cam_poses.len()],
            cam_trans: vec![Vector3::zeros(); state.cam_poses.len()],
            kd: Image::zeros(state.appearance.kd.width, state.appearance.kd.height, 3),
            orm: Image::zeros(state.appearance.orm.width, state.appearance.orm.height, 3),
            env: vec![Vector3::zeros(); state.appearance.env.samples.len()],
        }
    }

    /// Pulls the template-vertex gradient back to a latent shape code.
    pub fn latent(&self, space: &ShapeSpace) -> DVector<f64> {
        let mut all = self.body.clone();
        all.extend_from_slice(&self.wheel_template);
        space.decode_backward(&all)
    }
}

#[derive(Debug, Clone)]
pub struct EnergyOptions {
    pub render: RenderConfig,
    pub lidar: LidarEnergyConfig,
    /// Surface points sampled for the lidar term.
    pub surface_samples: usize,
    pub sample_seed: u64,
    /// Whether the photometric term is active (final stage only).
    pub use_color: bool,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        EnergyOptions {
            render: RenderConfig::default(),
            lidar: LidarEnergyConfig::default(),
            surface_samples: 4000,
            sample_seed: 0,
            use_color: true,
        }
    }
}

fn check_finite(value: f64, term: &str, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFiniteEnergy {
            term: term.into(),
            iteration,
        })
    }
}

/// Adjacencies of the template parts, reusable across iterations.
pub struct TemplateTopology {
    pub body: Adjacency,
    pub wheel: Adjacency,
}

impl TemplateTopology {
    pub fn build(vehicle: &VehicleMesh) -> Result<TemplateTopology> {
        Ok(TemplateTopology {
            body: build_adjacency(&vehicle.body)?,
            wheel: build_adjacency(&vehicle.wheel_template)?,
        })
    }
}

/// Evaluates the weighted total energy and, when `grads` is given, its
/// gradient for every block of the state.
pub fn total_energy(
    state: &FitState,
    obs: &Observations,
    weights: &EnergyWeights,
    opts: &EnergyOptions,
    topo: &TemplateTopology,
    iteration: usize,
    mut grads: Option<&mut StateGrads>,
) -> Result<EnergyReport> {
    obs.validate()?;
    if state.cam_poses.len() != obs.cameras.len() {
        return Err(Error::Invalid("camera pose count mismatch".into()));
    }
    let assembled = assemble(&state.vehicle);
    let (r_obj, dr_obj) = rot6d_to_matrix_with_jacobian(&state.object_pose.rot6)?;
    let world = assembled.transformed(&r_obj, &state.object_pose.translation);
    let mut d_world = vec![Vector3::zeros(); world.vertices.len()];

    let mut e_color = 0.0;
    let mut e_mask = 0.0;
    let mut empty_foreground = false;
    let n_views = obs.cameras.len() as f64;
    let mut rcfg = opts.render.clone();
    rcfg.shade = rcfg.shade && opts.use_color;
    for v in 0..obs.cameras.len() {
        let mut camera = obs.cameras[v].clone();
        camera.pose = state.cam_poses[v].clone();
        let (out, cache) = render_with_cache(&world, &camera, &state.appearance, &rcfg)?;
        let mut d_color = Image::zeros(camera.width, camera.height, 3);
        let mut d_mask = Image::zeros(camera.width, camera.height, 1);
        if opts.use_color {
            let (ec, empty) = photometric::color_energy(
                &out.color,
                &obs.images[v],
                &obs.masks[v],
                if grads.is_some() { Some(&mut d_color) } else { None },
            )?;
            e_color += ec / n_views;
            empty_foreground |= empty;
        }
        let em = if grads.is_some() {
            photometric::mask_energy(&out.mask, &obs.masks[v], Some(&mut d_mask))?
        } else {
            photometric::mask_energy(&out.mask, &obs.masks[v], None)?
        };
        e_mask += em / n_views;
        if let Some(g) = grads.as_deref_mut() {
            // Scale image gradients by the view average and term weights.
            for d in d_color.data.iter_mut() {
                *d *= 1.0 / n_views;
            }
            for d in d_mask.data.iter_mut() {
                *d *= weights.mask / n_views;
            }
            let rg = render_backward(
                &world,
                &camera,
                &state.appearance,
                &rcfg,
                &cache,
                &d_color,
                Some(&d_mask),
            )?;
            for (acc, dv) in d_world.iter_mut().zip(&rg.vertices) {
                *acc += dv;
            }
            for (acc, dv) in g.kd.data.iter_mut().zip(&rg.kd.data) {
                *acc += dv;
            }
            for (acc, dv) in g.orm.data.iter_mut().zip(&rg.orm.data) {
                *acc += dv;
            }
            for (acc, dv) in g.env.iter_mut().zip(&rg.env_radiance) {
                *acc += dv;
            }
            for j in 0..6 {
                g.cam_rot6[v][j] += rg.cam_rot6[j];
            }
            g.cam_trans[v] += rg.cam_trans;
        }
    }
    check_finite(e_color, "color", iteration)?;
    check_finite(e_mask, "mask", iteration)?;

    // Lidar chamfer against surface samples of the posed model.
    let e_lidar = if obs.cloud.is_empty() {
        0.0
    } else {
        let samples = sample_surface(&world, opts.surface_samples, opts.sample_seed)?;
        let positions: Vec<Vector3<f64>> = samples.iter().map(|s| s.position).collect();
        let mut d_samples = vec![Vector3::zeros(); positions.len()];
        let term = lidar_term::lidar_energy(
            &obs.cloud,
            &positions,
            &opts.lidar,
            if grads.is_some() {
                Some(&mut d_samples)
            } else {
                None
            },
        )?;
        if grads.is_some() {
            for (s, d) in samples.iter().zip(&d_samples) {
                let f = world.faces[s.face_index];
                for k in 0..3 {
                    d_world[f[k] as usize] += d * (weights.lidar * s.barycentric[k]);
                }
            }
        }
        term.value
    };
    check_finite(e_lidar, "lidar", iteration)?;

    // Smoothness of both deformable templates (template frame).
    let e_shape = {
        let mut body_g = vec![Vector3::zeros(); state.vehicle.body.vertices.len()];
        let mut wheel_g = vec![Vector3::zeros(); state.vehicle.wheel_template.vertices.len()];
        let sb = shape_energy(
            &state.vehicle.body,
            &topo.body,
            grads.as_deref_mut().map(|_| body_g.as_mut_slice()),
        )?;
        let sw = shape_energy(
            &state.vehicle.wheel_template,
            &topo.wheel,
            grads.as_deref_mut().map(|_| wheel_g.as_mut_slice()),
        )?;
        if let Some(g) = grads.as_deref_mut() {
            for (acc, d) in g.body.iter_mut().zip(&body_g) {
                *acc += d * weights.shape;
            }
            for (acc, d) in g.wheel_template.iter_mut().zip(&wheel_g) {
                *acc += d * weights.shape;
            }
        }
        sb.total() + sw.total()
    };
    check_finite(e_shape, "shape", iteration)?;

    // Bilateral symmetry of the body template about its lateral axis.
    let e_sym = {
        let mut sym_g = vec![Vector3::zeros(); state.vehicle.body.vertices.len()];
        let (e, _) = symmetry::symmetry_energy(
            &state.vehicle.body.vertices,
            &Vector3::y(),
            grads.as_deref_mut().map(|_| sym_g.as_mut_slice()),
        )?;
        if let Some(g) = grads.as_deref_mut() {
            for (acc, d) in g.body.iter_mut().zip(&sym_g) {
                *acc += d * weights.sym;
            }
        }
        e
    };
    check_finite(e_sym, "sym", iteration)?;

    // Appearance regularizers.
    let e_app = {
        let mut mat = 0.0;
        if weights.mat != 0.0 {
            let mut gkd = Image::zeros(state.appearance.kd.width, state.appearance.kd.height, 3);
            let mut gorm = Image::zeros(state.appearance.orm.width, state.appearance.orm.height, 3);
            mat = if grads.is_some() {
                appearance::material_energy(
                    &state.appearance.kd,
                    &state.appearance.orm,
                    Some(&mut gkd),
                    Some(&mut gorm),
                )?
            } else {
                appearance::material_energy(&state.appearance.kd, &state.appearance.orm, None, None)?
            };
            if let Some(g) = grads.as_deref_mut() {
                let w = weights.app * weights.mat;
                for (acc, d) in g.kd.data.iter_mut().zip(&gkd.data) {
                    *acc += d * w;
                }
                for (acc, d) in g.orm.data.iter_mut().zip(&gorm.data) {
                    *acc += d * w;
                }
            }
        }
        let mut env_g = vec![Vector3::zeros(); state.appearance.env.samples.len()];
        let light = appearance::light_energy(
            &state.appearance.env,
            grads.as_deref_mut().map(|_| env_g.as_mut_slice()),
        );
        if let Some(g) = grads.as_deref_mut() {
            let w = weights.app * weights.light;
            for (acc, d) in g.env.iter_mut().zip(&env_g) {
                *acc += d * w;
            }
        }
        weights.mat * mat + weights.light * light
    };
    check_finite(e_app, "app", iteration)?;

    let total = check_finite(
        e_color
            + weights.mask * e_mask
            + weights.lidar * e_lidar
            + weights.shape * e_shape
            + weights.app * e_app
            + weights.sym * e_sym,
        "total",
        iteration,
    )?;

    // Chain the world-vertex gradient through the object pose and the
    // assembly.
    if let Some(g) = grads.as_deref_mut() {
        let mut d_assembled = vec![Vector3::zeros(); assembled.vertices.len()];
        for (i, dw) in d_world.iter().enumerate() {
            d_assembled[i] = r_obj.transpose() * dw;
            g.object_trans += dw;
            for j in 0..6 {
                g.object_rot6[j] += dw.dot(&(dr_obj[j] * assembled.vertices[i]));
            }
        }
        let ag = assemble_backward(&state.vehicle, &d_assembled);
        for (acc, d) in g.body.iter_mut().zip(&ag.body) {
            *acc += d;
        }
        for (acc, d) in g.wheel_template.iter_mut().zip(&ag.wheel_template) {
            *acc += d;
        }
        g.wheel_radius += ag.wheel_radius;
        g.wheel_thickness += ag.wheel_thickness;
        g.axle_offset_front += ag.axle_offset_front;
        g.axle_offset_back += ag.axle_offset_back;
    }

    Ok(EnergyReport {
        color: e_color,
        mask: e_mask,
        lidar: e_lidar,
        shape: e_shape,
        app: e_app,
        sym: e_sym,
        total,
        empty_foreground,
    })
}
