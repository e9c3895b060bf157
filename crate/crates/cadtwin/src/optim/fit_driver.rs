//! Three-stage fitting curriculum.
//!
//! Stage 1 searches the low-dimensional shape code only (geometry terms,
//! no color). Stage 2 frees the template vertices through the smoothing
//! reparameterization, plus wheel parameters and poses. Stage 3 adds the
//! photometric term and appearance variables, with an exponential learning
//! rate falloff and silhouette-softness annealing.

use std::path::PathBuf;

use nalgebra::{DVector, Vector3};
use serde::Serialize;

use crate::energy::{
    total_energy, EnergyOptions, EnergyReport, EnergyWeights, FitState, Observations, StateGrads,
    TemplateTopology,
};
use crate::geometry::Pose6D;
use crate::render::{AppearanceParams, EnvLight, RenderConfig, MIN_ROUGHNESS};
use crate::vehicle::ShapeSpace;
use crate::{Error, Result};

use super::{Adam, AdamUniform, SmoothReparam};

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub weights: EnergyWeights,
    pub stage1_iterations: usize,
    pub stage2_iterations: usize,
    pub stage3_iterations: usize,
    /// Learning rate for the shape code (stage 1) and vertices/appearance
    /// (stages 2-3).
    pub lr_main: f64,
    /// Stage-3 terminal learning rate of the exponential falloff.
    pub lr_final: f64,
    /// Learning rate for object and camera poses (all stages).
    pub lr_poses: f64,
    /// Smoothing reparameterization stiffness.
    pub lambda_pre: f64,
    /// Silhouette softness target at the end of stage 3.
    pub tau_final: f64,
    pub render: RenderConfig,
    pub lidar: crate::energy::LidarEnergyConfig,
    pub surface_samples: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            weights: EnergyWeights::default(),
            stage1_iterations: 200,
            stage2_iterations: 500,
            stage3_iterations: 500,
            lr_main: 3e-2,
            lr_final: 1e-2,
            lr_poses: 1e-4,
            lambda_pre: 19.0,
            tau_final: 0.03,
            render: RenderConfig::default(),
            lidar: crate::energy::LidarEnergyConfig::default(),
            surface_samples: 4000,
            seed: 0,
            checkpoint_every: 100,
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub stage: u32,
    pub iteration: usize,
    pub tau: f64,
    pub report: EnergyReport,
}

#[derive(Debug, Clone, Default)]
pub struct FitTrace {
    pub rows: Vec<TraceRow>,
}

impl FitTrace {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        use std::io::Write;
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            f,
            "stage,iteration,tau,color,mask,lidar,shape,app,sym,total"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{}",
                r.stage,
                r.iteration,
                r.tau,
                r.report.color,
                r.report.mask,
                r.report.lidar,
                r.report.shape,
                r.report.app,
                r.report.sym,
                r.report.total
            )?;
        }
        Ok(())
    }
}

/// Initial state: mean shape of the space, the given object pose guess, the
/// calibrated camera poses, and a flat gray appearance.
pub fn initial_state(
    space: &ShapeSpace,
    obs: &Observations,
    object_pose: Pose6D,
    texture_size: usize,
    env_azimuths: usize,
    env_elevations: usize,
) -> FitState {
    let vehicle = space.decode(&DVector::zeros(space.k_pca()));
    let appearance = AppearanceParams::flat(
        texture_size,
        texture_size,
        Vector3::new(0.5, 0.5, 0.5),
        0.5,
        0.0,
        EnvLight::uniform_grid(env_azimuths, env_elevations, Vector3::new(1.0, 1.0, 1.0)),
    );
    FitState {
        vehicle,
        object_pose,
        cam_poses: obs.cameras.iter().map(|c| c.pose.clone()).collect(),
        appearance,
    }
}

fn checkpoint(cfg: &FitConfig, state: &FitState, row: &TraceRow) -> Result<()> {
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        let mesh = crate::vehicle::assemble(&state.vehicle);
        crate::geometry::io::write_ply(
            &mesh,
            &dir.join(format!("stage{}_iter{:05}.ply", row.stage, row.iteration)),
        )?;
        std::fs::write(
            dir.join(format!("stage{}_iter{:05}.json", row.stage, row.iteration)),
            serde_json::to_vec_pretty(row)?,
        )?;
    }
    Ok(())
}

fn guard_divergence(
    report: &EnergyReport,
    initial: f64,
    iteration: usize,
) -> Result<()> {
    if report.total > 10.0 * initial.max(1e-12) {
        return Err(Error::Diverged {
            iteration,
            energy: report.total,
            initial,
        });
    }
    Ok(())
}

/// Stage 1: optimize the shape code only. Returns the updated state with
/// the decoded geometry and the code itself.
pub fn run_stage1_init(
    space: &ShapeSpace,
    obs: &Observations,
    state0: &FitState,
    cfg: &FitConfig,
) -> Result<(FitState, DVector<f64>, FitTrace)> {
    let mut state = state0.clone();
    let k = space.k_pca();
    let mut z = DVector::<f64>::zeros(k);
    let mut opt = Adam::new(k);
    let mut trace = FitTrace::default();
    let opts = EnergyOptions {
        render: cfg.render.clone(),
        lidar: cfg.lidar,
        surface_samples: cfg.surface_samples,
        sample_seed: cfg.seed,
        use_color: false,
    };
    let topo = TemplateTopology::build(&state.vehicle)?;
    let mut initial = f64::INFINITY;
    for iter in 0..cfg.stage1_iterations {
        let decoded = space.decode(&z);
        state.vehicle.body = decoded.body;
        state.vehicle.wheel_template = decoded.wheel_template;
        let mut grads = StateGrads::zeros(&state);
        let report = total_energy(
            &state,
            obs,
            &cfg.weights,
            &opts,
            &topo,
            iter,
            Some(&mut grads),
        )?;
        if iter == 0 {
            initial = report.total;
        }
        guard_divergence(&report, initial, iter)?;
        let row = TraceRow {
            stage: 1,
            iteration: iter,
            tau: cfg.render.tau,
            report,
        };
        if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 {
            checkpoint(cfg, &state, &row)?;
        }
        trace.rows.push(row);
        let gz = grads.latent(space);
        let mut zv: Vec<f64> = z.iter().copied().collect();
        opt.step(&mut zv, gz.as_slice(), cfg.lr_main);
        z = DVector::from_vec(zv);
    }
    let decoded = space.decode(&z);
    state.vehicle.body = decoded.body;
    state.vehicle.wheel_template = decoded.wheel_template;
    Ok((state, z, trace))
}

fn flatten(body: &[Vector3<f64>], wheel: &[Vector3<f64>], out: &mut Vec<f64>) {
    out.clear();
    for v in body.iter().chain(wheel) {
        out.extend_from_slice(&[v.x, v.y, v.z]);
    }
}

fn unflatten(data: &[f64], nb: usize) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    let all: Vec<Vector3<f64>> = data
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0], c[1], c[2]))
        .collect();
    (all[..nb].to_vec(), all[nb..].to_vec())
}

struct PoseVec;

impl PoseVec {
    fn pack(object: &Pose6D, cams: &[Pose6D], out: &mut Vec<f64>) {
        out.clear();
        for p in std::iter::once(object).chain(cams.iter()) {
            out.extend_from_slice(&p.rot6);
            out.extend_from_slice(&[p.translation.x, p.translation.y, p.translation.z]);
        }
    }

    fn unpack(data: &[f64], object: &mut Pose6D, cams: &mut [Pose6D]) {
        for (i, p) in std::iter::once(object)
            .chain(cams.iter_mut())
            .enumerate()
        {
            let o = 9 * i;
            p.rot6.copy_from_slice(&data[o..o + 6]);
            p.translation = Vector3::new(data[o + 6], data[o + 7], data[o + 8]);
        }
    }

    fn pack_grads(g: &StateGrads, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&g.object_rot6);
        out.extend_from_slice(&[g.object_trans.x, g.object_trans.y, g.object_trans.z]);
        for (r6, t) in g.cam_rot6.iter().zip(&g.cam_trans) {
            out.extend_from_slice(r6);
            out.extend_from_slice(&[t.x, t.y, t.z]);
        }
    }
}

/// Stages 2 and 3: free-vertex refinement, then joint appearance and
/// photometric refinement.
pub fn run_full_fit(
    state0: &FitState,
    obs: &Observations,
    cfg: &FitConfig,
) -> Result<(FitState, FitTrace)> {
    let mut state = state0.clone();
    let mut trace = FitTrace::default();
    let topo = TemplateTopology::build(&state.vehicle)?;
    let nb = state.vehicle.body.vertices.len();

    let rp_body = SmoothReparam::new(&state.vehicle.body, cfg.lambda_pre)?;
    let rp_wheel = SmoothReparam::new(&state.vehicle.wheel_template, cfg.lambda_pre)?;
    let mut u_body = rp_body.to_latent(&state.vehicle.body.vertices);
    let mut u_wheel = rp_wheel.to_latent(&state.vehicle.wheel_template.vertices);

    let mut u_flat = Vec::new();
    flatten(&u_body, &u_wheel, &mut u_flat);
    let mut opt_vertices = AdamUniform::new(u_flat.len(), 3);
    let mut opt_wheel = Adam::new(8);
    let n_poses = 9 * (1 + state.cam_poses.len());
    let mut opt_poses = Adam::new(n_poses);
    let n_app = state.appearance.kd.data.len()
        + state.appearance.orm.data.len()
        + 3 * state.appearance.env.samples.len();
    let mut opt_app = Adam::new(n_app);

    let mut pose_flat = Vec::new();
    let mut pose_grads = Vec::new();
    let mut grad_flat = vec![0.0; u_flat.len()];

    let total_iters = [cfg.stage2_iterations, cfg.stage3_iterations];
    // Silhouette annealing schedule for stage 3: repeated halving down to
    // the target softness.
    let n_halvings = if cfg.render.tau > cfg.tau_final {
        (cfg.render.tau / cfg.tau_final).log2().ceil().max(0.0) as usize
    } else {
        0
    };
    let mut initial = f64::INFINITY;
    for (si, &iters) in total_iters.iter().enumerate() {
        let stage = (si + 2) as u32;
        let use_color = stage == 3;
        for iter in 0..iters {
            let mut opts = EnergyOptions {
                render: cfg.render.clone(),
                lidar: cfg.lidar,
                surface_samples: cfg.surface_samples,
                sample_seed: cfg.seed,
                use_color,
            };
            let lr = if stage == 3 {
                let t = iter as f64 / (iters.max(2) - 1) as f64;
                opts.render.tau = cfg.render.tau
                    * 0.5f64.powi(((t * n_halvings as f64).floor() as i32).min(n_halvings as i32));
                cfg.lr_main * (cfg.lr_final / cfg.lr_main).powf(t)
            } else {
                cfg.lr_main
            };

            state.vehicle.body.vertices = rp_body.to_vertices(&u_body)?;
            state.vehicle.wheel_template.vertices = rp_wheel.to_vertices(&u_wheel)?;

            let mut grads = StateGrads::zeros(&state);
            let report = total_energy(
                &state,
                obs,
                &cfg.weights,
                &opts,
                &topo,
                iter,
                Some(&mut grads),
            )?;
            if si == 0 && iter == 0 {
                initial = report.total;
            }
            guard_divergence(&report, initial, iter)?;
            let row = TraceRow {
                stage,
                iteration: iter,
                tau: opts.render.tau,
                report,
            };
            if cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0 {
                checkpoint(cfg, &state, &row)?;
            }
            trace.rows.push(row);

            // Vertex step through the reparameterization.
            let du_body = rp_body.pullback(&grads.body)?;
            let du_wheel = rp_wheel.pullback(&grads.wheel_template)?;
            flatten(&du_body, &du_wheel, &mut grad_flat);
            flatten(&u_body, &u_wheel, &mut u_flat);
            opt_vertices.step(&mut u_flat, &grad_flat, lr);
            let (ub, uw) = unflatten(&u_flat, nb);
            u_body = ub;
            u_wheel = uw;

            // Wheel parameter step.
            let mut wheel_params = [
                state.vehicle.rig.wheel_radius,
                state.vehicle.rig.wheel_thickness,
                state.vehicle.rig.axle_offset_front.x,
                state.vehicle.rig.axle_offset_front.y,
                state.vehicle.rig.axle_offset_front.z,
                state.vehicle.rig.axle_offset_back.x,
                state.vehicle.rig.axle_offset_back.y,
                state.vehicle.rig.axle_offset_back.z,
            ];
            let wheel_grads = [
                grads.wheel_radius,
                grads.wheel_thickness,
                grads.axle_offset_front.x,
                grads.axle_offset_front.y,
                grads.axle_offset_front.z,
                grads.axle_offset_back.x,
                grads.axle_offset_back.y,
                grads.axle_offset_back.z,
            ];
            opt_wheel.step(&mut wheel_params, &wheel_grads, lr);
            state.vehicle.rig.wheel_radius = wheel_params[0].max(1e-3);
            state.vehicle.rig.wheel_thickness = wheel_params[1].max(1e-3);
            state.vehicle.rig.axle_offset_front =
                Vector3::new(wheel_params[2], wheel_params[3], wheel_params[4]);
            state.vehicle.rig.axle_offset_back =
                Vector3::new(wheel_params[5], wheel_params[6], wheel_params[7]);

            // Pose step (object + cameras).
            PoseVec::pack(&state.object_pose, &state.cam_poses, &mut pose_flat);
            PoseVec::pack_grads(&grads, &mut pose_grads);
            opt_poses.step(&mut pose_flat, &pose_grads, cfg.lr_poses);
            PoseVec::unpack(&pose_flat, &mut state.object_pose, &mut state.cam_poses);

            // Appearance step (stage 3 only).
            if use_color {
                let mut app_flat = Vec::with_capacity(n_app);
                app_flat.extend_from_slice(&state.appearance.kd.data);
                app_flat.extend_from_slice(&state.appearance.orm.data);
                for s in &state.appearance.env.samples {
                    app_flat.extend_from_slice(&[s.radiance.x, s.radiance.y, s.radiance.z]);
                }
                let mut app_grads = Vec::with_capacity(n_app);
                app_grads.extend_from_slice(&grads.kd.data);
                app_grads.extend_from_slice(&grads.orm.data);
                for e in &grads.env {
                    app_grads.extend_from_slice(&[e.x, e.y, e.z]);
                }
                opt_app.step(&mut app_flat, &app_grads, lr);
                let nk = state.appearance.kd.data.len();
                let no = state.appearance.orm.data.len();
                for (d, s) in state.appearance.kd.data.iter_mut().zip(&app_flat[..nk]) {
                    *d = s.clamp(0.0, 1.0);
                }
                for (i, (d, s)) in state
                    .appearance
                    .orm
                    .data
                    .iter_mut()
                    .zip(&app_flat[nk..nk + no])
                    .enumerate()
                {
                    *d = match i % 3 {
                        1 => s.clamp(MIN_ROUGHNESS, 1.0),
                        _ => s.clamp(0.0, 1.0),
                    };
                }
                for (j, s) in state.appearance.env.samples.iter_mut().enumerate() {
                    let o = nk + no + 3 * j;
                    s.radiance = Vector3::new(
                        app_flat[o].max(0.0),
                        app_flat[o + 1].max(0.0),
                        app_flat[o + 2].max(0.0),
                    );
                }
            }
        }
    }
    state.vehicle.body.vertices = rp_body.to_vertices(&u_body)?;
    state.vehicle.wheel_template.vertices = rp_wheel.to_vertices(&u_wheel)?;
    Ok((state, trace))
}
