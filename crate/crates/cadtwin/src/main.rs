use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;

use cadtwin::energy::EnergyWeights;
use cadtwin::geometry::Pose6D;
use cadtwin::lidar::LidarPattern;
use cadtwin::metrics::{lidar_eval, masked_image_metrics};
use cadtwin::optim::FitConfig;
use cadtwin::pipeline::{
    composite_insert, fit_scene, generate_fixture, load_asset, load_scene, save_asset, save_scene,
    FixtureConfig,
};
use cadtwin::render::{render, Camera, Image, RenderConfig};
use cadtwin::vehicle::{
    assemble, build_shape_space, load_shape_space, save_shape_space, synthetic_exemplar,
    transfer_texture, VehicleTemplate,
};
use cadtwin::Result;

#[derive(Parser)]
#[command(name = "cadtwin", version, about = "Articulated vehicle reconstruction and re-simulation")]
struct Cli {
    /// Base seed for all stochastic choices.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker thread cap for batch commands (fitting itself is
    /// single-threaded for determinism).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CameraArgs {
    /// Camera position "x,y,z".
    #[arg(long, default_value = "6,4,2.5")]
    eye: String,
    /// Look-at target "x,y,z".
    #[arg(long, default_value = "0,0,0")]
    target: String,
    #[arg(long, default_value_t = 45.0)]
    fov: f64,
    #[arg(long, default_value_t = 512)]
    width: usize,
    #[arg(long, default_value_t = 512)]
    height: usize,
}

impl CameraArgs {
    fn build(&self) -> Result<Camera> {
        Camera::look_at(
            parse_vec3(&self.eye)?,
            parse_vec3(&self.target)?,
            Vector3::z(),
            self.fov,
            self.width,
            self.height,
        )
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 200)]
    stage1_iterations: usize,
    #[arg(long, default_value_t = 500)]
    stage2_iterations: usize,
    #[arg(long, default_value_t = 500)]
    stage3_iterations: usize,
    #[arg(long, default_value_t = 64)]
    texture_size: usize,
    #[arg(long, default_value_t = 4000)]
    surface_samples: usize,
    /// Initial silhouette softness in pixels.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    /// Disable camera/object pose refinement.
    #[arg(long)]
    freeze_poses: bool,
}

impl FitArgs {
    fn build(&self, seed: u64) -> FitConfig {
        FitConfig {
            weights: EnergyWeights::default(),
            stage1_iterations: self.stage1_iterations,
            stage2_iterations: self.stage2_iterations,
            stage3_iterations: self.stage3_iterations,
            surface_samples: self.surface_samples,
            seed,
            lr_poses: if self.freeze_poses { 0.0 } else { 1e-4 },
            render: RenderConfig {
                tau: self.tau,
                ..Default::default()
            },
            ..Default::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Builds a PCA shape space from procedurally generated exemplars.
    BuildShapeSpace {
        #[arg(long, default_value_t = 12)]
        count: usize,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Renders a synthetic scene (views + LiDAR) from a shape space.
    GenerateFixture {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        views: usize,
        #[arg(long, default_value_t = 128)]
        image_size: usize,
        #[arg(long, default_value_t = 5000)]
        lidar_points: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma_pose: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma_mask: f64,
        #[arg(long, default_value_t = 64)]
        texture_size: usize,
    },
    /// Fits an asset to a scene manifest.
    Fit {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Energy trace CSV path.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Renders a fitted asset to PNG (color, mask, depth alongside).
    Render {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        /// Wheel steering angle in radians.
        #[arg(long, default_value_t = 0.0)]
        steer: f64,
        /// Wheel spin angle in radians.
        #[arg(long, default_value_t = 0.0)]
        spin: f64,
        #[command(flatten)]
        camera: CameraArgs,
    },
    /// Simulates a spinning-sensor sweep against a fitted asset.
    SimulateLidar {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sensor positions "x,y,z", repeatable.
        #[arg(long = "origin", default_value = "8,0,2")]
        origins: Vec<String>,
        #[arg(long, default_value_t = 0.2)]
        azimuth_step_deg: f64,
    },
    /// Image and LiDAR metrics of an asset against a scene.
    Evaluate {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Swaps appearance between two assets sharing the space topology.
    TransferTexture {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        dst: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Composites a rendered asset over a background image.
    Insert {
        #[arg(long)]
        asset: PathBuf,
        #[arg(long)]
        background: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Soft edge width in pixels for blending.
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[command(flatten)]
        camera: CameraArgs,
    },
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| cadtwin::Error::Invalid(format!("bad vector '{s}': {e}")))?;
    if parts.len() != 3 {
        return Err(cadtwin::Error::Invalid(format!(
            "expected three components in '{s}'"
        )));
    }
    Ok(Vector3::new(parts[0], parts[1], parts[2]))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildShapeSpace { count, k, out } => {
            let exemplars: Vec<VehicleTemplate> = (0..count)
                .map(|i| synthetic_exemplar(cli.seed.wrapping_add(i as u64)))
                .collect();
            let space = build_shape_space(&exemplars, k)?;
            save_shape_space(&space, &out)?;
            println!(
                "shape space: {} exemplars, {} components -> {}",
                count,
                space.k_pca(),
                out.display()
            );
        }
        Command::GenerateFixture {
            space,
            out_dir,
            views,
            image_size,
            lidar_points,
            sigma_pose,
            sigma_mask,
            texture_size,
        } => {
            let space = load_shape_space(&space)?;
            let cfg = FixtureConfig {
                seed: cli.seed,
                views,
                image_size,
                lidar_points,
                sigma_pose,
                sigma_mask_px: sigma_mask,
                texture_size,
                ..Default::default()
            };
            let (scene, gt) = generate_fixture(&space, &cfg)?;
            let manifest = save_scene(&scene, &out_dir)?;
            save_asset(&gt.asset, &out_dir.join("ground_truth.cta"))?;
            println!(
                "fixture: {} views, {} lidar points -> {}",
                scene.frames.len(),
                scene.cloud.len(),
                manifest.display()
            );
        }
        Command::Fit {
            scene,
            space,
            out,
            trace,
            fit,
        } => {
            let scene = load_scene(&scene)?;
            let space = load_shape_space(&space)?;
            let cfg = fit.build(cli.seed);
            let (asset, _, fit_trace) = fit_scene(&scene, &space, &cfg, fit.texture_size, 4, 2)?;
            save_asset(&asset, &out)?;
            if let Some(p) = trace {
                fit_trace.write_csv(&p)?;
            }
            let last = fit_trace.rows.last().map(|r| r.report.total).unwrap_or(0.0);
            println!("fit: final energy {last:.6} -> {}", out.display());
        }
        Command::Render {
            asset,
            out,
            tau,
            steer,
            spin,
            camera,
        } => {
            let asset = load_asset(&asset)?;
            let mut vehicle = asset.vehicle.clone();
            vehicle.steer_yaw = steer;
            for s in &mut vehicle.spin_angle {
                *s = spin;
            }
            let mesh = assemble(&vehicle);
            let cam = camera.build()?;
            let cfg = RenderConfig {
                tau,
                ..Default::default()
            };
            let result = render(&mesh, &cam, &asset.appearance, &cfg)?;
            result.color.save_png(&out)?;
            result.mask.save_png(&out.with_extension("mask.png"))?;
            result.depth.save_raw(&out.with_extension("depth.raw"))?;
            println!("render -> {}", out.display());
        }
        Command::SimulateLidar {
            asset,
            out,
            origins,
            azimuth_step_deg,
        } => {
            let asset = load_asset(&asset)?;
            let mesh = assemble(&asset.vehicle);
            let origin_poses: Vec<Pose6D> = origins
                .iter()
                .map(|s| {
                    parse_vec3(s).map(|p| Pose6D {
                        rot6: Pose6D::identity().rot6,
                        translation: p,
                    })
                })
                .collect::<Result<_>>()?;
            let pattern =
                LidarPattern::default_64(origin_poses, azimuth_step_deg.to_radians());
            let cloud =
                cadtwin::lidar::simulate_sweep(&mesh, &Pose6D::identity(), &pattern, None)?;
            cadtwin::lidar::write_cloud_ply(&cloud, &out)?;
            println!("sweep: {} returns -> {}", cloud.len(), out.display());
        }
        Command::Evaluate { asset, scene, out } => {
            let asset = load_asset(&asset)?;
            let scene = load_scene(&scene)?;
            let obs = scene.to_observations()?;
            let mesh = assemble(&asset.vehicle);
            let cfg = RenderConfig {
                tau: 0.0,
                ..Default::default()
            };
            let mut image_metrics = Vec::new();
            for ((cam, img), mask) in obs.cameras.iter().zip(&obs.images).zip(&obs.masks) {
                let r = render(&mesh, cam, &asset.appearance, &cfg)?;
                image_metrics.push(masked_image_metrics(&r.color, img, mask)?);
            }
            let lidar = match &scene.cloud.ray_origin {
                Some(orig) if !scene.cloud.is_empty() => Some(lidar_eval(
                    &mesh,
                    &Pose6D::identity(),
                    &scene.cloud.points,
                    orig,
                    &scene.cloud.points,
                    1e4,
                )?),
                _ => None,
            };
            let report = serde_json::json!({
                "scene": scene.scene_id,
                "frames": image_metrics,
                "lidar": lidar,
            });
            let text = serde_json::to_string_pretty(&report)?;
            match out {
                Some(p) => std::fs::write(&p, &text)?,
                None => println!("{text}"),
            }
        }
        Command::TransferTexture { src, dst, out } => {
            let src = load_asset(&src)?;
            let mut dst = load_asset(&dst)?;
            dst.appearance =
                transfer_texture(&src.appearance, &src.vehicle, &dst.vehicle)?;
            save_asset(&dst, &out)?;
            println!("texture transferred -> {}", out.display());
        }
        Command::Insert {
            asset,
            background,
            out,
            tau,
            camera,
        } => {
            let asset = load_asset(&asset)?;
            let mesh = assemble(&asset.vehicle);
            let bg = Image::load_png(&background)?;
            let cam = Camera::look_at(
                parse_vec3(&camera.eye)?,
                parse_vec3(&camera.target)?,
                Vector3::z(),
                camera.fov,
                bg.width,
                bg.height,
            )?;
            let cfg = RenderConfig {
                tau,
                ..Default::default()
            };
            let r = render(&mesh, &cam, &asset.appearance, &cfg)?;
            let composed = composite_insert(&bg, &r)?;
            composed.save_png(&out)?;
            println!("insert -> {}", out.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
