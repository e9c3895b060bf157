//! Image and point-cloud evaluation metrics.

use nalgebra::Vector3;
use serde::Serialize;

use crate::geometry::{Pose6D, TriMesh};
use crate::lidar::{Bvh, NearestGrid};
use crate::render::Image;
use crate::{Error, Result};

/// Sentinel reported for PSNR when the error is exactly zero.
pub const PSNR_INFINITE: f64 = f64::INFINITY;

const SSIM_C1: f64 = 1e-4; // (0.01)^2 at unit peak
const SSIM_C2: f64 = 9e-4; // (0.03)^2
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ImageMetrics {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct LidarMetrics {
    pub l2_error: f64,
    pub hit_rate: f64,
    pub chamfer: f64,
    pub hausdorff: f64,
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, wi) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *wi = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *wi;
    }
    for wi in &mut w {
        *wi /= sum;
    }
    w
}

/// MSE, PSNR and SSIM restricted to the mask foreground (mask > 0.5). MSE
/// and PSNR average over foreground pixels and channels; SSIM averages the
/// windowed score over windows centered on foreground pixels.
pub fn masked_image_metrics(sim: &Image, real: &Image, mask: &Image) -> Result<ImageMetrics> {
    if sim.width != real.width
        || sim.height != real.height
        || sim.channels != real.channels
        || mask.width != sim.width
        || mask.height != sim.height
    {
        return Err(Error::Invalid("image/mask dimensions differ".into()));
    }
    let w1d = gaussian_window();
    let mut se = 0.0;
    let mut n = 0usize;
    let mut ssim_sum = 0.0;
    let mut windows = 0usize;
    for y in 0..sim.height {
        for x in 0..sim.width {
            if mask.get(x, y, 0) <= 0.5 {
                continue;
            }
            for ch in 0..sim.channels {
                let d = sim.get(x, y, ch) - real.get(x, y, ch);
                se += d * d;
                n += 1;
            }
            ssim_sum += ssim_at(sim, real, x, y, &w1d);
            windows += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mse = se / n as f64;
    let psnr = if mse == 0.0 {
        PSNR_INFINITE
    } else {
        10.0 * (1.0 / mse).log10()
    };
    Ok(ImageMetrics {
        mse,
        psnr,
        ssim: ssim_sum / windows as f64,
    })
}

fn ssim_at(sim: &Image, real: &Image, cx: usize, cy: usize, w1d: &[f64; SSIM_WINDOW]) -> f64 {
    let half = SSIM_WINDOW as i64 / 2;
    let mut acc = 0.0;
    for ch in 0..sim.channels {
        let (mut wsum, mut mu_a, mut mu_b) = (0.0, 0.0, 0.0);
        let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
        for dy in -half..=half {
            let y = cy as i64 + dy;
            if y < 0 || y >= sim.height as i64 {
                continue;
            }
            for dx in -half..=half {
                let x = cx as i64 + dx;
                if x < 0 || x >= sim.width as i64 {
                    continue;
                }
                let w = w1d[(dy + half) as usize] * w1d[(dx + half) as usize];
                let a = sim.get(x as usize, y as usize, ch);
                let b = real.get(x as usize, y as usize, ch);
                wsum += w;
                mu_a += w * a;
                mu_b += w * b;
                aa += w * a * a;
                bb += w * b * b;
                ab += w * a * b;
            }
        }
        mu_a /= wsum;
        mu_b /= wsum;
        let var_a = aa / wsum - mu_a * mu_a;
        let var_b = bb / wsum - mu_b * mu_b;
        let cov = ab / wsum - mu_a * mu_b;
        acc += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
    }
    acc / sim.channels as f64
}

/// Per-ray comparison of a reconstruction against held-out range returns,
/// plus cloud-to-cloud Chamfer/Hausdorff against the aggregated cloud.
///
/// Each held-out point defines a ray from its sensor origin; the asset is
/// intersected along that ray and |t_sim - t_real| accumulates into the
/// range error for hits. `aggregated` is compared against the mesh surface
/// sampled at the ray hit points (hits only).
pub fn lidar_eval(
    mesh: &TriMesh,
    pose: &Pose6D,
    held_out: &[Vector3<f64>],
    origins: &[Vector3<f64>],
    aggregated: &[Vector3<f64>],
    max_range: f64,
) -> Result<LidarMetrics> {
    if held_out.is_empty() || held_out.len() != origins.len() {
        return Err(Error::Invalid(
            "held-out points and origins must be non-empty and matched".into(),
        ));
    }
    let placed = {
        let rot = pose.rotation()?;
        mesh.transformed(&rot, &pose.translation)
    };
    let bvh = Bvh::build(&placed);
    let mut hits = 0usize;
    let mut err = 0.0;
    let mut sim_points = Vec::new();
    for (p, o) in held_out.iter().zip(origins) {
        let d = p - o;
        let t_real = d.norm();
        if t_real <= 0.0 {
            continue;
        }
        let dir = d / t_real;
        if let Some((t_sim, _, _)) = bvh.cast_ray(o, &dir, max_range) {
            hits += 1;
            err += (t_sim - t_real).abs();
            sim_points.push(o + dir * t_sim);
        }
    }
    let hit_rate = hits as f64 / held_out.len() as f64;
    let l2_error = if hits > 0 { err / hits as f64 } else { 0.0 };
    let (chamfer, hausdorff) = if sim_points.is_empty() || aggregated.is_empty() {
        (f64::INFINITY, f64::INFINITY)
    } else {
        cloud_distances(&sim_points, aggregated)
    };
    Ok(LidarMetrics {
        l2_error,
        hit_rate,
        chamfer,
        hausdorff,
    })
}

/// Symmetric mean-squared Chamfer and symmetric Hausdorff between clouds.
pub fn cloud_distances(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> (f64, f64) {
    let ga = NearestGrid::build(a, 0.25);
    let gb = NearestGrid::build(b, 0.25);
    let mut cham = 0.0;
    let mut haus = 0.0_f64;
    let mut sum_ab = 0.0;
    for p in a {
        let (_, d2) = gb.nearest(p);
        sum_ab += d2;
        haus = haus.max(d2);
    }
    cham += sum_ab / a.len() as f64;
    let mut sum_ba = 0.0;
    for p in b {
        let (_, d2) = ga.nearest(p);
        sum_ba += d2;
        haus = haus.max(d2);
    }
    cham += sum_ba / b.len() as f64;
    (0.5 * cham, haus.sqrt())
}
