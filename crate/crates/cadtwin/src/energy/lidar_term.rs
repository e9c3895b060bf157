//! Trimmed one-sided chamfer term between an observed point cloud and
//! points sampled on the model surface. Trimming drops the largest
//! residuals so stray background/outlier returns do not dominate.

use nalgebra::Vector3;

use crate::geometry::rng;
use crate::lidar::NearestGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct LidarEnergyConfig {
    /// Fraction of observed points kept after sorting by distance.
    pub keep_fraction: f64,
    /// Cap on observed points; larger clouds are subsampled.
    pub max_points: usize,
    /// Seed for the subsampling draw.
    pub seed: u64,
}

impl Default for LidarEnergyConfig {
    fn default() -> Self {
        LidarEnergyConfig {
            keep_fraction: 0.95,
            max_points: 10_000,
            seed: 0,
        }
    }
}

/// Matched pair kept after trimming.
#[derive(Debug, Clone, Copy)]
pub struct LidarMatch {
    pub observed: usize,
    pub surface: usize,
}

#[derive(Debug, Clone)]
pub struct LidarEnergy {
    pub value: f64,
    pub matches: Vec<LidarMatch>,
    /// Indices into the original observed cloud actually used (after
    /// subsampling, before trimming).
    pub used: Vec<usize>,
}

/// Deterministic subsample of `n` indices out of `total` (all when
/// `n >= total`), via a seeded shuffle.
pub fn subsample_indices(total: usize, n: usize, seed: u64) -> Vec<usize> {
    if n >= total {
        return (0..total).collect();
    }
    let mut idx: Vec<usize> = (0..total).collect();
    // Fisher-Yates with counter-based draws.
    for i in (1..total).rev() {
        let j = (rng::uniform(seed, i as u64, 0) * (i + 1) as f64) as usize;
        idx.swap(i, j.min(i));
    }
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

/// Computes the trimmed chamfer energy. `grad`, when present, receives
/// d energy / d surface point (same length as `surface`).
pub fn lidar_energy(
    observed: &[Vector3<f64>],
    surface: &[Vector3<f64>],
    cfg: &LidarEnergyConfig,
    grad: Option<&mut [Vector3<f64>]>,
) -> Result<LidarEnergy> {
    if observed.is_empty() || surface.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let used = subsample_indices(observed.len(), cfg.max_points, cfg.seed);
    let grid = NearestGrid::build(surface, 0.25);
    let mut pairs: Vec<(f64, usize, usize)> = used
        .iter()
        .map(|&oi| {
            let (si, d2) = grid.nearest(&observed[oi]);
            (d2, oi, si)
        })
        .collect();
    let keep = ((cfg.keep_fraction * used.len() as f64).floor() as usize)
        .clamp(1, used.len());
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    pairs.truncate(keep);
    let value = pairs.iter().map(|p| p.0).sum::<f64>() / keep as f64;
    if let Some(g) = grad {
        for &(_, oi, si) in &pairs {
            g[si] += (surface[si] - observed[oi]) * (2.0 / keep as f64);
        }
    }
    Ok(LidarEnergy {
        value,
        matches: pairs
            .iter()
            .map(|&(_, oi, si)| LidarMatch {
                observed: oi,
                surface: si,
            })
            .collect(),
        used,
    })
}

/// Energy with frozen correspondences; exact for finite differencing.
pub fn lidar_energy_frozen(
    observed: &[Vector3<f64>],
    surface: &[Vector3<f64>],
    matches: &[LidarMatch],
) -> f64 {
    matches
        .iter()
        .map(|m| (observed[m.observed] - surface[m.surface]).norm_squared())
        .sum::<f64>()
        / matches.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(seed: u64, n: usize, center: Vector3<f64>) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|i| {
                center
                    + Vector3::new(
                        rng::normal(seed, i as u64, 0),
                        rng::normal(seed, i as u64, 1),
                        rng::normal(seed, i as u64, 2),
                    ) * 0.3
            })
            .collect()
    }

    #[test]
    fn coincident_clouds_zero() {
        let p = blob(1, 200, Vector3::zeros());
        let e = lidar_energy(&p, &p, &LidarEnergyConfig::default(), None).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let obs = blob(2, 300, Vector3::new(0.2, 0.0, 0.1));
        let surf = blob(3, 150, Vector3::zeros());
        let cfg = LidarEnergyConfig {
            keep_fraction: 0.9,
            max_points: usize::MAX,
            seed: 0,
        };
        let e = lidar_energy(&obs, &surf, &cfg, None).unwrap();
        // Oracle: exhaustive nearest neighbor, sort, trim, average.
        let mut d2: Vec<f64> = obs
            .iter()
            .map(|o| {
                surf.iter()
                    .map(|s| (o - s).norm_squared())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let keep = (0.9_f64 * 300.0).floor() as usize;
        let oracle = d2[..keep].iter().sum::<f64>() / keep as f64;
        assert!((e.value - oracle).abs() < 1e-12);
        assert_eq!(e.matches.len(), keep);
    }

    #[test]
    fn trimming_ignores_outliers() {
        let mut obs = blob(4, 190, Vector3::zeros());
        // 10 far outliers.
        for i in 0..10 {
            obs.push(Vector3::new(50.0 + i as f64, 0.0, 0.0));
        }
        let surf = blob(5, 100, Vector3::zeros());
        let trimmed = lidar_energy(
            &obs,
            &surf,
            &LidarEnergyConfig {
                keep_fraction: 0.95,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        let full = lidar_energy(
            &obs,
            &surf,
            &LidarEnergyConfig {
                keep_fraction: 1.0,
                ..Default::default()
            },
            None,
        )
        .unwrap();
        assert!(trimmed.value < 1.0);
        assert!(full.value > 50.0);
    }

    #[test]
    fn gradient_matches_frozen_fd() {
        let obs = blob(6, 120, Vector3::new(0.1, -0.2, 0.05));
        let surf = blob(7, 60, Vector3::zeros());
        let cfg = LidarEnergyConfig::default();
        let mut g = vec![Vector3::zeros(); surf.len()];
        let e = lidar_energy(&obs, &surf, &cfg, Some(&mut g)).unwrap();
        assert!((lidar_energy_frozen(&obs, &surf, &e.matches) - e.value).abs() < 1e-12);
        let h = 1e-6;
        for &(si, c) in &[(0usize, 0usize), (13, 1), (59, 2)] {
            let mut sp = surf.clone();
            sp[si][c] += h;
            let mut sm = surf.clone();
            sm[si][c] -= h;
            let fd = (lidar_energy_frozen(&obs, &sp, &e.matches)
                - lidar_energy_frozen(&obs, &sm, &e.matches))
                / (2.0 * h);
            assert!((fd - g[si][c]).abs() < 1e-6, "fd {fd} an {}", g[si][c]);
        }
    }

    #[test]
    fn subsample_deterministic_and_capped() {
        let a = subsample_indices(1000, 100, 9);
        let b = subsample_indices(1000, 100, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        let c = subsample_indices(1000, 100, 10);
        assert_ne!(a, c);
        assert_eq!(subsample_indices(50, 100, 0).len(), 50);
    }

    #[test]
    fn empty_inputs_rejected() {
        let p = blob(8, 5, Vector3::zeros());
        assert!(matches!(
            lidar_energy(&[], &p, &LidarEnergyConfig::default(), None),
            Err(Error::EmptyCloud)
        ));
        assert!(matches!(
            lidar_energy(&p, &[], &LidarEnergyConfig::default(), None),
            Err(Error::EmptyCloud)
        ));
    }
}
