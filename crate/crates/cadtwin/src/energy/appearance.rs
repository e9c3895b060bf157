//! Appearance regularizers: L1 sparsity of Sobel texture gradients for the
//! diffuse and derived specular maps, and an L1 pull of the environment
//! radiance toward its mean (gray light).

use nalgebra::Vector3;

use crate::render::{EnvLight, Image};
use crate::Result;

/// Base reflectance of dielectrics used when deriving the specular map.
pub const DIELECTRIC_F0: f64 = 0.04;

#[derive(Debug, Clone, Copy)]
pub struct AppearanceEnergy {
    /// Material smoothness term (Sobel L1 of kd and the derived k_s).
    pub material: f64,
    /// Gray-light term.
    pub light: f64,
}

const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

fn sobel_at(img: &Image, x: usize, y: usize, c: usize, horizontal: bool) -> f64 {
    let mut acc = 0.0;
    for dy in 0..3 {
        for dx in 0..3 {
            let sx = (x + dx).max(1).min(img.width) - 1;
            let sy = (y + dy).max(1).min(img.height) - 1;
            let k = if horizontal {
                SOBEL_X[dy][dx]
            } else {
                SOBEL_X[dx][dy]
            };
            acc += k * img.get(sx, sy, c);
        }
    }
    acc
}

/// Sum of |Sobel_x| + |Sobel_y| over texels and channels, with the L1
/// subgradient scattered back through the convolution.
fn sobel_l1(img: &Image, grad: Option<&mut Image>) -> f64 {
    let mut e = 0.0;
    let mut g = grad;
    for y in 0..img.height {
        for x in 0..img.width {
            for c in 0..img.channels {
                for &horizontal in &[true, false] {
                    let v = sobel_at(img, x, y, c, horizontal);
                    e += v.abs();
                    if let Some(g) = g.as_deref_mut() {
                        let s = v.signum();
                        if s != 0.0 {
                            for dy in 0..3 {
                                for dx in 0..3 {
                                    let sx = (x + dx).max(1).min(img.width) - 1;
                                    let sy = (y + dy).max(1).min(img.height) - 1;
                                    let k = if horizontal {
                                        SOBEL_X[dy][dx]
                                    } else {
                                        SOBEL_X[dx][dy]
                                    };
                                    g.add(sx, sy, c, s * k);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    e
}

/// Derived per-texel specular color: (1 - m) * F0 + m * kd.
pub fn specular_map(kd: &Image, orm: &Image) -> Image {
    let mut ks = Image::zeros(kd.width, kd.height, 3);
    for p in 0..kd.pixel_count() {
        let m = orm.data[p * 3 + 2];
        for c in 0..3 {
            ks.data[p * 3 + c] = (1.0 - m) * DIELECTRIC_F0 + m * kd.data[p * 3 + c];
        }
    }
    ks
}

/// Material smoothness: Sobel L1 of kd plus Sobel L1 of the derived k_s,
/// with gradients pushed to both kd and the metallic channel of orm.
pub fn material_energy(
    kd: &Image,
    orm: &Image,
    grad_kd: Option<&mut Image>,
    grad_orm: Option<&mut Image>,
) -> Result<f64> {
    let ks = specular_map(kd, orm);
    match (grad_kd, grad_orm) {
        (Some(gkd), Some(gorm)) => {
            let e_kd = sobel_l1(kd, Some(gkd));
            let mut gks = Image::zeros(ks.width, ks.height, 3);
            let e_ks = sobel_l1(&ks, Some(&mut gks));
            // Chain k_s = (1 - m) F0 + m kd into kd and metallic.
            for p in 0..kd.pixel_count() {
                let m = orm.data[p * 3 + 2];
                for c in 0..3 {
                    let d = gks.data[p * 3 + c];
                    gkd.data[p * 3 + c] += d * m;
                    gorm.data[p * 3 + 2] += d * (kd.data[p * 3 + c] - DIELECTRIC_F0);
                }
            }
            Ok(e_kd + e_ks)
        }
        (None, None) => Ok(sobel_l1(kd, None) + sobel_l1(&ks, None)),
        _ => unreachable!("gradients requested for only one texture"),
    }
}

/// L1 distance of each sample radiance from the mean radiance.
pub fn light_energy(env: &EnvLight, grad: Option<&mut [Vector3<f64>]>) -> f64 {
    let n = env.samples.len();
    if n == 0 {
        return 0.0;
    }
    let mean = env.mean_radiance();
    let mut e = 0.0;
    let mut signs = vec![Vector3::zeros(); n];
    for (i, s) in env.samples.iter().enumerate() {
        for c in 0..3 {
            let d: f64 = s.radiance[c] - mean[c];
            e += d.abs();
            signs[i][c] = d.signum();
        }
    }
    if let Some(g) = grad {
        let sign_sum: Vector3<f64> = signs.iter().sum();
        for i in 0..n {
            // The mean depends on every sample.
            g[i] += signs[i] - sign_sum / n as f64;
        }
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::EnvSample;

    #[test]
    fn constant_textures_zero_material() {
        let kd = Image::filled(8, 8, 3, 0.3);
        let mut orm = Image::filled(8, 8, 3, 0.0);
        for p in 0..64 {
            orm.data[3 * p + 2] = 0.5;
        }
        assert!(material_energy(&kd, &orm, None, None).unwrap() < 1e-10);
    }

    #[test]
    fn step_edge_cost_by_hand() {
        // A single vertical step of height s in a wide image costs
        // 8*s per crossing row for the horizontal Sobel (kernel column sums
        // are 1+2+1 on each side); checked against the direct convolution.
        let mut kd = Image::zeros(8, 4, 3);
        for y in 0..4 {
            for x in 4..8 {
                for c in 0..3 {
                    kd.set(x, y, c, 1.0);
                }
            }
        }
        let orm = Image::filled(8, 4, 3, 0.0); // metallic 0 -> ks constant
        let e = material_energy(&kd, &orm, None, None).unwrap();
        // Per channel, per row: |sobel| = 4 at the two columns straddling
        // the step -> 8 per row; 4 rows, 3 channels.
        assert!((e - 8.0 * 4.0 * 3.0).abs() < 1e-12, "e = {e}");
    }

    #[test]
    fn material_gradient_matches_fd() {
        let mut kd = Image::zeros(6, 5, 3);
        let mut orm = Image::zeros(6, 5, 3);
        for i in 0..kd.data.len() {
            kd.data[i] = crate::geometry::rng::uniform(31, i as u64, 0);
            orm.data[i] = crate::geometry::rng::uniform(32, i as u64, 0);
        }
        let mut gkd = Image::zeros(6, 5, 3);
        let mut gorm = Image::zeros(6, 5, 3);
        material_energy(&kd, &orm, Some(&mut gkd), Some(&mut gorm)).unwrap();
        let h = 1e-7;
        for i in (0..kd.data.len()).step_by(11) {
            let mut p = kd.clone();
            p.data[i] += h;
            let mut m = kd.clone();
            m.data[i] -= h;
            let fd = (material_energy(&p, &orm, None, None).unwrap()
                - material_energy(&m, &orm, None, None).unwrap())
                / (2.0 * h);
            assert!((fd - gkd.data[i]).abs() < 1e-5, "kd[{i}] fd {fd} an {}", gkd.data[i]);
        }
        for p3 in (0..kd.pixel_count()).step_by(7) {
            let i = 3 * p3 + 2;
            let mut p = orm.clone();
            p.data[i] += h;
            let mut m = orm.clone();
            m.data[i] -= h;
            let fd = (material_energy(&kd, &p, None, None).unwrap()
                - material_energy(&kd, &m, None, None).unwrap())
                / (2.0 * h);
            assert!((fd - gorm.data[i]).abs() < 1e-5, "orm[{i}] fd {fd} an {}", gorm.data[i]);
        }
    }

    fn env_from(radiances: &[Vector3<f64>]) -> EnvLight {
        EnvLight {
            samples: radiances
                .iter()
                .map(|&r| EnvSample {
                    direction: Vector3::z(),
                    weight: 1.0,
                    radiance: r,
                })
                .collect(),
        }
    }

    #[test]
    fn gray_light_zero_colored_positive() {
        let gray = env_from(&[Vector3::repeat(0.5), Vector3::repeat(0.5)]);
        assert_eq!(light_energy(&gray, None), 0.0);
        let colored = env_from(&[Vector3::new(1.0, 0.2, 0.2), Vector3::repeat(0.4)]);
        assert!(light_energy(&colored, None) > 0.0);
    }

    #[test]
    fn light_gradient_matches_fd() {
        // No channel value coincides with its channel mean (L1 kink).
        let env = env_from(&[
            Vector3::new(0.9, 0.3, 0.2),
            Vector3::new(0.1, 0.5, 0.8),
            Vector3::new(0.4, 0.45, 0.1),
        ]);
        let mut g = vec![Vector3::zeros(); 3];
        light_energy(&env, Some(&mut g));
        let h = 1e-6;
        for i in 0..3 {
            for c in 0..3 {
                let mut p = env.clone();
                p.samples[i].radiance[c] += h;
                let mut m = env.clone();
                m.samples[i].radiance[c] -= h;
                let fd = (light_energy(&p, None) - light_energy(&m, None)) / (2.0 * h);
                assert!((fd - g[i][c]).abs() < 1e-6, "({i},{c}) fd {fd} an {}", g[i][c]);
            }
        }
    }
}
