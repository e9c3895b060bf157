//! Procedural vehicle exemplars used for fixtures and shape-space tests.
//! All exemplars share one body topology (subdivided icosphere warped by a
//! smooth car profile) and one wheel topology (closed cylinder), so they can
//! be stacked directly into a linear shape space.

use nalgebra::{Vector2, Vector3};

use super::space::VehicleTemplate;
use super::VehicleRig;
use crate::geometry::primitives::{cylinder, icosphere};
use crate::geometry::rng;
use crate::geometry::TriMesh;

/// Smooth car-like body profile parameters.
#[derive(Debug, Clone, Copy)]
pub struct BodyStyle {
    pub half_length: f64,
    pub half_width: f64,
    pub half_height: f64,
    /// Superellipsoid exponent; larger is boxier. Must be >= 2.
    pub boxiness: f64,
    /// Relative cabin bump height on the upper shell.
    pub cabin: f64,
    /// Cabin center along x in [-1, 1] of the half length.
    pub cabin_center: f64,
}

impl BodyStyle {
    fn sampled(seed: u64) -> Self {
        let u = |slot| rng::uniform(seed, 7, slot);
        BodyStyle {
            half_length: 1.9 + 0.5 * u(0),
            half_width: 0.80 + 0.20 * u(1),
            half_height: 0.55 + 0.20 * u(2),
            boxiness: 2.5 + 2.0 * u(3),
            cabin: 0.25 + 0.25 * u(4),
            cabin_center: -0.25 + 0.35 * u(5),
        }
    }
}

/// Warps a unit-sphere direction into the body surface point.
fn body_point(dir: Vector3<f64>, style: &BodyStyle) -> Vector3<f64> {
    let e = style.boxiness;
    // Superellipsoid radius along this direction: |x/a|^e + |y/b|^e + |z/c|^e = 1.
    let q = (dir.x / style.half_length).abs().powf(e)
        + (dir.y / style.half_width).abs().powf(e)
        + (dir.z / style.half_height).abs().powf(e);
    let mut p = dir / q.powf(1.0 / e).max(1e-12);
    // Cabin bump: raise the upper shell by a smooth Gaussian of x.
    if p.z > 0.0 {
        let xn = p.x / style.half_length;
        let g = (-((xn - style.cabin_center) / 0.45).powi(2)).exp();
        let lateral = 1.0 - (p.y / style.half_width).powi(2) * 0.6;
        p.z += style.cabin * style.half_height * g * lateral * (p.z / style.half_height);
    }
    p
}

/// Body mesh at subdivision level 2 (320 faces), spherical UVs packed into
/// the lower band of the shared atlas.
pub fn body_mesh(style: &BodyStyle) -> TriMesh {
    let sphere = icosphere(2);
    let vertices: Vec<Vector3<f64>> = sphere
        .vertices
        .iter()
        .map(|d| body_point(*d, style))
        .collect();
    let uv = sphere
        .vertices
        .iter()
        .map(|d| {
            let u = 0.5 + d.y.atan2(d.x) / (2.0 * std::f64::consts::PI);
            let v = (d.z.clamp(-1.0, 1.0).asin() / std::f64::consts::PI + 0.5) * 0.70;
            Vector2::new(u, v)
        })
        .collect();
    TriMesh {
        vertices,
        faces: sphere.faces,
        uv: Some(uv),
    }
}

/// Canonical wheel template: unit cylinder (radius 1 in xz, axle along y,
/// y in [-0.5, 0.5]), UVs remapped into the upper band of the atlas.
pub fn wheel_mesh() -> TriMesh {
    let mut wheel = cylinder(10);
    if let Some(uv) = &mut wheel.uv {
        for t in uv.iter_mut() {
            t.y = 0.72 + 0.28 * t.y;
        }
    }
    wheel
}

/// One exemplar with a deterministic per-seed style.
pub fn synthetic_exemplar(seed: u64) -> VehicleTemplate {
    let style = BodyStyle::sampled(seed);
    let wheel_radius = 0.30 + 0.10 * rng::uniform(seed, 7, 8);
    let wheel_thickness = 0.22 + 0.06 * rng::uniform(seed, 7, 9);
    let track = style.half_width - 0.5 * wheel_thickness - 0.02;
    let wheelbase = 0.65 * style.half_length;
    let hub_z = -style.half_height * 0.55;
    let rig = VehicleRig {
        wheel_positions: vec![
            Vector3::new(wheelbase, track, hub_z),
            Vector3::new(wheelbase, -track, hub_z),
            Vector3::new(-wheelbase, track, hub_z),
            Vector3::new(-wheelbase, -track, hub_z),
        ],
        wheel_radius,
        wheel_thickness,
        axle_offset_front: Vector3::zeros(),
        axle_offset_back: Vector3::zeros(),
        front_wheel_indices: vec![0, 1],
    };
    VehicleTemplate {
        body: body_mesh(&style),
        wheel_template: wheel_mesh(),
        rig,
    }
}
