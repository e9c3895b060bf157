//! Articulated part-aware vehicle parameterization: a shared wheel template
//! instanced at per-wheel rigid slots with axle-shared scale and offsets,
//! steerable front wheels, and a PCA shape space over vertex-aligned
//! templates.
//!
//! Canonical wheel frame: axle = +y, forward = +x, up = +z, origin at the
//! hub center. The wheel template is a unit cylinder (radius 1 in xz,
//! thickness 1 along y); the scale `[r_w, r_h, r_w]` maps it to physical
//! radius `r_w` and thickness `r_h`.

pub mod align;
pub mod space;
pub mod templates;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::TriMesh;
use crate::render::AppearanceParams;
use crate::{Error, Result};

pub use align::{align_template, AlignmentConfig};
pub use space::{
    build_shape_space, load_shape_space, save_shape_space, ShapeSpace, VehicleTemplate,
};
pub use templates::synthetic_exemplar;

/// Per-vertex semantic label of the assembled mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartLabel {
    Body,
    Wheel,
}

/// Wheel slot placement and axle-shared articulation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRig {
    /// Hub center of each wheel slot in the vehicle frame (the rigid T^k;
    /// rotations are identity because the wheel template is axle-symmetric).
    pub wheel_positions: Vec<Vector3<f64>>,
    pub wheel_radius: f64,
    pub wheel_thickness: f64,
    pub axle_offset_front: Vector3<f64>,
    pub axle_offset_back: Vector3<f64>,
    /// Indices into `wheel_positions` of the steerable front wheels.
    pub front_wheel_indices: Vec<usize>,
}

/// Partitioned vehicle: deformable body, shared wheel template, and the
/// articulation state. Assembled face count is |F_body| + K |F_wheel|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleMesh {
    pub body: TriMesh,
    pub wheel_template: TriMesh,
    pub rig: VehicleRig,
    /// Steering yaw of the front wheels, radians.
    pub steer_yaw: f64,
    /// Per-wheel spin about the axle, radians. Animation-only state; never
    /// part of the fitting energy.
    pub spin_angle: Vec<f64>,
}

/// Gradients of a scalar with respect to the assembly inputs, produced by
/// [`assemble_backward`].
#[derive(Debug, Clone)]
pub struct AssemblyGrads {
    pub body: Vec<Vector3<f64>>,
    pub wheel_template: Vec<Vector3<f64>>,
    pub wheel_radius: f64,
    pub wheel_thickness: f64,
    pub axle_offset_front: Vector3<f64>,
    pub axle_offset_back: Vector3<f64>,
    pub steer_yaw: f64,
}

impl AssemblyGrads {
    /// Flattened wheel-parameter block: [r_w, r_h, t_front, t_back, rho].
    pub fn wheel_params(&self) -> [f64; 9] {
        [
            self.wheel_radius,
            self.wheel_thickness,
            self.axle_offset_front.x,
            self.axle_offset_front.y,
            self.axle_offset_front.z,
            self.axle_offset_back.x,
            self.axle_offset_back.y,
            self.axle_offset_back.z,
            self.steer_yaw,
        ]
    }
}

fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn rot_z_deriv(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

fn rot_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

impl VehicleMesh {
    pub fn wheel_count(&self) -> usize {
        self.rig.wheel_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.wheel_count() < 2 {
            return Err(Error::Invalid("vehicle needs at least 2 wheels".into()));
        }
        if self.rig.wheel_radius <= 0.0 || self.rig.wheel_thickness <= 0.0 {
            return Err(Error::Invalid("wheel scale must be positive".into()));
        }
        if self
            .rig
            .front_wheel_indices
            .iter()
            .any(|&i| i >= self.wheel_count())
        {
            return Err(Error::Invalid("front wheel index out of range".into()));
        }
        if self.spin_angle.len() != self.wheel_count() {
            return Err(Error::Invalid("spin_angle length != wheel count".into()));
        }
        self.body.validate()?;
        self.wheel_template.validate()?;
        Ok(())
    }

    fn is_front(&self, k: usize) -> bool {
        self.rig.front_wheel_indices.contains(&k)
    }

    /// Combined rotation + scale applied to template vertices of wheel `k`
    /// and the translation added after it (both in the vehicle frame).
    fn wheel_transform(&self, k: usize) -> (Matrix3<f64>, Vector3<f64>) {
        let scale = Matrix3::from_diagonal(&Vector3::new(
            self.rig.wheel_radius,
            self.rig.wheel_thickness,
            self.rig.wheel_radius,
        ));
        let spin = rot_y(self.spin_angle[k]);
        if self.is_front(k) {
            (
                rot_z(self.steer_yaw) * spin * scale,
                self.rig.axle_offset_front + self.rig.wheel_positions[k],
            )
        } else {
            (spin * scale, self.rig.axle_offset_back + self.rig.wheel_positions[k])
        }
    }

    /// Number of vertices in the assembled mesh.
    pub fn assembled_vertex_count(&self) -> usize {
        self.body.vertices.len() + self.wheel_count() * self.wheel_template.vertices.len()
    }

    /// Per-vertex part labels of the assembled mesh.
    pub fn part_labels(&self) -> Vec<PartLabel> {
        let mut labels = vec![PartLabel::Body; self.body.vertices.len()];
        labels.extend(vec![
            PartLabel::Wheel;
            self.wheel_count() * self.wheel_template.vertices.len()
        ]);
        labels
    }
}

/// Assembles the full vehicle mesh in the vehicle frame: body vertices
/// verbatim, then one transformed copy of the wheel template per slot.
pub fn assemble(vm: &VehicleMesh) -> TriMesh {
    let mut out = vm.body.clone();
    for k in 0..vm.wheel_count() {
        let (lin, trans) = vm.wheel_transform(k);
        out.concat(&vm.wheel_template.transformed(&lin, &trans));
    }
    out
}

/// Pulls a gradient with respect to assembled vertices back onto the
/// assembly inputs (body, wheel template, and wheel parameters).
pub fn assemble_backward(vm: &VehicleMesh, d_assembled: &[Vector3<f64>]) -> AssemblyGrads {
    let nb = vm.body.vertices.len();
    let nw = vm.wheel_template.vertices.len();
    assert_eq!(d_assembled.len(), nb + vm.wheel_count() * nw);
    let mut g = AssemblyGrads {
        body: d_assembled[..nb].to_vec(),
        wheel_template: vec![Vector3::zeros(); nw],
        wheel_radius: 0.0,
        wheel_thickness: 0.0,
        axle_offset_front: Vector3::zeros(),
        axle_offset_back: Vector3::zeros(),
        steer_yaw: 0.0,
    };
    let r_yaw = rot_z(vm.steer_yaw);
    let dr_yaw = rot_z_deriv(vm.steer_yaw);
    for k in 0..vm.wheel_count() {
        let spin = rot_y(vm.spin_angle[k]);
        let scale = Matrix3::from_diagonal(&Vector3::new(
            vm.rig.wheel_radius,
            vm.rig.wheel_thickness,
            vm.rig.wheel_radius,
        ));
        let front = vm.is_front(k);
        let lin = if front {
            r_yaw * spin * scale
        } else {
            spin * scale
        };
        for (i, v) in vm.wheel_template.vertices.iter().enumerate() {
            let d = d_assembled[nb + k * nw + i];
            g.wheel_template[i] += lin.transpose() * d;
            // Scale derivatives: d(lin v)/dr_w keeps x and z columns.
            let pre = if front { r_yaw * spin } else { spin };
            let sv = Vector3::new(v.x, 0.0, v.z);
            g.wheel_radius += d.dot(&(pre * sv));
            g.wheel_thickness += d.dot(&(pre * Vector3::new(0.0, v.y, 0.0)));
            if front {
                g.axle_offset_front += d;
                g.steer_yaw += d.dot(&(dr_yaw * (spin * (scale * v))));
            } else {
                g.axle_offset_back += d;
            }
        }
    }
    g
}

/// Rolls the vehicle forward: every wheel spins by `forward_distance / r_w`
/// and the front wheels take the given steer angle.
pub fn animate(vm: &VehicleMesh, forward_distance: f64, steer: f64) -> VehicleMesh {
    let mut out = vm.clone();
    let dspin = forward_distance / vm.rig.wheel_radius;
    for s in &mut out.spin_angle {
        *s += dspin;
    }
    out.steer_yaw = steer;
    out
}

/// Moves appearance textures from one asset onto another vehicle decoded
/// from the same shape space. Valid because shared topology implies shared
/// UV layout; geometry is untouched.
pub fn transfer_texture(
    src_appearance: &AppearanceParams,
    src: &VehicleMesh,
    dst: &VehicleMesh,
) -> Result<AppearanceParams> {
    if src.body.faces != dst.body.faces
        || src.wheel_template.faces != dst.wheel_template.faces
        || src.body.uv != dst.body.uv
        || src.wheel_template.uv != dst.wheel_template.uv
    {
        return Err(Error::TopologyMismatch(
            "texture transfer requires meshes decoded from the same shape space".into(),
        ));
    }
    Ok(src_appearance.clone())
}
