//! PCA shape space over vertex-aligned vehicle templates. Principal
//! directions are computed from the Gram matrix of the centered exemplar
//! matrix; the dense-SVD route lives in tests as the independent oracle.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use super::{PartLabel, VehicleMesh, VehicleRig};
use crate::geometry::TriMesh;
use crate::{Error, Result};

/// One aligned exemplar: body + wheel template meshes sharing the space
/// topology, plus its articulation rig.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTemplate {
    pub body: TriMesh,
    pub wheel_template: TriMesh,
    pub rig: VehicleRig,
}

impl VehicleTemplate {
    pub fn from_vehicle(vm: &VehicleMesh) -> Self {
        VehicleTemplate {
            body: vm.body.clone(),
            wheel_template: vm.wheel_template.clone(),
            rig: vm.rig.clone(),
        }
    }

    pub fn to_vehicle(&self) -> VehicleMesh {
        VehicleMesh {
            body: self.body.clone(),
            wheel_template: self.wheel_template.clone(),
            rig: self.rig.clone(),
            steer_yaw: 0.0,
            spin_angle: vec![0.0; self.rig.wheel_positions.len()],
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        let n = self.body.vertices.len() + self.wheel_template.vertices.len();
        let mut v = DVector::zeros(3 * n);
        for (i, p) in self
            .body
            .vertices
            .iter()
            .chain(self.wheel_template.vertices.iter())
            .enumerate()
        {
            v[3 * i] = p.x;
            v[3 * i + 1] = p.y;
            v[3 * i + 2] = p.z;
        }
        v
    }
}

/// Shared topology of all exemplars in a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTopology {
    pub body_faces: Vec<[u32; 3]>,
    pub wheel_faces: Vec<[u32; 3]>,
    pub n_body_vertices: usize,
    pub n_wheel_vertices: usize,
    pub body_uv: Option<Vec<Vector2<f64>>>,
    pub wheel_uv: Option<Vec<Vector2<f64>>>,
}

/// Linear (PCA) shape space: decode is `V = mean + basis z`.
#[derive(Debug, Clone)]
pub struct ShapeSpace {
    pub mean: DVector<f64>,
    /// Orthonormal columns; the effective dimension may be below the
    /// requested k when the exemplar set is rank-deficient.
    pub basis: DMatrix<f64>,
    /// Latent codes of the training exemplars.
    pub codes: Vec<DVector<f64>>,
    pub topology: SpaceTopology,
    pub part_labels: Vec<PartLabel>,
    pub symmetry_axis: Vector3<f64>,
    pub rig: VehicleRig,
}

impl ShapeSpace {
    pub fn k_pca(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// z = W^T (V - mean).
    pub fn encode(&self, template: &VehicleTemplate) -> DVector<f64> {
        self.basis.transpose() * (template.flatten() - &self.mean)
    }

    /// Reconstructs a vehicle from a latent code (shorter codes are
    /// zero-padded).
    pub fn decode(&self, z: &DVector<f64>) -> VehicleMesh {
        let mut full = self.mean.clone();
        for j in 0..z.len().min(self.basis.ncols()) {
            full += self.basis.column(j) * z[j];
        }
        self.vehicle_from_flat(&full)
    }

    /// Pulls a gradient on template vertices (body then wheel) back to the
    /// latent code.
    pub fn decode_backward(&self, d_vertices: &[Vector3<f64>]) -> DVector<f64> {
        let mut flat = DVector::zeros(self.dim());
        for (i, d) in d_vertices.iter().enumerate() {
            flat[3 * i] = d.x;
            flat[3 * i + 1] = d.y;
            flat[3 * i + 2] = d.z;
        }
        self.basis.transpose() * flat
    }

    fn vehicle_from_flat(&self, flat: &DVector<f64>) -> VehicleMesh {
        let nb = self.topology.n_body_vertices;
        let nw = self.topology.n_wheel_vertices;
        let vert = |i: usize| Vector3::new(flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]);
        let body = TriMesh {
            vertices: (0..nb).map(vert).collect(),
            faces: self.topology.body_faces.clone(),
            uv: self.topology.body_uv.clone(),
        };
        let wheel = TriMesh {
            vertices: (nb..nb + nw).map(vert).collect(),
            faces: self.topology.wheel_faces.clone(),
            uv: self.topology.wheel_uv.clone(),
        };
        VehicleMesh {
            body,
            wheel_template: wheel,
            rig: self.rig.clone(),
            steer_yaw: 0.0,
            spin_angle: vec![0.0; self.rig.wheel_positions.len()],
        }
    }
}

/// Builds the PCA space from aligned exemplars. Exemplars must share
/// topology exactly; rigs are averaged into the space rig.
pub fn build_shape_space(exemplars: &[VehicleTemplate], k_pca: usize) -> Result<ShapeSpace> {
    if exemplars.len() < 2 {
        return Err(Error::Invalid("need at least 2 exemplars".into()));
    }
    let first = &exemplars[0];
    for (i, ex) in exemplars.iter().enumerate().skip(1) {
        if ex.body.faces != first.body.faces
            || ex.wheel_template.faces != first.wheel_template.faces
            || ex.body.vertices.len() != first.body.vertices.len()
            || ex.wheel_template.vertices.len() != first.wheel_template.vertices.len()
        {
            return Err(Error::TopologyMismatch(format!(
                "exemplar {i} does not share the topology of exemplar 0"
            )));
        }
    }
    let m = exemplars.len();
    let cols: Vec<DVector<f64>> = exemplars.iter().map(|e| e.flatten()).collect();
    let dim = cols[0].len();
    let mut mean = DVector::zeros(dim);
    for c in &cols {
        mean += c;
    }
    mean /= m as f64;
    let mut centered = DMatrix::zeros(dim, m);
    for (j, c) in cols.iter().enumerate() {
        centered.set_column(j, &(c - &mean));
    }
    // Small Gram eigendecomposition: X^T X = U diag(sigma^2) U^T.
    let gram = centered.transpose() * &centered;
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let max_ev = eig.eigenvalues[order[0]].max(0.0);
    let tol = max_ev * 1e-12 + 1e-300;
    let mut basis_cols = Vec::new();
    for &j in order.iter().take(k_pca.min(m)) {
        let ev = eig.eigenvalues[j];
        if ev <= tol {
            break;
        }
        let dir = &centered * eig.eigenvectors.column(j) / ev.sqrt();
        basis_cols.push(dir);
    }
    let k = basis_cols.len();
    let mut basis = DMatrix::zeros(dim, k);
    for (j, c) in basis_cols.iter().enumerate() {
        basis.set_column(j, c);
    }
    // Average rig across exemplars.
    let mut rig = first.rig.clone();
    for p in &mut rig.wheel_positions {
        *p = Vector3::zeros();
    }
    rig.wheel_radius = 0.0;
    rig.wheel_thickness = 0.0;
    rig.axle_offset_front = Vector3::zeros();
    rig.axle_offset_back = Vector3::zeros();
    for ex in exemplars {
        for (k, p) in ex.rig.wheel_positions.iter().enumerate() {
            rig.wheel_positions[k] += p / m as f64;
        }
        rig.wheel_radius += ex.rig.wheel_radius / m as f64;
        rig.wheel_thickness += ex.rig.wheel_thickness / m as f64;
        rig.axle_offset_front += ex.rig.axle_offset_front / m as f64;
        rig.axle_offset_back += ex.rig.axle_offset_back / m as f64;
    }
    let nb = first.body.vertices.len();
    let nw = first.wheel_template.vertices.len();
    let mut part_labels = vec![PartLabel::Body; nb];
    part_labels.extend(vec![PartLabel::Wheel; nw]);
    let codes = {
        let mut codes = Vec::with_capacity(m);
        for c in &cols {
            codes.push(basis.transpose() * (c - &mean));
        }
        codes
    };
    Ok(ShapeSpace {
        mean,
        basis,
        codes,
        topology: SpaceTopology {
            body_faces: first.body.faces.clone(),
            wheel_faces: first.wheel_template.faces.clone(),
            n_body_vertices: nb,
            n_wheel_vertices: nw,
            body_uv: first.body.uv.clone(),
            wheel_uv: first.wheel_template.uv.clone(),
        },
        part_labels,
        // Vehicles are laterally symmetric about the y = 0 plane in the
        // canonical frame (forward +x, left +y, up +z).
        symmetry_axis: Vector3::new(0.0, 1.0, 0.0),
        rig,
    })
}

#[derive(Serialize, Deserialize)]
struct SpaceMeta {
    version: (u32, u32),
    topology: SpaceTopology,
    part_labels: Vec<PartLabel>,
    symmetry_axis: Vector3<f64>,
    rig: VehicleRig,
    canonical_frame: String,
}

const SPACE_MAGIC: &[u8; 4] = b"CSS1";

/// Persists the space: magic, counts, float64 mean/basis/codes, then a JSON
/// metadata block (topology, labels, symmetry axis, rig).
pub fn save_shape_space(space: &ShapeSpace, path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(SPACE_MAGIC)?;
    let dim = space.dim() as u64;
    let k = space.k_pca() as u64;
    let m = space.codes.len() as u64;
    for v in [dim, k, m] {
        w.write_all(&v.to_le_bytes())?;
    }
    for x in space.mean.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    for x in space.basis.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    for code in &space.codes {
        for x in code.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    let meta = SpaceMeta {
        version: (1, 0),
        topology: space.topology.clone(),
        part_labels: space.part_labels.clone(),
        symmetry_axis: space.symmetry_axis,
        rig: space.rig.clone(),
        canonical_frame: "forward=+x left=+y up=+z; wheel axle=+y hub-origin".into(),
    };
    let json = serde_json::to_vec(&meta)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

pub fn load_shape_space(path: &Path) -> Result<ShapeSpace> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != SPACE_MAGIC {
        return Err(Error::Archive("bad shape-space magic".into()));
    }
    let mut b8 = [0u8; 8];
    let mut read_u64 = |r: &mut dyn Read| -> Result<u64> {
        r.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let dim = read_u64(&mut r)? as usize;
    let k = read_u64(&mut r)? as usize;
    let m = read_u64(&mut r)? as usize;
    let read_f64s = |r: &mut dyn Read, n: usize| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b)?;
            out.push(f64::from_le_bytes(b));
        }
        Ok(out)
    };
    let mean = DVector::from_vec(read_f64s(&mut r, dim)?);
    let basis = DMatrix::from_vec(dim, k, read_f64s(&mut r, dim * k)?);
    let mut codes = Vec::with_capacity(m);
    for _ in 0..m {
        codes.push(DVector::from_vec(read_f64s(&mut r, k)?));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let json_len = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; json_len];
    r.read_exact(&mut json)?;
    let meta: SpaceMeta = serde_json::from_slice(&json)?;
    Ok(ShapeSpace {
        mean,
        basis,
        codes,
        topology: meta.topology,
        part_labels: meta.part_labels,
        symmetry_axis: meta.symmetry_axis,
        rig: meta.rig,
    })
}
