//! Shape regularizer: normal consistency over adjacent face pairs plus
//! average squared edge length.

use nalgebra::{Matrix3, Vector3};

use crate::geometry::{Adjacency, TriMesh};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeEnergy {
    pub normal: f64,
    pub edge: f64,
}

impl ShapeEnergy {
    pub fn total(&self) -> f64 {
        self.normal + self.edge
    }
}

/// d normalize(u) / d u.
fn normalize_jacobian(u: &Vector3<f64>) -> Matrix3<f64> {
    let n = u.norm();
    let nn = u / n;
    (Matrix3::identity() - nn * nn.transpose()) / n
}

/// Skew matrix such that skew(a) * b = a x b.
fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// E_normal = (1/N_pairs) sum over adjacent face pairs (1 - n.n')^2,
/// E_edge = (1/N_edges) sum over edges |v - v'|^2.
/// Gradients are accumulated into `grad` (one 3-vector per vertex).
pub fn shape_energy(
    mesh: &TriMesh,
    adj: &Adjacency,
    grad: Option<&mut [Vector3<f64>]>,
) -> Result<ShapeEnergy> {
    let nf = mesh.faces.len();
    // Face normals and their Jacobians wrt the three face vertices.
    let mut normals = Vec::with_capacity(nf);
    for f in 0..nf {
        let raw = mesh.face_normal_raw(f);
        if raw.norm() < 1e-14 {
            return Err(Error::InvalidMesh(format!(
                "face {f} has zero area: normal undefined"
            )));
        }
        normals.push(raw.normalize());
    }

    let mut e_normal = 0.0;
    let mut e_edge = 0.0;
    let n_pairs = adj.face_pairs.len().max(1);
    let n_edges = adj.edges.len().max(1);

    let mut g = grad;
    for &(fa, fb) in &adj.face_pairs {
        let (na, nb) = (normals[fa as usize], normals[fb as usize]);
        let c = 1.0 - na.dot(&nb);
        e_normal += c * c;
        if let Some(gr) = g.as_deref_mut() {
            // d/dn_a of (1 - na.nb)^2 = -2c nb, then chain through the
            // normalized cross product of the face edges.
            let scale = -2.0 * c / n_pairs as f64;
            for (f, dn) in [(fa, nb * scale), (fb, na * scale)] {
                let [ia, ib, ic] = mesh.faces[f as usize];
                let [va, vb, vc] = mesh.face_vertices(f as usize);
                let raw = (vb - va).cross(&(vc - va));
                let jn = normalize_jacobian(&raw);
                let dn_draw = jn.transpose() * dn;
                // raw = (vb-va) x (vc-va); d raw/d va = skew(vb-vc)... via
                // d raw = d(vb-va) x (vc-va) + (vb-va) x d(vc-va).
                let e1 = vb - va;
                let e2 = vc - va;
                gr[ia as usize] += (-skew(&e2) + skew(&e1)).transpose() * dn_draw * -1.0;
                gr[ib as usize] += skew(&e2).transpose() * dn_draw * -1.0;
                gr[ic as usize] += (-skew(&e1)).transpose() * dn_draw * -1.0;
            }
        }
    }
    e_normal /= n_pairs as f64;

    for &(a, b) in &adj.edges {
        let d = mesh.vertices[a as usize] - mesh.vertices[b as usize];
        e_edge += d.norm_squared();
        if let Some(gr) = g.as_deref_mut() {
            let s = 2.0 / n_edges as f64;
            gr[a as usize] += d * s;
            gr[b as usize] -= d * s;
        }
    }
    e_edge /= n_edges as f64;

    Ok(ShapeEnergy {
        normal: e_normal,
        edge: e_edge,
    })
}
