//! Smoothing reparameterization of vertex coordinates: optimize
//! u = (I + lambda L) V instead of V, where L is the combinatorial graph
//! Laplacian. Steps in u spread over neighborhoods when mapped back,
//! which suppresses high-frequency vertex noise during descent.

use nalgebra::Vector3;

use crate::geometry::{GraphLaplacian, TriMesh};
use crate::{Error, Result};

pub const CG_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct SmoothReparam {
    laplacian: GraphLaplacian,
    pub lambda: f64,
}

impl SmoothReparam {
    pub fn new(mesh: &TriMesh, lambda: f64) -> Result<SmoothReparam> {
        Ok(SmoothReparam {
            laplacian: crate::geometry::graph_laplacian(mesh)?,
            lambda,
        })
    }

    fn apply_a(&self, x: &[Vector3<f64>], y: &mut [Vector3<f64>]) {
        self.laplacian.apply(x, y);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = xi + *yi * self.lambda;
        }
    }

    /// u = (I + lambda L) V.
    pub fn to_latent(&self, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        let mut u = vec![Vector3::zeros(); vertices.len()];
        self.apply_a(vertices, &mut u);
        u
    }

    /// V = (I + lambda L)^{-1} u, by conjugate gradients (the operator is
    /// symmetric positive definite).
    pub fn to_vertices(&self, u: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        self.solve(u)
    }

    /// dE/du = (I + lambda L)^{-1} dE/dV.
    pub fn pullback(&self, d_vertices: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        self.solve(d_vertices)
    }

    fn solve(&self, b: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
        let n = b.len();
        let mut x = b.to_vec(); // warm start at b (A ~ I for small lambda*L)
        let mut ax = vec![Vector3::zeros(); n];
        self.apply_a(&x, &mut ax);
        let mut r: Vec<Vector3<f64>> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        let mut p = r.clone();
        let dot = |a: &[Vector3<f64>], b: &[Vector3<f64>]| -> f64 {
            a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
        };
        let bnorm = dot(b, b).sqrt().max(1e-300);
        let mut rr = dot(&r, &r);
        let mut ap = vec![Vector3::zeros(); n];
        let max_iter = 3 * n + 30;
        for _ in 0..max_iter {
            if rr.sqrt() / bnorm < CG_TOLERANCE {
                return Ok(x);
            }
            self.apply_a(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            for i in 0..n {
                x[i] += p[i] * alpha;
                r[i] -= ap[i] * alpha;
            }
            let rr_new = dot(&r, &r);
            let beta = rr_new / rr;
            rr = rr_new;
            for i in 0..n {
                p[i] = r[i] + p[i] * beta;
            }
        }
        if rr.sqrt() / bnorm < CG_TOLERANCE {
            Ok(x)
        } else {
            Err(Error::SolverNonConvergence {
                residual: rr.sqrt() / bnorm,
                iterations: max_iter,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;
    use crate::geometry::rng;

    #[test]
    fn round_trip_identity() {
        let mesh = icosphere(2);
        let rp = SmoothReparam::new(&mesh, 19.0).unwrap();
        let u = rp.to_latent(&mesh.vertices);
        let back = rp.to_vertices(&u).unwrap();
        for (a, b) in back.iter().zip(&mesh.vertices) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn zero_lambda_is_identity() {
        let mesh = icosphere(1);
        let rp = SmoothReparam::new(&mesh, 0.0).unwrap();
        let v = rp.to_vertices(&mesh.vertices).unwrap();
        for (a, b) in v.iter().zip(&mesh.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn solve_matches_dense_oracle() {
        // Dense (I + lambda L) assembled explicitly and solved with LU.
        let mesh = icosphere(1);
        let n = mesh.vertices.len();
        let lambda = 7.0;
        let rp = SmoothReparam::new(&mesh, lambda).unwrap();
        let lap = crate::geometry::graph_laplacian(&mesh).unwrap();
        let mut dense = nalgebra::DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            dense[(i, i)] += lambda * lap.degree[i];
            for k in lap.offsets[i]..lap.offsets[i + 1] {
                dense[(i, lap.neighbors[k] as usize)] -= lambda;
            }
        }
        let b: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                Vector3::new(
                    rng::normal(61, i as u64, 0),
                    rng::normal(61, i as u64, 1),
                    rng::normal(61, i as u64, 2),
                )
            })
            .collect();
        let x = rp.to_vertices(&b).unwrap();
        let lu = dense.lu();
        for c in 0..3 {
            let bc = nalgebra::DVector::from_fn(n, |i, _| b[i][c]);
            let xc = lu.solve(&bc).unwrap();
            for i in 0..n {
                assert!((x[i][c] - xc[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn pullback_is_chain_rule_adjoint() {
        // <dE/dV, dV> == <pullback(dE/dV), du> for dV = A^{-1} du.
        let mesh = icosphere(1);
        let rp = SmoothReparam::new(&mesh, 3.0).unwrap();
        let n = mesh.vertices.len();
        let de: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::new(rng::normal(62, i as u64, 0), 0.3, -0.1))
            .collect();
        let du: Vec<Vector3<f64>> = (0..n)
            .map(|i| Vector3::new(0.1, rng::normal(63, i as u64, 0), 0.2))
            .collect();
        let dv = rp.to_vertices(&du).unwrap();
        let lhs: f64 = de.iter().zip(&dv).map(|(a, b)| a.dot(b)).sum();
        let pb = rp.pullback(&de).unwrap();
        let rhs: f64 = pb.iter().zip(&du).map(|(a, b)| a.dot(b)).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn latent_step_spreads_smoothly() {
        // A single-vertex impulse in u maps to a spatially smooth bump in V:
        // the peak stays at the poked vertex and neighbors move the same way.
        let mesh = icosphere(2);
        let rp = SmoothReparam::new(&mesh, 19.0).unwrap();
        let mut du = vec![Vector3::zeros(); mesh.vertices.len()];
        du[0] = Vector3::new(0.0, 0.0, 1.0);
        let dv = rp.to_vertices(&du).unwrap();
        let peak = dv[0].z;
        assert!(peak > 0.0);
        assert!(dv.iter().all(|d| d.z >= -1e-12));
        let adj = crate::geometry::build_adjacency(&mesh).unwrap();
        for &nb in &adj.vertex_rings[0] {
            let z = dv[nb as usize].z;
            assert!(z > 0.05 * peak && z < peak);
        }
    }
}
