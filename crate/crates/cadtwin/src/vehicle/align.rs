//! Non-rigid alignment of a template mesh to a target point cloud:
//! descent on mean squared vertex-to-cloud distance plus a surface
//! smoothness penalty, with nearest neighbors frozen per iteration and a
//! backtracking line search so the objective trace is monotone.

use nalgebra::Vector3;

use crate::energy::shape_energy;
use crate::geometry::{build_adjacency, Adjacency, TriMesh};
use crate::lidar::NearestGrid;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AlignmentConfig {
    /// Weight of the smoothness penalty.
    pub lambda_shape: f64,
    pub iterations: usize,
    /// Initial line-search step.
    pub step: f64,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            lambda_shape: 0.1,
            iterations: 100,
            step: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlignmentReport {
    /// Objective after each accepted iterate (monotone non-increasing).
    pub trace: Vec<f64>,
    pub final_data_term: f64,
    pub final_shape_term: f64,
}

fn objective(
    vertices: &[Vector3<f64>],
    targets: &[Vector3<f64>],
    mesh: &mut TriMesh,
    adj: &Adjacency,
    lambda: f64,
    grad: Option<&mut [Vector3<f64>]>,
) -> Result<(f64, f64, f64)> {
    let n = vertices.len() as f64;
    let mut data = 0.0;
    for (v, p) in vertices.iter().zip(targets) {
        data += (v - p).norm_squared() / n;
    }
    mesh.vertices.copy_from_slice(vertices);
    match grad {
        Some(g) => {
            for gi in g.iter_mut() {
                *gi = Vector3::zeros();
            }
            let shape = shape_energy(mesh, adj, Some(g))?;
            for (gi, (v, p)) in g.iter_mut().zip(vertices.iter().zip(targets)) {
                *gi = *gi * lambda + (v - p) * (2.0 / n);
            }
            let s = shape.total();
            Ok((data + lambda * s, data, s))
        }
        None => {
            let s = shape_energy(mesh, adj, None)?.total();
            Ok((data + lambda * s, data, s))
        }
    }
}

/// Deforms `template` toward `cloud`. Returns the aligned mesh and the
/// objective trace.
pub fn align_template(
    template: &TriMesh,
    cloud: &[Vector3<f64>],
    config: &AlignmentConfig,
) -> Result<(TriMesh, AlignmentReport)> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    template.validate()?;
    let adj = build_adjacency(template)?;
    let grid = NearestGrid::build(cloud, 0.25);
    let mut mesh = template.clone();
    let mut vertices = template.vertices.clone();
    let mut grad = vec![Vector3::zeros(); vertices.len()];
    let mut step = config.step;
    let mut trace = Vec::with_capacity(config.iterations);
    let mut last = (0.0, 0.0, 0.0);
    for iter in 0..config.iterations {
        // Freeze correspondences for this iteration.
        let targets: Vec<Vector3<f64>> = vertices
            .iter()
            .map(|v| cloud[grid.nearest(v).0])
            .collect();
        let (e0, _, _) = objective(
            &vertices,
            &targets,
            &mut mesh,
            &adj,
            config.lambda_shape,
            Some(&mut grad),
        )?;
        if !e0.is_finite() {
            return Err(Error::NonFiniteEnergy {
                term: "alignment".into(),
                iteration: iter,
            });
        }
        // Backtracking line search against the frozen-correspondence
        // objective; a sufficiently small step along -grad must descend.
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<Vector3<f64>> = vertices
                .iter()
                .zip(&grad)
                .map(|(v, g)| v - g * step)
                .collect();
            let (e1, d1, s1) =
                objective(&trial, &targets, &mut mesh, &adj, config.lambda_shape, None)?;
            if e1.is_finite() && e1 <= e0 {
                vertices = trial;
                last = (e1, d1, s1);
                step *= 1.5;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Gradient too steep for any tried step: stop at the current
            // iterate rather than diverge.
            last = objective(&vertices, &targets, &mut mesh, &adj, config.lambda_shape, None)?;
            trace.push(last.0);
            break;
        }
        trace.push(last.0);
    }
    mesh.vertices = vertices;
    Ok((
        mesh,
        AlignmentReport {
            trace,
            final_data_term: last.1,
            final_shape_term: last.2,
        },
    ))
}
