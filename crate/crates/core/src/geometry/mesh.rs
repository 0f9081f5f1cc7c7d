//! Triangle meshes and the mesh-space losses: center/scale alignment,
//! uniform Laplacian smoothing, and landmark matching. Every loss returns
//! its analytic gradient with respect to the vertices it touches.

use crate::error::{Error, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

/// Lattice edge a surface vertex was born on (global lattice vertex ids,
/// `a < b`). Lets callers chain gradients from mesh vertices back to the
/// scalar field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridEdge {
    pub a: usize,
    pub b: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    /// For extracted surfaces: the lattice edge each vertex lies on.
    pub provenance: Option<Vec<GridEdge>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[usize; 3]>) -> Self {
        TriangleMesh {
            vertices,
            triangles,
            provenance: None,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn triangle_area(&self, t: &[usize; 3]) -> f64 {
        let [a, b, c] = *t;
        0.5 * (self.vertices[b] - self.vertices[a])
            .cross(&(self.vertices[c] - self.vertices[a]))
            .norm()
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.vertices {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::NonFinite { context: "mesh vertices" });
            }
        }
        for t in &self.triangles {
            if t.iter().any(|&i| i >= self.vertices.len()) {
                return Err(Error::invalid(format!(
                    "triangle {t:?} references a vertex outside 0..{}",
                    self.vertices.len()
                )));
            }
            if self.triangle_area(t) <= 1e-12 {
                return Err(Error::invalid(format!("triangle {t:?} is degenerate")));
            }
        }
        if let Some(p) = &self.provenance {
            if p.len() != self.vertices.len() {
                return Err(Error::ShapeMismatch {
                    context: "mesh provenance length",
                    expected: self.vertices.len(),
                    actual: p.len(),
                });
            }
        }
        Ok(())
    }

    /// True when every undirected edge borders exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        if self.triangles.is_empty() {
            return false;
        }
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts.values().all(|&c| c == 2)
    }

    /// Per-vertex neighbor lists from triangle connectivity, ascending.
    pub fn vertex_adjacency(&self) -> Vec<Vec<usize>> {
        let mut sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.vertices.len()];
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                sets[a].insert(b);
                sets[b].insert(a);
            }
        }
        sets.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}

/// Vertex mean and mean distance from it, the two summary statistics the
/// alignment loss compares.
pub fn mesh_center_scale(mesh: &TriangleMesh) -> Result<(Vector3<f64>, f64)> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot take center of an empty mesh"));
    }
    let m = mesh.vertices.len() as f64;
    let center = mesh.vertices.iter().sum::<Vector3<f64>>() / m;
    let scale = mesh.vertices.iter().map(|v| (v - center).norm()).sum::<f64>() / m;
    Ok((center, scale))
}

/// Squared center gap plus squared scale gap between a fixed prior mesh and
/// the predicted mesh, with the gradient with respect to every predicted
/// vertex (the chain runs through both the mean and the mean distance).
pub fn mesh_alignment_loss(prior: &TriangleMesh, pred: &TriangleMesh) -> Result<(f64, Vec<Vector3<f64>>)> {
    let (c_prior, s_prior) = mesh_center_scale(prior)?;
    let (c_pred, s_pred) = mesh_center_scale(pred)?;
    let loss = (c_pred - c_prior).norm_squared() + (s_pred - s_prior) * (s_pred - s_prior);

    let m = pred.vertices.len() as f64;
    let dc = (c_pred - c_prior) * (2.0 / m);
    let ds = 2.0 * (s_pred - s_prior);

    // Unit directions from the center; a vertex sitting exactly on the
    // center has no defined direction and contributes the zero subgradient.
    let units: Vec<Vector3<f64>> = pred
        .vertices
        .iter()
        .map(|v| {
            let d = v - c_pred;
            let n = d.norm();
            if n > 0.0 {
                d / n
            } else {
                Vector3::zeros()
            }
        })
        .collect();
    let mean_unit = units.iter().sum::<Vector3<f64>>() / m;

    let grads = units
        .iter()
        .map(|u| dc + (u - mean_unit) * (ds / m))
        .collect();
    Ok((loss, grads))
}

/// Uniform-Laplacian smoothness: per vertex, the gap between it and its
/// neighbor average, squared and averaged over the mesh.
#[derive(Clone, Debug)]
pub struct LaplacianLoss {
    pub loss: f64,
    pub gradients: Vec<Vector3<f64>>,
    /// Vertices with no neighbors; they contribute zero to the loss.
    pub isolated: Vec<usize>,
}

pub fn laplacian_loss(mesh: &TriangleMesh) -> Result<LaplacianLoss> {
    if mesh.is_empty() {
        return Err(Error::invalid("cannot take laplacian of an empty mesh"));
    }
    let adjacency = mesh.vertex_adjacency();
    let m = mesh.vertices.len() as f64;
    let mut deltas = vec![Vector3::zeros(); mesh.vertices.len()];
    let mut isolated = Vec::new();
    let mut loss = 0.0;
    for (v, neigh) in adjacency.iter().enumerate() {
        if neigh.is_empty() {
            isolated.push(v);
            continue;
        }
        let mean = neigh.iter().map(|&j| mesh.vertices[j]).sum::<Vector3<f64>>() / neigh.len() as f64;
        let delta = mean - mesh.vertices[v];
        loss += delta.norm_squared();
        deltas[v] = delta;
    }
    loss /= m;

    let mut gradients = vec![Vector3::zeros(); mesh.vertices.len()];
    for (v, neigh) in adjacency.iter().enumerate() {
        if neigh.is_empty() {
            continue;
        }
        gradients[v] -= deltas[v] * (2.0 / m);
        let share = 2.0 / (m * neigh.len() as f64);
        for &j in neigh {
            gradients[j] += deltas[v] * share;
        }
    }
    Ok(LaplacianLoss {
        loss,
        gradients,
        isolated,
    })
}

/// Mean squared distance between paired points, with gradients for the
/// predicted side.
pub fn landmark_loss(pred: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<(f64, Vec<Vector3<f64>>)> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            context: "landmark count",
            expected: target.len(),
            actual: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("landmark sets must be nonempty"));
    }
    let k = pred.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        let d = p - t;
        loss += d.norm_squared();
        grads.push(d * (2.0 / k));
    }
    Ok((loss / k, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tetra() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
    }

    fn random_cloud_mesh(rng: &mut impl Rng, m: usize) -> TriangleMesh {
        TriangleMesh::new(
            (0..m)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
            Vec::new(),
        )
    }

    #[test]
    fn center_scale_on_symmetric_pair() {
        let mesh = TriangleMesh::new(
            vec![Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)],
            Vec::new(),
        );
        let (c, s) = mesh_center_scale(&mesh).unwrap();
        assert!(c.norm() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);

        let single = TriangleMesh::new(vec![Vector3::new(0.3, 0.2, 0.1)], Vec::new());
        let (c, s) = mesh_center_scale(&single).unwrap();
        assert_eq!(c, Vector3::new(0.3, 0.2, 0.1));
        assert_eq!(s, 0.0);
    }

    #[test]
    fn center_scale_translation_equivariance() {
        let mut rng = crate::math::seeded_rng(31);
        let mesh = random_cloud_mesh(&mut rng, 40);
        let (c, s) = mesh_center_scale(&mesh).unwrap();
        let t = Vector3::new(0.4, -1.2, 0.8);
        let moved = TriangleMesh::new(mesh.vertices.iter().map(|v| v + t).collect(), Vec::new());
        let (c2, s2) = mesh_center_scale(&moved).unwrap();
        assert!((c2 - c - t).norm() < 1e-12);
        assert!((s2 - s).abs() < 1e-12);
    }

    #[test]
    fn alignment_loss_cases() {
        let mut rng = crate::math::seeded_rng(32);
        let prior = random_cloud_mesh(&mut rng, 25);

        let (loss, grads) = mesh_alignment_loss(&prior, &prior).unwrap();
        assert!(loss.abs() < 1e-15);
        assert!(grads.iter().all(|g| g.norm() < 1e-12));

        let translated = TriangleMesh::new(
            prior.vertices.iter().map(|v| v + Vector3::new(1.0, 0.0, 0.0)).collect(),
            Vec::new(),
        );
        let (loss, _) = mesh_alignment_loss(&prior, &translated).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);

        let pair = TriangleMesh::new(
            vec![Vector3::new(-1.0, 0.0, 0.0), Vector3::new(1.0, 0.0, 0.0)],
            Vec::new(),
        );
        let doubled = TriangleMesh::new(
            vec![Vector3::new(-2.0, 0.0, 0.0), Vector3::new(2.0, 0.0, 0.0)],
            Vec::new(),
        );
        let (loss, _) = mesh_alignment_loss(&pair, &doubled).unwrap();
        assert!((loss - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_loss_permutation_and_joint_translation_invariance() {
        let mut rng = crate::math::seeded_rng(33);
        let prior = random_cloud_mesh(&mut rng, 15);
        let pred = random_cloud_mesh(&mut rng, 12);
        let (base, _) = mesh_alignment_loss(&prior, &pred).unwrap();

        let mut shuffled = pred.vertices.clone();
        shuffled.reverse();
        let (permuted, _) = mesh_alignment_loss(&prior, &TriangleMesh::new(shuffled, Vec::new())).unwrap();
        assert!((base - permuted).abs() < 1e-12);

        let t = Vector3::new(0.3, 0.3, -0.6);
        let prior_t = TriangleMesh::new(prior.vertices.iter().map(|v| v + t).collect(), Vec::new());
        let pred_t = TriangleMesh::new(pred.vertices.iter().map(|v| v + t).collect(), Vec::new());
        let (moved, _) = mesh_alignment_loss(&prior_t, &pred_t).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn alignment_gradient_matches_finite_differences() {
        let mut rng = crate::math::seeded_rng(34);
        let prior = random_cloud_mesh(&mut rng, 9);
        let pred = random_cloud_mesh(&mut rng, 7);
        let (_, grads) = mesh_alignment_loss(&prior, &pred).unwrap();
        let h = 1e-5;
        for (k, grad) in grads.iter().enumerate() {
            for axis in 0..3 {
                let mut plus = pred.clone();
                plus.vertices[k][axis] += h;
                let mut minus = pred.clone();
                minus.vertices[k][axis] -= h;
                let (lp, _) = mesh_alignment_loss(&prior, &plus).unwrap();
                let (lm, _) = mesh_alignment_loss(&prior, &minus).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - grad[axis]).abs() / fd.abs().max(grad[axis].abs()).max(1e-8);
                assert!(rel < 1e-4, "vertex {k} axis {axis}: fd {fd} vs {}", grad[axis]);
            }
        }
    }

    #[test]
    fn laplacian_vanishes_at_a_centered_interior_vertex() {
        // Hexagonal fan: the hub sits exactly at its neighbors' mean, so
        // its own delta vanishes and the rim pulls cancel pairwise. The rim
        // vertices still keep the total loss above zero.
        let s = 3.0f64.sqrt() / 2.0;
        let mut verts = vec![Vector3::zeros()];
        verts.extend([
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.5, s, 0.0),
            Vector3::new(-0.5, s, 0.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(-0.5, -s, 0.0),
            Vector3::new(0.5, -s, 0.0),
        ]);
        let triangles: Vec<[usize; 3]> = (0..6).map(|i| [0, 1 + i, 1 + (i + 1) % 6]).collect();
        let mesh = TriangleMesh::new(verts, triangles);

        let adj = mesh.vertex_adjacency();
        let mean = adj[0].iter().map(|&j| mesh.vertices[j]).sum::<Vector3<f64>>() / adj[0].len() as f64;
        assert!(mean.norm() < 1e-15, "hub drifted to {mean:?}");

        let out = laplacian_loss(&mesh).unwrap();
        assert!(out.gradients[0].norm() < 1e-12);
        assert!(out.loss > 0.0);
    }

    #[test]
    fn laplacian_quadratic_in_displacement() {
        // The loss is a quadratic polynomial in any single displacement, so
        // the symmetric second difference isolates the squared term: growing
        // the step from 0.1 to 0.2 must scale it by exactly four.
        let base = tetra();
        let probe = |d: f64| {
            let mut m = base.clone();
            m.vertices[3] += Vector3::new(0.0, 0.0, d);
            laplacian_loss(&m).unwrap().loss
        };
        let l0 = probe(0.0);
        let curv1 = probe(0.1) + probe(-0.1) - 2.0 * l0;
        let curv2 = probe(0.2) + probe(-0.2) - 2.0 * l0;
        assert!(curv1 > 0.0);
        let ratio = curv2 / curv1;
        assert!((ratio - 4.0).abs() < 1e-6, "ratio {ratio}");
    }

    #[test]
    fn laplacian_flags_isolated_vertices() {
        let mut mesh = tetra();
        mesh.vertices.push(Vector3::new(5.0, 5.0, 5.0));
        let with = laplacian_loss(&mesh).unwrap();
        assert_eq!(with.isolated, vec![4]);
        assert_eq!(with.gradients[4], Vector3::zeros());
        let without = laplacian_loss(&tetra()).unwrap();
        // The isolated vertex changes only the averaging mass.
        assert!((with.loss * 5.0 - without.loss * 4.0).abs() < 1e-12);
    }

    #[test]
    fn laplacian_gradient_matches_finite_differences() {
        let mesh = tetra();
        let out = laplacian_loss(&mesh).unwrap();
        let h = 1e-5;
        for k in 0..mesh.vertices.len() {
            for axis in 0..3 {
                let mut plus = mesh.clone();
                plus.vertices[k][axis] += h;
                let mut minus = mesh.clone();
                minus.vertices[k][axis] -= h;
                let lp = laplacian_loss(&plus).unwrap().loss;
                let lm = laplacian_loss(&minus).unwrap().loss;
                let fd = (lp - lm) / (2.0 * h);
                let rel = (fd - out.gradients[k][axis]).abs()
                    / fd.abs().max(out.gradients[k][axis].abs()).max(1e-8);
                assert!(rel < 1e-4);
            }
        }
    }

    #[test]
    fn landmark_loss_cases() {
        let a = vec![Vector3::new(0.1, 0.2, 0.3)];
        let (loss, grads) = landmark_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads[0], Vector3::zeros());

        let pred = vec![Vector3::new(0.3, 0.4, 0.0)];
        let target = vec![Vector3::zeros()];
        let (loss, _) = landmark_loss(&pred, &target).unwrap();
        assert!((loss - 0.25).abs() < 1e-15);

        let pred = vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)];
        let target = vec![Vector3::zeros(), Vector3::zeros()];
        let (loss, _) = landmark_loss(&pred, &target).unwrap();
        assert!((loss - 0.5).abs() < 1e-15);

        assert!(landmark_loss(&pred, &target[..1]).is_err());
    }

    #[test]
    fn landmark_gradient_matches_finite_differences() {
        let mut rng = crate::math::seeded_rng(35);
        let pred: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let target: Vec<Vector3<f64>> = (0..5)
            .map(|_| Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let (_, grads) = landmark_loss(&pred, &target).unwrap();
        let h = 1e-5;
        for k in 0..pred.len() {
            for axis in 0..3 {
                let mut plus = pred.clone();
                plus[k][axis] += h;
                let mut minus = pred.clone();
                minus[k][axis] -= h;
                let (lp, _) = landmark_loss(&plus, &target).unwrap();
                let (lm, _) = landmark_loss(&minus, &target).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - grads[k][axis]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn watertight_detects_closed_and_open() {
        assert!(tetra().is_watertight());
        let mut open = tetra();
        open.triangles.pop();
        assert!(!open.is_watertight());
    }
}
