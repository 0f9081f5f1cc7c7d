//! Deterministic input builders shared by the benchmarks: a random splat
//! cloud, an orbiting camera, and a noisy signed-distance lattice.

use gsavatar_core::math::{seeded_rng, Quat};
use gsavatar_core::render::{Camera, SplatInputs};
use gsavatar_core::SdfGrid;
use nalgebra::Vector3;
use rand::Rng;

/// Owned splat parameters in the decoded form the rasterizer consumes.
pub struct SplatCloud {
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
    pub scales: Vec<Vector3<f64>>,
    pub opacities: Vec<f64>,
    pub colors: Vec<Vector3<f64>>,
}

impl SplatCloud {
    /// `n` seeded splats scattered in a half-unit box around the origin.
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut cloud = SplatCloud {
            positions: Vec::with_capacity(n),
            rotations: Vec::with_capacity(n),
            scales: Vec::with_capacity(n),
            opacities: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        };
        for _ in 0..n {
            cloud
                .positions
                .push(Vector3::from_fn(|_, _| rng.random_range(-0.25..0.25)));
            let raw = Quat::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            cloud.rotations.push(raw.normalized());
            cloud
                .scales
                .push(Vector3::from_fn(|_, _| rng.random_range(0.01..0.05)));
            cloud.opacities.push(rng.random_range(0.1..0.9));
            cloud
                .colors
                .push(Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)));
        }
        cloud
    }

    pub fn inputs(&self) -> SplatInputs<'_> {
        SplatInputs {
            positions: &self.positions,
            rotations: &self.rotations,
            scales: &self.scales,
            opacities: &self.opacities,
            colors: &self.colors,
        }
    }
}

/// Camera two units out on the z axis, looking at the origin.
pub fn orbit_camera(width: usize, height: usize) -> Camera {
    Camera::look_at(
        Vector3::new(0.0, 0.0, 2.0),
        Vector3::zeros(),
        Vector3::new(0.0, 1.0, 0.0),
        1.8 * width as f64,
        1.8 * height as f64,
        width,
        height,
    )
    .unwrap()
}

/// Sphere distance field with seeded per-site noise, the shape the surface
/// extractor sees mid-fit.
pub fn noisy_sphere_grid(resolution: usize) -> SdfGrid {
    let half = Vector3::repeat(0.45);
    let mut grid = SdfGrid::from_fn(resolution, -half, half, 1, |p| p.norm() - 0.3).unwrap();
    let mut rng = seeded_rng(21);
    for s in grid.s.iter_mut() {
        *s += rng.random_range(-0.005..0.005);
    }
    grid
}

/// Seeded point cloud in a half-unit box, for the spatial-query benchmarks.
pub fn scattered_positions(n: usize, seed: u64) -> Vec<Vector3<f64>> {
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| Vector3::from_fn(|_, _| rng.random_range(-0.5..0.5)))
        .collect()
}
