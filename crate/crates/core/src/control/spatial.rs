//! Uniform hash grid for radius queries over canonical positions.

use nalgebra::Vector3;
use std::collections::HashMap;

/// Hash grid with cubic cells. Radius queries scan the cell neighborhood
/// covering the ball and filter exactly to the Euclidean distance, so the
/// result is independent of the cell size used to build the index.
#[derive(Clone, Debug)]
pub struct SpatialIndex {
    cell: f64,
    cells: HashMap<(i64, i64, i64), Vec<usize>>,
}

fn key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

impl SpatialIndex {
    /// Builds the grid with the given cell edge length (normally the query
    /// radius, so a query touches at most 27 cells).
    pub fn build(positions: &[Vector3<f64>], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            cells.entry(key(p, cell)).or_default().push(i);
        }
        SpatialIndex { cell, cells }
    }

    /// Indices with strict distance < `radius` from `center`, ascending.
    /// `positions` must be the slice the index was built over.
    pub fn query_ball(&self, positions: &[Vector3<f64>], center: Vector3<f64>, radius: f64) -> Vec<usize> {
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = key(&center, self.cell);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &i in bucket {
                            if (positions[i] - center).norm() < radius {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}
