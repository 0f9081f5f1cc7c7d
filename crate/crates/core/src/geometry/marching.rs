//! Marching tetrahedra over the fixed lattice decomposition.
//!
//! Inside means s < 0 (s = 0 counts as outside). Surface vertices sit at
//! the linear zero crossing of sign-changing lattice edges and are shared
//! between all tetrahedra touching that edge, so closed surfaces strictly
//! inside the bounds come out watertight. Triangle winding is fixed by the
//! per-tet field gradient (exact for the linear interpolant): normals face
//! the positive-s side.

use super::mesh::{GridEdge, TriangleMesh};
use super::sdf::{SdfGrid, TET_CORNERS};
use nalgebra::{Matrix3, Vector3};
use std::collections::HashMap;

/// Area below which a candidate triangle is discarded as a sliver. Such
/// triangles only arise when a crossing degenerates onto a lattice vertex.
const SLIVER_AREA: f64 = 1e-12;

struct VertexPool<'g> {
    grid: &'g SdfGrid,
    by_edge: HashMap<(usize, usize), usize>,
    vertices: Vec<Vector3<f64>>,
    provenance: Vec<GridEdge>,
}

impl<'g> VertexPool<'g> {
    fn crossing(&mut self, ga: usize, gb: usize) -> usize {
        let (a, b) = (ga.min(gb), ga.max(gb));
        if let Some(&id) = self.by_edge.get(&(a, b)) {
            return id;
        }
        let id = self.vertices.len();
        self.vertices.push(crossing_point(self.grid, a, b));
        self.provenance.push(GridEdge { a, b });
        self.by_edge.insert((a, b), id);
        id
    }
}

/// Zero crossing on the lattice edge (a, b): v_a + s_a / (s_a - s_b) * (v_b - v_a).
pub fn crossing_point(grid: &SdfGrid, a: usize, b: usize) -> Vector3<f64> {
    let sa = grid.s[a];
    let sb = grid.s[b];
    let va = grid.vertex_pos_by_id(a);
    let vb = grid.vertex_pos_by_id(b);
    va + (vb - va) * (sa / (sa - sb))
}

/// Partials of the crossing position with respect to the edge endpoint
/// values (d v / d s_a, d v / d s_b).
pub fn crossing_partials(grid: &SdfGrid, edge: &GridEdge) -> (Vector3<f64>, Vector3<f64>) {
    let sa = grid.s[edge.a];
    let sb = grid.s[edge.b];
    let dv = grid.vertex_pos_by_id(edge.b) - grid.vertex_pos_by_id(edge.a);
    let denom = (sa - sb) * (sa - sb);
    (dv * (-sb / denom), dv * (sa / denom))
}

/// Pushes per-surface-vertex gradients back onto the lattice values: for a
/// mesh produced by [`extract_surface`], accumulates d loss / d s from
/// d loss / d vertex through the zero-crossing formula.
pub fn accumulate_field_gradient(
    grid: &SdfGrid,
    mesh: &TriangleMesh,
    d_vertices: &[Vector3<f64>],
    d_s: &mut [f64],
) {
    let provenance = mesh
        .provenance
        .as_ref()
        .expect("field gradient needs an extracted mesh with provenance");
    for (edge, g) in provenance.iter().zip(d_vertices) {
        let (da, db) = crossing_partials(grid, edge);
        d_s[edge.a] += da.dot(g);
        d_s[edge.b] += db.dot(g);
    }
}

/// Extracts the zero level set as a triangle mesh. An all-one-sign field
/// yields an empty mesh.
pub fn extract_surface(grid: &SdfGrid) -> TriangleMesh {
    let mut pool = VertexPool {
        grid,
        by_edge: HashMap::new(),
        vertices: Vec::new(),
        provenance: Vec::new(),
    };
    let mut triangles: Vec<[usize; 3]> = Vec::new();

    let r = grid.resolution;
    for cz in 0..r {
        for cy in 0..r {
            for cx in 0..r {
                let ids = grid.cell_corner_ids(cx, cy, cz);
                for tet in &TET_CORNERS {
                    let g = [ids[tet[0]], ids[tet[1]], ids[tet[2]], ids[tet[3]]];
                    emit_tet(grid, &g, &mut pool, &mut triangles);
                }
            }
        }
    }

    let mut mesh = TriangleMesh::new(pool.vertices, triangles);
    mesh.provenance = Some(pool.provenance);
    mesh
}

fn emit_tet(grid: &SdfGrid, g: &[usize; 4], pool: &mut VertexPool, triangles: &mut Vec<[usize; 3]>) {
    let mut inside = [false; 4];
    let mut count = 0;
    for k in 0..4 {
        inside[k] = grid.s[g[k]] < 0.0;
        count += inside[k] as usize;
    }
    if count == 0 || count == 4 {
        return;
    }

    let mut ins = [0usize; 3];
    let mut outs = [0usize; 3];
    let (mut ni, mut no) = (0, 0);
    for k in 0..4 {
        if inside[k] {
            ins[ni] = g[k];
            ni += 1;
        } else {
            outs[no] = g[k];
            no += 1;
        }
    }

    let grad = tet_field_gradient(grid, g);
    let mut push = |pool: &mut VertexPool, tri: [usize; 3]| {
        let p0 = pool.vertices[tri[0]];
        let p1 = pool.vertices[tri[1]];
        let p2 = pool.vertices[tri[2]];
        let normal = (p1 - p0).cross(&(p2 - p0));
        if 0.5 * normal.norm() <= SLIVER_AREA {
            return;
        }
        if normal.dot(&grad) < 0.0 {
            triangles.push([tri[0], tri[2], tri[1]]);
        } else {
            triangles.push(tri);
        }
    };

    match count {
        1 => {
            let a = ins[0];
            let tri = [
                pool.crossing(a, outs[0]),
                pool.crossing(a, outs[1]),
                pool.crossing(a, outs[2]),
            ];
            push(pool, tri);
        }
        3 => {
            let o = outs[0];
            let tri = [
                pool.crossing(o, ins[0]),
                pool.crossing(o, ins[1]),
                pool.crossing(o, ins[2]),
            ];
            push(pool, tri);
        }
        2 => {
            let (a, b) = (ins[0], ins[1]);
            let (c, d) = (outs[0], outs[1]);
            // Quad corners in cyclic order: consecutive crossings share a
            // tet vertex, so the polygon is simple.
            let ac = pool.crossing(a, c);
            let ad = pool.crossing(a, d);
            let bd = pool.crossing(b, d);
            let bc = pool.crossing(b, c);
            push(pool, [ac, ad, bd]);
            push(pool, [ac, bd, bc]);
        }
        _ => unreachable!(),
    }
}

/// Constant gradient of the linear interpolant inside one tetrahedron.
fn tet_field_gradient(grid: &SdfGrid, g: &[usize; 4]) -> Vector3<f64> {
    let p0 = grid.vertex_pos_by_id(g[0]);
    let m = Matrix3::from_rows(&[
        (grid.vertex_pos_by_id(g[1]) - p0).transpose(),
        (grid.vertex_pos_by_id(g[2]) - p0).transpose(),
        (grid.vertex_pos_by_id(g[3]) - p0).transpose(),
    ]);
    let ds = Vector3::new(
        grid.s[g[1]] - grid.s[g[0]],
        grid.s[g[2]] - grid.s[g[0]],
        grid.s[g[3]] - grid.s[g[0]],
    );
    m.try_inverse().map(|inv| inv * ds).unwrap_or_else(Vector3::zeros)
}
