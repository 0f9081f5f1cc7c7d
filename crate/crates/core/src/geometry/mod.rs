//! Geometry stage: scalar-field lattice, isosurface extraction, rigid
//! registration, and the mesh losses that constrain the surface during
//! stage-I fitting.

mod icp;
mod marching;
mod mesh;
mod sdf;

pub use icp::{icp_align, IcpConfig};
pub use marching::{accumulate_field_gradient, crossing_partials, crossing_point, extract_surface};
pub use mesh::{
    landmark_loss, laplacian_loss, mesh_alignment_loss, mesh_center_scale, GridEdge, LaplacianLoss,
    TriangleMesh,
};
pub use sdf::{SdfGrid, TET_CORNERS};
