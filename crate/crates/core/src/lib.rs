//! Core library for expression-driven 3D Gaussian head avatars.
//!
//! The pipeline models a head as a set of anisotropic 3D Gaussians in a
//! canonical space. Per-frame expression and pose codes drive residual
//! deformation fields; a sparse set of strongly-deforming "control"
//! Gaussians propagates motion to its spatial neighborhood; Gaussians that
//! deform hard get split to keep coverage; an SDF lattice supplies a mesh
//! prior for the geometry stage; and a software rasterizer with an analytic
//! backward pass closes the loop for gradient-based fitting.
//!
//! Layout:
//! - [`avatar`]: Gaussian set, driver parameters, residual fields, assembly
//! - [`control`]: control selection, neighborhood propagation, splitting
//! - [`geometry`]: SDF lattice, surface extraction, mesh losses, ICP
//! - [`render`]: projection, alpha compositing, analytic gradients
//! - [`train`]: losses, Adam, metrics, the two fitting stages
//! - [`io`]: file formats (gaussian sets, meshes, frames, configs, scenes)

pub mod avatar;
pub mod control;
pub mod error;
pub mod geometry;
pub mod io;
pub mod math;
pub mod render;
pub mod train;

pub use avatar::{
    AssembledAvatar, ExpressionParams, GaussianSet, PoseParams, ResidualFieldBank, RigidTransform,
};
pub use control::{ControlConfig, SpatialIndex, SplitReport};
pub use error::{Error, Result};
pub use geometry::{SdfGrid, TriangleMesh};
pub use render::{Camera, Frame};
pub use train::{FitTrace, LossWeights, OptimConfig};
