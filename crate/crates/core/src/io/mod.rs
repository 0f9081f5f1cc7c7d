//! File formats and scene plumbing: avatars as JSON, meshes as OBJ or
//! binary PLY, frames and masks as PNG, driver tracks as CSV, pipeline
//! configuration as TOML, and deterministic synthetic scene generation for
//! end-to-end testing.

mod avatar_file;
mod config;
mod image_file;
mod mesh_file;
mod scene;
mod synthetic;

pub use avatar_file::{load_avatar, save_avatar};
pub use config::PipelineConfig;
pub use image_file::{load_frame_png, load_mask_png, save_frame_png, save_mask_png};
pub use mesh_file::{load_mesh, save_mesh};
pub use scene::{load_scene, save_scene, SceneBundle, SceneFrame};
pub use synthetic::{make_synthetic_scene, SyntheticShape, SyntheticSpec, SyntheticTruth};
