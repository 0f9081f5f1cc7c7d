//! Scene bundles: a directory holding target frames, masks, cameras,
//! per-frame driver codes, optional prior mesh and landmarks. The manifest
//! (`scene.json`) carries cameras and file references; driver codes live in
//! a hand-editable `tracks.csv` with one row per frame.

use crate::avatar::{ExpressionParams, PoseParams, RigidTransform};
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;
use crate::io::image_file::{load_frame_png, load_mask_png, save_frame_png, save_mask_png};
use crate::io::mesh_file::{load_mesh, save_mesh};
use crate::math::Quat;
use crate::render::{Camera, Frame};
use crate::train::{Stage1View, Stage2View};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const FORMAT: &str = "gaussian-avatar-scene";
const VERSION: u32 = 1;

/// One target frame with its camera and driver codes.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneFrame {
    pub camera: Camera,
    pub image: Frame,
    /// Foreground coverage in [0, 1], row-major, one value per pixel.
    pub mask: Option<Vec<f64>>,
    pub expression: ExpressionParams,
    pub pose: PoseParams,
    pub head: RigidTransform,
}

/// A full fitting input: frames plus the shared scene-level context.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneBundle {
    pub frames: Vec<SceneFrame>,
    pub prior_mesh: Option<TriangleMesh>,
    /// Landmark target points in world space.
    pub landmarks: Option<Vec<Vector3<f64>>>,
    pub expression_dim: usize,
    pub feature_dim: usize,
    pub background: Vector3<f64>,
}

impl SceneBundle {
    pub fn validate(&self) -> Result<()> {
        if !self.background.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("scene background must be finite"));
        }
        for (i, frame) in self.frames.iter().enumerate() {
            frame.camera.validate()?;
            frame.image.validate()?;
            if frame.camera.width != frame.image.width || frame.camera.height != frame.image.height {
                return Err(Error::invalid(format!(
                    "frame {i}: camera {}x{} does not match image {}x{}",
                    frame.camera.width, frame.camera.height, frame.image.width, frame.image.height
                )));
            }
            if frame.expression.coefficients.len() != self.expression_dim {
                return Err(Error::invalid(format!(
                    "frame {i}: expression has {} coefficients, scene declares {}",
                    frame.expression.coefficients.len(),
                    self.expression_dim
                )));
            }
            if let Some(mask) = &frame.mask {
                if mask.len() != frame.image.width * frame.image.height {
                    return Err(Error::invalid(format!(
                        "frame {i}: mask holds {} values for {} pixels",
                        mask.len(),
                        frame.image.width * frame.image.height
                    )));
                }
            }
        }
        if let Some(mesh) = &self.prior_mesh {
            mesh.validate()?;
        }
        if let Some(points) = &self.landmarks {
            if !points.iter().all(|p| p.iter().all(|v| v.is_finite())) {
                return Err(Error::invalid("landmark targets must be finite"));
            }
        }
        Ok(())
    }

    /// Appearance-stage views: every frame, codes included.
    pub fn stage2_views(&self) -> Vec<Stage2View> {
        self.frames
            .iter()
            .map(|f| Stage2View {
                camera: f.camera.clone(),
                target: f.image.clone(),
                expression: f.expression.clone(),
                pose: f.pose.clone(),
                head: f.head,
            })
            .collect()
    }

    /// Geometry-stage views; every frame must carry a mask.
    pub fn stage1_views(&self) -> Result<Vec<Stage1View>> {
        self.frames
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mask = f.mask.clone().ok_or_else(|| {
                    Error::invalid(format!("frame {i} has no mask; geometry fitting needs one"))
                })?;
                Ok(Stage1View {
                    camera: f.camera.clone(),
                    target: f.image.clone(),
                    mask,
                })
            })
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    expression_dim: usize,
    feature_dim: usize,
    background: Vector3<f64>,
    frames: Vec<ManifestFrame>,
    prior_mesh: Option<String>,
    landmarks: Option<Vec<Vector3<f64>>>,
    tracks: String,
}

#[derive(Serialize, Deserialize)]
struct ManifestFrame {
    camera: Camera,
    image: String,
    mask: Option<String>,
}

fn tracks_header(expression_dim: usize) -> Vec<String> {
    let mut header = vec!["frame".to_string()];
    header.extend((0..expression_dim).map(|i| format!("exp_{i}")));
    header.extend((0..6).map(|i| format!("pose_{i}")));
    for name in ["head_qw", "head_qx", "head_qy", "head_qz", "head_tx", "head_ty", "head_tz"] {
        header.push(name.to_string());
    }
    header
}

fn write_tracks(bundle: &SceneBundle) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(tracks_header(bundle.expression_dim))?;
    for (i, frame) in bundle.frames.iter().enumerate() {
        let mut record = vec![i.to_string()];
        let fmt = |v: f64| format!("{v:.17e}");
        record.extend(frame.expression.coefficients.iter().map(|&v| fmt(v)));
        record.extend(frame.pose.driver().iter().map(|&v| fmt(v)));
        record.extend(frame.head.rotation.to_array().iter().map(|&v| fmt(v)));
        record.extend([frame.head.translation.x, frame.head.translation.y, frame.head.translation.z].map(fmt));
        writer.write_record(&record)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::invalid(format!("flushing tracks: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::invalid(format!("tracks are not utf-8: {e}")))
}

fn read_tracks(
    text: &str,
    expression_dim: usize,
) -> Result<Vec<(ExpressionParams, PoseParams, RigidTransform)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let expected = tracks_header(expression_dim);
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if found != expected {
        return Err(Error::BadContainer {
            message: format!("tracks header {found:?}, expected {expected:?}"),
        });
    }
    let mut rows = Vec::new();
    for (row_index, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != expected.len() {
            return Err(Error::BadContainer {
                message: format!(
                    "tracks row {row_index} holds {} fields, expected {}",
                    record.len(),
                    expected.len()
                ),
            });
        }
        let frame_id: usize = record[0].parse().map_err(|_| Error::BadContainer {
            message: format!("tracks row {row_index}: bad frame id {:?}", &record[0]),
        })?;
        if frame_id != row_index {
            return Err(Error::BadContainer {
                message: format!("tracks row {row_index} is labeled frame {frame_id}"),
            });
        }
        let values: Vec<f64> = record
            .iter()
            .skip(1)
            .map(|field| {
                field.parse::<f64>().map_err(|_| Error::BadContainer {
                    message: format!("tracks row {row_index}: bad number {field:?}"),
                })
            })
            .collect::<Result<_>>()?;
        let (exp, rest) = values.split_at(expression_dim);
        let expression = ExpressionParams {
            coefficients: exp.to_vec(),
        };
        let pose = PoseParams {
            rotation: Vector3::new(rest[0], rest[1], rest[2]),
            translation: Vector3::new(rest[3], rest[4], rest[5]),
        };
        let head = RigidTransform {
            rotation: Quat::new(rest[6], rest[7], rest[8], rest[9]),
            translation: Vector3::new(rest[10], rest[11], rest[12]),
        };
        rows.push((expression, pose, head));
    }
    Ok(rows)
}

/// Writes the bundle as a directory: `scene.json`, `tracks.csv`, one PNG
/// per frame under `frames/`, masks under `masks/`, and the prior mesh as
/// `prior.obj` when present. Output is deterministic byte for byte.
pub fn save_scene(bundle: &SceneBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    let io_err = |p: &Path| {
        let shown = p.display().to_string();
        move |e: std::io::Error| Error::io(shown.clone(), e)
    };
    fs::create_dir_all(dir.join("frames")).map_err(io_err(&dir.join("frames")))?;
    if bundle.frames.iter().any(|f| f.mask.is_some()) {
        fs::create_dir_all(dir.join("masks")).map_err(io_err(&dir.join("masks")))?;
    }

    let mut manifest_frames = Vec::with_capacity(bundle.frames.len());
    for (i, frame) in bundle.frames.iter().enumerate() {
        let image_rel = format!("frames/{i:04}.png");
        save_frame_png(&frame.image, &dir.join(&image_rel))?;
        let mask_rel = match &frame.mask {
            Some(mask) => {
                let rel = format!("masks/{i:04}.png");
                save_mask_png(mask, frame.image.width, frame.image.height, &dir.join(&rel))?;
                Some(rel)
            }
            None => None,
        };
        manifest_frames.push(ManifestFrame {
            camera: frame.camera.clone(),
            image: image_rel,
            mask: mask_rel,
        });
    }

    let prior_rel = match &bundle.prior_mesh {
        Some(mesh) => {
            save_mesh(mesh, &dir.join("prior.obj"))?;
            Some("prior.obj".to_string())
        }
        None => None,
    };

    let tracks = write_tracks(bundle)?;
    fs::write(dir.join("tracks.csv"), tracks).map_err(io_err(&dir.join("tracks.csv")))?;

    let manifest = Manifest {
        format: FORMAT.to_string(),
        version: VERSION,
        expression_dim: bundle.expression_dim,
        feature_dim: bundle.feature_dim,
        background: bundle.background,
        frames: manifest_frames,
        prior_mesh: prior_rel,
        landmarks: bundle.landmarks.clone(),
        tracks: "tracks.csv".to_string(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("scene.json"), text).map_err(io_err(&dir.join("scene.json")))
}

/// Reads a bundle directory written by [`save_scene`]. Every referenced
/// file must exist; errors name the missing path.
pub fn load_scene(dir: &Path) -> Result<SceneBundle> {
    let manifest_path = dir.join("scene.json");
    let text = fs::read_to_string(&manifest_path)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT {
        return Err(Error::BadContainer {
            message: format!("format {:?}, expected {FORMAT:?}", manifest.format),
        });
    }
    if manifest.version != VERSION {
        return Err(Error::BadContainer {
            message: format!("version {}, supported version {VERSION}", manifest.version),
        });
    }

    let tracks_path = dir.join(&manifest.tracks);
    let tracks_text = fs::read_to_string(&tracks_path)
        .map_err(|e| Error::io(tracks_path.display().to_string(), e))?;
    let rows = read_tracks(&tracks_text, manifest.expression_dim)?;
    if rows.len() != manifest.frames.len() {
        return Err(Error::BadContainer {
            message: format!(
                "tracks hold {} rows for {} frames",
                rows.len(),
                manifest.frames.len()
            ),
        });
    }

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (entry, (expression, pose, head)) in manifest.frames.into_iter().zip(rows) {
        let image = load_frame_png(&dir.join(&entry.image))?;
        let mask = match &entry.mask {
            Some(rel) => {
                let (mask, w, h) = load_mask_png(&dir.join(rel))?;
                if w != image.width || h != image.height {
                    return Err(Error::BadContainer {
                        message: format!(
                            "mask {rel} is {w}x{h}, image is {}x{}",
                            image.width, image.height
                        ),
                    });
                }
                Some(mask)
            }
            None => None,
        };
        frames.push(SceneFrame {
            camera: entry.camera,
            image,
            mask,
            expression,
            pose,
            head,
        });
    }

    let prior_mesh = match &manifest.prior_mesh {
        Some(rel) => Some(load_mesh(&dir.join(rel))?),
        None => None,
    };

    let bundle = SceneBundle {
        frames,
        prior_mesh,
        landmarks: manifest.landmarks,
        expression_dim: manifest.expression_dim,
        feature_dim: manifest.feature_dim,
        background: manifest.background,
    };
    bundle.validate()?;
    Ok(bundle)
}
