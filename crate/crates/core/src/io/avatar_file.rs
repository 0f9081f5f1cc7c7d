//! Fitted avatars on disk: the canonical Gaussian set and its residual
//! field bank in one JSON document. Numbers serialize through shortest
//! round-trip formatting, so every f64 survives save/load bitwise.
//!
//! Rotations are stored exactly as held: fitting leaves base rotations
//! unnormalized (deformation normalizes on evaluation), so the loader
//! checks shapes and finiteness but not unit norms.

use crate::avatar::{GaussianSet, ResidualFieldBank};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

const FORMAT: &str = "gaussian-head-avatar";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct AvatarFile {
    format: String,
    version: u32,
    gaussians: GaussianSet,
    bank: ResidualFieldBank,
}

pub fn save_avatar(gaussians: &GaussianSet, bank: &ResidualFieldBank, path: &Path) -> Result<()> {
    bank.check_n(gaussians.len())?;
    check_shapes(gaussians)?;
    let doc = AvatarFile {
        format: FORMAT.to_string(),
        version: VERSION,
        gaussians: gaussians.clone(),
        bank: bank.clone(),
    };
    let text = serde_json::to_string_pretty(&doc)?;
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_avatar(path: &Path) -> Result<(GaussianSet, ResidualFieldBank)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let doc: AvatarFile = serde_json::from_str(&text)?;
    if doc.format != FORMAT {
        return Err(Error::BadContainer {
            message: format!("format {:?}, expected {FORMAT:?}", doc.format),
        });
    }
    if doc.version != VERSION {
        return Err(Error::BadContainer {
            message: format!("version {}, supported version {VERSION}", doc.version),
        });
    }
    check_shapes(&doc.gaussians)?;
    doc.bank.check_n(doc.gaussians.len())?;
    Ok((doc.gaussians, doc.bank))
}

fn check_shapes(g: &GaussianSet) -> Result<()> {
    let n = g.positions.len();
    for (what, len, expected) in [
        ("features", g.features.len(), n * g.d_f),
        ("rotations", g.rotations.len() * 4, n * 4),
        ("scales", g.scale_logs.len(), n),
        ("opacities", g.opacity_logits.len(), n),
    ] {
        if len != expected {
            return Err(Error::BadContainer {
                message: format!("{what} hold {len} entries, expected {expected}"),
            });
        }
    }
    let finite = g.positions.iter().all(|p| p.iter().all(|v| v.is_finite()))
        && g.features.iter().all(|v| v.is_finite())
        && g.rotations
            .iter()
            .all(|q| q.to_array().iter().all(|v| v.is_finite()))
        && g.scale_logs.iter().all(|s| s.iter().all(|v| v.is_finite()))
        && g.opacity_logits.iter().all(|v| v.is_finite());
    if !finite {
        return Err(Error::BadContainer {
            message: "gaussian set holds non-finite values".into(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::avatar::ResidualFieldBank;
    use crate::math::{seeded_rng, Quat};
    use nalgebra::Vector3;
    use rand::Rng;

    fn sample_avatar() -> (GaussianSet, ResidualFieldBank) {
        let mut rng = seeded_rng(17);
        let n = 6;
        let d_f = 3;
        let gaussians = GaussianSet {
            positions: (0..n)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-1.0..1.0f64),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
            features: (0..n * d_f).map(|_| rng.random_range(-1.0..1.0)).collect(),
            d_f,
            rotations: (0..n)
                .map(|_| {
                    Quat::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    )
                })
                .collect(),
            scale_logs: (0..n).map(|_| Vector3::new(-2.0, -2.1, -1.9)).collect(),
            opacity_logits: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let mut bank = ResidualFieldBank::zeros_linear(n, d_f, 4);
        for (_, attr, kind) in bank.field_names() {
            for v in bank.field_mut(attr, kind).params_mut().iter_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
        (gaussians, bank)
    }

    #[test]
    fn round_trip_is_bitwise_for_f64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("avatar.json");
        let (gaussians, bank) = sample_avatar();
        save_avatar(&gaussians, &bank, &path).unwrap();
        let (g2, b2) = load_avatar(&path).unwrap();
        assert_eq!(gaussians, g2);
        assert_eq!(bank, b2);
    }

    #[test]
    fn non_unit_rotations_are_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("drifted.json");
        let (mut gaussians, bank) = sample_avatar();
        gaussians.rotations[0] = Quat::new(1.7, 0.2, -0.4, 0.1);
        save_avatar(&gaussians, &bank, &path).unwrap();
        let (g2, _) = load_avatar(&path).unwrap();
        assert_eq!(gaussians.rotations[0], g2.rotations[0]);
    }

    #[test]
    fn wrong_format_or_version_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("avatar.json");
        let (gaussians, bank) = sample_avatar();
        save_avatar(&gaussians, &bank, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();

        let renamed = text.replace("gaussian-head-avatar", "something-else");
        std::fs::write(&path, renamed).unwrap();
        assert!(matches!(load_avatar(&path), Err(Error::BadContainer { .. })));

        let reversioned = text.replace("\"version\": 1", "\"version\": 9");
        std::fs::write(&path, reversioned).unwrap();
        assert!(matches!(load_avatar(&path), Err(Error::BadContainer { .. })));
    }

    #[test]
    fn truncated_json_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("avatar.json");
        let (gaussians, bank) = sample_avatar();
        save_avatar(&gaussians, &bank, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(load_avatar(&path).is_err());
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_avatar(Path::new("/nonexistent/avatar.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/avatar.json"));
    }
}
