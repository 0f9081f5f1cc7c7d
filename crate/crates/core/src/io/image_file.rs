//! Frames and masks as 8-bit PNG. Color frames store straight (not
//! premultiplied) RGB with coverage in the alpha channel; masks store one
//! gray channel. Values quantize by rounding to the nearest of 256 levels,
//! so any value already on that lattice round-trips exactly.

use crate::error::{Error, Result};
use crate::render::Frame;
use std::path::Path;

fn q8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn save_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    frame.validate()?;
    let (w, h) = (frame.width as u32, frame.height as u32);
    let img = image::RgbaImage::from_fn(w, h, |x, y| {
        let p = (y as usize * frame.width + x as usize) * 3;
        image::Rgba([
            q8(frame.rgb[p]),
            q8(frame.rgb[p + 1]),
            q8(frame.rgb[p + 2]),
            q8(frame.alpha[y as usize * frame.width + x as usize]),
        ])
    });
    img.save(path)?;
    Ok(())
}

pub fn load_frame_png(path: &Path) -> Result<Frame> {
    if !path.exists() {
        return Err(Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let img = image::open(path)?.to_rgba8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut frame = Frame::new(w, h);
    for (x, y, px) in img.enumerate_pixels() {
        let p = (y as usize * w + x as usize) * 3;
        frame.rgb[p] = px.0[0] as f64 / 255.0;
        frame.rgb[p + 1] = px.0[1] as f64 / 255.0;
        frame.rgb[p + 2] = px.0[2] as f64 / 255.0;
        frame.alpha[y as usize * w + x as usize] = px.0[3] as f64 / 255.0;
    }
    Ok(frame)
}

pub fn save_mask_png(mask: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    if mask.len() != width * height {
        return Err(Error::ShapeMismatch {
            context: "mask length",
            expected: width * height,
            actual: mask.len(),
        });
    }
    let img = image::GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([q8(mask[y as usize * width + x as usize])])
    });
    img.save(path)?;
    Ok(())
}

/// Returns the mask values with the image size.
pub fn load_mask_png(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    if !path.exists() {
        return Err(Error::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut mask = vec![0.0; w * h];
    for (x, y, px) in img.enumerate_pixels() {
        mask[y as usize * w + x as usize] = px.0[0] as f64 / 255.0;
    }
    Ok((mask, w, h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::seeded_rng;
    use rand::Rng;

    #[test]
    fn quantized_frames_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.png");
        let mut rng = seeded_rng(21);
        let mut frame = Frame::new(9, 6);
        for v in frame.rgb.iter_mut().chain(frame.alpha.iter_mut()) {
            *v = rng.random_range(0..=255u16) as f64 / 255.0;
        }
        save_frame_png(&frame, &path).unwrap();
        let loaded = load_frame_png(&path).unwrap();
        assert_eq!(frame.rgb, loaded.rgb);
        assert_eq!(frame.alpha, loaded.alpha);
    }

    #[test]
    fn quantization_rounds_to_nearest_level() {
        assert_eq!(q8(0.0), 0);
        assert_eq!(q8(1.0), 255);
        assert_eq!(q8(0.5), 128);
        assert_eq!(q8(1.0 / 255.0), 1);
        assert_eq!(q8(0.4 / 255.0), 0);
        assert_eq!(q8(0.6 / 255.0), 1);
        assert_eq!(q8(-3.0), 0);
        assert_eq!(q8(7.0), 255);
    }

    #[test]
    fn masks_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.png");
        let mask: Vec<f64> = (0..48).map(|i| (i * 5 % 256) as f64 / 255.0).collect();
        save_mask_png(&mask, 8, 6, &path).unwrap();
        let (loaded, w, h) = load_mask_png(&path).unwrap();
        assert_eq!((w, h), (8, 6));
        assert_eq!(mask, loaded);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_frame_png(Path::new("/nonexistent/frame.png")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/frame.png"));
    }
}
