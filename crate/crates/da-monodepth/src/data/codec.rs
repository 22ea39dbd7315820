//! PNG codecs for the on-disk sample formats.
//!
//! Depth maps are 16-bit grayscale PNGs storing `round(depth_m * 256)`, with
//! 0 meaning "no measurement" (the KITTI depth-benchmark convention). That is
//! lossless to ~4 mm below 256 m; larger values saturate. Label maps are
//! 8-bit grayscale PNGs of class indices with 255 reserved for "ignore".
//! Images are ordinary 8-bit RGB PNGs exchanged as `[3, H, W]` arrays.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use ndarray::{Array2, Array3};

use crate::{Error, Result};

/// Meters-to-ticks factor of the depth codec.
pub const DEPTH_SCALE: f64 = 256.0;
/// Largest depth the 16-bit codec can represent without saturating.
pub const MAX_ENCODABLE_DEPTH: f64 = u16::MAX as f64 / DEPTH_SCALE;

fn open(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image { path: path.into(), source })
}

fn save_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image { path: path.into(), source }
}

/// Writes a metric depth map. Non-finite or negative values are rejected;
/// zeros stay zero (invalid); values past the codec ceiling saturate.
pub fn write_depth_png(path: impl AsRef<Path>, depth: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = depth.dim();
    let mut ticks = Vec::with_capacity(h * w);
    for &v in depth.iter() {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Data(format!("depth value {v} not encodable ({})", path.display())));
        }
        ticks.push((v * DEPTH_SCALE).round().min(u16::MAX as f64) as u16);
    }
    let buf = ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w as u32, h as u32, ticks)
        .expect("buffer sized from array");
    buf.save(path).map_err(save_err(path))
}

/// Reads a depth map written by [`write_depth_png`]. Zeros decode to 0.0,
/// meaning "invalid"; everything else is metric meters.
pub fn read_depth_png(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let DynamicImage::ImageLuma16(buf) = open(path)? else {
        return Err(Error::Data(format!(
            "{}: depth maps must be 16-bit grayscale PNG",
            path.display()
        )));
    };
    let (w, h) = buf.dimensions();
    let values: Vec<f64> = buf.into_raw().into_iter().map(|t| t as f64 / DEPTH_SCALE).collect();
    Ok(Array2::from_shape_vec((h as usize, w as usize), values).expect("buffer sized from image"))
}

/// Writes a class-index map (255 = ignore).
pub fn write_label_png(path: impl AsRef<Path>, labels: &Array2<u8>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = labels.dim();
    let buf = ImageBuffer::<Luma<u8>, Vec<u8>>::from_raw(
        w as u32,
        h as u32,
        labels.iter().copied().collect(),
    )
    .expect("buffer sized from array");
    buf.save(path).map_err(save_err(path))
}

/// Reads a class-index map written by [`write_label_png`].
pub fn read_label_png(path: impl AsRef<Path>) -> Result<Array2<u8>> {
    let path = path.as_ref();
    let DynamicImage::ImageLuma8(buf) = open(path)? else {
        return Err(Error::Data(format!(
            "{}: label maps must be 8-bit grayscale PNG",
            path.display()
        )));
    };
    let (w, h) = buf.dimensions();
    Ok(Array2::from_shape_vec((h as usize, w as usize), buf.into_raw())
        .expect("buffer sized from image"))
}

/// Writes an RGB image given channel-first `[3, H, W]` bytes.
pub fn write_rgb_png(path: impl AsRef<Path>, rgb: &Array3<u8>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = rgb.dim();
    if c != 3 {
        return Err(Error::shape("rgb channels", 3usize, c));
    }
    let mut interleaved = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                interleaved.push(rgb[(ch, y, x)]);
            }
        }
    }
    let buf = ImageBuffer::<Rgb<u8>, Vec<u8>>::from_raw(w as u32, h as u32, interleaved)
        .expect("buffer sized from array");
    buf.save(path).map_err(save_err(path))
}

/// Reads any decodable image as channel-first `[3, H, W]` RGB bytes.
pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<Array3<u8>> {
    let path = path.as_ref();
    let buf = open(path)?.into_rgb8();
    let (w, h) = buf.dimensions();
    let raw = buf.into_raw();
    let (h, w) = (h as usize, w as usize);
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                out[(ch, y, x)] = raw[(y * w + x) * 3 + ch];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn depth_round_trip_is_exact_at_tick_resolution() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        // Quantized values survive exactly.
        let depth = Array2::from_shape_fn((5, 7), |_| {
            (rng.random_range(0.0..80.0) * DEPTH_SCALE).round() / DEPTH_SCALE
        });
        write_depth_png(&path, &depth).unwrap();
        let back = read_depth_png(&path).unwrap();
        assert_eq!(depth, back);
    }

    #[test]
    fn depth_quantization_error_is_bounded() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let depth = Array2::from_shape_fn((8, 8), |_| rng.random_range(0.01..200.0));
        write_depth_png(&path, &depth).unwrap();
        let back = read_depth_png(&path).unwrap();
        for (a, b) in depth.iter().zip(back.iter()) {
            assert!((a - b).abs() <= 0.5 / DEPTH_SCALE + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn invalid_zeros_survive_and_ceiling_saturates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let mut depth = Array2::zeros((2, 2));
        depth[(0, 1)] = 655.3;
        depth[(1, 0)] = 80.0;
        write_depth_png(&path, &depth).unwrap();
        let back = read_depth_png(&path).unwrap();
        assert_eq!(back[(0, 0)], 0.0);
        assert_eq!(back[(0, 1)], MAX_ENCODABLE_DEPTH);
        assert_eq!(back[(1, 0)], 80.0);
    }

    #[test]
    fn negative_and_non_finite_depths_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let depth = Array2::from_elem((1, 1), -1.0);
        assert!(write_depth_png(&path, &depth).is_err());
        let depth = Array2::from_elem((1, 1), f64::NAN);
        assert!(write_depth_png(&path, &depth).is_err());
    }

    #[test]
    fn label_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.png");
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut labels = Array2::from_shape_fn((6, 9), |_| rng.random_range(0..5u8));
        labels[(0, 0)] = 255;
        write_label_png(&path, &labels).unwrap();
        assert_eq!(read_label_png(&path).unwrap(), labels);
    }

    #[test]
    fn rgb_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.png");
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let rgb = Array3::from_shape_fn((3, 4, 6), |_| rng.random::<u8>());
        write_rgb_png(&path, &rgb).unwrap();
        assert_eq!(read_rgb_png(&path).unwrap(), rgb);
    }

    #[test]
    fn wrong_bit_depth_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let as_depth = dir.path().join("wrong16.png");
        write_label_png(&as_depth, &Array2::zeros((2, 2))).unwrap();
        assert!(read_depth_png(&as_depth).is_err());

        let as_label = dir.path().join("wrong8.png");
        write_depth_png(&as_label, &Array2::zeros((2, 2))).unwrap();
        assert!(read_label_png(&as_label).is_err());
    }

    #[test]
    fn encoding_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.png");
        let b = dir.path().join("b.png");
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let depth = Array2::from_shape_fn((16, 16), |_| rng.random_range(0.0..60.0));
        write_depth_png(&a, &depth).unwrap();
        write_depth_png(&b, &depth).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
