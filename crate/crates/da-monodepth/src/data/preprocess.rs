//! Sample decoding, resizing, augmentation, and batch assembly.
//!
//! Images are bilinearly resized and scaled to [0,1]. Depth and labels are
//! nearest-neighbor resized so no values are invented: zeros in depth maps
//! stay "invalid" and label maps never gain classes. Depths above the cap
//! are clamped to it. Augmentation is a joint horizontal flip plus
//! image-only brightness/contrast jitter, and is meant for training only.

use ndarray::{Array2, Array3, Array4, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Sample};
use crate::nn::resize_bilinear;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy)]
pub struct PreprocessOptions {
    /// Output (height, width); both must be multiples of 32 for the encoder.
    pub out_hw: (usize, usize),
    /// Depth clamp in meters, applied to valid (non-zero) pixels.
    pub depth_cap: f64,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions { out_hw: (192, 640), depth_cap: 80.0 }
    }
}

/// One decoded, resized sample ready for batching.
#[derive(Debug, Clone)]
pub struct PreparedSample<F: Scalar> {
    pub id: String,
    /// `[3, H, W]` in [0,1].
    pub image: Array3<F>,
    /// `[H, W]` metric meters, 0 = invalid.
    pub depth: Option<Array2<F>>,
    /// `[H, W]` class indices, 255 = ignore.
    pub labels: Option<Array2<u8>>,
}

/// Centered nearest-neighbor resize for per-pixel annotations.
fn resize_nearest_2d<T: Copy>(x: &Array2<T>, out_hw: (usize, usize)) -> Array2<T> {
    let (h, w) = x.dim();
    let (oh, ow) = out_hw;
    let pick = |d: usize, n_in: usize, n_out: usize| {
        (((d as f64 + 0.5) * n_in as f64 / n_out as f64) as usize).min(n_in - 1)
    };
    Array2::from_shape_fn((oh, ow), |(y, x_)| x[(pick(y, h, oh), pick(x_, w, ow))])
}

fn resize_image<F: Scalar>(image: Array3<F>, out_hw: (usize, usize)) -> Result<Array3<F>> {
    let out = resize_bilinear(&image.insert_axis(Axis(0)), out_hw)?;
    Ok(out.index_axis_move(Axis(0), 0))
}

/// Decodes and resizes one manifest entry.
pub fn preprocess<F: Scalar>(
    manifest: &DatasetManifest,
    sample: &Sample,
    opts: &PreprocessOptions,
) -> Result<PreparedSample<F>> {
    let (oh, ow) = opts.out_hw;
    if oh % 32 != 0 || ow % 32 != 0 || oh == 0 || ow == 0 {
        return Err(Error::Config(format!(
            "preprocess size {oh}x{ow} must be a positive multiple of 32"
        )));
    }
    let rgb = super::codec::read_rgb_png(manifest.resolve(&sample.image))?;
    let image = rgb.mapv(|v| F::cast(v as f64 / 255.0));
    let image = resize_image(image, opts.out_hw)?;

    let depth = match &sample.depth {
        None => None,
        Some(rel) => {
            let raw = super::codec::read_depth_png(manifest.resolve(rel))?;
            let resized = resize_nearest_2d(&raw, opts.out_hw);
            Some(resized.mapv(|v| F::cast(if v > opts.depth_cap { opts.depth_cap } else { v })))
        }
    };
    let labels = match &sample.semantics {
        None => None,
        Some(rel) => {
            let raw = super::codec::read_label_png(manifest.resolve(rel))?;
            Some(resize_nearest_2d(&raw, opts.out_hw))
        }
    };
    Ok(PreparedSample { id: sample.id.clone(), image, depth, labels })
}

#[derive(Debug, Clone, Copy)]
pub struct AugmentOptions {
    pub hflip_prob: f64,
    /// Multiplicative brightness jitter range.
    pub brightness: (f64, f64),
    /// Contrast jitter range, applied around 0.5.
    pub contrast: (f64, f64),
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions { hflip_prob: 0.5, brightness: (0.8, 1.2), contrast: (0.8, 1.2) }
    }
}

/// Applies the training augmentations in place. The flip is joint across
/// image, depth, and labels; the photometric jitter touches the image only.
/// The RNG is always consumed in the same order, so a fixed seed gives a
/// fixed augmentation sequence.
pub fn augment<F: Scalar>(
    sample: &mut PreparedSample<F>,
    opts: &AugmentOptions,
    rng: &mut ChaCha8Rng,
) {
    let flip = rng.random_range(0.0..1.0) < opts.hflip_prob;
    let b = rng.random_range(opts.brightness.0..=opts.brightness.1);
    let c = rng.random_range(opts.contrast.0..=opts.contrast.1);
    if flip {
        sample.image.invert_axis(Axis(2));
        if let Some(d) = &mut sample.depth {
            d.invert_axis(Axis(1));
        }
        if let Some(l) = &mut sample.labels {
            l.invert_axis(Axis(1));
        }
    }
    if b != 1.0 || c != 1.0 {
        let (b, c, half) = (F::cast(b), F::cast(c), F::cast(0.5));
        sample
            .image
            .mapv_inplace(|v| (((v - half) * c + half) * b).max(F::zero()).min(F::one()));
    }
}

/// A stacked batch. `depths`/`labels` are `Some` only when every member
/// carries that modality.
#[derive(Debug, Clone)]
pub struct Batch<F: Scalar> {
    pub ids: Vec<String>,
    /// `[B, 3, H, W]`.
    pub images: Array4<F>,
    /// `[B, 1, H, W]`, 0 = invalid.
    pub depths: Option<Array4<F>>,
    /// `[B, H, W]`.
    pub labels: Option<Array3<u8>>,
}

/// Loads, preprocesses, optionally augments, and stacks the given manifest
/// entries. Mixed modality within one batch is a data error.
pub fn load_batch<F: Scalar>(
    manifest: &DatasetManifest,
    indices: &[usize],
    opts: &PreprocessOptions,
    augment_with: Option<(&AugmentOptions, &mut ChaCha8Rng)>,
) -> Result<Batch<F>> {
    if indices.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let mut prepared = Vec::with_capacity(indices.len());
    for &i in indices {
        let sample = manifest
            .samples
            .get(i)
            .ok_or_else(|| Error::Data(format!("batch index {i} out of range")))?;
        prepared.push(preprocess::<F>(manifest, sample, opts)?);
    }
    if let Some((aug, rng)) = augment_with {
        for p in &mut prepared {
            augment(p, aug, rng);
        }
    }

    let n = prepared.len();
    let (oh, ow) = opts.out_hw;
    let with_depth = prepared.iter().filter(|p| p.depth.is_some()).count();
    let with_labels = prepared.iter().filter(|p| p.labels.is_some()).count();
    if with_depth != 0 && with_depth != n {
        return Err(Error::Data("batch mixes samples with and without depth".into()));
    }
    if with_labels != 0 && with_labels != n {
        return Err(Error::Data("batch mixes samples with and without labels".into()));
    }

    let mut images = Array4::zeros((n, 3, oh, ow));
    let mut depths = (with_depth == n).then(|| Array4::zeros((n, 1, oh, ow)));
    let mut labels = (with_labels == n).then(|| Array3::zeros((n, oh, ow)));
    let mut ids = Vec::with_capacity(n);
    for (bi, p) in prepared.into_iter().enumerate() {
        images.index_axis_mut(Axis(0), bi).assign(&p.image);
        if let Some(stack) = &mut depths {
            stack
                .index_axis_mut(Axis(0), bi)
                .index_axis_move(Axis(0), 0)
                .assign(&p.depth.expect("checked above"));
        }
        if let Some(stack) = &mut labels {
            stack.index_axis_mut(Axis(0), bi).assign(&p.labels.expect("checked above"));
        }
        ids.push(p.id);
    }
    Ok(Batch { ids, images, depths, labels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    use crate::data::codec::{write_depth_png, write_label_png, write_rgb_png};
    use crate::data::manifest::{load_dataset, Domain};

    fn tiny_dataset(dir: &Path, hw: (usize, usize)) -> DatasetManifest {
        let (h, w) = hw;
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let rgb = Array3::from_shape_fn((3, h, w), |_| rng.random::<u8>());
        let mut depth = Array2::from_shape_fn((h, w), |_| rng.random_range(1.0..100.0));
        // Invalid block wide enough that any centered nearest resize samples it.
        depth.slice_mut(ndarray::s![0..2, 0..2]).fill(0.0);
        depth[(h - 1, w - 1)] = 200.0; // above cap
        let labels = Array2::from_shape_fn((h, w), |_| rng.random_range(0..5u8));
        write_rgb_png(dir.join("i.png"), &rgb).unwrap();
        write_depth_png(dir.join("d.png"), &depth).unwrap();
        write_label_png(dir.join("s.png"), &labels).unwrap();
        std::fs::write(
            dir.join("m.txt"),
            "# classes = sky,ground,box,disc,pole\ns0, i.png, d.png, s.png, source\n",
        )
        .unwrap();
        load_dataset(dir.join("m.txt")).unwrap()
    }

    #[test]
    fn resize_caps_depth_and_preserves_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path(), (64, 64));
        let opts = PreprocessOptions { out_hw: (32, 32), depth_cap: 80.0 };
        let p: PreparedSample<f64> = preprocess(&m, &m.samples[0], &opts).unwrap();
        assert_eq!(p.image.dim(), (3, 32, 32));
        let d = p.depth.unwrap();
        assert_eq!(d.dim(), (32, 32));
        assert_eq!(d[(0, 0)], 0.0, "invalid pixel must survive nearest resize");
        assert_eq!(d[(31, 31)], 80.0, "cap applies");
        assert!(p.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn kitti_shaped_input_resizes_to_default_size() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = Array3::zeros((3, 375, 1242));
        write_rgb_png(dir.path().join("i.png"), &rgb).unwrap();
        std::fs::write(dir.path().join("m.txt"), "t0, i.png, -, -, target\n").unwrap();
        let m = load_dataset(dir.path().join("m.txt")).unwrap();
        let p: PreparedSample<f32> =
            preprocess(&m, &m.samples[0], &PreprocessOptions::default()).unwrap();
        assert_eq!(p.image.dim(), (3, 192, 640));
        assert!(p.depth.is_none() && p.labels.is_none());
    }

    #[test]
    fn same_size_preprocess_is_identity_up_to_float_conversion() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path(), (64, 64));
        let opts = PreprocessOptions { out_hw: (64, 64), depth_cap: 80.0 };
        let p: PreparedSample<f64> = preprocess(&m, &m.samples[0], &opts).unwrap();
        let rgb = crate::data::codec::read_rgb_png(m.resolve(&m.samples[0].image)).unwrap();
        for ((a, &b), _) in p.image.iter().zip(rgb.iter()).zip(0..) {
            assert_eq!(*a, b as f64 / 255.0);
        }
        let labels = crate::data::codec::read_label_png(m.resolve(
            m.samples[0].semantics.as_ref().unwrap(),
        ))
        .unwrap();
        assert_eq!(p.labels.unwrap(), labels);
    }

    #[test]
    fn label_resize_never_invents_classes() {
        let mut labels = Array2::zeros((10, 10));
        labels[(3, 3)] = 4u8;
        labels[(7, 2)] = 2;
        let small = resize_nearest_2d(&labels, (4, 4));
        let inputs: std::collections::HashSet<u8> = labels.iter().copied().collect();
        assert!(small.iter().all(|v| inputs.contains(v)));
    }

    #[test]
    fn non_multiple_of_32_output_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path(), (64, 64));
        let opts = PreprocessOptions { out_hw: (60, 60), depth_cap: 80.0 };
        assert!(preprocess::<f32>(&m, &m.samples[0], &opts).is_err());
    }

    #[test]
    fn flip_is_joint_and_jitter_is_image_only() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_dataset(dir.path(), (64, 64));
        let opts = PreprocessOptions { out_hw: (64, 64), depth_cap: 80.0 };
        let base: PreparedSample<f64> = preprocess(&m, &m.samples[0], &opts).unwrap();

        let mut flipped = base.clone();
        let aug = AugmentOptions { hflip_prob: 1.0, brightness: (1.0, 1.0), contrast: (1.0, 1.0) };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        augment(&mut flipped, &aug, &mut rng);
        let d0 = base.depth.as_ref().unwrap();
        let d1 = flipped.depth.as_ref().unwrap();
        let l0 = base.labels.as_ref().unwrap();
        let l1 = flipped.labels.as_ref().unwrap();
        for y in 0..64 {
            for x in 0..64 {
                assert_eq!(base.image[(0, y, x)], flipped.image[(0, y, 63 - x)]);
                assert_eq!(d0[(y, x)], d1[(y, 63 - x)]);
                assert_eq!(l0[(y, x)], l1[(y, 63 - x)]);
            }
        }

        let mut jittered = base.clone();
        let aug = AugmentOptions { hflip_prob: 0.0, brightness: (1.2, 1.2), contrast: (1.0, 1.0) };
        augment(&mut jittered, &aug, &mut rng);
        assert_eq!(jittered.depth.as_ref().unwrap(), d0, "depth untouched by jitter");
        assert_eq!(jittered.labels.as_ref().unwrap(), l0, "labels untouched by jitter");
        assert!(jittered.image.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_ne!(jittered.image, base.image);
    }

    #[test]
    fn batches_stack_in_index_order() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = crate::data::synth::SynthConfig {
            n_per_domain: 3,
            seed: 9,
            ..Default::default()
        };
        let (src, _) = crate::data::synth::generate_dataset(dir.path(), &cfg).unwrap();
        let m = load_dataset(&src).unwrap();
        let opts = PreprocessOptions { out_hw: (64, 64), depth_cap: 80.0 };
        let batch: Batch<f32> = load_batch(&m, &[2, 0], &opts, None).unwrap();
        assert_eq!(batch.ids, vec!["s000002", "s000000"]);
        assert_eq!(batch.images.dim(), (2, 3, 64, 64));
        assert_eq!(batch.depths.as_ref().unwrap().dim(), (2, 1, 64, 64));
        assert_eq!(batch.labels.as_ref().unwrap().dim(), (2, 64, 64));
        assert_eq!(m.samples[0].domain, Domain::Source);

        let single: Batch<f32> = load_batch(&m, &[0], &opts, None).unwrap();
        let joint = batch.images.index_axis(Axis(0), 1);
        assert_eq!(joint, single.images.index_axis(Axis(0), 0));
    }
}
