//! Procedural two-domain synthetic scenes.
//!
//! Each scene is a ground plane receding toward a horizon, a sky above it,
//! and 3..=12 simple objects (boxes, discs, poles) standing on the ground,
//! rendered back-to-front so closer objects occlude. Depth and class are
//! exact per pixel. Geometry is a pure function of the scene seed; the
//! domain style (palette, illumination, texture frequency, noise) touches
//! the RGB rendering only, so the same seed under two styles yields
//! byte-identical depth and label files with different images. This stands
//! in for a synthetic-to-real appearance shift at desk scale.
//!
//! Monocular depth cues are built in: vertical image position maps to ground
//! distance, object scale shrinks with depth, ground texture compresses with
//! distance, and brightness attenuates with depth (identically across
//! styles).

use std::f64::consts::TAU;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::codec::{write_depth_png, write_label_png, write_rgb_png};
use super::manifest::{
    write_manifest, DatasetManifest, Domain, Sample, Split, SYNTH_CLASS_NAMES,
};
use crate::scalar::derive_seed;
use crate::{Error, Result};

/// Closest renderable depth, meters.
pub const SYNTH_DEPTH_MIN: f64 = 2.0;
/// Sky depth and the far end of the ground plane, meters.
pub const SYNTH_DEPTH_MAX: f64 = 60.0;

const CLASS_SKY: u8 = 0;
const CLASS_GROUND: u8 = 1;
const CLASS_BOX: u8 = 2;
const CLASS_DISC: u8 = 3;
const CLASS_POLE: u8 = 4;

/// Appearance parameters of one domain. Only the RGB rendering reads these.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainStyle {
    pub name: String,
    /// Base color per class, indexed by label value.
    pub palette: [[f64; 3]; 5],
    pub noise_sigma: f64,
    pub illumination_gain: f64,
    pub texture_frequency: f64,
}

impl DomainStyle {
    /// Named presets; the source/target defaults are `bright`/`dusk`.
    pub fn preset(name: &str) -> Result<Self> {
        let (palette, noise_sigma, illumination_gain, texture_frequency) = match name {
            "bright" => (
                [
                    [0.45, 0.70, 0.95],
                    [0.35, 0.50, 0.25],
                    [0.80, 0.30, 0.25],
                    [0.85, 0.75, 0.20],
                    [0.50, 0.50, 0.55],
                ],
                0.02,
                1.0,
                6.0,
            ),
            "dusk" => (
                [
                    [0.80, 0.45, 0.35],
                    [0.28, 0.22, 0.30],
                    [0.42, 0.22, 0.40],
                    [0.30, 0.40, 0.52],
                    [0.22, 0.18, 0.20],
                ],
                0.08,
                0.55,
                14.0,
            ),
            "noir" => (
                [
                    [0.72, 0.72, 0.74],
                    [0.34, 0.34, 0.33],
                    [0.56, 0.55, 0.52],
                    [0.60, 0.62, 0.65],
                    [0.28, 0.28, 0.30],
                ],
                0.12,
                0.80,
                3.0,
            ),
            "acid" => (
                [
                    [0.15, 0.85, 0.50],
                    [0.60, 0.30, 0.70],
                    [0.20, 0.80, 0.90],
                    [0.90, 0.20, 0.60],
                    [0.85, 0.90, 0.10],
                ],
                0.05,
                1.10,
                20.0,
            ),
            other => return Err(Error::Config(format!("unknown style preset {other:?}"))),
        };
        Ok(DomainStyle {
            name: name.to_string(),
            palette,
            noise_sigma,
            illumination_gain,
            texture_frequency,
        })
    }
}

/// Everything needed to render one scene deterministically.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub style: DomainStyle,
}

/// Exact per-pixel render of a scene.
#[derive(Debug, Clone)]
pub struct RenderedScene {
    /// Channel-first `[3, H, W]` bytes.
    pub rgb: Array3<u8>,
    /// Metric meters, dense (every pixel valid).
    pub depth: Array2<f64>,
    /// Class indices into [`SYNTH_CLASS_NAMES`].
    pub labels: Array2<u8>,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Box { w_m: f64, h_m: f64 },
    Disc { r_m: f64 },
    Pole { h_m: f64 },
}

#[derive(Debug, Clone, Copy)]
struct SceneObject {
    shape: Shape,
    depth_m: f64,
    center_x_px: f64,
}

/// Hyperbolic ground-depth profile: `t = 0` at the horizon (far end) and
/// `t = 1` at the bottom row (near end).
fn ground_depth(t: f64) -> f64 {
    SYNTH_DEPTH_MAX / (1.0 + (SYNTH_DEPTH_MAX / SYNTH_DEPTH_MIN - 1.0) * t)
}

/// Inverse of [`ground_depth`], used to find an object's footprint row.
fn ground_t(depth: f64) -> f64 {
    (SYNTH_DEPTH_MAX / depth - 1.0) / (SYNTH_DEPTH_MAX / SYNTH_DEPTH_MIN - 1.0)
}

pub fn render_scene(spec: &SceneSpec) -> Result<RenderedScene> {
    let (h, w) = (spec.height, spec.width);
    if h < 16 || w < 16 {
        return Err(Error::Config(format!("scene size {h}x{w} below the 16x16 minimum")));
    }
    let (hf, wf) = (h as f64, w as f64);
    let focal = hf;

    // Geometry stream: everything that shapes depth/labels comes from here,
    // in a fixed draw order, so styles cannot perturb it.
    let mut geom = ChaCha8Rng::seed_from_u64(spec.seed);
    let horizon = hf * geom.random_range(0.30..0.45);

    let mut depth = Array2::zeros((h, w));
    let mut labels = Array2::zeros((h, w));
    for y in 0..h {
        let yc = y as f64 + 0.5;
        if yc < horizon {
            for x in 0..w {
                depth[(y, x)] = SYNTH_DEPTH_MAX;
                labels[(y, x)] = CLASS_SKY;
            }
        } else {
            let t = (yc - horizon) / (hf - horizon);
            let d = ground_depth(t);
            for x in 0..w {
                depth[(y, x)] = d;
                labels[(y, x)] = CLASS_GROUND;
            }
        }
    }

    let n_objects = geom.random_range(3..=12);
    let mut objects = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let kind = geom.random_range(0..3u8);
        let depth_m = geom.random_range(3.0..50.0);
        let center_x_px = geom.random_range(0.0..wf);
        let shape = match kind {
            0 => Shape::Box {
                w_m: geom.random_range(1.5..5.0),
                h_m: geom.random_range(1.0..4.0),
            },
            1 => Shape::Disc { r_m: geom.random_range(0.8..2.5) },
            _ => Shape::Pole { h_m: geom.random_range(2.0..6.0) },
        };
        objects.push(SceneObject { shape, depth_m, center_x_px });
    }
    // Painter's algorithm: far to near, closer objects overwrite.
    objects.sort_by(|a, b| b.depth_m.total_cmp(&a.depth_m));

    for obj in &objects {
        let z = obj.depth_m;
        let base_y = horizon + ground_t(z) * (hf - horizon);
        let px = |meters: f64| meters * focal / z;
        let paint_rect = |depth: &mut Array2<f64>,
                          labels: &mut Array2<u8>,
                          x0f: f64,
                          x1f: f64,
                          y0f: f64,
                          y1f: f64,
                          class: u8| {
            let x0 = x0f.round().max(0.0) as usize;
            let x1 = (x1f.round().max(0.0) as usize).min(w);
            let y0 = y0f.round().max(0.0) as usize;
            let y1 = (y1f.round().max(0.0) as usize).min(h);
            for y in y0..y1 {
                for x in x0..x1 {
                    depth[(y, x)] = z;
                    labels[(y, x)] = class;
                }
            }
        };
        match obj.shape {
            Shape::Box { w_m, h_m } => {
                let (wp, hp) = (px(w_m), px(h_m));
                paint_rect(
                    &mut depth,
                    &mut labels,
                    obj.center_x_px - wp / 2.0,
                    obj.center_x_px + wp / 2.0,
                    base_y - hp,
                    base_y,
                    CLASS_BOX,
                );
            }
            Shape::Pole { h_m } => {
                let wp = px(0.25).max(1.0);
                paint_rect(
                    &mut depth,
                    &mut labels,
                    obj.center_x_px - wp / 2.0,
                    obj.center_x_px + wp / 2.0,
                    base_y - px(h_m),
                    base_y,
                    CLASS_POLE,
                );
            }
            Shape::Disc { r_m } => {
                let r = px(r_m);
                let cy = base_y - r;
                let y0 = (cy - r).floor().max(0.0) as usize;
                let y1 = ((cy + r).ceil().max(0.0) as usize).min(h);
                let x0 = (obj.center_x_px - r).floor().max(0.0) as usize;
                let x1 = ((obj.center_x_px + r).ceil().max(0.0) as usize).min(w);
                for y in y0..y1 {
                    for x in x0..x1 {
                        let dy = y as f64 + 0.5 - cy;
                        let dx = x as f64 + 0.5 - obj.center_x_px;
                        if dx * dx + dy * dy <= r * r {
                            depth[(y, x)] = z;
                            labels[(y, x)] = CLASS_DISC;
                        }
                    }
                }
            }
        }
    }

    // RGB rendering. The noise field is seeded independently of the style so
    // that style parameters scale its amplitude without re-rolling it.
    let mut noise = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x6e6f_6973_65u64));
    let style = &spec.style;
    let freq = style.texture_frequency;
    let mut rgb = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let class = labels[(y, x)] as usize;
            let d = depth[(y, x)];
            let tex = if class == CLASS_GROUND as usize {
                // World-plane texture: compresses with distance.
                let u = (x as f64 + 0.5 - wf / 2.0) * d / focal;
                1.0 + 0.30
                    * (TAU * freq * u / 40.0).sin()
                    * (TAU * freq * d / 40.0).cos()
            } else {
                let phase = 0.7 * class as f64;
                1.0 + 0.30
                    * (TAU * freq * (x as f64 / wf) + phase).sin()
                    * (TAU * freq * (y as f64 / hf) + phase).cos()
            };
            let shade = 0.55 + 0.45 * (1.0 - d / SYNTH_DEPTH_MAX);
            for ch in 0..3 {
                let n: f64 = noise.sample(rand_distr::StandardNormal);
                let v = style.palette[class][ch] * tex * shade * style.illumination_gain
                    + style.noise_sigma * n;
                rgb[(ch, y, x)] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }

    Ok(RenderedScene { rgb, depth, labels })
}

/// Renders a scene and writes whichever of the three files are requested.
pub fn synth_generate(
    spec: &SceneSpec,
    image_path: &Path,
    depth_path: Option<&Path>,
    semantics_path: Option<&Path>,
) -> Result<()> {
    let scene = render_scene(spec)?;
    write_rgb_png(image_path, &scene.rgb)?;
    if let Some(p) = depth_path {
        write_depth_png(p, &scene.depth)?;
    }
    if let Some(p) = semantics_path {
        write_label_png(p, &scene.labels)?;
    }
    Ok(())
}

/// Parameters of a two-domain dataset generation run.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_per_domain: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub style_source: DomainStyle,
    pub style_target: DomainStyle,
    pub split: Split,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_per_domain: 8,
            seed: 0,
            height: 64,
            width: 64,
            style_source: DomainStyle::preset("bright").expect("builtin"),
            style_target: DomainStyle::preset("dusk").expect("builtin"),
            split: Split::Train,
        }
    }
}

/// Generates `n_per_domain` scenes per domain under `out_dir` and writes
/// `source.txt` / `target.txt` manifests. Source samples get the full
/// triplet; target samples get the image plus an evaluation depth map (kept
/// out of training by the problem statement), and no semantics. Source and
/// target use disjoint scene seeds so the domains differ in content as well
/// as style.
pub fn generate_dataset(
    out_dir: &Path,
    cfg: &SynthConfig,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    if cfg.n_per_domain == 0 {
        return Err(Error::Config("n_per_domain must be at least 1".into()));
    }
    let class_names: Vec<String> = SYNTH_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let mut manifests = Vec::with_capacity(2);
    for (domain, style, salt) in [
        (Domain::Source, &cfg.style_source, 0u64),
        (Domain::Target, &cfg.style_target, 1u64 << 32),
    ] {
        let sub = out_dir.join(domain.as_str());
        for leaf in ["rgb", "depth", "sem"] {
            if domain == Domain::Target && leaf == "sem" {
                continue;
            }
            std::fs::create_dir_all(sub.join(leaf))
                .map_err(|e| Error::io(sub.join(leaf), e))?;
        }
        let prefix = match domain {
            Domain::Source => 's',
            Domain::Target => 't',
        };
        let mut samples = Vec::with_capacity(cfg.n_per_domain);
        for i in 0..cfg.n_per_domain {
            let id = format!("{prefix}{i:06}");
            let rel = |leaf: &str| {
                std::path::PathBuf::from(domain.as_str()).join(leaf).join(format!("{id}.png"))
            };
            let (image, depth) = (rel("rgb"), rel("depth"));
            let semantics = (domain == Domain::Source).then(|| rel("sem"));
            let spec = SceneSpec {
                seed: derive_seed(cfg.seed, salt | i as u64),
                height: cfg.height,
                width: cfg.width,
                style: style.clone(),
            };
            synth_generate(
                &spec,
                &out_dir.join(&image),
                Some(&out_dir.join(&depth)),
                semantics.as_ref().map(|s| out_dir.join(s)).as_deref(),
            )?;
            samples.push(Sample { id, image, depth: Some(depth), semantics, domain });
        }
        let manifest = DatasetManifest {
            root: out_dir.to_path_buf(),
            samples,
            split: cfg.split,
            class_names: class_names.clone(),
        };
        let path = out_dir.join(format!("{}.txt", domain.as_str()));
        write_manifest(&path, &manifest)?;
        manifests.push(path);
    }
    let target = manifests.pop().expect("two manifests");
    let source = manifests.pop().expect("two manifests");
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::load_dataset;

    fn spec(seed: u64, style: &str) -> SceneSpec {
        SceneSpec {
            seed,
            height: 64,
            width: 64,
            style: DomainStyle::preset(style).unwrap(),
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let a = render_scene(&spec(7, "bright")).unwrap();
        let b = render_scene(&spec(7, "bright")).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn style_changes_rgb_only() {
        let a = render_scene(&spec(7, "bright")).unwrap();
        let b = render_scene(&spec(7, "dusk")).unwrap();
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.labels, b.labels);
        assert_ne!(a.rgb, b.rgb);
    }

    #[test]
    fn depth_and_labels_stay_in_range() {
        for seed in 0..6 {
            let s = render_scene(&spec(seed, "bright")).unwrap();
            for &d in s.depth.iter() {
                assert!((SYNTH_DEPTH_MIN..=SYNTH_DEPTH_MAX).contains(&d), "depth {d}");
            }
            assert!(s.labels.iter().all(|&l| l < 5));
        }
    }

    #[test]
    fn every_class_appears_across_seeds() {
        let mut seen = [false; 5];
        for seed in 0..12 {
            let s = render_scene(&spec(seed, "bright")).unwrap();
            for &l in s.labels.iter() {
                seen[l as usize] = true;
            }
        }
        assert_eq!(seen, [true; 5], "classes missing across 12 seeds");
    }

    #[test]
    fn object_pixels_carry_their_own_depth() {
        // Any box/disc/pole pixel must sit strictly nearer than the sky.
        let s = render_scene(&spec(3, "bright")).unwrap();
        for (idx, &l) in s.labels.indexed_iter() {
            if l >= 2 {
                assert!(s.depth[idx] < SYNTH_DEPTH_MAX);
            }
        }
    }

    #[test]
    fn files_are_byte_identical_across_runs() {
        let dir = tempfile::tempdir().unwrap();
        let s = spec(11, "dusk");
        let (i1, d1, l1) =
            (dir.path().join("i1.png"), dir.path().join("d1.png"), dir.path().join("l1.png"));
        let (i2, d2, l2) =
            (dir.path().join("i2.png"), dir.path().join("d2.png"), dir.path().join("l2.png"));
        synth_generate(&s, &i1, Some(&d1), Some(&l1)).unwrap();
        synth_generate(&s, &i2, Some(&d2), Some(&l2)).unwrap();
        for (a, b) in [(i1, i2), (d1, d2), (l1, l2)] {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
    }

    #[test]
    fn dataset_generation_writes_the_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_per_domain: 4, seed: 5, ..SynthConfig::default() };
        let (src, tgt) = generate_dataset(dir.path(), &cfg).unwrap();

        let count = |sub: &str| std::fs::read_dir(dir.path().join(sub)).map_or(0, |d| d.count());
        assert_eq!(count("source/rgb"), 4);
        assert_eq!(count("source/depth"), 4);
        assert_eq!(count("source/sem"), 4);
        assert_eq!(count("target/rgb"), 4);
        assert_eq!(count("target/depth"), 4);
        assert!(!dir.path().join("target/sem").exists());

        let sm = load_dataset(&src).unwrap();
        let tm = load_dataset(&tgt).unwrap();
        assert_eq!(sm.len(), 4);
        assert_eq!(tm.len(), 4);
        assert_eq!(sm.num_classes(), 5);
        assert!(tm.samples.iter().all(|s| s.semantics.is_none()));
        assert!(tm.samples.iter().all(|s| s.depth.is_some()));
    }

    #[test]
    fn zero_samples_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig { n_per_domain: 0, ..SynthConfig::default() };
        assert!(generate_dataset(dir.path(), &cfg).is_err());
    }

    #[test]
    fn unknown_preset_is_rejected() {
        assert!(DomainStyle::preset("vaporwave").is_err());
    }
}
