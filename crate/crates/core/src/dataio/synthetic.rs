//! Fundus-like synthetic images with known lesion masks.
//!
//! Each scene is a vignetted orange disc on black with an optic disc and a
//! few dark vessel curves. Lesions are hard-edged blobs, either bright
//! (exudate-like) or dark (haemorrhage-like). The severity level is
//! `min(lesion_count, 4)`; level 4 scenes carry 4 to 6 lesions.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{write_manifest, ManifestRecord, MAX_LEVEL, NUM_LEVELS};
use super::resample::apportion;
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const DEFAULT_LEVEL_WEIGHTS: [f64; NUM_LEVELS] = [0.35, 0.2, 0.2, 0.13, 0.12];
pub const MAX_LESIONS: usize = 6;
pub const DISC_RADIUS: f32 = 0.46;

const BRIGHT_LESION: [u8; 3] = [250, 235, 130];
const DARK_LESION: [u8; 3] = [45, 8, 4];

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub count: usize,
    pub resolution: u32,
    pub seed: u64,
    pub level_weights: [f64; NUM_LEVELS],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { count: 500, resolution: 64, seed: 0, level_weights: DEFAULT_LEVEL_WEIGHTS }
    }
}

/// A rendered scene together with its ground truth.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub image: RgbImage,
    /// The same scene before lesions were painted.
    pub background: RgbImage,
    /// 255 on lesion pixels, 0 elsewhere.
    pub mask: GrayImage,
    pub lesion_count: usize,
    pub level: u8,
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub records: Vec<ManifestRecord>,
    pub lesion_counts: Vec<usize>,
}

pub fn level_for_count(lesions: usize) -> u8 {
    lesions.min(MAX_LEVEL as usize) as u8
}

/// Paired-eye ids: `1_left`, `1_right`, `2_left`, ...
pub fn synthetic_id(index: usize) -> String {
    format!("{}_{}", index / 2 + 1, if index.is_multiple_of(2) { "left" } else { "right" })
}

/// Levels for `count` images: proportional to `weights`, every level at
/// least once, then shuffled.
pub fn assign_levels(count: usize, weights: &[f64; NUM_LEVELS], seed: u64) -> Result<Vec<u8>> {
    if count < NUM_LEVELS {
        return Err(Error::usage(format!("count must be at least {NUM_LEVELS} to cover every level, got {count}")));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::config("level weights must be non-negative and not all zero"));
    }
    let total: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let mut counts = apportion(&shares, count - NUM_LEVELS);
    counts.iter_mut().for_each(|c| *c += 1);
    let mut levels: Vec<u8> = counts.iter().enumerate().flat_map(|(l, &n)| std::iter::repeat_n(l as u8, n)).collect();
    levels.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 10])));
    Ok(levels)
}

fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn paint_disc(img: &mut RgbImage, cx: f32, cy: f32, r: f32, color: [f32; 3], blend: f32) {
    let (w, h) = img.dimensions();
    let x0 = (cx - r).floor().max(0.0) as u32;
    let y0 = (cy - r).floor().max(0.0) as u32;
    let x1 = ((cx + r).ceil() as u32).min(w - 1);
    let y1 = ((cy + r).ceil() as u32).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
            if d <= r {
                let p = img.get_pixel_mut(x, y);
                let t = blend * (1.0 - (d / r).powi(2)).sqrt();
                for c in 0..3 {
                    p.0[c] = to_u8(lerp(p.0[c] as f32, color[c], t));
                }
            }
        }
    }
}

fn render_background(res: u32, rng: &mut impl Rng) -> RgbImage {
    let s = res as f32;
    let c = (s - 1.0) / 2.0;
    let radius = DISC_RADIUS * s;
    let tint: [f32; 3] = [rng.random_range(185.0..215.0), rng.random_range(80.0..105.0), rng.random_range(30.0..50.0)];
    let mut img = RgbImage::from_fn(res, res, |x, y| {
        let d = ((x as f32 - c).powi(2) + (y as f32 - c).powi(2)).sqrt() / radius;
        if d > 1.0 {
            Rgb([0, 0, 0])
        } else {
            let shade = 1.0 - 0.35 * d * d;
            Rgb(std::array::from_fn(|k| to_u8(tint[k] * shade)))
        }
    });
    let inside = |x: f32, y: f32| ((x - c).powi(2) + (y - c).powi(2)).sqrt() < radius - 1.0;
    // optic disc
    let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let (ox, oy) = (c + side * 0.45 * radius, c + rng.random_range(-0.1..0.1) * radius);
    paint_disc(&mut img, ox, oy, 0.16 * radius, [245.0, 215.0, 160.0], 0.9);
    // vessels: gently bending rays leaving the optic disc
    let mut vessel = vec![false; (res * res) as usize];
    for _ in 0..4 {
        let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let bend: f32 = rng.random_range(-0.6..0.6);
        let steps = (3.0 * s) as usize;
        for i in 0..steps {
            let t = i as f32 / steps as f32;
            let a = angle + bend * t;
            let (x, y) = (ox + a.cos() * t * 1.6 * radius, oy + a.sin() * t * 1.6 * radius);
            if !inside(x, y) {
                break;
            }
            vessel[(y.round() as u32 * res + x.round() as u32) as usize] = true;
        }
    }
    for (x, y, p) in img.enumerate_pixels_mut() {
        if vessel[(y * res + x) as usize] {
            p.0 = [to_u8(p.0[0] as f32 * 0.7), to_u8(p.0[1] as f32 * 0.45), to_u8(p.0[2] as f32 * 0.5)];
        }
    }
    // mild sensor noise inside the disc
    for (x, y, p) in img.enumerate_pixels_mut() {
        if inside(x as f32, y as f32) {
            for k in 0..3 {
                p.0[k] = to_u8(p.0[k] as f32 + rng.random_range(-4.0..4.0));
            }
        }
    }
    img
}

/// Renders one scene with `lesions` blobs, placed inside the fundus disc,
/// away from the optic disc and from each other.
pub fn render_scene(resolution: u32, lesions: usize, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = render_background(resolution, &mut rng);
    let s = resolution as f32;
    let c = (s - 1.0) / 2.0;
    let radius = DISC_RADIUS * s;
    let mut image = background.clone();
    let mut mask = GrayImage::new(resolution, resolution);
    let mut placed: Vec<(f32, f32, f32)> = Vec::new();
    let mut attempts = 0;
    while placed.len() < lesions {
        attempts += 1;
        let r = rng.random_range(0.045..0.065) * s;
        let rho = rng.random_range(0.0f32..0.72).sqrt() * radius;
        let theta: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let (x, y) = (c + rho * theta.cos(), c + rho * theta.sin());
        let clear = placed.iter().all(|&(px, py, pr)| ((px - x).powi(2) + (py - y).powi(2)).sqrt() > pr + r + 2.0);
        let bright_near = |x: u32, y: u32| background.get_pixel(x, y).0[2] > 110;
        let on_optic = (0..resolution)
            .flat_map(|py| (0..resolution).map(move |px| (px, py)))
            .filter(|&(px, py)| ((px as f32 - x).powi(2) + (py as f32 - y).powi(2)).sqrt() <= r + 1.0)
            .any(|(px, py)| bright_near(px, py));
        if (clear && !on_optic) || attempts > 10_000 {
            placed.push((x, y, r));
        }
    }
    for &(x, y, r) in &placed {
        let color = if rng.random_bool(0.5) { BRIGHT_LESION } else { DARK_LESION };
        let (x0, y0) = ((x - r).floor().max(0.0) as u32, (y - r).floor().max(0.0) as u32);
        let (x1, y1) = (((x + r).ceil() as u32).min(resolution - 1), ((y + r).ceil() as u32).min(resolution - 1));
        for py in y0..=y1 {
            for px in x0..=x1 {
                if ((px as f32 - x).powi(2) + (py as f32 - y).powi(2)).sqrt() <= r {
                    image.put_pixel(px, py, Rgb(color));
                    mask.put_pixel(px, py, Luma([255]));
                }
            }
        }
    }
    SyntheticScene { image, background, mask, lesion_count: lesions, level: level_for_count(lesions) }
}

fn lesions_for_level(level: u8, rng: &mut impl Rng) -> usize {
    if level as usize == MAX_LEVEL as usize {
        rng.random_range(MAX_LEVEL as usize..=MAX_LESIONS)
    } else {
        level as usize
    }
}

/// Scene for image `index` of a dataset generated with `seed`.
pub fn scene_for(index: usize, level: u8, resolution: u32, seed: u64) -> SyntheticScene {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 11, index as u64]));
    let lesions = lesions_for_level(level, &mut rng);
    render_scene(resolution, lesions, rng.random())
}

/// Writes `images/<id>.png`, `masks/<id>.png` and `manifest.csv` under
/// `out_dir`.
pub fn generate_synthetic(config: &SyntheticConfig, out_dir: impl AsRef<Path>) -> Result<SyntheticDataset> {
    if config.resolution < 16 {
        return Err(Error::usage(format!("resolution must be at least 16, got {}", config.resolution)));
    }
    let levels = assign_levels(config.count, &config.level_weights, config.seed)?;
    let root = out_dir.as_ref().to_path_buf();
    let images = root.join("images");
    let masks = root.join("masks");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    let lesion_counts = levels
        .par_iter()
        .enumerate()
        .map(|(i, &level)| -> Result<usize> {
            let scene = scene_for(i, level, config.resolution, config.seed);
            let id = synthetic_id(i);
            scene.image.save(images.join(format!("{id}.png")))?;
            scene.mask.save(masks.join(format!("{id}.png")))?;
            Ok(scene.lesion_count)
        })
        .collect::<Result<Vec<_>>>()?;
    let records: Vec<ManifestRecord> =
        levels.iter().enumerate().map(|(i, &level)| ManifestRecord { image_id: synthetic_id(i), level }).collect();
    let manifest = root.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    Ok(SyntheticDataset { root, manifest, records, lesion_counts })
}

/// Path of the truth mask for `image_id` in a generated dataset.
pub fn mask_path(root: impl AsRef<Path>, image_id: &str) -> PathBuf {
    root.as_ref().join("masks").join(format!("{image_id}.png"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_zero_has_empty_mask() {
        for seed in 0..20 {
            let s = scene_for(seed, 0, 64, 3);
            assert_eq!(s.level, 0);
            assert!(s.mask.pixels().all(|p| p.0[0] == 0));
        }
    }

    #[test]
    fn mask_nonempty_iff_level_positive() {
        for i in 0..60 {
            let level = (i % 5) as u8;
            let s = scene_for(i, level, 64, 9);
            assert_eq!(s.level, level);
            assert_eq!(s.mask.pixels().any(|p| p.0[0] == 255), level > 0);
            if level == 4 {
                assert!((4..=MAX_LESIONS).contains(&s.lesion_count));
            } else {
                assert_eq!(s.lesion_count, level as usize);
            }
        }
    }

    #[test]
    fn lesion_pixels_contrast_with_background() {
        // scan oracle: every mask pixel differs from the lesion-free scene
        for i in 0..40 {
            let s = scene_for(i, 1 + (i % 4) as u8, 64, 21);
            for (x, y, m) in s.mask.enumerate_pixels() {
                if m.0[0] == 255 {
                    let a = s.image.get_pixel(x, y).0;
                    let b = s.background.get_pixel(x, y).0;
                    let diff = (0..3).map(|k| (a[k] as i32 - b[k] as i32).abs()).max().unwrap();
                    assert!(diff >= 30, "scene {i} pixel ({x},{y}) differs by {diff}: {a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn level_histogram_follows_weights() {
        let levels = assign_levels(1000, &DEFAULT_LEVEL_WEIGHTS, 4).unwrap();
        for (l, w) in DEFAULT_LEVEL_WEIGHTS.iter().enumerate() {
            let n = levels.iter().filter(|&&v| v as usize == l).count() as f64;
            assert!((n / 1000.0 - w).abs() < 0.01, "level {l}: {n}");
        }
        let small = assign_levels(5, &DEFAULT_LEVEL_WEIGHTS, 4).unwrap();
        let mut sorted = small.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn too_few_images_is_usage_error() {
        assert!(matches!(assign_levels(4, &DEFAULT_LEVEL_WEIGHTS, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn ids_pair_eyes() {
        assert_eq!(synthetic_id(0), "1_left");
        assert_eq!(synthetic_id(1), "1_right");
        assert_eq!(synthetic_id(4), "3_left");
    }

    #[test]
    fn scenes_are_deterministic() {
        let a = scene_for(7, 3, 64, 5);
        let b = scene_for(7, 3, 64, 5);
        assert_eq!(a.image, b.image);
        assert_eq!(a.mask, b.mask);
    }
}
