use std::fmt;
use std::path::Path;

use image::imageops::{self, FilterType};
use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixels whose brightest channel exceeds this count as foreground.
pub const FOREGROUND_THRESHOLD: u8 = 10;

/// Square crop window in source-image coordinates; may extend past the
/// image edges, which read as black.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub x0: i64,
    pub y0: i64,
    pub side: u32,
}

/// Per-channel normalization computed over a training split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for ChannelStats {
    fn default() -> Self {
        ChannelStats { mean: [0.0; 3], std: [1.0; 3] }
    }
}

impl ChannelStats {
    /// Population mean and standard deviation of `[3,R,R]` unit-range
    /// images. A zero deviation is replaced by 1 so constant inputs map to 0.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for img in images {
            let plane = img.len() / 3;
            for c in 0..3 {
                for &v in &img.data()[c * plane..(c + 1) * plane] {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            n += plane;
        }
        if n == 0 {
            return Self::default();
        }
        let mut out = Self::default();
        for c in 0..3 {
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            out.mean[c] = mean as f32;
            let std = var.sqrt() as f32;
            out.std[c] = if std > 1e-6 { std } else { 1.0 };
        }
        out
    }

    pub fn standardize(&self, image: &mut Tensor<f32>) {
        let plane = image.len() / 3;
        for (c, chunk) in image.data_mut().chunks_mut(plane).enumerate() {
            for v in chunk {
                *v = (*v - self.mean[c]) / self.std[c];
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        let mut seen = (false, false);
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let key = parts.next();
            let vals: Vec<f32> = parts
                .map(|p| p.parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse { line: i as u64 + 1, message: e.to_string() })?;
            if key.is_none() {
                continue;
            }
            if vals.len() != 3 {
                return Err(Error::Parse { line: i as u64 + 1, message: "expected three channel values".into() });
            }
            match key {
                Some("mean") => {
                    out.mean = [vals[0], vals[1], vals[2]];
                    seen.0 = true;
                }
                Some("std") => {
                    out.std = [vals[0], vals[1], vals[2]];
                    seen.1 = true;
                }
                Some(other) => {
                    return Err(Error::Parse { line: i as u64 + 1, message: format!("unknown key {other:?}") })
                }
                None => {}
            }
        }
        if seen != (true, true) {
            return Err(Error::Parse { line: 0, message: "stats need both mean and std lines".into() });
        }
        Ok(out)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

impl fmt::Display for ChannelStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mean {} {} {}", self.mean[0], self.mean[1], self.mean[2])?;
        writeln!(f, "std {} {} {}", self.std[0], self.std[1], self.std[2])
    }
}

/// Bounding box of foreground pixels, squared up around its center.
pub fn foreground_box(image: &RgbImage) -> Result<CropBox> {
    let (mut x_min, mut y_min, mut x_max, mut y_max) = (u32::MAX, u32::MAX, 0u32, 0u32);
    for (x, y, p) in image.enumerate_pixels() {
        if p.0.iter().max().copied().unwrap_or(0) > FOREGROUND_THRESHOLD {
            x_min = x_min.min(x);
            y_min = y_min.min(y);
            x_max = x_max.max(x);
            y_max = y_max.max(y);
        }
    }
    if x_min == u32::MAX {
        return Err(Error::config("no foreground: image is entirely below the intensity threshold"));
    }
    let w = x_max - x_min + 1;
    let h = y_max - y_min + 1;
    let side = w.max(h);
    Ok(CropBox { x0: x_min as i64 - ((side - w) / 2) as i64, y0: y_min as i64 - ((side - h) / 2) as i64, side })
}

fn crop_with<P: image::Pixel>(
    image: &image::ImageBuffer<P, Vec<P::Subpixel>>,
    b: CropBox,
    fill: P,
) -> image::ImageBuffer<P, Vec<P::Subpixel>> {
    let (w, h) = image.dimensions();
    image::ImageBuffer::from_fn(b.side, b.side, |x, y| {
        let sx = b.x0 + x as i64;
        let sy = b.y0 + y as i64;
        if sx >= 0 && sy >= 0 && (sx as u32) < w && (sy as u32) < h {
            *image.get_pixel(sx as u32, sy as u32)
        } else {
            fill
        }
    })
}

pub fn crop_square(image: &RgbImage, b: CropBox) -> RgbImage {
    crop_with(image, b, Rgb([0, 0, 0]))
}

/// Crops away the dark background; idempotent.
pub fn crop_foreground(image: &RgbImage) -> Result<RgbImage> {
    Ok(crop_square(image, foreground_box(image)?))
}

/// Resizes (bilinear) to `resolution` and scales channels to [0,1], `[3,R,R]`.
pub fn to_unit_tensor(image: &RgbImage, resolution: u32) -> Tensor<f32> {
    let resized;
    let img = if image.dimensions() == (resolution, resolution) {
        image
    } else {
        resized = imageops::resize(image, resolution, resolution, FilterType::Triangle);
        &resized
    };
    let r = resolution as usize;
    let mut data = vec![0.0f32; 3 * r * r];
    for (x, y, p) in img.enumerate_pixels() {
        for c in 0..3 {
            data[c * r * r + y as usize * r + x as usize] = p.0[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![3, r, r], data).expect("shape matches")
}

/// Foreground crop resized to `resolution`, as 8-bit RGB.
pub fn prepare_rgb(image: &RgbImage, resolution: u32) -> Result<RgbImage> {
    let cropped = crop_square(image, foreground_box(image)?);
    if cropped.dimensions() == (resolution, resolution) {
        return Ok(cropped);
    }
    Ok(imageops::resize(&cropped, resolution, resolution, FilterType::Triangle))
}

/// Crop, resize and scale to unit range; returns the crop used.
pub fn prepare_unit(image: &RgbImage, resolution: u32) -> Result<(Tensor<f32>, CropBox)> {
    let b = foreground_box(image)?;
    Ok((to_unit_tensor(&crop_square(image, b), resolution), b))
}

/// Full preprocessing: foreground crop, resize, unit scaling, per-channel
/// standardization.
pub fn preprocess(image: &RgbImage, resolution: u32, stats: &ChannelStats) -> Result<Tensor<f32>> {
    let (mut t, _) = prepare_unit(image, resolution)?;
    stats.standardize(&mut t);
    Ok(t)
}

/// Applies an image's crop to its lesion mask and resizes with nearest
/// neighbour; returns `true` for lesion cells, row-major.
pub fn preprocess_mask(mask: &GrayImage, b: CropBox, resolution: u32) -> Vec<bool> {
    let cropped = crop_with(mask, b, Luma([0]));
    let resized = imageops::resize(&cropped, resolution, resolution, FilterType::Nearest);
    resized.pixels().map(|p| p.0[0] >= 128).collect()
}
