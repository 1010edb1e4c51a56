//! Manifests, preprocessing, class resampling, augmentation and the
//! synthetic lesion dataset.

mod augment;
mod manifest;
mod preprocess;
mod resample;
pub mod synthetic;

use std::path::{Path, PathBuf};

use rayon::prelude::*;

pub use augment::{augment, AugmentSpec, Transform};
pub use manifest::{
    level_histogram, load_manifest, parse_manifest, write_manifest, ManifestRecord, MAX_LEVEL, NUM_LEVELS,
};
pub use preprocess::{
    crop_foreground, crop_square, foreground_box, prepare_rgb, prepare_unit, preprocess, preprocess_mask, to_unit_tensor,
    ChannelStats, CropBox, FOREGROUND_THRESHOLD,
};
pub use resample::{resample_indices, Resampler};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticDataset, SyntheticScene};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Locates `<root>/<id>.<ext>` or `<root>/images/<id>.<ext>`.
pub fn image_path(root: impl AsRef<Path>, image_id: &str) -> Result<PathBuf> {
    let root = root.as_ref();
    for dir in [root.to_path_buf(), root.join("images")] {
        for ext in IMAGE_EXTENSIONS {
            let p = dir.join(format!("{image_id}.{ext}"));
            if p.is_file() {
                return Ok(p);
            }
        }
    }
    Err(Error::Data { path: root.join(image_id), message: "image file not found".into() })
}

/// Decodes an image file to 8-bit RGB.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<image::RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Data { path: path.to_path_buf(), message: e.to_string() })?;
    Ok(img.to_rgb8())
}

/// Reads and crops one image; returns the unit-range tensor and its crop.
pub fn load_unit(path: impl AsRef<Path>, resolution: u32) -> Result<(Tensor<f32>, CropBox)> {
    let path = path.as_ref();
    prepare_unit(&load_rgb(path)?, resolution)
        .map_err(|e| Error::Data { path: path.to_path_buf(), message: e.to_string() })
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image_id: String,
    pub level: u8,
    /// `[3,R,R]`, unit range, not yet standardized.
    pub image: Tensor<f32>,
    pub crop: CropBox,
}

/// Preprocessed images held in memory, in manifest order.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub resolution: u32,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(records: &[ManifestRecord], root: impl AsRef<Path>, resolution: u32) -> Result<Self> {
        let root = root.as_ref();
        let samples = records
            .par_iter()
            .map(|r| {
                let (image, crop) = load_unit(image_path(root, &r.image_id)?, resolution)?;
                Ok(Sample { image_id: r.image_id.clone(), level: r.level, image, crop })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { resolution, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn levels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.level).collect()
    }
}
