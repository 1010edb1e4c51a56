//! Flat `key = value` configuration files. Command-line flags override file
//! values, which override built-in defaults.

use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Every recognised key; all optional.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub arch: Option<String>,
    pub resolution: Option<u32>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub lr: Option<f64>,
    pub lr_schedule: Option<String>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub translate: Option<f32>,
    pub scale_min: Option<f32>,
    pub scale_max: Option<f32>,
    pub rotation: Option<f32>,
    pub flip_horizontal: Option<bool>,
    pub flip_vertical: Option<bool>,
    pub color_scale_min: Option<f32>,
    pub color_scale_max: Option<f32>,
    pub color_shift: Option<f32>,
    pub resample: Option<bool>,
    pub init_from: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub count: Option<usize>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// First present value among flag, file, default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
