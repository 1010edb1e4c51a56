//! Regression activation maps: `G(i,j) = Σ_k w_k g_k(i,j)` over the last
//! convolutional layer, plus upsampling, multi-resolution fusion and heatmap
//! rendering.

use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage, Rgba, RgbaImage};

use crate::error::{Error, Result};
use crate::network::{LayerKind, Network};
use crate::tensor::ops::compensated_sum;
use crate::tensor::{Real, Tensor};

pub const GRID_MAGIC: &[u8; 4] = b"RAMG";
pub const GRID_VERSION: u32 = 1;
pub const LANCZOS_A: f64 = 3.0;

/// A real `height × width` grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(Error::usage(format!("grid {height}x{width} cannot hold {} values", values.len())));
        }
        Ok(Grid { height, width, values })
    }

    pub fn constant(height: usize, width: usize, v: f64) -> Self {
        Grid { height, width, values: vec![v; height * width] }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn sum(&self) -> f64 {
        compensated_sum(self.values.iter().copied())
    }

    /// Min-max scaling to [0,1]; a constant grid becomes all 0.5.
    pub fn normalized(&self) -> Grid {
        let (lo, hi) = self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let values = if hi > lo {
            self.values.iter().map(|v| (v - lo) / (hi - lo)).collect()
        } else {
            vec![0.5; self.values.len()]
        };
        Grid { values, ..*self }
    }

    /// `"RAMG"`, u32 height, u32 width, u32 version, then f32 LE values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.values.len());
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        for &v in &self.values {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Grid> {
        let bad = |m: &str| Error::config(format!("malformed grid dump: {m}"));
        if bytes.len() < 16 || &bytes[..4] != GRID_MAGIC {
            return Err(bad("missing RAMG header"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (h, w, version) = (word(4), word(8), word(12));
        if version != GRID_VERSION as usize {
            return Err(bad(&format!("unsupported version {version}")));
        }
        if bytes.len() != 16 + 4 * h * w {
            return Err(bad("length does not match dimensions"));
        }
        let values = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        Grid::new(h, w, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionActivationMap {
    pub grid: Grid,
    /// `ŷ` from the same forward pass.
    pub prediction: f64,
    /// Dense bias `b`; `Σ G = ŷ − b`.
    pub bias: f64,
    pub source: String,
    pub resolution: u32,
}

/// Runs `network` on `input` and weights its last feature maps by the dense
/// weights.
pub fn compute_ram<T: Real>(network: &Network<T>, input: &Tensor<T>) -> Result<RegressionActivationMap> {
    let kinds: Vec<LayerKind> = network.layers().iter().map(|l| l.kind).collect();
    if kinds.len() < 3 || kinds[kinds.len() - 2..] != [LayerKind::GlobalPool, LayerKind::Dense] {
        return Err(Error::config(format!("network {} lacks a global-pool + dense head", network.spec().name)));
    }
    let trace = network.forward(input)?;
    let g = trace.last_conv();
    let (k, h, w) = g.dims3()?;
    let weights = network.dense_weights().data();
    let mut values = vec![0.0f64; h * w];
    for (c, &wk) in weights.iter().enumerate().take(k) {
        let wk = wk.as_f64();
        for (v, &x) in values.iter_mut().zip(&g.data()[c * h * w..(c + 1) * h * w]) {
            *v += wk * x.as_f64();
        }
    }
    Ok(RegressionActivationMap {
        grid: Grid::new(h, w, values)?,
        prediction: trace.prediction().as_f64(),
        bias: network.dense_bias().as_f64(),
        source: network.spec().name.clone(),
        resolution: network.input_size() as u32,
    })
}

pub fn lanczos_kernel(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= LANCZOS_A {
        return 0.0;
    }
    let px = std::f64::consts::PI * x;
    LANCZOS_A * px.sin() * (px / LANCZOS_A).sin() / (px * px)
}

/// Row `o` of the 1-D resampling matrix: (source index, weight) pairs with
/// clamped indices and weights summing to 1.
fn lanczos_taps(o: usize, n_in: usize, n_out: usize) -> Vec<(usize, f64)> {
    let center = (o as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    let first = (center - LANCZOS_A).floor() as i64 + 1;
    let last = (center + LANCZOS_A).ceil() as i64 - 1;
    let mut taps: Vec<(usize, f64)> = (first..=last)
        .map(|i| (i.clamp(0, n_in as i64 - 1) as usize, lanczos_kernel(center - i as f64)))
        .filter(|&(_, w)| w != 0.0)
        .collect();
    let total: f64 = taps.iter().map(|t| t.1).sum();
    taps.iter_mut().for_each(|t| t.1 /= total);
    taps
}

/// Separable Lanczos-3 upsampling with pixel-centre alignment and clamped
/// edges.
pub fn lanczos_upsample(grid: &Grid, height: usize, width: usize) -> Result<Grid> {
    if height < grid.height || width < grid.width {
        return Err(Error::usage(format!(
            "lanczos_upsample only enlarges: {}x{} -> {height}x{width}",
            grid.height, grid.width
        )));
    }
    let mut rows = vec![0.0f64; grid.height * width];
    for x in 0..width {
        let taps = lanczos_taps(x, grid.width, width);
        for y in 0..grid.height {
            rows[y * width + x] = taps.iter().map(|&(j, w)| w * grid.at(y, j)).sum();
        }
    }
    let mut out = vec![0.0f64; height * width];
    for y in 0..height {
        let taps = lanczos_taps(y, grid.height, height);
        for x in 0..width {
            out[y * width + x] = taps.iter().map(|&(i, w)| w * rows[i * width + x]).sum();
        }
    }
    Grid::new(height, width, out)
}

/// Normalizes each grid, upsamples it to `height × width` and averages.
pub fn fuse(grids: &[&Grid], height: usize, width: usize) -> Result<Grid> {
    if grids.is_empty() {
        return Err(Error::usage("fuse needs at least one map"));
    }
    let mut acc = vec![0.0f64; height * width];
    for g in grids {
        let up = lanczos_upsample(&g.normalized(), height, width)?;
        acc.iter_mut().zip(&up.values).for_each(|(a, v)| *a += v);
    }
    let n = grids.len() as f64;
    Grid::new(height, width, acc.into_iter().map(|a| a / n).collect())
}

const fn jet_channel(i: i32, peak: i32) -> u8 {
    let d = 4 * i - peak;
    let v = 382 - if d < 0 { -d } else { d };
    (if v < 0 {
        0
    } else if v > 255 {
        255
    } else {
        v
    }) as u8
}

const fn build_jet() -> [[u8; 3]; 256] {
    let mut lut = [[0u8; 3]; 256];
    let mut i = 0;
    while i < 256 {
        lut[i] = [jet_channel(i as i32, 765), jet_channel(i as i32, 510), jet_channel(i as i32, 255)];
        i += 1;
    }
    lut
}

/// Jet-style colormap, blue (0) through green to red (255).
/// Channel `c` of entry `i` is `clamp(382 − |4i − p_c|, 0, 255)` with peaks
/// `p = (765, 510, 255)` for red, green, blue.
pub const JET: [[u8; 3]; 256] = build_jet();

pub const COLORMAP_NAME: &str = "jet";

/// Heatmap overlay of a `[0,1]` grid already at the image's size.
#[derive(Clone, Debug)]
pub struct HeatmapRender {
    pub image: RgbaImage,
    pub colormap: &'static str,
    pub alpha: f32,
}

impl HeatmapRender {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.image.save(path)?;
        Ok(())
    }
}

pub fn colormap_index(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

pub fn render(grid: &Grid, source: &RgbImage, alpha: f32) -> Result<HeatmapRender> {
    let (w, h) = source.dimensions();
    if (grid.height, grid.width) != (h as usize, w as usize) {
        return Err(Error::usage(format!(
            "grid is {}x{} but image is {h}x{w}; upsample first",
            grid.height, grid.width
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::usage(format!("alpha must lie in [0,1], got {alpha}")));
    }
    let image = RgbaImage::from_fn(w, h, |x, y| {
        let Rgb(src) = *source.get_pixel(x, y);
        let c = JET[colormap_index(grid.at(y as usize, x as usize))];
        let mix = |k: usize| ((1.0 - alpha) * src[k] as f32 + alpha * c[k] as f32).round().clamp(0.0, 255.0) as u8;
        Rgba([mix(0), mix(1), mix(2), 255])
    });
    Ok(HeatmapRender { image, colormap: COLORMAP_NAME, alpha })
}

/// Mean of `grid` over cells where `mask` is set and where it is not.
pub fn inside_outside_means(grid: &Grid, mask: &[bool]) -> Option<(f64, f64)> {
    let (mut si, mut ni, mut so, mut no) = (0.0, 0usize, 0.0, 0usize);
    for (&v, &m) in grid.values.iter().zip(mask) {
        if m {
            si += v;
            ni += 1;
        } else {
            so += v;
            no += 1;
        }
    }
    (ni > 0 && no > 0).then(|| (si / ni as f64, so / no as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct 2-D oracle: sums over the full clamped window without
    /// separating axes.
    fn oracle_upsample(g: &Grid, h: usize, w: usize) -> Grid {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let cy = (y as f64 + 0.5) * g.height as f64 / h as f64 - 0.5;
                let cx = (x as f64 + 0.5) * g.width as f64 / w as f64 - 0.5;
                let (mut acc, mut norm) = (0.0, 0.0);
                for i in -10i64..(g.height as i64 + 10) {
                    for j in -10i64..(g.width as i64 + 10) {
                        let k = lanczos_kernel(cy - i as f64) * lanczos_kernel(cx - j as f64);
                        let ii = i.clamp(0, g.height as i64 - 1) as usize;
                        let jj = j.clamp(0, g.width as i64 - 1) as usize;
                        acc += k * g.at(ii, jj);
                        norm += k;
                    }
                }
                out[y * w + x] = acc / norm;
            }
        }
        Grid::new(h, w, out).unwrap()
    }

    fn ramp() -> Grid {
        Grid::new(4, 4, (0..16).map(|i| i as f64 * 0.25 + (i % 3) as f64).collect()).unwrap()
    }

    #[test]
    fn same_size_is_identity() {
        let g = ramp();
        let up = lanczos_upsample(&g, 4, 4).unwrap();
        for (a, b) in up.values.iter().zip(&g.values) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_stays_constant() {
        let up = lanczos_upsample(&Grid::constant(3, 5, 2.5), 17, 23).unwrap();
        assert!(up.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn ramp_matches_direct_oracle() {
        let g = ramp();
        for (h, w) in [(8, 8), (13, 9), (64, 64)] {
            let a = lanczos_upsample(&g, h, w).unwrap();
            let b = oracle_upsample(&g, h, w);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-5, "{h}x{w}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn downscale_is_usage_error() {
        assert!(matches!(lanczos_upsample(&ramp(), 3, 8), Err(Error::Usage(_))));
    }

    #[test]
    fn fusion_conventions() {
        let m = ramp();
        let one = fuse(&[&m], 8, 8).unwrap();
        assert_eq!(one, lanczos_upsample(&m.normalized(), 8, 8).unwrap());
        assert_eq!(fuse(&[&m, &m], 8, 8).unwrap(), one);
        let zero = Grid::constant(1, 1, 0.0);
        let unit = Grid::constant(1, 1, 1.0);
        assert_eq!(fuse(&[&zero, &unit], 1, 1).unwrap().values, vec![0.5]);
        assert!(matches!(fuse(&[], 2, 2), Err(Error::Usage(_))));
    }

    #[test]
    fn grid_dump_round_trip() {
        let g = Grid::new(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.25, 1e-3]).unwrap();
        let bytes = g.to_bytes();
        assert_eq!(&bytes[..4], b"RAMG");
        assert_eq!(bytes.len(), 16 + 24);
        let back = Grid::from_bytes(&bytes).unwrap();
        assert_eq!(back.height, 2);
        for (a, b) in back.values.iter().zip(&g.values) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert!(Grid::from_bytes(&bytes[..20]).is_err());
    }

    #[test]
    fn render_alpha_extremes() {
        let src = RgbImage::from_fn(5, 4, |x, y| Rgb([x as u8 * 40, y as u8 * 50, 7]));
        let g = Grid::constant(4, 5, 0.3);
        let none = render(&g, &src, 0.0).unwrap();
        for (x, y, p) in none.image.enumerate_pixels() {
            let s = src.get_pixel(x, y).0;
            assert_eq!(p.0, [s[0], s[1], s[2], 255]);
        }
        let full = render(&g, &src, 1.0).unwrap();
        let c = JET[colormap_index(0.3)];
        assert!(full.image.pixels().all(|p| p.0 == [c[0], c[1], c[2], 255]));
        assert_eq!(full.image.dimensions(), src.dimensions());
        assert!(matches!(render(&Grid::constant(3, 3, 0.0), &src, 0.5), Err(Error::Usage(_))));
    }

    #[test]
    fn jet_runs_blue_to_red() {
        assert_eq!(JET[0][0], 0);
        assert!(JET[0][2] > 100);
        assert_eq!(JET[255][2], 0);
        assert!(JET[255][0] > 100);
        assert_eq!(JET[128][1], 255);
    }
}
