use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Sampling ranges for training-time augmentation. Every range is
/// symmetric around the identity transform.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentSpec {
    /// Maximum shift in pixels along each axis.
    pub translate: f32,
    /// Independent x and y stretch factors are drawn from
    /// `[scale_min, scale_max]`.
    pub scale_min: f32,
    pub scale_max: f32,
    pub rotation_deg: f32,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Per-channel multiplier range.
    pub color_scale_min: f32,
    pub color_scale_max: f32,
    /// Per-channel additive shift bound (unit-range intensities).
    pub color_shift: f32,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            translate: 16.0,
            scale_min: 0.9,
            scale_max: 1.1,
            rotation_deg: 20.0,
            flip_horizontal: true,
            flip_vertical: true,
            color_scale_min: 0.9,
            color_scale_max: 1.1,
            color_shift: 0.0,
        }
    }
}

impl AugmentSpec {
    pub fn identity() -> Self {
        AugmentSpec {
            translate: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            rotation_deg: 0.0,
            flip_horizontal: false,
            flip_vertical: false,
            color_scale_min: 1.0,
            color_scale_max: 1.0,
            color_shift: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// One concrete draw of the augmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform {
    pub shift: (f32, f32),
    pub stretch: (f32, f32),
    pub angle_rad: f32,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    pub color_scale: [f32; 3],
    pub color_shift: [f32; 3],
}

fn uniform(rng: &mut impl Rng, lo: f32, hi: f32) -> f32 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            shift: (0.0, 0.0),
            stretch: (1.0, 1.0),
            angle_rad: 0.0,
            flip_horizontal: false,
            flip_vertical: false,
            color_scale: [1.0; 3],
            color_shift: [0.0; 3],
        }
    }

    pub fn rotation(degrees: f32) -> Self {
        Transform { angle_rad: degrees.to_radians(), ..Self::identity() }
    }

    pub fn sample(spec: &AugmentSpec, rng: &mut impl Rng) -> Self {
        let t = spec.translate;
        let r = spec.rotation_deg.to_radians();
        Transform {
            shift: (uniform(rng, -t, t), uniform(rng, -t, t)),
            stretch: (uniform(rng, spec.scale_min, spec.scale_max), uniform(rng, spec.scale_min, spec.scale_max)),
            angle_rad: uniform(rng, -r, r),
            flip_horizontal: spec.flip_horizontal && rng.random_bool(0.5),
            flip_vertical: spec.flip_vertical && rng.random_bool(0.5),
            color_scale: std::array::from_fn(|_| uniform(rng, spec.color_scale_min, spec.color_scale_max)),
            color_shift: std::array::from_fn(|_| uniform(rng, -spec.color_shift, spec.color_shift)),
        }
    }

    /// Warps a `[C,H,W]` image about its center: flip, stretch, rotate, then
    /// shift. Sampling is bilinear with mirrored borders; colour scaling and
    /// shift apply to the first three channels.
    pub fn apply(&self, image: &Tensor<f32>) -> Tensor<f32> {
        let (c, h, w) = image.dims3().expect("augment expects [C,H,W]");
        let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
        let (sin, cos) = self.angle_rad.sin_cos();
        let src = image.data();
        let mut out = vec![0.0f32; src.len()];
        for y in 0..h {
            for x in 0..w {
                // invert shift, rotation, stretch, flip in that order
                let dx = x as f32 - cx - self.shift.0;
                let dy = y as f32 - cy - self.shift.1;
                let mut u = (cos * dx + sin * dy) / self.stretch.0;
                let mut v = (-sin * dx + cos * dy) / self.stretch.1;
                if self.flip_horizontal {
                    u = -u;
                }
                if self.flip_vertical {
                    v = -v;
                }
                let (sx, sy) = (u + cx, v + cy);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let xs = [mirror(x0 as i64, w), mirror(x0 as i64 + 1, w)];
                let ys = [mirror(y0 as i64, h), mirror(y0 as i64 + 1, h)];
                for ch in 0..c {
                    let plane = &src[ch * h * w..(ch + 1) * h * w];
                    let mut val = (1.0 - fy) * ((1.0 - fx) * plane[ys[0] * w + xs[0]] + fx * plane[ys[0] * w + xs[1]])
                        + fy * ((1.0 - fx) * plane[ys[1] * w + xs[0]] + fx * plane[ys[1] * w + xs[1]]);
                    if ch < 3 {
                        val = val * self.color_scale[ch] + self.color_shift[ch];
                    }
                    out[ch * h * w + y * w + x] = val;
                }
            }
        }
        Tensor::new(vec![c, h, w], out).expect("same shape")
    }
}

/// Reflects an index into `0..n` without repeating the edge cell.
fn mirror(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - m }) as usize
}

/// Draws a transform from `spec` with `seed` and applies it. The identity
/// spec returns the input unchanged.
pub fn augment(image: &Tensor<f32>, spec: &AugmentSpec, seed: u64) -> Tensor<f32> {
    if spec.is_identity() {
        return image.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Transform::sample(spec, &mut rng).apply(image)
}
