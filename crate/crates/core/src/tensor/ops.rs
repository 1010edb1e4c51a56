//! Forward and backward kernels.
//!
//! Accumulations that feed the regression output (pooling sums, the dense
//! dot product, the loss) run in `f64` in a fixed row-major order, so `f32`
//! and `f64` builds agree on summation order and results are reproducible.

use crate::error::{Error, Result};

use super::{Real, Tensor};

/// Zero padding added around a feature map before convolving.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PadSpec {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PadSpec {
    pub const NONE: PadSpec = PadSpec { top: 0, bottom: 0, left: 0, right: 0 };

    pub const fn uniform(p: usize) -> Self {
        PadSpec { top: p, bottom: p, left: p, right: p }
    }

    /// Same padding on rows and columns, `lo` before and `hi` after.
    pub const fn split(lo: usize, hi: usize) -> Self {
        PadSpec { top: lo, bottom: hi, left: lo, right: hi }
    }

    pub fn is_none(&self) -> bool {
        *self == Self::NONE
    }
}

/// Output length of a strided window over `input + pad_lo + pad_hi` cells,
/// floor mode. `None` if the window does not fit.
pub fn window_output_size(input: usize, window: usize, stride: usize, pad_lo: usize, pad_hi: usize) -> Option<usize> {
    let padded = input + pad_lo + pad_hi;
    if stride == 0 || window == 0 || padded < window {
        return None;
    }
    Some((padded - window) / stride + 1)
}

struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    filter: usize,
    stride: usize,
    pad: PadSpec,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.channels * self.filter * self.filter
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

fn im2col<T: Real>(input: &[T], g: &ConvGeometry) -> Vec<T> {
    let positions = g.positions();
    let mut cols = vec![T::zero(); g.patch_len() * positions];
    for c in 0..g.channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.filter {
            for kx in 0..g.filter {
                let row = (c * g.filter + ky) * g.filter + kx;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad.top as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad.left as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[oy * g.out_w + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeometry) -> Vec<T> {
    let positions = g.positions();
    let mut out = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.filter {
            for kx in 0..g.filter {
                let row = (c * g.filter + ky) * g.filter + kx;
                let src = &cols[row * positions..(row + 1) * positions];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad.top as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + kx) as isize - g.pad.left as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[iy as usize * g.width + ix as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_geometry<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: PadSpec,
) -> Result<ConvGeometry> {
    let (channels, height, width) = input.dims3()?;
    let (out_c, in_c, fh, fw) = match weight.shape() {
        &[o, i, fh, fw] => (o, i, fh, fw),
        other => return Err(Error::config(format!("conv weight must be [C_out,C_in,f,f], got {other:?}"))),
    };
    if in_c != channels {
        return Err(Error::config(format!("conv weight expects {in_c} input channels, input has {channels}")));
    }
    if fh != fw {
        return Err(Error::config(format!("conv filter must be square, got {fh}x{fw}")));
    }
    let out_h = window_output_size(height, fh, stride, pad.top, pad.bottom);
    let out_w = window_output_size(width, fw, stride, pad.left, pad.right);
    let (out_h, out_w) = match (out_h, out_w) {
        (Some(h), Some(w)) => (h, w),
        _ => {
            return Err(Error::config(format!(
                "conv filter {fh} stride {stride} does not fit a {height}x{width} input with padding {pad:?}"
            )))
        }
    };
    if bias.shape() != [out_c, out_h, out_w] {
        return Err(Error::config(format!(
            "untied bias must have shape [{out_c}, {out_h}, {out_w}], got {:?}",
            bias.shape()
        )));
    }
    Ok(ConvGeometry { channels, height, width, filter: fh, stride, pad, out_h, out_w })
}

/// Cross-correlation plus an untied (per channel and position) bias.
///
/// Returns the output together with the unfolded input patches, which the
/// backward pass needs.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: PadSpec,
) -> Result<(Tensor<T>, Vec<T>)> {
    let g = conv_geometry(input, weight, bias, stride, pad)?;
    let out_c = weight.shape()[0];
    let cols = im2col(input.data(), &g);
    let mut out = bias.data().to_vec();
    T::gemm(
        out_c,
        g.patch_len(),
        g.positions(),
        weight.data(),
        (g.patch_len(), 1),
        &cols,
        (g.positions(), 1),
        T::one(),
        &mut out,
    );
    let out = Tensor::new(vec![out_c, g.out_h, g.out_w], out)?;
    out.ensure_finite("conv2d")?;
    Ok((out, cols))
}

/// Gradients of [`conv2d`] with respect to input, weight, and bias.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    cols: &[T],
    input_shape: &[usize],
    weight: &Tensor<T>,
    stride: usize,
    pad: PadSpec,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let input = Tensor::zeros(input_shape);
    let g = conv_geometry(&input, weight, grad_out, stride, pad)?;
    let out_c = weight.shape()[0];
    let (k, p) = (g.patch_len(), g.positions());

    let mut grad_w = vec![T::zero(); out_c * k];
    T::gemm(out_c, p, k, grad_out.data(), (p, 1), cols, (1, p), T::zero(), &mut grad_w);

    let mut grad_cols = vec![T::zero(); k * p];
    T::gemm(k, out_c, p, weight.data(), (1, k), grad_out.data(), (p, 1), T::zero(), &mut grad_cols);
    let grad_in = col2im(&grad_cols, &g);

    Ok((
        Tensor::new(input_shape.to_vec(), grad_in)?,
        Tensor::new(weight.shape().to_vec(), grad_w)?,
        grad_out.clone(),
    ))
}

/// Max pooling in floor mode without padding. Also returns, for every output
/// cell, the flat input index that won (first occurrence on ties).
pub fn maxpool<T: Real>(input: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = input.dims3()?;
    if window > h || window > w {
        return Err(Error::config(format!("pool window {window} larger than {h}x{w} input")));
    }
    let out_h = window_output_size(h, window, stride, 0, 0)
        .ok_or_else(|| Error::config(format!("invalid pool window {window} / stride {stride}")))?;
    let out_w = window_output_size(w, window, stride, 0, 0)
        .ok_or_else(|| Error::config(format!("invalid pool window {window} / stride {stride}")))?;
    let data = input.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    let mut argmax = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = base + oy * stride * w + ox * stride;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                        if data[idx] > data[best] {
                            best = idx;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, out_h, out_w], out)?, argmax))
}

pub fn maxpool_backward<T: Real>(grad_out: &Tensor<T>, argmax: &[usize], input_shape: &[usize]) -> Tensor<T> {
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &d) in argmax.iter().zip(grad_out.data()) {
        g[idx] += d;
    }
    grad
}

pub fn leaky_relu<T: Real>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    input.map(|x| if x >= T::zero() { x } else { slope * x })
}

pub fn leaky_relu_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>, slope: T) -> Tensor<T> {
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&d, &x)| if x >= T::zero() { d } else { slope * d })
        .collect();
    Tensor { shape: input.shape().to_vec(), data }
}

/// `t_k = Σ_{i,j} g_k(i,j)`: the sum form of global pooling.
/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

pub fn global_average_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, h, w) = input.dims3()?;
    let plane = h * w;
    let data = (0..k)
        .map(|ch| {
            let sum = compensated_sum(input.data()[ch * plane..(ch + 1) * plane].iter().map(|v| v.as_f64()));
            T::from_f64_lossy(sum)
        })
        .collect();
    let out = Tensor::new(vec![k], data)?;
    out.ensure_finite("global_average_pool")?;
    Ok(out)
}

pub fn global_average_pool_backward<T: Real>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let plane: usize = input_shape[1..].iter().product();
    Tensor::from_fn(input_shape, |i| grad_out.data()[i / plane])
}

/// `ŷ = Σ_k t_k w_k + b` for a single output unit.
pub fn dense<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let k = input.len();
    if input.shape() != [k] || weight.shape() != [1, k] || bias.shape() != [1] {
        return Err(Error::config(format!(
            "dense expects input [K], weight [1,K], bias [1]; got {:?}, {:?}, {:?}",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let dot = compensated_sum(input.data().iter().zip(weight.data()).map(|(&t, &w)| w.as_f64() * t.as_f64()));
    let out = Tensor::scalar(T::from_f64_lossy(dot + bias.data()[0].as_f64()));
    out.ensure_finite("dense")?;
    Ok(out)
}

/// Returns gradients for (input, weight, bias).
pub fn dense_backward<T: Real>(grad_out: &Tensor<T>, input: &Tensor<T>, weight: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let d = grad_out.data()[0];
    let grad_in = Tensor { shape: input.shape().to_vec(), data: weight.data().iter().map(|&w| w * d).collect() };
    let grad_w = Tensor { shape: weight.shape().to_vec(), data: input.data().iter().map(|&t| t * d).collect() };
    (grad_in, grad_w, Tensor::scalar(d))
}

/// Mean over the batch of squared errors.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::config(format!(
            "mse_loss shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let n = pred.len() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    let loss = T::from_f64_lossy(sum / n);
    if !loss.is_finite() {
        return Err(Error::numeric("mse_loss produced a non-finite value"));
    }
    Ok(loss)
}

/// Gradient of [`mse_loss`] with respect to `pred`, scaled by `seed`.
pub fn mse_loss_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, seed: T) -> Tensor<T> {
    let scale = T::from_f64_lossy(2.0 / pred.len() as f64) * seed;
    let data = pred.data().iter().zip(target.data()).map(|(&p, &t)| (p - t) * scale).collect();
    Tensor { shape: pred.shape().to_vec(), data }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct loop form of padded strided cross-correlation.
    fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, s: usize, pad: PadSpec) -> Vec<f64> {
        let (ci, h, wd) = x.dims3().unwrap();
        let (co, f) = (w.shape()[0], w.shape()[2]);
        let oh = (h + pad.top + pad.bottom - f) / s + 1;
        let ow = (wd + pad.left + pad.right - f) / s + 1;
        let mut out = vec![0.0; co * oh * ow];
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[(o * oh + oy) * ow + ox];
                    for c in 0..ci {
                        for ky in 0..f {
                            for kx in 0..f {
                                let iy = (oy * s + ky) as isize - pad.top as isize;
                                let ix = (ox * s + kx) as isize - pad.left as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[(c * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((o * ci + c) * f + ky) * f + kx];
                            }
                        }
                    }
                    out[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_sum_of_ones() {
        let x = Tensor::<f32>::full(&[1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f32>::zeros(&[1, 1, 1]);
        let (y, _) = conv2d(&x, &w, &b, 1, PadSpec::NONE).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::<f64>::scalar(-3.25).reshape(vec![1, 1, 1]).unwrap();
        let w = Tensor::<f64>::full(&[1, 1, 1, 1], 1.0);
        let b = Tensor::<f64>::zeros(&[1, 1, 1]);
        let (y, _) = conv2d(&x, &w, &b, 1, PadSpec::NONE).unwrap();
        assert_eq!(y.data(), &[-3.25]);
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for pad in [PadSpec::NONE, PadSpec::uniform(1), PadSpec::split(1, 2)] {
            let x = random(&[3, 8, 8], &mut rng);
            let w = random(&[4, 3, 3, 3], &mut rng);
            let oh = (8 + pad.top + pad.bottom - 3) / 2 + 1;
            let b = random(&[4, oh, oh], &mut rng);
            let (y, _) = conv2d(&x, &w, &b, 2, pad).unwrap();
            let expected = conv_oracle(&x, &w, &b, 2, pad);
            for (a, e) in y.data().iter().zip(&expected) {
                assert!((a - e).abs() <= 1e-6 * e.abs().max(1.0), "{a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_rejects_tied_bias() {
        let x = Tensor::<f32>::zeros(&[1, 4, 4]);
        let w = Tensor::<f32>::zeros(&[2, 1, 3, 3]);
        let b = Tensor::<f32>::zeros(&[2]);
        assert!(matches!(conv2d(&x, &w, &b, 1, PadSpec::NONE), Err(Error::Config(_))));
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&[2, 7, 7], &mut rng);
        let y = random(&[2, 7, 7], &mut rng);
        let w = random(&[3, 2, 3, 3], &mut rng);
        let b = Tensor::zeros(&[3, 7, 7]);
        let (a, c) = (0.7, -1.3);
        let mix = Tensor::from_fn(&[2, 7, 7], |i| a * x.data()[i] + c * y.data()[i]);
        let pad = PadSpec::uniform(1);
        let (lhs, _) = conv2d(&mix, &w, &b, 1, pad).unwrap();
        let (cx, _) = conv2d(&x, &w, &b, 1, pad).unwrap();
        let (cy, _) = conv2d(&y, &w, &b, 1, pad).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * cx.data()[i] + c * cy.data()[i];
            assert!((lhs.data()[i] - rhs).abs() <= 1e-6 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn maxpool_examples() {
        let x = Tensor::<f32>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);

        let c = Tensor::<f32>::full(&[2, 7, 7], 0.5);
        let (y, arg) = maxpool(&c, 3, 2).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.5));
        // ties resolve to the first cell of each window
        assert_eq!(arg[0], 0);
        assert_eq!(arg[1], 2);

        let big = Tensor::<f32>::zeros(&[1, 224, 224]);
        assert_eq!(maxpool(&big, 3, 2).unwrap().0.shape(), &[1, 111, 111]);
        assert!(matches!(maxpool(&x, 3, 1), Err(Error::Config(_))));
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax_only() {
        let x = Tensor::<f64>::new(vec![1, 2, 2], vec![1.0, 5.0, 5.0, 2.0]).unwrap();
        let (_, arg) = maxpool(&x, 2, 2).unwrap();
        let g = maxpool_backward(&Tensor::scalar(1.0).reshape(vec![1, 1, 1]).unwrap(), &arg, &[1, 2, 2]);
        assert_eq!(g.data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::<f64>::new(vec![2], vec![5.0, -2.0]).unwrap();
        let y = leaky_relu(&x, 0.01);
        assert_eq!(y.data()[0], 5.0);
        assert!((y.data()[1] + 0.02).abs() < 1e-15);
    }

    #[test]
    fn leaky_relu_gradient_by_central_difference() {
        let h = 1e-4;
        let f = |v: f64| leaky_relu(&Tensor::scalar(v), 0.01).data()[0];
        let numeric = (f(-1.0 + h) - f(-1.0 - h)) / (2.0 * h);
        let analytic: f64 = leaky_relu_backward(&Tensor::scalar(1.0), &Tensor::scalar(-1.0), 0.01).data()[0];
        assert!((numeric - 0.01).abs() < 1e-10);
        assert!((analytic - 0.01).abs() < 1e-15);
    }

    #[test]
    fn gap_is_a_sum() {
        let x = Tensor::<f32>::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_average_pool(&x).unwrap().data(), &[10.0]);
        assert_eq!(global_average_pool(&Tensor::<f32>::zeros(&[1, 3, 3])).unwrap().data(), &[0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random(&[3, 5, 4], &mut rng);
        let t = global_average_pool(&g).unwrap();
        for k in 0..3 {
            let mut acc = 0.0;
            for i in 0..20 {
                acc += g.data()[k * 20 + i];
            }
            assert!((t.data()[k] - acc).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_examples() {
        let t = Tensor::<f64>::new(vec![2], vec![1.0, 1.0]).unwrap();
        let w = Tensor::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(dense(&t, &w, &Tensor::scalar(0.0)).unwrap().data(), &[1.0]);
        let zero = Tensor::zeros(&[1, 2]);
        assert_eq!(dense(&t, &zero, &Tensor::scalar(2.5)).unwrap().data(), &[2.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random(&[16], &mut rng);
        let w = random(&[1, 16], &mut rng);
        let dot: f64 = (0..16).map(|i| t.data()[i] * w.data()[i]).sum();
        let y = dense(&t, &w, &Tensor::scalar(0.25)).unwrap();
        assert!((y.data()[0] - dot - 0.25).abs() < 1e-12);

        assert!(dense(&t, &Tensor::zeros(&[1, 3]), &Tensor::scalar(0.0)).is_err());
    }

    #[test]
    fn gap_dense_composition_matches_nested_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Tensor::<f32>::from_fn(&[6, 5, 5], |_| rng.random_range(-2.0..2.0));
        let w = Tensor::<f32>::from_fn(&[1, 6], |_| rng.random_range(-1.0..1.0));
        let y = dense(&global_average_pool(&g).unwrap(), &w, &Tensor::scalar(0.0)).unwrap();
        let mut expected = 0.0f64;
        for k in 0..6 {
            let mut t = 0.0f64;
            for ij in 0..25 {
                t += g.data()[k * 25 + ij] as f64;
            }
            expected += w.data()[k] as f64 * (t as f32) as f64;
        }
        assert_eq!(y.data()[0], expected as f32);
    }

    #[test]
    fn mse_examples() {
        let p = Tensor::<f64>::new(vec![2, 1], vec![1.0, 3.0]).unwrap();
        assert_eq!(mse_loss(&p, &p).unwrap(), 0.0);
        let p = Tensor::<f64>::new(vec![1, 1], vec![0.0]).unwrap();
        let t = Tensor::<f64>::new(vec![1, 1], vec![2.0]).unwrap();
        assert_eq!(mse_loss(&p, &t).unwrap(), 4.0);

        let p = Tensor::<f64>::new(vec![3, 1], vec![0.3, -1.2, 2.0]).unwrap();
        let t = Tensor::<f64>::new(vec![3, 1], vec![1.0, 0.5, 2.5]).unwrap();
        let grad = mse_loss_backward(&p, &t, 1.0);
        let h = 1e-5;
        for i in 0..3 {
            let mut hi = p.clone();
            hi.data_mut()[i] += h;
            let mut lo = p.clone();
            lo.data_mut()[i] -= h;
            let numeric = (mse_loss(&hi, &t).unwrap() - mse_loss(&lo, &t).unwrap()) / (2.0 * h);
            let expected = 2.0 * (p.data()[i] - t.data()[i]) / 3.0;
            assert!((grad.data()[i] - expected).abs() < 1e-14);
            assert!((numeric - expected).abs() < 1e-8);
        }
    }
}
