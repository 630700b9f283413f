use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{gemm, Element, MatRef, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    /// Output spatial size is `ceil(in / stride)`; borders are zero-padded
    /// with any odd remainder going to the bottom/right.
    Same,
    /// No padding; windows must fit entirely inside the input.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub padding: Padding,
    pub stride: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, padding: Padding) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            padding,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be >= 1".into()));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::InvalidArgument("conv kernel dims must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("conv channel counts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels]
    }

    /// Output size and leading pad along one axis.
    fn axis(&self, input: usize, kernel: usize) -> Result<(usize, usize)> {
        let (out, pad) = match self.padding {
            Padding::Same => {
                let out = input.div_ceil(self.stride);
                let total = ((out - 1) * self.stride + kernel).saturating_sub(input);
                (out, total / 2)
            }
            Padding::Valid => {
                if kernel > input {
                    (0, 0)
                } else {
                    ((input - kernel) / self.stride + 1, 0)
                }
            }
        };
        if out == 0 {
            return Err(shape_err!(
                "conv produces zero-sized output (input {input}, kernel {kernel}, {:?})",
                self.padding
            ));
        }
        Ok((out, pad))
    }

    /// Output spatial dims for an `h x w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (oh, _) = self.axis(h, self.kernel_h)?;
        let (ow, _) = self.axis(w, self.kernel_w)?;
        Ok((oh, ow))
    }
}

/// State retained by [`conv2d_forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    spec: ConvSpec,
    input_dims: [usize; 4],
    out_hw: (usize, usize),
    pad: (usize, usize),
    /// im2col patch matrix, `[n * oh * ow, kh * kw * cin]`.
    cols: Vec<T>,
    weights: Tensor<T>,
}

impl<T> ConvCache<T> {
    pub fn input_dims(&self) -> [usize; 4] {
        self.input_dims
    }
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    oh: usize,
    ow: usize,
    pad_h: usize,
    pad_w: usize,
}

fn im2col<T: Element>(input: &[T], spec: &ConvSpec, g: &Geometry) -> Vec<T> {
    let k = spec.kernel_h * spec.kernel_w * g.cin;
    let mut cols = vec![T::zero(); g.n * g.oh * g.ow * k];
    let mut row = 0;
    for n in 0..g.n {
        let img = &input[n * g.h * g.w * g.cin..(n + 1) * g.h * g.w * g.cin];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * k..(row + 1) * k];
                for ky in 0..spec.kernel_h {
                    let iy = (oy * spec.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..spec.kernel_w {
                        let ix = (ox * spec.stride + kx) as isize - g.pad_w as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.w + ix as usize) * g.cin;
                        let off = (ky * spec.kernel_w + kx) * g.cin;
                        dst[off..off + g.cin].copy_from_slice(&img[src..src + g.cin]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

fn col2im<T: Element>(cols: &[T], spec: &ConvSpec, g: &Geometry) -> Vec<T> {
    let k = spec.kernel_h * spec.kernel_w * g.cin;
    let mut out = vec![T::zero(); g.n * g.h * g.w * g.cin];
    let mut row = 0;
    for n in 0..g.n {
        let img = &mut out[n * g.h * g.w * g.cin..(n + 1) * g.h * g.w * g.cin];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &cols[row * k..(row + 1) * k];
                for ky in 0..spec.kernel_h {
                    let iy = (oy * spec.stride + ky) as isize - g.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..spec.kernel_w {
                        let ix = (ox * spec.stride + kx) as isize - g.pad_w as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.w + ix as usize) * g.cin;
                        let off = (ky * spec.kernel_w + kx) * g.cin;
                        for c in 0..g.cin {
                            img[dst + c] += src[off + c];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    out
}

/// 2-D convolution (cross-correlation) of an NHWC batch.
pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    spec.validate()?;
    input.expect_rank(4, "conv2d input")?;
    weights.expect_dims(&spec.weight_dims(), "conv2d weights")?;
    bias.expect_dims(&[spec.out_channels], "conv2d bias")?;
    let [n, h, w, cin] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    if cin != spec.in_channels {
        return Err(shape_err!("conv2d input has {cin} channels, weights expect {}", spec.in_channels));
    }
    let (oh, pad_h) = spec.axis(h, spec.kernel_h)?;
    let (ow, pad_w) = spec.axis(w, spec.kernel_w)?;
    let g = Geometry {
        n,
        h,
        w,
        cin,
        oh,
        ow,
        pad_h,
        pad_w,
    };
    let cols = im2col(input.data(), spec, &g);
    let rows = n * oh * ow;
    let k = spec.kernel_h * spec.kernel_w * cin;
    let cout = spec.out_channels;

    let mut out = Vec::with_capacity(rows * cout);
    for _ in 0..rows {
        out.extend_from_slice(bias.data());
    }
    gemm(
        MatRef::row_major(&cols, rows, k),
        MatRef::row_major(weights.data(), k, cout),
        T::one(),
        &mut out,
    );
    let output = Tensor::new(vec![n, oh, ow, cout], out)?;
    let cache = ConvCache {
        spec: *spec,
        input_dims: [n, h, w, cin],
        out_hw: (oh, ow),
        pad: (pad_h, pad_w),
        cols,
        weights: weights.clone(),
    };
    Ok((output, cache))
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward<T: Element>(cache: &ConvCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let spec = &cache.spec;
    let [n, h, w, cin] = cache.input_dims;
    let (oh, ow) = cache.out_hw;
    let cout = spec.out_channels;
    grad_out.expect_dims(&[n, oh, ow, cout], "conv2d grad_out")?;
    let rows = n * oh * ow;
    let k = spec.kernel_h * spec.kernel_w * cin;
    let g = grad_out.data();

    let mut grad_b = vec![T::zero(); cout];
    for r in 0..rows {
        for (acc, &v) in grad_b.iter_mut().zip(&g[r * cout..(r + 1) * cout]) {
            *acc += v;
        }
    }

    let mut grad_w = vec![T::zero(); k * cout];
    gemm(
        MatRef::transposed(&cache.cols, k, rows),
        MatRef::row_major(g, rows, cout),
        T::zero(),
        &mut grad_w,
    );

    let mut grad_cols = vec![T::zero(); rows * k];
    gemm(
        MatRef::row_major(g, rows, cout),
        MatRef::transposed(cache.weights.data(), cout, k),
        T::zero(),
        &mut grad_cols,
    );
    let geom = Geometry {
        n,
        h,
        w,
        cin,
        oh,
        ow,
        pad_h: cache.pad.0,
        pad_w: cache.pad.1,
    };
    let grad_in = col2im(&grad_cols, spec, &geom);

    Ok((
        Tensor::new(vec![n, h, w, cin], grad_in)?,
        Tensor::new(spec.weight_dims().to_vec(), grad_w)?,
        Tensor::new(vec![cout], grad_b)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution, independent of im2col/GEMM.
    fn conv_oracle(input: &Tensor<f64>, weights: &Tensor<f64>, bias: &[f64], spec: &ConvSpec) -> Vec<f64> {
        let [n, h, w, cin] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
        let (kh, kw, cout) = (spec.kernel_h, spec.kernel_w, spec.out_channels);
        let (oh, ow, ph, pw) = match spec.padding {
            Padding::Valid => (h - kh + 1, w - kw + 1, 0, 0),
            Padding::Same => (h, w, (kh - 1) / 2, (kw - 1) / 2),
        };
        let mut out = vec![0.0; n * oh * ow * cout];
        for b in 0..n {
            for y in 0..oh {
                for x in 0..ow {
                    for o in 0..cout {
                        let mut s = bias[o];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = y as isize + ky as isize - ph as isize;
                                let ix = x as isize + kx as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                for c in 0..cin {
                                    s += input.data()[((b * h + iy as usize) * w + ix as usize) * cin + c]
                                        * weights.data()[((ky * kw + kx) * cin + c) * cout + o];
                                }
                            }
                        }
                        out[((b * oh + y) * ow + x) * cout + o] = s;
                    }
                }
            }
        }
        out
    }

    fn random(dims: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_fn(dims, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    #[test]
    fn valid_3x3_with_ones_kernel() {
        let input = Tensor::new(vec![1, 3, 3, 1], (1..=9).map(f64::from).collect()).unwrap();
        let weights = Tensor::full(vec![2, 2, 1, 1], 1.0).unwrap();
        let bias = Tensor::zeros(vec![1]).unwrap();
        let spec = ConvSpec::new(1, 1, 2, Padding::Valid);
        let (out, _) = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out.dims(), &[1, 2, 2, 1]);
        assert_eq!(out.data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn same_padding_3x3_over_2x2_ones() {
        let input = Tensor::full(vec![1, 2, 2, 1], 1.0f64).unwrap();
        let weights = Tensor::full(vec![3, 3, 1, 1], 1.0).unwrap();
        let bias = Tensor::zeros(vec![1]).unwrap();
        let spec = ConvSpec::new(1, 1, 3, Padding::Same);
        let (out, _) = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out.dims(), &[1, 2, 2, 1]);
        assert_eq!(out.data(), &[4.0; 4]);
    }

    #[test]
    fn identity_kernel_is_identity_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random(vec![2, 5, 4, 1], &mut rng);
        let weights = Tensor::full(vec![1, 1, 1, 1], 1.0).unwrap();
        let bias = Tensor::zeros(vec![1]).unwrap();
        let spec = ConvSpec::new(1, 1, 1, Padding::Same);
        let (out, cache) = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
        assert_eq!(out.data(), input.data());
        let g = random(vec![2, 5, 4, 1], &mut rng);
        let (gi, _, _) = conv2d_backward(&cache, &g).unwrap();
        assert_eq!(gi.data(), g.data());
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (padding, k) in [(Padding::Same, 5), (Padding::Same, 3), (Padding::Valid, 3)] {
            let spec = ConvSpec::new(3, 4, k, padding);
            let input = random(vec![2, 7, 6, 3], &mut rng);
            let weights = random(spec.weight_dims().to_vec(), &mut rng);
            let bias = random(vec![4], &mut rng);
            let (out, _) = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
            let want = conv_oracle(&input, &weights, bias.data(), &spec);
            for (a, b) in out.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_grad_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec::new(2, 3, 3, Padding::Same);
        let input = random(vec![1, 4, 4, 2], &mut rng);
        let weights = random(spec.weight_dims().to_vec(), &mut rng);
        let bias = random(vec![3], &mut rng);
        let (out, cache) = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
        let (gi, gw, gb) = conv2d_backward(&cache, &out.zeros_like()).unwrap();
        assert!(gi.data().iter().chain(gw.data()).chain(gb.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for padding in [Padding::Valid, Padding::Same] {
            let spec = ConvSpec::new(1, 1, 2, padding);
            let input = random(vec![1, 4, 4, 1], &mut rng);
            let weights = random(spec.weight_dims().to_vec(), &mut rng);
            let bias = random(vec![1], &mut rng);
            let (out, cache) = conv2d_forward(&input, &weights, &bias, &spec).unwrap();
            let probe = random(out.dims().to_vec(), &mut rng);
            // loss = <probe, conv(input)>
            let loss = |i: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| -> f64 {
                let (o, _) = conv2d_forward(i, w, b, &spec).unwrap();
                o.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
            };
            let (gi, gw, gb) = conv2d_backward(&cache, &probe).unwrap();
            let eps = 1e-6;
            let check = |analytic: f64, numeric: f64| {
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
                assert!(rel < 1e-6, "analytic {analytic} numeric {numeric}");
            };
            for idx in 0..input.len() {
                let (mut p, mut m) = (input.clone(), input.clone());
                p.data_mut()[idx] += eps;
                m.data_mut()[idx] -= eps;
                check(
                    gi.data()[idx],
                    (loss(&p, &weights, &bias) - loss(&m, &weights, &bias)) / (2.0 * eps),
                );
            }
            for idx in 0..weights.len() {
                let (mut p, mut m) = (weights.clone(), weights.clone());
                p.data_mut()[idx] += eps;
                m.data_mut()[idx] -= eps;
                check(gw.data()[idx], (loss(&input, &p, &bias) - loss(&input, &m, &bias)) / (2.0 * eps));
            }
            let (mut p, mut m) = (bias.clone(), bias.clone());
            p.data_mut()[0] += eps;
            m.data_mut()[0] -= eps;
            check(
                gb.data()[0],
                (loss(&input, &weights, &p) - loss(&input, &weights, &m)) / (2.0 * eps),
            );
        }
    }

    #[test]
    fn shape_errors() {
        let spec = ConvSpec::new(2, 1, 3, Padding::Valid);
        let w = Tensor::<f32>::zeros(spec.weight_dims().to_vec()).unwrap();
        let b = Tensor::<f32>::zeros(vec![1]).unwrap();
        let wrong_c = Tensor::<f32>::zeros(vec![1, 4, 4, 1]).unwrap();
        assert!(matches!(conv2d_forward(&wrong_c, &w, &b, &spec), Err(Error::Shape(_))));
        let too_small = Tensor::<f32>::zeros(vec![1, 2, 2, 2]).unwrap();
        assert!(matches!(conv2d_forward(&too_small, &w, &b, &spec), Err(Error::Shape(_))));
        let input = Tensor::<f32>::zeros(vec![1, 4, 4, 2]).unwrap();
        let (_, cache) = conv2d_forward(&input, &w, &b, &spec).unwrap();
        let bad_grad = Tensor::<f32>::zeros(vec![1, 3, 3, 1]).unwrap();
        assert!(conv2d_backward(&cache, &bad_grad).is_err());
    }
}
