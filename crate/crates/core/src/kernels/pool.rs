use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub pool_h: usize,
    pub pool_w: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn new(size: usize, stride: usize) -> Self {
        PoolSpec {
            pool_h: size,
            pool_w: size,
            stride,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_h == 0 || self.pool_w == 0 || self.stride == 0 {
            return Err(Error::InvalidArgument("pool dims and stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Floor semantics: rows/columns not covered by a full window are dropped.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if self.pool_h > h || self.pool_w > w {
            return Err(shape_err!("pool window {}x{} larger than input {h}x{w}", self.pool_h, self.pool_w));
        }
        Ok(((h - self.pool_h) / self.stride + 1, (w - self.pool_w) / self.stride + 1))
    }
}

/// Winning flat input index for every pooled output.
#[derive(Clone, Debug)]
pub struct PoolCache {
    input_dims: [usize; 4],
    output_dims: [usize; 4],
    argmax: Vec<usize>,
}

impl PoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

pub fn maxpool_forward<T: Element>(input: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, PoolCache)> {
    input.expect_rank(4, "maxpool input")?;
    let [n, h, w, c] = [input.dims()[0], input.dims()[1], input.dims()[2], input.dims()[3]];
    let (oh, ow) = spec.output_hw(h, w)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best_idx = usize::MAX;
                    let mut best = T::neg_infinity();
                    // Row-major scan with strict `>`: ties resolve to the first max.
                    for ky in 0..spec.pool_h {
                        for kx in 0..spec.pool_w {
                            let iy = oy * spec.stride + ky;
                            let ix = ox * spec.stride + kx;
                            let idx = ((b * h + iy) * w + ix) * c + ch;
                            if best_idx == usize::MAX || x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    let cache = PoolCache {
        input_dims: [n, h, w, c],
        output_dims: [n, oh, ow, c],
        argmax,
    };
    Ok((Tensor::new(vec![n, oh, ow, c], out)?, cache))
}

pub fn maxpool_backward<T: Element>(cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    grad_out.expect_dims(&cache.output_dims, "maxpool grad_out")?;
    let mut grad = Tensor::zeros(cache.input_dims.to_vec())?;
    let g = grad.data_mut();
    for (&idx, &v) in cache.argmax.iter().zip(grad_out.data()) {
        g[idx] += v;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_window() {
        let input = Tensor::new(vec![1, 2, 2, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (out, cache) = maxpool_forward(&input, &PoolSpec::new(2, 2)).unwrap();
        assert_eq!(out.data(), &[4.0]);
        let g = maxpool_backward(&cache, &Tensor::full(vec![1, 1, 1, 1], 1.0f32).unwrap()).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn constant_input_and_tie_rule() {
        let input = Tensor::full(vec![1, 4, 4, 2], 0.5f64).unwrap();
        let (out, _) = maxpool_forward(&input, &PoolSpec::new(2, 2)).unwrap();
        assert_eq!(out.dims(), &[1, 2, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 0.5));
        let tie = Tensor::full(vec![1, 2, 2, 1], 3.0f64).unwrap();
        let (_, tcache) = maxpool_forward(&tie, &PoolSpec::new(2, 2)).unwrap();
        let g = maxpool_backward(&tcache, &Tensor::full(vec![1, 1, 1, 1], 1.0).unwrap()).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn floor_drops_remainder() {
        let input = Tensor::from_fn(vec![1, 5, 5, 1], |i| i as f32).unwrap();
        let (out, _) = maxpool_forward(&input, &PoolSpec::new(2, 2)).unwrap();
        assert_eq!(out.dims(), &[1, 2, 2, 1]);
        assert_eq!(out.data(), &[6.0, 8.0, 16.0, 18.0]);
    }

    #[test]
    fn matches_brute_force_window_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let input = Tensor::from_fn(vec![1, 4, 4, 1], |_| rng.random_range(-1.0..1.0f64)).unwrap();
            let (out, _) = maxpool_forward(&input, &PoolSpec::new(2, 2)).unwrap();
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(input.data()[(oy * 2 + dy) * 4 + ox * 2 + dx]);
                        }
                    }
                    assert_eq!(out.data()[oy * 2 + ox], m);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_away_from_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let input = Tensor::from_fn(vec![2, 4, 4, 3], |_| rng.random_range(-1.0..1.0f64)).unwrap();
        let spec = PoolSpec::new(2, 2);
        let (out, cache) = maxpool_forward(&input, &spec).unwrap();
        let probe = Tensor::from_fn(out.dims().to_vec(), |_| rng.random_range(-1.0..1.0f64)).unwrap();
        let grad = maxpool_backward(&cache, &probe).unwrap();
        let loss = |x: &Tensor<f64>| -> f64 {
            let (o, _) = maxpool_forward(x, &spec).unwrap();
            o.data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let eps = 1e-6;
        for idx in 0..input.len() {
            let (mut p, mut m) = (input.clone(), input.clone());
            p.data_mut()[idx] += eps;
            m.data_mut()[idx] -= eps;
            let numeric = (loss(&p) - loss(&m)) / (2.0 * eps);
            let analytic = grad.data()[idx];
            assert!((numeric - analytic).abs() / analytic.abs().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn window_larger_than_input() {
        let input = Tensor::<f32>::zeros(vec![1, 1, 3, 1]).unwrap();
        assert!(maxpool_forward(&input, &PoolSpec::new(2, 2)).is_err());
    }
}
