use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Element, MatRef, Tensor};

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    input: Tensor<T>,
    weights: Tensor<T>,
}

/// Affine map `[N, D] x [D, M] + [M]`.
pub fn dense_forward<T: Element>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
    input.expect_rank(2, "dense input")?;
    weights.expect_rank(2, "dense weights")?;
    let (n, d) = (input.dims()[0], input.dims()[1]);
    let (wd, m) = (weights.dims()[0], weights.dims()[1]);
    if wd != d {
        return Err(shape_err!("dense input width {d} does not match weights {wd}x{m}"));
    }
    bias.expect_dims(&[m], "dense bias")?;
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(
        MatRef::row_major(input.data(), n, d),
        MatRef::row_major(weights.data(), d, m),
        T::one(),
        &mut out,
    );
    let cache = DenseCache {
        input: input.clone(),
        weights: weights.clone(),
    };
    Ok((Tensor::new(vec![n, m], out)?, cache))
}

/// Returns `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward<T: Element>(cache: &DenseCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, d) = (cache.input.dims()[0], cache.input.dims()[1]);
    let m = cache.weights.dims()[1];
    grad_out.expect_dims(&[n, m], "dense grad_out")?;
    let g = grad_out.data();

    let mut grad_in = vec![T::zero(); n * d];
    gemm(
        MatRef::row_major(g, n, m),
        MatRef::transposed(cache.weights.data(), m, d),
        T::zero(),
        &mut grad_in,
    );
    let mut grad_w = vec![T::zero(); d * m];
    gemm(
        MatRef::transposed(cache.input.data(), d, n),
        MatRef::row_major(g, n, m),
        T::zero(),
        &mut grad_w,
    );
    let mut grad_b = vec![T::zero(); m];
    for row in g.chunks_exact(m) {
        for (acc, &v) in grad_b.iter_mut().zip(row) {
            *acc += v;
        }
    }
    Ok((
        Tensor::new(vec![n, d], grad_in)?,
        Tensor::new(vec![d, m], grad_w)?,
        Tensor::new(vec![m], grad_b)?,
    ))
}
