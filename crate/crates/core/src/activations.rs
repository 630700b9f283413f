//! The eleven activation functions compared in the benchmark, including the
//! QReLU and m-QReLU units whose negative branch keeps a non-zero slope.
//!
//! Scalar [`activate`] / [`derivative`] give the per-element function. Two
//! kinds are structured at tensor level and are exposed through [`apply`]:
//!
//! * `Crelu` concatenates `relu(x)` and `relu(-x)` along the channel (last)
//!   axis, doubling it. Its scalar form is the first half, `relu(z)`; the
//!   second half is `activate(Crelu, -z)`.
//! * `Softmax` normalises over the channel (last) axis. Its scalar form is
//!   the first entry of the two-element group `[z, 0]`.
//!
//! Every piecewise kind takes the non-positive branch at exactly `z == 0`,
//! for both value and derivative.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::kernels::softmax_rows;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActivationKind {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "leaky_relu")]
    LeakyRelu,
    #[serde(rename = "crelu")]
    Crelu,
    #[serde(rename = "sigmoid")]
    Sigmoid,
    #[serde(rename = "tanh")]
    Tanh,
    #[serde(rename = "softmax")]
    Softmax,
    #[serde(rename = "vlrelu")]
    VlRelu,
    #[serde(rename = "elu")]
    Elu,
    #[serde(rename = "selu")]
    Selu,
    #[serde(rename = "qrelu")]
    QRelu,
    #[serde(rename = "m_qrelu")]
    MQRelu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 11] = [
        ActivationKind::Relu,
        ActivationKind::LeakyRelu,
        ActivationKind::Crelu,
        ActivationKind::Sigmoid,
        ActivationKind::Tanh,
        ActivationKind::Softmax,
        ActivationKind::VlRelu,
        ActivationKind::Elu,
        ActivationKind::Selu,
        ActivationKind::QRelu,
        ActivationKind::MQRelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::LeakyRelu => "leaky_relu",
            ActivationKind::Crelu => "crelu",
            ActivationKind::Sigmoid => "sigmoid",
            ActivationKind::Tanh => "tanh",
            ActivationKind::Softmax => "softmax",
            ActivationKind::VlRelu => "vlrelu",
            ActivationKind::Elu => "elu",
            ActivationKind::Selu => "selu",
            ActivationKind::QRelu => "qrelu",
            ActivationKind::MQRelu => "m_qrelu",
        }
    }

    /// Channel multiplier applied by [`apply`]: 2 for CReLU, 1 otherwise.
    pub fn width_factor(self) -> usize {
        if self == ActivationKind::Crelu {
            2
        } else {
            1
        }
    }

    /// Slope of the negative branch for rectifiers that are linear on both
    /// sides of zero; `None` for the others.
    pub fn negative_slope(self, p: &ActivationParams) -> Option<f64> {
        match self {
            ActivationKind::Relu | ActivationKind::Crelu => Some(0.0),
            ActivationKind::LeakyRelu => Some(p.alpha_leaky),
            ActivationKind::VlRelu => Some(p.alpha_vl),
            ActivationKind::QRelu => Some(p.alpha_q - 2.0),
            ActivationKind::MQRelu => Some(p.alpha_q - 1.0),
            _ => None,
        }
    }

    /// Kinds with a kink at zero.
    pub fn is_piecewise(self) -> bool {
        matches!(
            self,
            ActivationKind::Relu
                | ActivationKind::LeakyRelu
                | ActivationKind::Crelu
                | ActivationKind::VlRelu
                | ActivationKind::Elu
                | ActivationKind::Selu
                | ActivationKind::QRelu
                | ActivationKind::MQRelu
        )
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ActivationKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown activation {s:?}; expected one of {}",
                ActivationKind::ALL.map(|k| k.name()).join(", ")
            ))
        })
    }
}

/// Fixed coefficients of the parameterised activations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActivationParams {
    pub alpha_leaky: f64,
    /// Slope of the "very leaky" ReLU.
    pub alpha_vl: f64,
    pub alpha_elu: f64,
    pub selu_lambda: f64,
    pub selu_alpha: f64,
    /// The leaky coefficient inside QReLU / m-QReLU.
    pub alpha_q: f64,
}

impl Default for ActivationParams {
    fn default() -> Self {
        ActivationParams {
            alpha_leaky: 0.01,
            alpha_vl: 0.3,
            alpha_elu: 1.0,
            selu_lambda: 1.0507,
            selu_alpha: 1.67326,
            alpha_q: 0.01,
        }
    }
}

impl ActivationParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha_leaky,
            self.alpha_vl,
            self.alpha_elu,
            self.selu_lambda,
            self.selu_alpha,
            self.alpha_q,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("activation coefficients must be finite and positive".into()));
        }
        Ok(())
    }
}

fn sigmoid<T: Element>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Scalar forward value.
pub fn activate<T: Element>(kind: ActivationKind, z: T, p: &ActivationParams) -> T {
    let zero = T::zero();
    let positive = z > zero;
    match kind {
        ActivationKind::Relu | ActivationKind::Crelu => {
            if positive {
                z
            } else {
                zero
            }
        }
        ActivationKind::LeakyRelu => {
            if positive {
                z
            } else {
                T::from_f64(p.alpha_leaky) * z
            }
        }
        ActivationKind::VlRelu => {
            if positive {
                z
            } else {
                T::from_f64(p.alpha_vl) * z
            }
        }
        ActivationKind::Elu => {
            if positive {
                z
            } else {
                T::from_f64(p.alpha_elu) * z.exp_m1()
            }
        }
        ActivationKind::Selu => {
            let lambda = T::from_f64(p.selu_lambda);
            if positive {
                lambda * z
            } else {
                lambda * T::from_f64(p.selu_alpha) * z.exp_m1()
            }
        }
        ActivationKind::Sigmoid | ActivationKind::Softmax => sigmoid(z),
        ActivationKind::Tanh => z.tanh(),
        ActivationKind::QRelu => {
            if positive {
                z
            } else {
                let two = T::from_f64(2.0);
                T::from_f64(p.alpha_q) * z - two * z
            }
        }
        ActivationKind::MQRelu => {
            if positive {
                z
            } else {
                T::from_f64(p.alpha_q) * z - z
            }
        }
    }
}

/// Scalar derivative `d activate / dz`.
pub fn derivative<T: Element>(kind: ActivationKind, z: T, p: &ActivationParams) -> T {
    let one = T::one();
    let positive = z > T::zero();
    match kind {
        ActivationKind::Relu | ActivationKind::Crelu => {
            if positive {
                one
            } else {
                T::zero()
            }
        }
        ActivationKind::LeakyRelu => {
            if positive {
                one
            } else {
                T::from_f64(p.alpha_leaky)
            }
        }
        ActivationKind::VlRelu => {
            if positive {
                one
            } else {
                T::from_f64(p.alpha_vl)
            }
        }
        ActivationKind::Elu => {
            if positive {
                one
            } else {
                T::from_f64(p.alpha_elu) * z.exp()
            }
        }
        ActivationKind::Selu => {
            let lambda = T::from_f64(p.selu_lambda);
            if positive {
                lambda
            } else {
                lambda * T::from_f64(p.selu_alpha) * z.exp()
            }
        }
        ActivationKind::Sigmoid | ActivationKind::Softmax => {
            let s = sigmoid(z);
            s * (one - s)
        }
        ActivationKind::Tanh => {
            let t = z.tanh();
            one - t * t
        }
        // Negative-branch slopes alpha - 2 and alpha - 1 are never zero.
        ActivationKind::QRelu => {
            if positive {
                one
            } else {
                T::from_f64(p.alpha_q - 2.0)
            }
        }
        ActivationKind::MQRelu => {
            if positive {
                one
            } else {
                T::from_f64(p.alpha_q - 1.0)
            }
        }
    }
}

fn channels<T: Element>(input: &Tensor<T>) -> Result<usize> {
    match input.rank() {
        2 | 4 => Ok(*input.dims().last().unwrap()),
        r => Err(shape_err!("activations expect rank 2 or 4 tensors, got rank {r}")),
    }
}

/// Tensor-level forward. Elementwise except CReLU (channel doubling) and
/// Softmax (normalised over the last axis).
pub fn apply<T: Element>(kind: ActivationKind, input: &Tensor<T>, p: &ActivationParams) -> Result<Tensor<T>> {
    let c = channels(input)?;
    match kind {
        ActivationKind::Crelu => {
            let mut out = Vec::with_capacity(input.len() * 2);
            for group in input.data().chunks_exact(c) {
                out.extend(group.iter().map(|&v| v.max(T::zero())));
                out.extend(group.iter().map(|&v| (-v).max(T::zero())));
            }
            let mut dims = input.dims().to_vec();
            *dims.last_mut().unwrap() = 2 * c;
            Tensor::new(dims, out)
        }
        ActivationKind::Softmax => Tensor::new(input.dims().to_vec(), softmax_rows(input.data(), c)),
        _ => Ok(input.map(|v| activate(kind, v, p))),
    }
}

/// Gradient w.r.t. the activation input, given the forward input and the
/// gradient w.r.t. the activation output.
pub fn apply_backward<T: Element>(
    kind: ActivationKind,
    input: &Tensor<T>,
    grad_out: &Tensor<T>,
    p: &ActivationParams,
) -> Result<Tensor<T>> {
    let c = channels(input)?;
    let mut expected = input.dims().to_vec();
    *expected.last_mut().unwrap() *= kind.width_factor();
    grad_out.expect_dims(&expected, "activation grad_out")?;
    let x = input.data();
    let g = grad_out.data();
    let data: Vec<T> = match kind {
        ActivationKind::Crelu => {
            let mut out = Vec::with_capacity(x.len());
            for (xs, gs) in x.chunks_exact(c).zip(g.chunks_exact(2 * c)) {
                let (pos, neg) = gs.split_at(c);
                for i in 0..c {
                    let mut v = T::zero();
                    if xs[i] > T::zero() {
                        v += pos[i];
                    }
                    if -xs[i] > T::zero() {
                        v -= neg[i];
                    }
                    out.push(v);
                }
            }
            out
        }
        ActivationKind::Softmax => {
            let s = softmax_rows(x, c);
            let mut out = Vec::with_capacity(x.len());
            for (ss, gs) in s.chunks_exact(c).zip(g.chunks_exact(c)) {
                let dot: T = ss.iter().zip(gs).map(|(&a, &b)| a * b).sum();
                out.extend(ss.iter().zip(gs).map(|(&si, &gi)| si * (gi - dot)));
            }
            out
        }
        _ => x.iter().zip(g).map(|(&xi, &gi)| gi * derivative(kind, xi, p)).collect(),
    };
    Tensor::new(input.dims().to_vec(), data)
}

/// Per-element local derivatives of every output that depends on input
/// element `z`; zero for all of them marks a unit with no gradient path.
pub fn has_zero_local_gradient<T: Element>(kind: ActivationKind, z: T, p: &ActivationParams) -> bool {
    match kind {
        // d relu(z)/dz and d relu(-z)/dz are both zero only at z == 0.
        ActivationKind::Crelu => z == T::zero(),
        // Softmax outputs are strictly positive with non-degenerate Jacobian.
        ActivationKind::Softmax => false,
        _ => derivative(kind, z, p) == T::zero(),
    }
}

/// True when every output derived from `z` is zero.
pub fn has_zero_output<T: Element>(kind: ActivationKind, z: T, p: &ActivationParams) -> bool {
    match kind {
        ActivationKind::Crelu => z == T::zero(),
        ActivationKind::Softmax => false,
        _ => activate(kind, z, p) == T::zero(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use ActivationKind::*;

    fn p() -> ActivationParams {
        ActivationParams::default()
    }

    #[test]
    fn listed_values() {
        let p = p();
        assert!((activate(QRelu, -1.0f64, &p) - 1.99).abs() < 1e-15);
        assert!((activate(MQRelu, -2.0f64, &p) - 1.98).abs() < 1e-15);
        assert_eq!(activate(QRelu, 2.5, &p), 2.5);
        assert_eq!(activate(Relu, -3.0, &p), 0.0);
        assert!((activate(LeakyRelu, -1.0f64, &p) + 0.01).abs() < 1e-15);
        assert!((activate(Selu, 1.0f64, &p) - 1.0507).abs() < 1e-15);
        // lambda * alpha * (e^-1 - 1), evaluated independently in double precision
        assert!((activate(Selu, -1.0f64, &p) - (-1.111_327_540_011_131_8)).abs() < 1e-9);
        assert_eq!(activate(Sigmoid, 0.0f64, &p), 0.5);
    }

    #[test]
    fn listed_derivatives() {
        let p = p();
        assert_eq!(derivative(QRelu, -1.0, &p), 0.01 - 2.0);
        assert_eq!(derivative(MQRelu, -5.0, &p), 0.01 - 1.0);
        assert_eq!(derivative(Relu, 2.0, &p), 1.0);
        assert_eq!(derivative(Tanh, 0.0, &p), 1.0);
        // z == 0 takes the non-positive branch
        assert_eq!(derivative(QRelu, 0.0, &p), 0.01 - 2.0);
        assert_eq!(derivative(Relu, 0.0, &p), 0.0);
    }

    #[test]
    fn names_round_trip() {
        for kind in ActivationKind::ALL {
            assert_eq!(kind.name().parse::<ActivationKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
        assert!("swish".parse::<ActivationKind>().is_err());
    }

    #[test]
    fn crelu_pairs_and_channel_doubling() {
        let x = Tensor::new(vec![1, 1, 1, 2], vec![-2.0f64, 3.0]).unwrap();
        let y = apply(Crelu, &x, &p()).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1, 4]);
        assert_eq!(y.data(), &[0.0, 3.0, 2.0, 0.0]);
    }

    #[test]
    fn softmax_over_channels() {
        let x = Tensor::new(vec![1, 1, 1, 2], vec![0.0f64, 0.0]).unwrap();
        assert_eq!(apply(Softmax, &x, &p()).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn qrelu_mixed_tensor() {
        let x = Tensor::new(vec![1, 3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        let y = apply(QRelu, &x, &p()).unwrap();
        assert!((y.data()[0] - 1.99).abs() < 1e-15);
        assert_eq!(&y.data()[1..], &[0.0, 2.0]);
    }

    #[test]
    fn backward_on_dead_and_negative_inputs() {
        let x = Tensor::full(vec![2, 3], -0.7f64).unwrap();
        let ones = Tensor::full(vec![2, 3], 1.0).unwrap();
        let g = apply_backward(Relu, &x, &ones, &p()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
        let g = apply_backward(QRelu, &x, &ones, &p()).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.01 - 2.0));
    }

    fn tensor_fd_check(kind: ActivationKind, dims: Vec<usize>, seed: u64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = p();
        let x = Tensor::from_fn(dims, |_| {
            let v: f64 = rng.random_range(0.05..2.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .unwrap();
        let y = apply(kind, &x, &p).unwrap();
        let probe = Tensor::from_fn(y.dims().to_vec(), |_| rng.random_range(-1.0..1.0)).unwrap();
        let grad = apply_backward(kind, &x, &probe, &p).unwrap();
        let loss = |t: &Tensor<f64>| -> f64 {
            apply(kind, t, &p)
                .unwrap()
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-6;
        for i in 0..x.len() {
            let (mut a, mut b) = (x.clone(), x.clone());
            a.data_mut()[i] += eps;
            b.data_mut()[i] -= eps;
            let numeric = (loss(&a) - loss(&b)) / (2.0 * eps);
            let analytic = grad.data()[i];
            assert!(
                (numeric - analytic).abs() / analytic.abs().max(1.0) < 1e-6,
                "{kind}: {numeric} vs {analytic}"
            );
        }
    }

    #[test]
    fn tensor_backward_matches_finite_differences() {
        for (i, kind) in ActivationKind::ALL.into_iter().enumerate() {
            tensor_fd_check(kind, vec![2, 2, 2, 3], i as u64);
            tensor_fd_check(kind, vec![3, 4], 100 + i as u64);
        }
        // group of size two
        tensor_fd_check(Softmax, vec![5, 2], 999);
    }

    #[test]
    fn crelu_halves_sum_to_abs_and_are_disjoint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_fn(vec![4, 3, 3, 5], |_| rng.random_range(-3.0..3.0f64)).unwrap();
        let y = apply(Crelu, &x, &p()).unwrap();
        for (xs, ys) in x.data().chunks(5).zip(y.data().chunks(10)) {
            for i in 0..5 {
                assert_eq!(ys[i] + ys[5 + i], xs[i].abs());
                assert_eq!(ys[i] * ys[5 + i], 0.0);
            }
        }
    }

    #[test]
    fn kink_continuity() {
        let p = p();
        for kind in ActivationKind::ALL.into_iter().filter(|k| k.is_piecewise()) {
            let d = (activate(kind, 1e-9f64, &p) - activate(kind, -1e-9f64, &p)).abs();
            assert!(d < 1e-8, "{kind}: {d}");
        }
    }

    proptest! {
        #[test]
        fn quantum_units_nonnegative(z in -1e6f64..1e6) {
            prop_assert!(activate(QRelu, z, &p()) >= 0.0);
            prop_assert!(activate(MQRelu, z, &p()) >= 0.0);
        }

        #[test]
        fn positive_branch_agreement(z in 1e-300f64..1e6) {
            let p = p();
            prop_assert_eq!(activate(QRelu, z, &p), z);
            prop_assert_eq!(activate(MQRelu, z, &p), z);
            prop_assert_eq!(activate(Relu, z, &p), z);
        }

        #[test]
        fn non_dying_gradient(z in -1e6f64..=0.0) {
            let p = p();
            prop_assert_eq!(derivative(QRelu, z, &p).abs(), 1.99);
            prop_assert_eq!(derivative(MQRelu, z, &p).abs(), 0.99);
        }

        #[test]
        fn derivative_matches_central_difference(z in -8.0f64..8.0, k in 0usize..11) {
            prop_assume!(z.abs() > 1e-3);
            let kind = ActivationKind::ALL[k];
            let p = p();
            let h = 1e-6;
            let numeric = (activate(kind, z + h, &p) - activate(kind, z - h, &p)) / (2.0 * h);
            let analytic = derivative(kind, z, &p);
            prop_assert!((analytic - numeric).abs() / analytic.abs().max(1.0) < 1e-6);
        }
    }
}
