use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Element, Tensor};

/// Which entries survived, plus the inverted-dropout scale applied to them.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<T> {
    keep: Vec<bool>,
    scale: T,
}

impl<T: Element> DropoutMask<T> {
    fn all_keep(len: usize) -> Self {
        DropoutMask {
            keep: vec![true; len],
            scale: T::one(),
        }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn scale(&self) -> T {
        self.scale
    }
}

/// Inverted dropout: at train time survivors are scaled by `1 / (1 - rate)`
/// so inference is the identity.
pub fn dropout_forward<T: Element, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    train_mode: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, DropoutMask<T>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !train_mode || rate == 0.0 {
        return Ok((input.clone(), DropoutMask::all_keep(input.len())));
    }
    let scale = T::from_f64(1.0 / (1.0 - rate));
    let keep: Vec<bool> = (0..input.len()).map(|_| rng.random::<f64>() >= rate).collect();
    let out = input
        .data()
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v * scale } else { T::zero() })
        .collect();
    Ok((Tensor::new(input.dims().to_vec(), out)?, DropoutMask { keep, scale }))
}

pub fn dropout_backward<T: Element>(mask: &DropoutMask<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if grad_out.len() != mask.keep.len() {
        return Err(shape_err!(
            "dropout grad has {} elements, mask has {}",
            grad_out.len(),
            mask.keep.len()
        ));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(&mask.keep)
        .map(|(&g, &k)| if k { g * mask.scale } else { T::zero() })
        .collect();
    Tensor::new(grad_out.dims().to_vec(), data)
}
