//! Mini-batch SGD with momentum, seeded shuffling and dropout, and
//! wall-clock accounting.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{shape_err, Error, Result};
use crate::kernels::softmax_cross_entropy;
use crate::network::{Gradients, Network, Parameters};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 64,
            epochs: 5,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Sample-weighted mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub total_seconds: f64,
    /// Optimizer steps taken.
    pub steps: usize,
    /// Mean L2 norm of the conv1 weight gradient per epoch.
    pub conv1_grad_norm: Vec<f64>,
}

/// `v <- momentum * v - lr * g; p <- p + v`, tensor by tensor.
pub fn sgd_step<T: Element>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    velocity: &mut Parameters<T>,
    config: &TrainConfig,
) -> Result<()> {
    let m = T::from_f64(config.momentum);
    let lr = T::from_f64(config.learning_rate);
    for ((p, g), v) in params.tensors_mut().into_iter().zip(grads.tensors()).zip(velocity.tensors_mut()) {
        if p.dims() != g.dims() || p.dims() != v.dims() {
            return Err(shape_err!(
                "sgd_step: parameter {:?}, gradient {:?}, velocity {:?}",
                p.dims(),
                g.dims(),
                v.dims()
            ));
        }
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = m * *vi - lr * gi;
            *pi += *vi;
        }
    }
    Ok(())
}

fn check_dataset<T: Element>(net: &Network<T>, dataset: &LabeledDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::Dataset("dataset is empty".into()));
    }
    let c = net.config();
    let want = [c.input_h, c.input_w, c.input_c];
    if dataset.image_dims() != want {
        return Err(shape_err!(
            "dataset images are {:?}, network expects {:?}",
            dataset.image_dims(),
            want
        ));
    }
    Ok(())
}

fn batch_images<T: Element>(dataset: &LabeledDataset, indices: &[usize]) -> Result<Tensor<T>> {
    Ok(dataset.images().gather_outer(indices)?.cast())
}

/// Trains in place. Deterministic given `config.seed`: one ChaCha stream
/// shuffles, an independent one draws dropout masks. The last partial batch
/// is kept.
pub fn train<T: Element>(net: &mut Network<T>, dataset: &LabeledDataset, config: &TrainConfig) -> Result<TrainHistory> {
    config.validate()?;
    check_dataset(net, dataset)?;
    let classes = net.config().num_classes;
    if let Some(&label) = dataset.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(1);
    let mut velocity = Parameters::zeros(net.config())?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = TrainHistory::default();
    let start = Instant::now();
    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        if config.shuffle {
            order.shuffle(&mut shuffle_rng);
        }
        let mut loss_sum = 0.0;
        let mut norm_sum = 0.0;
        let mut batches = 0usize;
        for idx in order.chunks(config.batch_size) {
            let x = batch_images::<T>(dataset, idx)?;
            let labels: Vec<usize> = idx.iter().map(|&i| dataset.labels()[i]).collect();
            let (logits, cache) = net.forward(&x, true, &mut dropout_rng)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            let loss = loss.as_f64();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss} at epoch {} step {}",
                    epoch + 1,
                    history.steps + 1
                )));
            }
            let grads = net.backward(&cache, &grad)?;
            sgd_step(net.params_mut(), &grads, &mut velocity, config)?;
            loss_sum += loss * idx.len() as f64;
            norm_sum += grads.conv1_w.norm_sq().sqrt();
            batches += 1;
            history.steps += 1;
        }
        if !net.params().is_finite() {
            return Err(Error::Numeric(format!("non-finite parameters after epoch {}", epoch + 1)));
        }
        let mean_loss = loss_sum / dataset.len() as f64;
        history.epoch_loss.push(mean_loss);
        history.conv1_grad_norm.push(norm_sum / batches as f64);
        history.epoch_seconds.push(epoch_start.elapsed().as_secs_f64());
        log::info!(
            "epoch {}/{}: loss {mean_loss:.5} ({:.1}s)",
            epoch + 1,
            config.epochs,
            history.epoch_seconds[epoch]
        );
    }
    history.total_seconds = start.elapsed().as_secs_f64();
    Ok(history)
}

/// Row-wise argmax; ties go to the lowest index.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    logits.expect_rank(2, "logits")?;
    let k = logits.dims()[1];
    if k == 0 {
        return Err(shape_err!("logits have zero classes"));
    }
    Ok(logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect())
}

/// Eval-mode predictions and the wall-seconds they took.
pub fn predict<T: Element>(net: &Network<T>, dataset: &LabeledDataset, batch_size: usize) -> Result<(Vec<usize>, f64)> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    check_dataset(net, dataset)?;
    let start = Instant::now();
    let mut preds = Vec::with_capacity(dataset.len());
    let all: Vec<usize> = (0..dataset.len()).collect();
    for idx in all.chunks(batch_size) {
        let logits = net.infer(&batch_images::<T>(dataset, idx)?)?;
        preds.extend(argmax_rows(&logits)?);
    }
    Ok((preds, start.elapsed().as_secs_f64()))
}
