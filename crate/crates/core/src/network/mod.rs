//! The two-convolution-layer classifier:
//! conv1 → act → pool → conv2 → act → pool → flatten → dense → act →
//! dropout → dense (logits).

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activations::{self, ActivationKind, ActivationParams};
use crate::error::{shape_err, Error, Result};
use crate::kernels::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout_backward, dropout_forward, maxpool_backward, maxpool_forward,
    ConvCache, ConvSpec, DenseCache, DropoutMask, Padding, PoolCache, PoolSpec,
};
use crate::tensor::{Element, Tensor};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

/// Weight initialisation. Both are zero-mean normal with biases at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `std = sqrt(2 / fan_in)`.
    He,
    /// `std = sqrt(2 / ((1 + a^2) * fan_in))` where `a` is the negative-branch
    /// slope of the rectifier feeding the layer; equals `He` for ReLU, CReLU
    /// and non-rectifier kinds.
    #[default]
    HeSlope,
}

impl InitScheme {
    pub fn std(self, fan_in: usize, negative_slope: Option<f64>) -> f64 {
        let a = match self {
            InitScheme::He => 0.0,
            InitScheme::HeSlope => negative_slope.unwrap_or(0.0),
        };
        (2.0 / ((1.0 + a * a) * fan_in as f64)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    pub input_c: usize,
    /// `in_channels` is derived by [`ModelConfig::resolve`].
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    /// Applied after each convolution + activation.
    pub pool: PoolSpec,
    pub dense_width: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
    pub activation: ActivationKind,
    pub activation_params: ActivationParams,
    /// Use `activation` in the dense hidden layer too; ReLU otherwise.
    pub dense_activation: bool,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_h: 28,
            input_w: 28,
            input_c: 1,
            conv1: ConvSpec::new(1, 32, 5, Padding::Same),
            conv2: ConvSpec::new(32, 64, 5, Padding::Same),
            pool: PoolSpec::new(2, 2),
            dense_width: 1024,
            dropout_rate: 0.4,
            num_classes: 10,
            activation: ActivationKind::Relu,
            activation_params: ActivationParams::default(),
            dense_activation: true,
            init: InitScheme::default(),
        }
    }
}

/// Activation shapes of one sample through the network (HWC).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerShapes {
    pub conv1: [usize; 3],
    pub pool1: [usize; 3],
    pub conv2: [usize; 3],
    pub pool2: [usize; 3],
    pub flat: usize,
    /// Width after the dense activation (doubled under CReLU).
    pub hidden: usize,
}

impl ModelConfig {
    pub fn with_activation(mut self, kind: ActivationKind) -> Self {
        self.activation = kind;
        self
    }

    pub fn dense_kind(&self) -> ActivationKind {
        if self.dense_activation {
            self.activation
        } else {
            ActivationKind::Relu
        }
    }

    /// Fills in derived channel counts (CReLU doubles the channels it emits)
    /// and checks every invariant.
    pub fn resolve(mut self) -> Result<Self> {
        self.conv1.in_channels = self.input_c;
        self.conv2.in_channels = self.conv1.out_channels * self.activation.width_factor();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_c == 0 {
            return Err(Error::Config("input_c must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("num_classes {} must be >= 2", self.num_classes)));
        }
        if self.dense_width == 0 {
            return Err(Error::Config("dense_width must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.conv1.in_channels != self.input_c || self.conv2.in_channels != self.conv1.out_channels * self.activation.width_factor() {
            return Err(Error::Config("conv in_channels inconsistent with config; call resolve()".into()));
        }
        self.activation_params.validate()?;
        self.conv1.validate().map_err(as_config)?;
        self.conv2.validate().map_err(as_config)?;
        self.pool.validate().map_err(as_config)?;
        self.shapes().map(|_| ())
    }

    pub fn shapes(&self) -> Result<LayerShapes> {
        let f = self.activation.width_factor();
        let (h1, w1) = self.conv1.output_hw(self.input_h, self.input_w).map_err(as_config)?;
        let (ph1, pw1) = self.pool.output_hw(h1, w1).map_err(as_config)?;
        let (h2, w2) = self.conv2.output_hw(ph1, pw1).map_err(as_config)?;
        let (ph2, pw2) = self.pool.output_hw(h2, w2).map_err(as_config)?;
        let c1 = self.conv1.out_channels * f;
        let c2 = self.conv2.out_channels * f;
        Ok(LayerShapes {
            conv1: [h1, w1, self.conv1.out_channels],
            pool1: [ph1, pw1, c1],
            conv2: [h2, w2, self.conv2.out_channels],
            pool2: [ph2, pw2, c2],
            flat: ph2 * pw2 * c2,
            hidden: self.dense_width * self.dense_kind().width_factor(),
        })
    }

    /// Parameter names and shapes in canonical order.
    pub fn parameter_shapes(&self) -> Result<Vec<(&'static str, Vec<usize>)>> {
        let s = self.shapes()?;
        Ok(vec![
            ("conv1.weight", self.conv1.weight_dims().to_vec()),
            ("conv1.bias", vec![self.conv1.out_channels]),
            ("conv2.weight", self.conv2.weight_dims().to_vec()),
            ("conv2.bias", vec![self.conv2.out_channels]),
            ("dense1.weight", vec![s.flat, self.dense_width]),
            ("dense1.bias", vec![self.dense_width]),
            ("dense2.weight", vec![s.hidden, self.num_classes]),
            ("dense2.bias", vec![self.num_classes]),
        ])
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Shape(m) | Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    }
}

pub const PARAMETER_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "dense1.weight",
    "dense1.bias",
    "dense2.weight",
    "dense2.bias",
];

/// Weights and biases of every layer. Also used for gradients and momentum.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters<T = f32> {
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
    pub dense1_w: Tensor<T>,
    pub dense1_b: Tensor<T>,
    pub dense2_w: Tensor<T>,
    pub dense2_b: Tensor<T>,
}

pub type Gradients<T = f32> = Parameters<T>;

impl<T: Element> Parameters<T> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let tensors = config
            .parameter_shapes()?
            .into_iter()
            .map(|(_, dims)| Tensor::zeros(dims))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_vec(tensors))
    }

    fn from_vec(v: Vec<Tensor<T>>) -> Self {
        let [conv1_w, conv1_b, conv2_w, conv2_b, dense1_w, dense1_b, dense2_w, dense2_b]: [Tensor<T>; 8] =
            v.try_into().expect("eight parameter tensors");
        Parameters {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
        }
    }

    /// Tensors in [`PARAMETER_NAMES`] order.
    pub fn tensors(&self) -> [&Tensor<T>; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.dense1_w,
            &self.dense1_b,
            &self.dense2_w,
            &self.dense2_b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.dense1_w,
            &mut self.dense1_b,
            &mut self.dense2_w,
            &mut self.dense2_b,
        ]
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor<T>)> {
        PARAMETER_NAMES.into_iter().zip(self.tensors())
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn cast<U: Element>(&self) -> Parameters<U> {
        Parameters::from_vec(self.tensors().iter().map(|t| t.cast()).collect())
    }

    fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        for ((name, dims), t) in config.parameter_shapes()?.into_iter().zip(self.tensors()) {
            t.expect_dims(&dims, name)?;
        }
        Ok(())
    }
}

/// A configured, initialised network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    config: ModelConfig,
    params: Parameters<T>,
    seed: u64,
    /// Bumped on every mutable parameter borrow so stale caches are caught.
    generation: u64,
}

/// Everything [`Network::backward`] needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    config: ModelConfig,
    generation: u64,
    train_mode: bool,
    z1: Tensor<T>,
    z2: Tensor<T>,
    z3: Tensor<T>,
    conv1: ConvCache<T>,
    pool1: PoolCache,
    conv2: ConvCache<T>,
    pool2: PoolCache,
    pool2_dims: Vec<usize>,
    dense1: DenseCache<T>,
    dropout: DropoutMask<T>,
    dense2: DenseCache<T>,
}

impl<T: Element> ForwardCache<T> {
    pub fn train_mode(&self) -> bool {
        self.train_mode
    }

    /// Pre-activations of conv1, conv2 and the dense hidden layer.
    pub fn pre_activations(&self) -> [&Tensor<T>; 3] {
        [&self.z1, &self.z2, &self.z3]
    }

    /// Every discrete choice the forward pass made: the side of zero of each
    /// pre-activation and each pooling argmax. Two inputs with equal
    /// patterns lie in the same smooth region of a piecewise network.
    pub fn branch_pattern(&self) -> Vec<u64> {
        let signs = [&self.z1, &self.z2, &self.z3]
            .into_iter()
            .flat_map(|z| z.data().iter().map(|&v| u64::from(v > T::zero())));
        let argmax = [&self.pool1, &self.pool2]
            .into_iter()
            .flat_map(|p| p.argmax().iter().map(|&i| i as u64));
        signs.chain(argmax).collect()
    }
}

impl<T: Element> Network<T> {
    /// Normal weights per `config.init`, zero biases. Each layer's slope
    /// correction comes from the activation applied to its input, so conv1
    /// (raw pixels) always gets plain He scaling.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        let config = config.resolve()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Parameters::zeros(&config)?;
        let ap = &config.activation_params;
        let conv_slope = config.activation.negative_slope(ap);
        let dense_slope = config.dense_kind().negative_slope(ap);
        for (w, slope) in [
            (&mut params.conv1_w, None),
            (&mut params.conv2_w, conv_slope),
            (&mut params.dense1_w, conv_slope),
            (&mut params.dense2_w, dense_slope),
        ] {
            let fan_in: usize = w.dims()[..w.rank() - 1].iter().product();
            let normal = Normal::new(0.0, config.init.std(fan_in, slope)).expect("finite std");
            for v in w.data_mut() {
                *v = T::from_f64(normal.sample(&mut rng));
            }
        }
        Ok(Network {
            config,
            params,
            seed,
            generation: 0,
        })
    }

    pub fn from_parameters(config: ModelConfig, params: Parameters<T>, seed: u64) -> Result<Self> {
        let config = config.resolve()?;
        params.check_shapes(&config)?;
        Ok(Network {
            config,
            params,
            seed,
            generation: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &Parameters<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters<T> {
        self.generation += 1;
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_parameters(&self) -> usize {
        self.params.count()
    }

    pub fn cast<U: Element>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            params: self.params.cast(),
            seed: self.seed,
            generation: 0,
        }
    }

    fn act(&self, kind: ActivationKind, z: &Tensor<T>) -> Result<Tensor<T>> {
        activations::apply(kind, z, &self.config.activation_params)
    }

    fn act_backward(&self, kind: ActivationKind, z: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
        activations::apply_backward(kind, z, g, &self.config.activation_params)
    }

    /// Returns `[N, num_classes]` logits. `rng` is only drawn from for
    /// dropout when `train_mode` is set.
    pub fn forward<R: Rng + ?Sized>(&self, batch: &Tensor<T>, train_mode: bool, rng: &mut R) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let c = &self.config;
        batch.expect_rank(4, "network input")?;
        let n = batch.dims()[0];
        batch.expect_dims(&[n, c.input_h, c.input_w, c.input_c], "network input")?;
        let p = &self.params;
        let kind = c.activation;

        let (z1, conv1) = conv2d_forward(batch, &p.conv1_w, &p.conv1_b, &c.conv1)?;
        let (a1, pool1) = maxpool_forward(&self.act(kind, &z1)?, &c.pool)?;
        let (z2, conv2) = conv2d_forward(&a1, &p.conv2_w, &p.conv2_b, &c.conv2)?;
        let (a2, pool2) = maxpool_forward(&self.act(kind, &z2)?, &c.pool)?;
        let pool2_dims = a2.dims().to_vec();
        let flat_len = a2.len() / n.max(1);
        let flat = a2.reshape(vec![n, flat_len])?;
        let (z3, dense1) = dense_forward(&flat, &p.dense1_w, &p.dense1_b)?;
        let h = self.act(c.dense_kind(), &z3)?;
        let (h, dropout) = dropout_forward(&h, c.dropout_rate, train_mode, rng)?;
        let (logits, dense2) = dense_forward(&h, &p.dense2_w, &p.dense2_b)?;
        let cache = ForwardCache {
            config: c.clone(),
            generation: self.generation,
            train_mode,
            z1,
            z2,
            z3,
            conv1,
            pool1,
            conv2,
            pool2,
            pool2_dims,
            dense1,
            dropout,
            dense2,
        };
        Ok((logits, cache))
    }

    /// Eval-mode logits.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(batch, false, &mut rng)?.0)
    }

    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        if cache.config != self.config || cache.generation != self.generation {
            return Err(Error::InvalidArgument(
                "forward cache does not belong to the current network parameters".into(),
            ));
        }
        let c = &self.config;
        let kind = c.activation;
        let (g_h, dense2_w, dense2_b) = dense_backward(&cache.dense2, grad_logits)?;
        let g_h = dropout_backward(&cache.dropout, &g_h)?;
        let g_z3 = self.act_backward(c.dense_kind(), &cache.z3, &g_h)?;
        let (g_flat, dense1_w, dense1_b) = dense_backward(&cache.dense1, &g_z3)?;
        let g_a2 = maxpool_backward(&cache.pool2, &g_flat.reshape(cache.pool2_dims.clone())?)?;
        let g_z2 = self.act_backward(kind, &cache.z2, &g_a2)?;
        let (g_p1, conv2_w, conv2_b) = conv2d_backward(&cache.conv2, &g_z2)?;
        let g_a1 = maxpool_backward(&cache.pool1, &g_p1)?;
        let g_z1 = self.act_backward(kind, &cache.z1, &g_a1)?;
        let (_, conv1_w, conv1_b) = conv2d_backward(&cache.conv1, &g_z1)?;
        let grads = Parameters {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            dense1_w,
            dense1_b,
            dense2_w,
            dense2_b,
        };
        grads.check_shapes(&self.config).map_err(|e| shape_err!("gradient shape: {e}"))?;
        Ok(grads)
    }
}
