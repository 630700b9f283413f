//! Finite-difference gradient checks and the dead-unit census.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{activate, derivative, has_zero_local_gradient, has_zero_output, ActivationKind, ActivationParams};
use crate::error::{Error, Result};
use crate::kernels::{softmax_cross_entropy, ConvSpec, Padding, PoolSpec};
use crate::network::{ForwardCache, Gradients, InitScheme, ModelConfig, Network, PARAMETER_NAMES};
use crate::tensor::{Element, Tensor};

pub const SCALAR_THRESHOLD: f64 = 1e-6;
pub const NETWORK_THRESHOLD: f64 = 1e-4;
/// Denominator floor of the relative error.
pub const REL_ERR_FLOOR: f64 = 1e-6;
/// Probes closer than this many `eps` to a kink are rejected.
pub const KINK_RADIUS: f64 = 10.0;

/// Standard scalar probe points.
pub const STANDARD_PROBES: [f64; 10] = [-3.0, -2.0, -1.0, -0.5, -0.1, 0.1, 0.5, 1.0, 2.0, 3.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub probes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub subject: String,
    /// Worst relative error per parameter (or per probe point for scalar checks).
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    pub worst: Option<String>,
    pub threshold: f64,
    pub pass: bool,
    /// Probes skipped, each with the reason.
    pub rejected: Vec<String>,
}

impl GradCheckReport {
    fn finish(
        subject: String,
        entries: Vec<GradCheckEntry>,
        worst_probe: Option<(String, f64)>,
        threshold: f64,
        rejected: Vec<String>,
    ) -> Self {
        let (worst, max_rel_err) = match worst_probe {
            Some((w, e)) => (Some(w), e),
            None => (None, 0.0),
        };
        let checked: usize = entries.iter().map(|e| e.probes).sum();
        GradCheckReport {
            subject,
            pass: checked > 0 && max_rel_err < threshold,
            entries,
            max_rel_err,
            worst,
            threshold,
            rejected,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Central differences of the scalar activation against its derivative.
pub fn gradcheck_scalar(kind: ActivationKind, params: &ActivationParams, zs: &[f64], eps: f64) -> Result<GradCheckReport> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("eps {eps} must be positive")));
    }
    let mut entries = Vec::new();
    let mut rejected = Vec::new();
    let mut worst: Option<(String, f64)> = None;
    for &z in zs {
        let name = format!("{kind}@{z}");
        if kind.is_piecewise() && z.abs() <= KINK_RADIUS * eps {
            rejected.push(format!("{name}: within {KINK_RADIUS}*eps of the kink at 0"));
            continue;
        }
        let numeric = (activate(kind, z + eps, params) - activate(kind, z - eps, params)) / (2.0 * eps);
        let err = relative_error(derivative(kind, z, params), numeric);
        if worst.as_ref().is_none_or(|(_, e)| err > *e) {
            worst = Some((name.clone(), err));
        }
        entries.push(GradCheckEntry {
            name,
            max_rel_err: err,
            probes: 1,
        });
    }
    Ok(GradCheckReport::finish(
        kind.to_string(),
        entries,
        worst,
        SCALAR_THRESHOLD,
        rejected,
    ))
}

/// Small network for end-to-end checks: 6x6x1 input, two 3x3 filters per
/// conv layer, 4 hidden units, 3 classes, no dropout.
pub fn tiny_config(kind: ActivationKind) -> ModelConfig {
    ModelConfig {
        input_h: 6,
        input_w: 6,
        input_c: 1,
        conv1: ConvSpec::new(1, 2, 3, Padding::Same),
        conv2: ConvSpec::new(2, 2, 3, Padding::Same),
        pool: PoolSpec::new(2, 2),
        dense_width: 4,
        dropout_rate: 0.0,
        num_classes: 3,
        activation: kind,
        activation_params: ActivationParams::default(),
        dense_activation: true,
        init: InitScheme::default(),
    }
}

type BackwardFn<'a> = dyn Fn(&Network<f64>, &ForwardCache<f64>, &Tensor<f64>) -> Result<Gradients<f64>> + 'a;

/// Perturbs `n_probes` randomly chosen parameters and compares the loss
/// central difference with backprop. Double precision only.
pub fn gradcheck_network<T: Element>(config: &ModelConfig, seed: u64, n_probes: usize, eps: f64) -> Result<GradCheckReport> {
    if T::NAME != f64::NAME {
        return Err(Error::InvalidArgument(format!(
            "network gradient check requires double precision, got {}",
            T::NAME
        )));
    }
    gradcheck_network_with(config, seed, n_probes, eps, &|net, cache, g| net.backward(cache, g))
}

/// [`gradcheck_network`] with a substitute backward pass.
pub fn gradcheck_network_with(
    config: &ModelConfig,
    seed: u64,
    n_probes: usize,
    eps: f64,
    backward: &BackwardFn<'_>,
) -> Result<GradCheckReport> {
    if eps.is_nan() || eps <= 0.0 || n_probes == 0 {
        return Err(Error::InvalidArgument("eps must be positive and n_probes >= 1".into()));
    }
    let config = ModelConfig {
        dropout_rate: 0.0,
        ..config.clone()
    };
    let net = Network::<f64>::build(config, seed)?;
    let c = net.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let batch = 2;
    let x = Tensor::from_fn(vec![batch, c.input_h, c.input_w, c.input_c], |_| rng.random_range(-1.0..1.0))?;
    let labels: Vec<usize> = (0..batch).map(|_| rng.random_range(0..c.num_classes)).collect();

    let eval = |n: &Network<f64>| -> Result<(f64, Vec<u64>)> {
        let (logits, cache) = n.forward(&x, false, &mut rng_unused())?;
        Ok((softmax_cross_entropy(&logits, &labels)?.0, cache.branch_pattern()))
    };
    let (logits, cache) = net.forward(&x, false, &mut rng_unused())?;
    let (_, grad_logits) = softmax_cross_entropy(&logits, &labels)?;
    let grads = backward(&net, &cache, &grad_logits)?;
    let pattern = cache.branch_pattern();

    let sizes: Vec<usize> = net.params().tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let mut per_param = vec![(0.0f64, 0usize); sizes.len()];
    let mut worst: Option<(String, f64)> = None;
    let mut rejected = Vec::new();
    let mut accepted = 0;
    let max_attempts = n_probes * 20;
    for _ in 0..max_attempts {
        if accepted == n_probes {
            break;
        }
        let mut flat = rng.random_range(0..total);
        let mut ti = 0;
        while flat >= sizes[ti] {
            flat -= sizes[ti];
            ti += 1;
        }
        let name = format!("{}[{flat}]", PARAMETER_NAMES[ti]);
        let shifted = |delta: f64| -> Result<(f64, Vec<u64>)> {
            let mut n = net.clone();
            n.params_mut().tensors_mut()[ti].data_mut()[flat] += delta;
            eval(&n)
        };
        let (lp, pp) = shifted(eps)?;
        let (lm, pm) = shifted(-eps)?;
        if pp != pattern || pm != pattern {
            rejected.push(format!("{name}: perturbation crosses a kink or pooling tie"));
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let err = relative_error(grads.tensors()[ti].data()[flat], numeric);
        let slot = &mut per_param[ti];
        slot.0 = slot.0.max(err);
        slot.1 += 1;
        if worst.as_ref().is_none_or(|(_, e)| err > *e) {
            worst = Some((name, err));
        }
        accepted += 1;
    }
    if accepted < n_probes {
        return Err(Error::Numeric(format!(
            "only {accepted} of {n_probes} probes stayed within one smooth region"
        )));
    }
    let entries = PARAMETER_NAMES
        .iter()
        .zip(per_param)
        .filter(|(_, (_, n))| *n > 0)
        .map(|(name, (err, probes))| GradCheckEntry {
            name: name.to_string(),
            max_rel_err: err,
            probes,
        })
        .collect();
    Ok(GradCheckReport::finish(
        c.activation.to_string(),
        entries,
        worst,
        NETWORK_THRESHOLD,
        rejected,
    ))
}

fn rng_unused() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCensus {
    pub layer: String,
    pub units: usize,
    pub dead: usize,
    pub dead_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeadUnitCensus {
    pub activation: String,
    pub layers: Vec<LayerCensus>,
}

/// Census over one layer's pre-activations `[..., units]`: a unit (channel
/// or neuron) is dead when its activation output and local gradient are
/// zero at every sample and position.
pub fn census_layer<T: Element>(layer: &str, kind: ActivationKind, params: &ActivationParams, pre: &Tensor<T>) -> Result<LayerCensus> {
    let units = *pre
        .dims()
        .last()
        .ok_or_else(|| Error::Shape("census needs a non-scalar tensor".into()))?;
    let mut alive = vec![false; units];
    for row in pre.data().chunks_exact(units) {
        for (a, &z) in alive.iter_mut().zip(row) {
            if !*a && !(has_zero_output(kind, z, params) && has_zero_local_gradient(kind, z, params)) {
                *a = true;
            }
        }
    }
    let dead = alive.iter().filter(|&&a| !a).count();
    Ok(LayerCensus {
        layer: layer.to_string(),
        units,
        dead,
        dead_fraction: dead as f64 / units as f64,
    })
}

/// Eval-mode forward over `probe_data`, counting dead units per layer.
pub fn dead_unit_census<T: Element>(net: &Network<T>, probe_data: &Tensor<T>) -> Result<DeadUnitCensus> {
    if probe_data.is_empty() {
        return Err(Error::InvalidArgument("probe data is empty".into()));
    }
    let (_, cache) = net.forward(probe_data, false, &mut rng_unused())?;
    let c = net.config();
    let p = &c.activation_params;
    let [z1, z2, z3] = cache.pre_activations();
    Ok(DeadUnitCensus {
        activation: c.activation.to_string(),
        layers: vec![
            census_layer("conv1", c.activation, p, z1)?,
            census_layer("conv2", c.activation, p, z2)?,
            census_layer("dense1", c.dense_kind(), p, z3)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_checks_pass_for_every_kind() {
        for kind in ActivationKind::ALL {
            let r = gradcheck_scalar(kind, &ActivationParams::default(), &STANDARD_PROBES, 1e-6).unwrap();
            assert!(r.pass, "{kind}: {r:?}");
            assert!(r.rejected.is_empty());
        }
        let r = gradcheck_scalar(
            ActivationKind::QRelu,
            &ActivationParams::default(),
            &[-2.0, -1.0, -0.1, 0.1, 1.0, 2.0],
            1e-6,
        )
        .unwrap();
        assert!(r.max_rel_err < 1e-8, "{}", r.max_rel_err);
    }

    #[test]
    fn kink_probe_rejected() {
        let r = gradcheck_scalar(ActivationKind::QRelu, &ActivationParams::default(), &[1e-9, 1.0], 1e-6).unwrap();
        assert_eq!(r.rejected.len(), 1);
        assert!(r.rejected[0].contains("kink"));
        assert_eq!(r.entries.len(), 1);
        let only_kink = gradcheck_scalar(ActivationKind::Relu, &ActivationParams::default(), &[0.0], 1e-6).unwrap();
        assert!(!only_kink.pass);
    }

    #[test]
    fn network_checks_pass_for_every_kind() {
        for kind in ActivationKind::ALL {
            let r = gradcheck_network::<f64>(&tiny_config(kind), 7, 50, 1e-4).unwrap();
            assert!(r.pass, "{kind}: {r:?}");
            assert_eq!(r.entries.iter().map(|e| e.probes).sum::<usize>(), 50);
        }
    }

    #[test]
    fn single_precision_refused() {
        assert!(matches!(
            gradcheck_network::<f32>(&tiny_config(ActivationKind::Relu), 0, 5, 1e-4),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn sign_flipped_backward_fails() {
        let flip = |net: &Network<f64>, cache: &ForwardCache<f64>, g: &Tensor<f64>| {
            let mut grads = net.backward(cache, g)?;
            grads.conv2_w = grads.conv2_w.map(|v| -v);
            Ok(grads)
        };
        let r = gradcheck_network_with(&tiny_config(ActivationKind::QRelu), 3, 50, 1e-4, &flip).unwrap();
        assert!(!r.pass);
        assert!(r.worst.as_deref().unwrap().starts_with("conv2.weight"), "{:?}", r.worst);
    }

    #[test]
    fn layer_census_examples() {
        let p = ActivationParams::default();
        let negative = Tensor::from_fn(vec![4, 3, 3, 5], |i| -0.1 - i as f64 * 0.01).unwrap();
        assert_eq!(census_layer("l", ActivationKind::Relu, &p, &negative).unwrap().dead_fraction, 1.0);
        for kind in [
            ActivationKind::QRelu,
            ActivationKind::MQRelu,
            ActivationKind::LeakyRelu,
            ActivationKind::VlRelu,
            ActivationKind::Elu,
            ActivationKind::Selu,
            ActivationKind::Sigmoid,
            ActivationKind::Tanh,
        ] {
            assert_eq!(census_layer("l", kind, &p, &negative).unwrap().dead_fraction, 0.0, "{kind}");
            let zeros = Tensor::<f64>::zeros(vec![2, 5]).unwrap();
            assert_eq!(census_layer("l", kind, &p, &zeros).unwrap().dead, 0, "{kind}");
        }
        // channel 0 negative everywhere, channel 1 positive once
        let mixed = Tensor::new(vec![2, 2], vec![-1.0, -1.0, -2.0, 0.5]).unwrap();
        let c = census_layer("l", ActivationKind::Relu, &p, &mixed).unwrap();
        assert_eq!((c.units, c.dead), (2, 1));
    }

    #[test]
    fn network_census_under_all_negative_first_layer() {
        let x = Tensor::<f64>::full(vec![3, 6, 6, 1], 1.0).unwrap();
        for kind in [ActivationKind::Relu, ActivationKind::QRelu, ActivationKind::MQRelu] {
            let mut net = Network::<f64>::build(tiny_config(kind), 1).unwrap();
            let p = net.params_mut();
            p.conv1_w = p.conv1_w.map(|v| -v.abs() - 0.01);
            let census = dead_unit_census(&net, &x).unwrap();
            let want = if kind == ActivationKind::Relu { 1.0 } else { 0.0 };
            for layer in &census.layers {
                assert_eq!(layer.dead_fraction, want, "{kind} {}", layer.layer);
            }
        }
    }
}
