//! Fully connected stochastic-threshold networks and their rate-domain passes.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, ArrayView2};
use serde_json::json;

use crate::data::checkpoint::{Checkpoint, CheckpointManifest, NamedTensor, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::rate::{sigmoid_prob_backward, sigmoid_prob_forward, RateParams, SigmoidProbSaved, Threshold};
use crate::rng::SeedTree;
use crate::scalar::Scalar;
use crate::special::{bivariate_norm_cdf, norm_cdf};
use crate::synapse::{layer_stats_backward, ste_backward, LayerStats, QuantizedLinear, SigmaType, WeightBits};
use crate::threshold::{
    init_prior, sample_thresholds_backward, MixturePrior, PriorHyper, ThresholdPosterior, ThresholdSamples,
    DEFAULT_SAMPLES, THRESHOLD_FLOOR,
};

/// Structural and numerical settings shared by every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Layer widths including the input, e.g. `[784, 100, 10]`.
    pub sizes: Vec<usize>,
    pub bits: WeightBits,
    pub sigma_type: SigmaType,
    pub rate: RateParams,
    /// Whether `∂σ_D` flows back into weights and inputs.
    pub propagate_sigma_grad: bool,
    pub threshold_floor: f64,
    pub threshold_samples: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            sizes: vec![784, 100, 10],
            bits: WeightBits::Eight,
            sigma_type: SigmaType::Squared,
            rate: RateParams::default(),
            propagate_sigma_grad: true,
            threshold_floor: THRESHOLD_FLOOR,
            threshold_samples: DEFAULT_SAMPLES,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.len() < 2 || self.sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter(format!(
                "architecture needs at least two nonzero widths, got {:?}",
                self.sizes
            )));
        }
        Ok(())
    }
}

/// Initial values of the trainable threshold parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitParams {
    pub threshold_mean: f64,
    pub rho: f64,
    /// Weights start uniform on `±weight_gain/sqrt(fan_in)`.
    pub weight_gain: f64,
    pub prior: PriorHyper,
}

impl Default for InitParams {
    fn default() -> Self {
        InitParams {
            threshold_mean: 1.0,
            rho: 0.0,
            weight_gain: 3.0,
            prior: PriorHyper::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub synapse: QuantizedLinear<T>,
    pub threshold: ThresholdPosterior<T>,
    pub prior: MixturePrior<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub config: NetworkConfig,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Network<T> {
    pub fn init(config: NetworkConfig, init: &InitParams, seeds: &SeedTree) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::new();
        for (i, w) in config.sizes.windows(2).enumerate() {
            let (fan_in, width) = (w[0], w[1]);
            let synapse = QuantizedLinear::init_uniform(width, fan_in, init.weight_gain, config.bits, &mut seeds.stream("init-weight", &[i as u64]));
            let threshold = ThresholdPosterior::new(
                width,
                init.threshold_mean,
                init.rho,
                config.threshold_floor,
                config.threshold_samples,
            )?;
            let prior = init_prior(width, &init.prior, &mut seeds.stream("init-prior", &[i as u64]))?;
            layers.push(Layer {
                synapse,
                threshold,
                prior,
            });
        }
        Ok(Network { config, layers })
    }

    pub fn inputs(&self) -> usize {
        self.config.sizes[0]
    }

    pub fn outputs(&self) -> usize {
        *self.config.sizes.last().expect("validated")
    }

    /// One set of `S` threshold draws per layer for a training step.
    pub fn sample_thresholds(&self, seeds: &SeedTree, key: &[u64]) -> Vec<ThresholdSamples<T>> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let mut k = key.to_vec();
                k.push(i as u64);
                l.threshold.sample(&mut seeds.stream("threshold", &k))
            })
            .collect()
    }

    /// Thresholds fixed at the posterior means.
    pub fn mean_thresholds(&self) -> Vec<Threshold<T>> {
        self.layers.iter().map(|l| Threshold::PerUnit(l.threshold.mean.clone())).collect()
    }

    /// Quantised weights with posterior threshold parameters, ready for spiking.
    pub fn inference(&self) -> InferenceNet<T> {
        InferenceNet {
            layers: self
                .layers
                .iter()
                .map(|l| InferenceLayer {
                    weight: l.synapse.quantized().clone(),
                    threshold_mean: l.threshold.mean.clone(),
                    threshold_sd: l.threshold.sigma(),
                    floor: l.threshold.floor,
                    drive_clip: None,
                })
                .collect(),
        }
    }

    pub fn to_checkpoint(&self, seed: u64, extra: &BTreeMap<String, serde_json::Value>) -> Checkpoint {
        let mut hyper = extra.clone();
        let c = &self.config;
        hyper.insert("sigma_type".into(), json!(c.sigma_type.to_string()));
        hyper.insert("sigmoid_scale_factor".into(), json!(c.rate.slope));
        hyper.insert("eps".into(), json!(c.rate.eps));
        hyper.insert("propagate_sigma_grad".into(), json!(c.propagate_sigma_grad));
        hyper.insert("minimum_of_threshold".into(), json!(c.threshold_floor));
        hyper.insert("threshold_samples".into(), json!(c.threshold_samples));
        if let Some(l) = self.layers.first() {
            hyper.insert("std_of_prior1".into(), json!(l.prior.sigma_wide));
            hyper.insert("std_of_prior2".into(), json!(l.prior.sigma_narrow));
            hyper.insert("mixture_ratio_of_prior".into(), json!(l.prior.mixture));
        }
        let mut tensors = BTreeMap::new();
        let to_f32 = |it: &mut dyn Iterator<Item = &T>| it.map(|v| v.f64() as f32).collect::<Vec<f32>>();
        for (i, l) in self.layers.iter().enumerate() {
            let w = l.synapse.weight();
            tensors.insert(
                format!("layer{i}.weight"),
                NamedTensor {
                    shape: vec![w.nrows(), w.ncols()],
                    data: to_f32(&mut w.iter()),
                },
            );
            for (name, v) in [
                ("threshold_mean", &l.threshold.mean),
                ("threshold_rho", &l.threshold.rho),
                ("prior_center", &l.prior.center),
            ] {
                tensors.insert(
                    format!("layer{i}.{name}"),
                    NamedTensor {
                        shape: vec![v.len()],
                        data: to_f32(&mut v.iter()),
                    },
                );
            }
        }
        Checkpoint {
            manifest: CheckpointManifest {
                version: CHECKPOINT_VERSION,
                architecture: c.sizes.clone(),
                weight_bits: c.bits.bits(),
                seed,
                hyperparameters: hyper,
                tensors: Vec::new(),
            },
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let m = &ckpt.manifest;
        let h = &m.hyperparameters;
        let num = |k: &str, default: f64| h.get(k).and_then(|v| v.as_f64()).unwrap_or(default);
        let defaults = NetworkConfig::default();
        let config = NetworkConfig {
            sizes: m.architecture.clone(),
            bits: WeightBits::from_bits(m.weight_bits)?,
            sigma_type: match h.get("sigma_type").and_then(|v| v.as_str()) {
                Some(s) => s.parse()?,
                None => defaults.sigma_type,
            },
            rate: RateParams {
                slope: num("sigmoid_scale_factor", defaults.rate.slope),
                eps: num("eps", defaults.rate.eps),
            },
            propagate_sigma_grad: h
                .get("propagate_sigma_grad")
                .and_then(|v| v.as_bool())
                .unwrap_or(defaults.propagate_sigma_grad),
            threshold_floor: num("minimum_of_threshold", defaults.threshold_floor),
            threshold_samples: num("threshold_samples", defaults.threshold_samples as f64) as usize,
        };
        config.validate()?;
        let vector = |name: String, len: usize| -> Result<Array1<T>> {
            let t = ckpt.tensor(&name)?;
            if t.shape != [len] {
                return Err(Error::Shape(format!("{name} has shape {:?}, expected [{len}]", t.shape)));
            }
            Ok(t.data.iter().map(|&v| T::of(v as f64)).collect())
        };
        let mut layers = Vec::new();
        for (i, w) in config.sizes.windows(2).enumerate() {
            let (fan_in, width) = (w[0], w[1]);
            let name = format!("layer{i}.weight");
            let t = ckpt.tensor(&name)?;
            if t.shape != [width, fan_in] {
                return Err(Error::Shape(format!("{name} has shape {:?}, expected [{width}, {fan_in}]", t.shape)));
            }
            let weight = Array2::from_shape_vec((width, fan_in), t.data.iter().map(|&v| T::of(v as f64)).collect())
                .map_err(|e| Error::Shape(e.to_string()))?;
            let threshold = ThresholdPosterior {
                mean: vector(format!("layer{i}.threshold_mean"), width)?,
                rho: vector(format!("layer{i}.threshold_rho"), width)?,
                floor: T::of(config.threshold_floor),
                samples: config.threshold_samples.max(1),
            };
            let prior = MixturePrior::new(
                vector(format!("layer{i}.prior_center"), width)?,
                num("std_of_prior1", PriorHyper::default().sigma_wide),
                num("std_of_prior2", PriorHyper::default().sigma_narrow),
                num("mixture_ratio_of_prior", PriorHyper::default().mixture),
            )?;
            layers.push(Layer {
                synapse: QuantizedLinear::new(weight, config.bits),
                threshold,
                prior,
            });
        }
        Ok(Network { config, layers })
    }
}

/// Saved activations and contexts of one rate-domain forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<T> {
    /// Input followed by every layer's output rates.
    pub activations: Vec<Array2<T>>,
    pub stats: Vec<LayerStats<T>>,
    pub probs: Vec<SigmoidProbSaved<T>>,
}

impl<T: Scalar> ForwardPass<T> {
    pub fn output(&self) -> &Array2<T> {
        self.activations.last().expect("input is always present")
    }
}

/// Propagates firing probabilities layer by layer with the given thresholds.
pub fn rate_forward<T: Scalar>(net: &Network<T>, input: ArrayView2<'_, T>, thresholds: &[Threshold<T>]) -> Result<ForwardPass<T>> {
    if thresholds.len() != net.layers.len() {
        return Err(Error::Shape(format!(
            "{} thresholds for {} layers",
            thresholds.len(),
            net.layers.len()
        )));
    }
    let mut activations = vec![input.to_owned()];
    let mut stats = Vec::new();
    let mut probs = Vec::new();
    for (layer, th) in net.layers.iter().zip(thresholds) {
        let s = layer.synapse.stats(activations.last().expect("nonempty").view(), net.config.sigma_type)?;
        let (out, saved) = sigmoid_prob_forward(&s.mean, &s.std, th, net.config.rate)?;
        activations.push(out);
        stats.push(s);
        probs.push(saved);
    }
    Ok(ForwardPass {
        activations,
        stats,
        probs,
    })
}

/// Parameter gradients of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    /// `∂L/∂W_real` per layer, after the straight-through estimator.
    pub weight: Vec<Array2<T>>,
    /// `∂L/∂θ` for the thresholds the forward pass used.
    pub threshold: Vec<Threshold<T>>,
    /// `∂L/∂μ` and `∂L/∂ρ` of the posteriors, when samples were supplied.
    pub threshold_mean: Vec<Array1<T>>,
    pub threshold_rho: Vec<Array1<T>>,
}

/// Chains `∂L/∂a_L` back through every layer.
///
/// With `samples`, each layer's threshold gradient is split evenly over its `S` clamped
/// draws and routed through the sampler's backward to the posterior parameters.
pub fn rate_backward<T: Scalar>(
    net: &Network<T>,
    grad_output: ArrayView2<'_, T>,
    pass: &ForwardPass<T>,
    samples: Option<&[ThresholdSamples<T>]>,
) -> Gradients<T> {
    let n = net.layers.len();
    let mut weight = vec![Array2::zeros((0, 0)); n];
    let mut threshold = vec![Threshold::Scalar(T::zero()); n];
    let mut grad = grad_output.to_owned();
    for i in (0..n).rev() {
        let layer = &net.layers[i];
        let (d_mean, mut d_std, d_t) = sigmoid_prob_backward(grad.view(), &pass.probs[i]);
        if !net.config.propagate_sigma_grad {
            d_std.fill(T::zero());
        }
        let (gwq, gp) = layer_stats_backward(d_mean.view(), d_std.view(), &pass.stats[i], layer.synapse.quantized().view());
        weight[i] = ste_backward(gwq.view(), layer.synapse.weight().view());
        threshold[i] = d_t;
        grad = gp;
    }
    let mut threshold_mean = Vec::new();
    let mut threshold_rho = Vec::new();
    if let Some(samples) = samples {
        for (i, (layer, s)) in net.layers.iter().zip(samples).enumerate() {
            let per_unit = match &threshold[i] {
                Threshold::PerUnit(g) => g.clone(),
                Threshold::Scalar(g) => Array1::from_elem(layer.threshold.len(), *g),
                Threshold::Full(g) => g.sum_axis(ndarray::Axis(0)),
            };
            let s_count = s.raw.nrows();
            let share = T::one() / T::of(s_count as f64);
            let gs = Array2::from_shape_fn(s.raw.raw_dim(), |(_, j)| per_unit[j] * share);
            let (dm, dr) = sample_thresholds_backward(Some(&gs), None, s, layer.threshold.mean.view(), layer.threshold.rho.view());
            threshold_mean.push(dm);
            threshold_rho.push(dr);
        }
    }
    Gradients {
        weight,
        threshold,
        threshold_mean,
        threshold_rho,
    }
}

/// One layer of a network as deployed for spiking inference.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceLayer<T> {
    /// Real-valued weights (out × in), normally the quantised ones.
    pub weight: Array2<T>,
    pub threshold_mean: Array1<T>,
    pub threshold_sd: Array1<T>,
    pub floor: T,
    /// Upper clip on each neuron's drive before thresholding.
    pub drive_clip: Option<Array1<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceNet<T> {
    pub layers: Vec<InferenceLayer<T>>,
}

impl<T: Scalar> InferenceNet<T> {
    pub fn inputs(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.nrows()
    }
}

/// Probability that a neuron with drive `N(m, s²)` reaches a threshold `max(N(mu, sigma²), floor)`.
pub fn clamped_crossing_probability(m: f64, s: f64, mu: f64, sigma: f64, floor: f64) -> f64 {
    const TINY: f64 = 1e-12;
    if sigma < TINY {
        let theta = mu.max(floor);
        return if s < TINY {
            f64::from(u8::from(m >= theta))
        } else {
            norm_cdf((m - theta) / s)
        };
    }
    if s < TINY {
        return if m >= floor { norm_cdf((m - mu) / sigma) } else { 0.0 };
    }
    let total = (s * s + sigma * sigma).sqrt();
    let a = (m - mu) / total;
    let b = (mu - floor) / sigma;
    let r = -sigma / total;
    bivariate_norm_cdf(a, b, r) + norm_cdf((floor - mu) / sigma) * norm_cdf((m - floor) / s)
}

/// Expected spike rates of every layer under per-step threshold noise.
///
/// Each drive is treated as Gaussian with the exact Bernoulli mean and variance of its
/// inputs, and the clamped Gaussian threshold is integrated out in closed form.
pub fn rate_forward_marginal<T: Scalar>(net: &InferenceNet<T>, input: ArrayView2<'_, T>) -> Result<Vec<Array2<f64>>> {
    let mut rates: Array2<f64> = input.mapv(|v| v.f64());
    let mut all = Vec::new();
    for layer in &net.layers {
        if layer.drive_clip.is_some() {
            return Err(Error::InvalidParameter("marginal rates do not model drive clipping".into()));
        }
        if rates.ncols() != layer.weight.ncols() {
            return Err(Error::Shape(format!(
                "rates have {} units, layer expects {}",
                rates.ncols(),
                layer.weight.ncols()
            )));
        }
        let w = layer.weight.mapv(|v| v.f64());
        let mean = rates.dot(&w.t());
        let var = rates.mapv(|p| p * (1.0 - p)).dot(&w.mapv(|v| v * v).t());
        let floor = layer.floor.f64();
        let out = Array2::from_shape_fn(mean.raw_dim(), |(b, j)| {
            clamped_crossing_probability(
                mean[[b, j]],
                var[[b, j]].max(0.0).sqrt(),
                layer.threshold_mean[j].f64(),
                layer.threshold_sd[j].f64(),
                floor,
            )
        });
        all.push(out.clone());
        rates = out;
    }
    Ok(all)
}


/// As [`rate_forward_marginal`], but carrying the within-step covariance of each layer's spikes.
///
/// Units of one layer share their input spikes, so their own spikes are correlated within a
/// step and the next layer's drive variance is `wᵀ C w` rather than a sum of Bernoulli
/// variances. Pairwise joint firing probabilities use the unclamped threshold, which is exact
/// whenever the floor lies far below the threshold mean.
pub fn rate_forward_correlated<T: Scalar>(net: &InferenceNet<T>, input: ArrayView2<'_, T>) -> Result<Vec<Array2<f64>>> {
    let weights: Vec<Array2<f64>> = net.layers.iter().map(|l| l.weight.mapv(|v| v.f64())).collect();
    let mut width = input.ncols();
    for (layer, w) in net.layers.iter().zip(&weights) {
        if layer.drive_clip.is_some() {
            return Err(Error::InvalidParameter("expected rates do not model drive clipping".into()));
        }
        if w.ncols() != width {
            return Err(Error::Shape(format!("rates have {width} units, layer expects {}", w.ncols())));
        }
        width = w.nrows();
    }
    let mut out: Vec<Array2<f64>> = weights.iter().map(|w| Array2::zeros((input.nrows(), w.nrows()))).collect();
    for (b, x) in input.rows().into_iter().enumerate() {
        let mut rate: Array1<f64> = x.mapv(|v| v.f64());
        // Independent Poisson inputs: diagonal covariance, kept implicit.
        let mut cov: Option<Array2<f64>> = None;
        for (li, (layer, w)) in net.layers.iter().zip(&weights).enumerate() {
            let mean = w.dot(&rate);
            let drive_cov = match &cov {
                None => {
                    let v = rate.mapv(|p| p * (1.0 - p));
                    (w * &v).dot(&w.t())
                }
                Some(c) => w.dot(c).dot(&w.t()),
            };
            let n = w.nrows();
            let floor = layer.floor.f64();
            let mu: Vec<f64> = layer.threshold_mean.iter().map(|v| v.f64()).collect();
            let sd: Vec<f64> = layer.threshold_sd.iter().map(|v| v.f64()).collect();
            let r = Array1::from_shape_fn(n, |j| {
                clamped_crossing_probability(mean[j], drive_cov[[j, j]].max(0.0).sqrt(), mu[j], sd[j], floor)
            });
            out[li].row_mut(b).assign(&r);
            if li + 1 < net.layers.len() {
                let total: Vec<f64> = (0..n).map(|j| (drive_cov[[j, j]].max(0.0) + sd[j] * sd[j]).sqrt()).collect();
                let z: Vec<f64> = (0..n).map(|j| (mean[j] - mu[j]) / total[j]).collect();
                let mut c = Array2::from_diag(&r.mapv(|p| p * (1.0 - p)));
                for j in 0..n {
                    for l in j + 1..n {
                        if total[j] > 0.0 && total[l] > 0.0 {
                            let rho = (drive_cov[[j, l]] / (total[j] * total[l])).clamp(-1.0, 1.0);
                            let joint = bivariate_norm_cdf(z[j], z[l], rho);
                            let v = joint - norm_cdf(z[j]) * norm_cdf(z[l]);
                            c[[j, l]] = v;
                            c[[l, j]] = v;
                        }
                    }
                }
                cov = Some(c);
            }
            rate = r;
        }
    }
    Ok(out)
}
