//! Variational threshold posterior, clamped reparameterised sampling, mixture prior and KL.

use ndarray::{Array1, Array2, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::special::{gaussian_log_density, logistic, log_sum_exp, softplus};

/// Default lower clamp on every threshold sample.
pub const THRESHOLD_FLOOR: f64 = 1.0 / 128.0;
/// Default number of samples averaged into one effective threshold.
pub const DEFAULT_SAMPLES: usize = 4;
/// Smallest density allowed inside a logarithm.
pub const DENSITY_FLOOR: f64 = 1e-300;
const SIGMA_SAFE: f64 = 1e-12;

pub fn softplus_sigma<T: Scalar>(rho: T) -> T {
    T::of(softplus(rho.f64()))
}

/// Per-neuron Gaussian posterior over the firing threshold, `N(μ, softplus(ρ)²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdPosterior<T> {
    pub mean: Array1<T>,
    pub rho: Array1<T>,
    pub floor: T,
    pub samples: usize,
}

impl<T: Scalar> ThresholdPosterior<T> {
    pub fn new(neurons: usize, mean: f64, rho: f64, floor: f64, samples: usize) -> Result<Self> {
        if !(floor > 0.0) {
            return Err(Error::InvalidParameter(format!("threshold floor must be positive, got {floor}")));
        }
        if samples == 0 {
            return Err(Error::InvalidParameter("need at least one threshold sample".into()));
        }
        Ok(ThresholdPosterior {
            mean: Array1::from_elem(neurons, T::of(mean)),
            rho: Array1::from_elem(neurons, T::of(rho)),
            floor: T::of(floor),
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn sigma(&self) -> Array1<T> {
        self.rho.mapv(softplus_sigma)
    }

    pub fn sample(&self, rng: &mut Rng) -> ThresholdSamples<T> {
        sample_thresholds(self.mean.view(), self.rho.view(), self.samples, self.floor, rng)
    }
}

/// `S × n` raw and clamped threshold draws.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSamples<T> {
    pub raw: Array2<T>,
    pub clamped: Array2<T>,
    pub floor: T,
}

impl<T: Scalar> ThresholdSamples<T> {
    /// Mean of the clamped samples, one per neuron.
    pub fn effective(&self) -> Array1<T> {
        self.clamped.mean_axis(Axis(0)).expect("at least one sample")
    }
}

pub fn sample_thresholds<T: Scalar>(
    mean: ndarray::ArrayView1<'_, T>,
    rho: ndarray::ArrayView1<'_, T>,
    samples: usize,
    floor: T,
    rng: &mut Rng,
) -> ThresholdSamples<T> {
    let sigma: Vec<f64> = rho.iter().map(|r| softplus(r.f64())).collect();
    let n = mean.len();
    let mut raw = Array2::zeros((samples, n));
    for mut row in raw.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            *v = T::of(mean[j].f64() + sigma[j] * e);
        }
    }
    let clamped = raw.mapv(|v| v.max(floor));
    ThresholdSamples { raw, clamped, floor }
}

/// Custom backward of the clamped sampler.
///
/// A neuron whose raw samples touched the floor in any of the `S` draws gets no gradient.
pub fn sample_thresholds_backward<T: Scalar>(
    grad_samples: Option<&Array2<T>>,
    grad_raw: Option<&Array2<T>>,
    samples: &ThresholdSamples<T>,
    mean: ndarray::ArrayView1<'_, T>,
    rho: ndarray::ArrayView1<'_, T>,
) -> (Array1<T>, Array1<T>) {
    let (s_count, n) = samples.raw.dim();
    let mut d_mean = Array1::zeros(n);
    let mut d_rho = Array1::zeros(n);
    for j in 0..n {
        let keep = samples.raw.column(j).iter().all(|&t| t > samples.floor);
        if !keep {
            continue;
        }
        let sigma = softplus(rho[j].f64()).max(SIGMA_SAFE);
        let dsig = logistic(rho[j].f64());
        let mut gm = 0.0;
        let mut gr = 0.0;
        for s in 0..s_count {
            let gate = samples.clamped[[s, j]] > samples.floor;
            let mut g = 0.0;
            if let Some(gs) = grad_samples {
                if gate {
                    g += gs[[s, j]].f64();
                }
            }
            if let Some(gr) = grad_raw {
                g += gr[[s, j]].f64();
            }
            let eps = (samples.raw[[s, j]].f64() - mean[j].f64()) / sigma;
            gm += g;
            gr += g * eps * dsig;
        }
        d_mean[j] = T::of(gm);
        d_rho[j] = T::of(gr);
    }
    (d_mean, d_rho)
}

/// Hyperparameters of the two-component scale-mixture prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorHyper {
    /// Mean of the per-neuron prior-centre draw.
    pub center_mean: f64,
    /// Standard deviation of the per-neuron prior-centre draw.
    pub center_std: f64,
    pub sigma_wide: f64,
    pub sigma_narrow: f64,
    /// Weight of the wide component.
    pub mixture: f64,
}

impl Default for PriorHyper {
    fn default() -> Self {
        PriorHyper {
            center_mean: 3.0,
            center_std: 2.9,
            sigma_wide: 0.5,
            sigma_narrow: 0.05,
            mixture: 0.5,
        }
    }
}

/// `π·N(μ0, σ1²) + (1−π)·N(μ0, σ2²)` with a frozen per-neuron centre `μ0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePrior<T> {
    pub center: Array1<T>,
    pub sigma_wide: f64,
    pub sigma_narrow: f64,
    pub mixture: f64,
}

impl<T: Scalar> MixturePrior<T> {
    pub fn new(center: Array1<T>, sigma_wide: f64, sigma_narrow: f64, mixture: f64) -> Result<Self> {
        if !(sigma_narrow > 0.0) || !(sigma_wide > sigma_narrow) {
            return Err(Error::InvalidParameter(format!(
                "prior needs sigma_wide > sigma_narrow > 0, got {sigma_wide} and {sigma_narrow}"
            )));
        }
        if !(0.0..=1.0).contains(&mixture) {
            return Err(Error::InvalidParameter(format!("mixture weight {mixture} outside [0, 1]")));
        }
        Ok(MixturePrior {
            center,
            sigma_wide,
            sigma_narrow,
            mixture,
        })
    }

    fn component_logs(&self, theta: f64, j: usize) -> [f64; 2] {
        let c = self.center[j].f64();
        [
            self.mixture.ln() + gaussian_log_density(theta, c, self.sigma_wide),
            (1.0 - self.mixture).ln() + gaussian_log_density(theta, c, self.sigma_narrow),
        ]
    }

    /// Log mixture density of neuron `j`'s prior at `theta`.
    pub fn log_density(&self, theta: f64, j: usize) -> f64 {
        log_sum_exp(&self.component_logs(theta, j)).max(DENSITY_FLOOR.ln())
    }

    /// `d log p / d theta`; zero where the density floor is active.
    pub fn log_density_grad(&self, theta: f64, j: usize) -> f64 {
        let logs = self.component_logs(theta, j);
        let total = log_sum_exp(&logs);
        if total <= DENSITY_FLOOR.ln() {
            return 0.0;
        }
        let c = self.center[j].f64();
        let sig = [self.sigma_wide, self.sigma_narrow];
        logs.iter()
            .zip(sig)
            .map(|(l, s)| (l - total).exp() * (-(theta - c) / (s * s)))
            .sum()
    }
}

pub fn init_prior<T: Scalar>(neurons: usize, hyper: &PriorHyper, rng: &mut Rng) -> Result<MixturePrior<T>> {
    if hyper.center_std < 0.0 {
        return Err(Error::InvalidParameter("prior centre std must be nonnegative".into()));
    }
    let center = Array1::from_shape_simple_fn(neurons, || {
        let e: f64 = rng.sample(StandardNormal);
        T::of(hyper.center_mean + hyper.center_std * e)
    });
    MixturePrior::new(center, hyper.sigma_wide, hyper.sigma_narrow, hyper.mixture)
}

pub fn log_prior<T: Scalar>(theta: f64, prior: &MixturePrior<T>, neuron: usize) -> f64 {
    prior.log_density(theta, neuron)
}

fn log_posterior(theta: f64, mean: f64, sigma: f64) -> f64 {
    gaussian_log_density(theta, mean, sigma).max(DENSITY_FLOOR.ln())
}

/// Monte-Carlo KL: per neuron, the mean over samples of `log q(t_raw) − log p(t_raw)`, summed over neurons.
pub fn kl_estimate<T: Scalar>(samples: &ThresholdSamples<T>, posterior: &ThresholdPosterior<T>, prior: &MixturePrior<T>) -> f64 {
    let (s_count, n) = samples.raw.dim();
    let mut total = 0.0;
    for j in 0..n {
        let mu = posterior.mean[j].f64();
        let sigma = softplus(posterior.rho[j].f64());
        let mut acc = 0.0;
        for s in 0..s_count {
            let t = samples.raw[[s, j]].f64();
            acc += log_posterior(t, mu, sigma) - prior.log_density(t, j);
        }
        total += acc / s_count as f64;
    }
    total
}

/// Gradients of `scale · KL`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlGrad<T> {
    /// Through the sampled values, to be routed by [`sample_thresholds_backward`].
    pub raw: Array2<T>,
    /// Direct dependence of `log q` on the posterior parameters.
    pub direct_mean: Array1<T>,
    pub direct_rho: Array1<T>,
}

pub fn kl_backward<T: Scalar>(
    samples: &ThresholdSamples<T>,
    posterior: &ThresholdPosterior<T>,
    prior: &MixturePrior<T>,
    scale: f64,
) -> KlGrad<T> {
    let (s_count, n) = samples.raw.dim();
    let w = scale / s_count as f64;
    let mut raw = Array2::zeros((s_count, n));
    let mut direct_mean = Array1::zeros(n);
    let mut direct_rho = Array1::zeros(n);
    for j in 0..n {
        let mu = posterior.mean[j].f64();
        let rho = posterior.rho[j].f64();
        let sigma = softplus(rho);
        let floor_q = |t: f64| gaussian_log_density(t, mu, sigma) <= DENSITY_FLOOR.ln();
        let mut dm = 0.0;
        let mut ds = 0.0;
        for s in 0..s_count {
            let t = samples.raw[[s, j]].f64();
            let z = (t - mu) / sigma;
            let (dq_dt, dq_dmu, dq_dsigma) = if floor_q(t) {
                (0.0, 0.0, 0.0)
            } else {
                (-z / sigma, z / sigma, (z * z - 1.0) / sigma)
            };
            raw[[s, j]] = T::of(w * (dq_dt - prior.log_density_grad(t, j)));
            dm += dq_dmu;
            ds += dq_dsigma;
        }
        direct_mean[j] = T::of(w * dm);
        direct_rho[j] = T::of(w * ds * logistic(rho));
    }
    KlGrad {
        raw,
        direct_mean,
        direct_rho,
    }
}
