use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::noise::{draw, NoiseFamily};
use super::wasserstein::{standardize, wasserstein1_sorted};
use crate::error::{Error, Result};
use crate::rng::{Rng, SeedTree};

/// Where the noise enters the neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InjectionMode {
    /// Noisy weights, the same active inputs in every sample.
    WeightFixedInput,
    /// Noisy weights, Bernoulli inputs redrawn per sample.
    WeightRandomInput,
    /// Exact weights, one noise term added to the membrane potential.
    Threshold,
}

impl InjectionMode {
    pub const ALL: [InjectionMode; 3] = [
        InjectionMode::WeightFixedInput,
        InjectionMode::WeightRandomInput,
        InjectionMode::Threshold,
    ];

    fn key(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for InjectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InjectionMode::WeightFixedInput => "weight_fixed_input",
            InjectionMode::WeightRandomInput => "weight_random_input",
            InjectionMode::Threshold => "threshold",
        })
    }
}

impl FromStr for InjectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InjectionMode::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown injection mode `{s}`")))
    }
}

/// One neuron with fan-in `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MembraneExperiment {
    pub fan_in: usize,
    pub mode: InjectionMode,
    /// Fraction of active inputs.
    pub activation_rate: f64,
    pub samples: usize,
    /// Per-weight noise is this times a family draw divided by `sqrt(n)`.
    pub weight_noise_scale: f64,
    pub threshold_noise_scale: f64,
}

impl MembraneExperiment {
    /// Number of inputs held active in the fixed-input modes.
    pub fn active_inputs(&self) -> usize {
        active_count(self.fan_in, self.activation_rate)
    }
}

fn active_count(n: usize, p: f64) -> usize {
    ((p * n as f64).round() as usize).clamp(1, n)
}

/// Mean weights `μ_i ~ N(0, 2/n)`.
fn mean_weights(n: usize, rng: &mut Rng) -> Vec<f64> {
    let d = Normal::new(0.0, (2.0 / n as f64).sqrt()).expect("positive sd");
    (0..n).map(|_| d.sample(rng)).collect()
}

/// Draws membrane potentials; `rng` supplies the mean weights first, then the noise.
pub fn membrane_samples(exp: &MembraneExperiment, family: &NoiseFamily, rng: &mut Rng) -> Result<Vec<f64>> {
    family.validate()?;
    let n = exp.fan_in;
    if n == 0 || !(0.0..=1.0).contains(&exp.activation_rate) {
        return Err(Error::InvalidParameter(format!(
            "need fan-in >= 1 and activation rate in [0, 1], got {n} and {}",
            exp.activation_rate
        )));
    }
    let mu = mean_weights(n, rng);
    let k = exp.active_inputs();
    let fixed_mean: f64 = mu[..k].iter().sum();
    let ws = exp.weight_noise_scale / (n as f64).sqrt();
    let mut out = Vec::with_capacity(exp.samples);
    for _ in 0..exp.samples {
        let x = match exp.mode {
            InjectionMode::WeightFixedInput => {
                let mut noise = 0.0;
                for _ in 0..k {
                    noise += draw(family, rng)?;
                }
                fixed_mean + ws * noise
            }
            InjectionMode::WeightRandomInput => {
                let mut x = 0.0;
                for &m in &mu {
                    if rng.random::<f64>() < exp.activation_rate {
                        x += m + ws * draw(family, rng)?;
                    }
                }
                x
            }
            InjectionMode::Threshold => fixed_mean + exp.threshold_noise_scale * draw(family, rng)?,
        };
        out.push(x);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub samples: usize,
    pub reference_samples: usize,
    pub bootstrap: usize,
    pub activation_rate: f64,
    /// Fan-in at which weight-mode and threshold-mode variances are matched.
    pub reference_fan_in: usize,
    /// Bins of the standardized-sample histogram on `[-HIST_RANGE, HIST_RANGE)`; 0 skips it.
    pub histogram_bins: usize,
}

/// Half-width of the histogram window, in standard deviations.
pub const HIST_RANGE: f64 = 6.0;

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            samples: 100_000,
            reference_samples: 1_000_000,
            bootstrap: 50,
            activation_rate: 0.5,
            reference_fan_in: 8,
            histogram_bins: 0,
        }
    }
}

pub const SWEEP_HEADER: [&str; 7] = ["mode", "family", "n", "d_N", "d_ori", "boot_se_dN", "boot_se_dori"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub mode: String,
    pub family: String,
    pub n: usize,
    #[serde(rename = "d_N")]
    pub d_n: f64,
    pub d_ori: f64,
    #[serde(rename = "boot_se_dN")]
    pub boot_se_dn: f64,
    pub boot_se_dori: f64,
    /// `(low, high, count)` bins of the standardized samples.
    #[serde(skip)]
    pub histogram: Vec<(f64, f64, u64)>,
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Distances of standardized membrane samples to a standard normal and to the standardized
/// noise family, for every family, mode and fan-in.
///
/// In threshold mode the fan-in only shifts the membrane potential by a constant, so the
/// standardized samples differ across `n` by Monte-Carlo error alone.
pub fn fan_in_sweep(
    families: &[NoiseFamily],
    modes: &[InjectionMode],
    fan_ins: &[usize],
    settings: &SweepSettings,
    seeds: &SeedTree,
) -> Result<Vec<SweepCell>> {
    if settings.samples < 2 || settings.reference_samples < 2 {
        return Err(Error::InvalidParameter("need at least two samples".into()));
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = seeds.stream("reference", &[0]);
    let ref_normal = sorted(standardize(&(0..settings.reference_samples).map(|_| normal.sample(&mut rng)).collect::<Vec<_>>())?);
    let k_ref = active_count(settings.reference_fan_in, settings.activation_rate);
    let weight_noise_scale = (settings.reference_fan_in as f64 / k_ref as f64).sqrt();

    let mut cells = Vec::new();
    for (fi, family) in families.iter().enumerate() {
        family.validate()?;
        let mut rng = seeds.stream("reference", &[1, fi as u64]);
        let raw = (0..settings.reference_samples).map(|_| draw(family, &mut rng)).collect::<Result<Vec<_>>>()?;
        let ref_family = sorted(standardize(&raw)?);
        let jobs: Vec<(InjectionMode, usize)> = modes.iter().flat_map(|&m| fan_ins.iter().map(move |&n| (m, n))).collect();
        let results: Vec<Result<SweepCell>> = jobs
            .par_iter()
            .map(|&(mode, n)| {
                let exp = MembraneExperiment {
                    fan_in: n,
                    mode,
                    activation_rate: settings.activation_rate,
                    samples: settings.samples,
                    weight_noise_scale,
                    threshold_noise_scale: 1.0,
                };
                let key_n = if mode == InjectionMode::Threshold { 0 } else { n as u64 };
                let x = membrane_samples(&exp, family, &mut seeds.stream("membrane", &[fi as u64, mode.key(), key_n]))?;
                let z = sorted(standardize(&x)?);
                let hist = if settings.histogram_bins > 0 {
                    histogram(&z, settings.histogram_bins, -HIST_RANGE, HIST_RANGE)?
                } else {
                    Vec::new()
                };
                let d_n = wasserstein1_sorted(&z, &ref_normal)?;
                let d_ori = wasserstein1_sorted(&z, &ref_family)?;
                let mut boot_n = Vec::with_capacity(settings.bootstrap);
                let mut boot_o = Vec::with_capacity(settings.bootstrap);
                let mut brng = seeds.stream("bootstrap", &[fi as u64, mode.key(), n as u64]);
                for _ in 0..settings.bootstrap {
                    let resample: Vec<f64> = (0..x.len()).map(|_| x[brng.random_range(0..x.len())]).collect();
                    let zb = sorted(standardize(&resample)?);
                    boot_n.push(wasserstein1_sorted(&zb, &ref_normal)?);
                    boot_o.push(wasserstein1_sorted(&zb, &ref_family)?);
                }
                Ok(SweepCell {
                    mode: mode.to_string(),
                    family: family.name().to_string(),
                    n,
                    d_n,
                    d_ori,
                    boot_se_dn: sample_sd(&boot_n),
                    boot_se_dori: sample_sd(&boot_o),
                    histogram: hist,
                })
            })
            .collect();
        for r in results {
            cells.push(r?);
        }
    }
    Ok(cells)
}

/// Counts of `samples` in `bins` equal-width bins on `[low, high)`; values outside are dropped.
pub fn histogram(samples: &[f64], bins: usize, low: f64, high: f64) -> Result<Vec<(f64, f64, u64)>> {
    if bins == 0 || !(low < high) {
        return Err(Error::InvalidParameter(format!("bad histogram range [{low}, {high}) with {bins} bins")));
    }
    let width = (high - low) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        if x >= low && x < high {
            let b = (((x - low) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (low + i as f64 * width, low + (i + 1) as f64 * width, c))
        .collect())
}
