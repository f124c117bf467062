//! Time-stepped stochastic spiking inference.
//!
//! Neurons are memoryless: at every step each one compares its instantaneous drive with a
//! freshly drawn threshold (or, in device mode, a fresh switching trial) and nothing is
//! carried to the next step.

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::encode::{poisson_encode_into, SpikeTrain};
use crate::device::{DeviceNeuron, SwitchingCurve};
use crate::error::{Error, Result};
use crate::network::InferenceNet;
use crate::rng::{Rng, SeedTree};
use crate::scalar::Scalar;

/// Samples evaluated together in one matrix product.
const CHUNK: usize = 32;

/// How a neuron turns its drive into a spike.
#[derive(Debug, Clone, Copy)]
pub enum NeuronModel<'a> {
    /// Fresh clamped Gaussian threshold per neuron per step.
    StochasticThreshold,
    /// Drive rescaled to a voltage and applied to a reset-before-pulse MTJ.
    Device(&'a SwitchingCurve),
}

/// The per-step firing rule: spike when the drive reaches the threshold.
#[inline]
pub fn sb_neuron_step<T: Scalar>(drive: T, threshold: T) -> bool {
    drive >= threshold
}

/// One clamped Gaussian threshold draw.
#[inline]
pub fn draw_step_threshold(mean: f64, sd: f64, floor: f64, rng: &mut Rng) -> f64 {
    let e: f64 = rng.sample(StandardNormal);
    (mean + sd * e).max(floor)
}

/// Spike record of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikingRun {
    pub steps: usize,
    /// Output-layer spikes, steps × classes.
    pub output: SpikeTrain,
    /// Spike counts of every neuron, per layer (hidden layers first, output last).
    pub counts: Vec<Vec<u32>>,
}

impl SpikingRun {
    pub fn output_counts(&self) -> &[u32] {
        self.counts.last().expect("at least one layer")
    }

    pub fn output_rates(&self) -> Vec<f64> {
        let t = self.steps as f64;
        self.output_counts().iter().map(|&c| c as f64 / t).collect()
    }

    pub fn layer_rates(&self, layer: usize) -> Vec<f64> {
        let t = self.steps as f64;
        self.counts[layer].iter().map(|&c| c as f64 / t).collect()
    }
}

fn check_model<T: Scalar>(net: &InferenceNet<T>, model: NeuronModel<'_>) -> Result<()> {
    if let NeuronModel::Device(_) = model {
        for (i, l) in net.layers.iter().enumerate() {
            if let Some(bad) = l.threshold_mean.iter().find(|m| !(m.f64() > 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "device mode needs positive threshold means; layer {i} has {bad}"
                )));
            }
        }
    }
    Ok(())
}

/// Propagates a block of input spike rows (grouped per sample, `steps` rows each).
fn propagate<T: Scalar>(
    net: &InferenceNet<T>,
    mut spikes: Array2<T>,
    steps: usize,
    model: NeuronModel<'_>,
    rngs: &mut [Rng],
) -> Vec<SpikingRun> {
    let n_samples = rngs.len();
    let mut counts: Vec<Vec<Vec<u32>>> = vec![Vec::new(); n_samples];
    for layer in &net.layers {
        let mut drive = spikes.dot(&layer.weight.t());
        let units = drive.ncols();
        if let Some(clip) = &layer.drive_clip {
            for mut row in drive.rows_mut() {
                for (d, &c) in row.iter_mut().zip(clip.iter()) {
                    *d = d.min(c);
                }
            }
        }
        let mean: Vec<f64> = layer.threshold_mean.iter().map(|v| v.f64()).collect();
        let sd: Vec<f64> = layer.threshold_sd.iter().map(|v| v.f64()).collect();
        let floor = layer.floor.f64();
        let mut next = Array2::zeros(drive.raw_dim());
        for (b, rng) in rngs.iter_mut().enumerate() {
            let mut layer_counts = vec![0u32; units];
            let mut neurons = vec![DeviceNeuron::default(); units];
            for t in 0..steps {
                let r = b * steps + t;
                for j in 0..units {
                    let d = drive[[r, j]].f64();
                    let fired = match model {
                        NeuronModel::StochasticThreshold => {
                            let th = draw_step_threshold(mean[j], sd[j], floor, rng);
                            sb_neuron_step(d, th)
                        }
                        NeuronModel::Device(curve) => {
                            let v = curve.modulate(d, mean[j]);
                            neurons[j].pulse(v, curve, rng)
                        }
                    };
                    if fired {
                        next[[r, j]] = T::one();
                        layer_counts[j] += 1;
                    }
                }
            }
            counts[b].push(layer_counts);
        }
        spikes = next;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(b, c)| SpikingRun {
            steps,
            output: SpikeTrain {
                values: spikes.slice(s![b * steps..(b + 1) * steps, ..]).mapv(|v| u8::from(v > T::zero())),
            },
            counts: c,
        })
        .collect()
}

/// Runs one sample from an explicit input spike train.
pub fn run_spiking_train<T: Scalar>(
    net: &InferenceNet<T>,
    input: &SpikeTrain,
    model: NeuronModel<'_>,
    rng: &mut Rng,
) -> Result<SpikingRun> {
    check_model(net, model)?;
    if input.units() != net.inputs() {
        return Err(Error::Shape(format!("input train has {} units, network expects {}", input.units(), net.inputs())));
    }
    let spikes = input.values.mapv(|v| if v > 0 { T::one() } else { T::zero() });
    let mut rngs = [rng.clone()];
    let mut runs = propagate(net, spikes, input.steps(), model, &mut rngs);
    *rng = rngs[0].clone();
    Ok(runs.remove(0))
}

/// Poisson-encodes `x` for `steps` steps and runs the network, drawing everything from `rng`.
pub fn run_spiking<T: Scalar>(
    net: &InferenceNet<T>,
    x: ArrayView1<'_, T>,
    steps: usize,
    model: NeuronModel<'_>,
    rng: &mut Rng,
) -> Result<SpikingRun> {
    let xs = x.insert_axis(ndarray::Axis(0));
    let mut rngs = vec![rng.clone()];
    let mut runs = run_block(net, xs, steps, model, &mut rngs)?;
    *rng = rngs.remove(0);
    Ok(runs.remove(0))
}

fn run_block<T: Scalar>(
    net: &InferenceNet<T>,
    xs: ArrayView2<'_, T>,
    steps: usize,
    model: NeuronModel<'_>,
    rngs: &mut [Rng],
) -> Result<Vec<SpikingRun>> {
    check_model(net, model)?;
    if steps == 0 {
        return Err(Error::InvalidParameter("need at least one time step".into()));
    }
    if xs.ncols() != net.inputs() {
        return Err(Error::Shape(format!("input has {} features, network expects {}", xs.ncols(), net.inputs())));
    }
    let mut spikes = Array2::zeros((xs.nrows() * steps, xs.ncols()));
    for (b, rng) in rngs.iter_mut().enumerate() {
        poisson_encode_into(xs.row(b), rng, spikes.slice_mut(s![b * steps..(b + 1) * steps, ..]));
    }
    Ok(propagate(net, spikes, steps, model, rngs))
}

/// Runs many samples, sample `i` drawing from stream `(stream, ids[i])` of `seeds`.
///
/// Results depend only on the seeds and ids, not on chunking or the number of threads.
pub fn run_spiking_many<T: Scalar>(
    net: &InferenceNet<T>,
    xs: ArrayView2<'_, T>,
    steps: usize,
    model: NeuronModel<'_>,
    seeds: &SeedTree,
    stream: &str,
    ids: &[u64],
) -> Result<Vec<SpikingRun>> {
    if ids.len() != xs.nrows() {
        return Err(Error::Shape(format!("{} ids for {} samples", ids.len(), xs.nrows())));
    }
    check_model(net, model)?;
    let starts: Vec<usize> = (0..xs.nrows()).step_by(CHUNK).collect();
    let chunks: Result<Vec<Vec<SpikingRun>>> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(xs.nrows());
            let mut rngs: Vec<Rng> = ids[start..end].iter().map(|&id| seeds.stream(stream, &[id])).collect();
            run_block(net, xs.slice(s![start..end, ..]), steps, model, &mut rngs)
        })
        .collect();
    Ok(chunks?.into_iter().flatten().collect())
}

/// Index of the largest rate; ties go to the lowest index.
pub fn predict(rates: &[f64]) -> usize {
    let mut best = 0;
    for (i, &r) in rates.iter().enumerate() {
        if r > rates[best] {
            best = i;
        }
    }
    best
}

/// Rule turning one block's output spike counts into class probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictiveRule {
    /// Softmax with the raw spike counts as logits.
    CountSoftmax,
    /// `(count + α) / Σ(count + α)`.
    Smoothed { alpha: f64 },
}

impl Default for PredictiveRule {
    fn default() -> Self {
        PredictiveRule::CountSoftmax
    }
}

impl PredictiveRule {
    pub fn block_probabilities(&self, counts: &[u32]) -> Vec<f64> {
        match *self {
            PredictiveRule::CountSoftmax => {
                let m = counts.iter().copied().max().unwrap_or(0) as f64;
                let e: Vec<f64> = counts.iter().map(|&c| (c as f64 - m).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|v| v / z).collect()
            }
            PredictiveRule::Smoothed { alpha } => {
                let z: f64 = counts.iter().map(|&c| c as f64 + alpha).sum();
                if z == 0.0 {
                    let n = counts.len() as f64;
                    return vec![1.0 / n; counts.len()];
                }
                counts.iter().map(|&c| (c as f64 + alpha) / z).collect()
            }
        }
    }
}

/// Class probabilities averaged over Monte-Carlo runs.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub probs: Vec<f64>,
    pub runs: usize,
    pub steps_per_run: usize,
}

/// Splits an output record into `runs` consecutive blocks and averages their distributions.
pub fn mc_split_predictive(output: &SpikeTrain, runs: usize, rule: PredictiveRule) -> Result<PredictiveDistribution> {
    let total = output.steps();
    if runs == 0 || total % runs != 0 {
        return Err(Error::InvalidParameter(format!("{total} steps cannot be split into {runs} equal runs")));
    }
    let len = total / runs;
    let classes = output.units();
    let mut probs = vec![0.0; classes];
    for r in 0..runs {
        let block = output.values.slice(s![r * len..(r + 1) * len, ..]);
        let counts: Vec<u32> = block.columns().into_iter().map(|c| c.iter().map(|&v| v as u32).sum()).collect();
        for (p, q) in probs.iter_mut().zip(rule.block_probabilities(&counts)) {
            *p += q / runs as f64;
        }
    }
    Ok(PredictiveDistribution {
        probs,
        runs,
        steps_per_run: len,
    })
}
