//! Accuracy, calibration and robustness of spiking inference.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::data::metrics::CsvTable;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::network::InferenceNet;
use crate::rng::{Rng, SeedTree};
use crate::scalar::Scalar;
use crate::special::softplus;
use crate::spiking::{mc_split_predictive, predict, run_spiking_many, NeuronModel, PredictiveRule, SpikingRun};

/// How many steps to simulate and how to read the output out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    /// Steps per Monte-Carlo run.
    pub steps: usize,
    /// Consecutive runs averaged into the predictive distribution.
    pub runs: usize,
    pub rule: PredictiveRule,
}

impl InferenceOptions {
    pub fn new(steps: usize, runs: usize) -> Self {
        InferenceOptions {
            steps,
            runs,
            rule: PredictiveRule::default(),
        }
    }

    pub fn total_steps(&self) -> usize {
        self.steps * self.runs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleOutcome {
    pub index: usize,
    pub label: usize,
    /// Class with the highest output rate over all steps.
    pub pred: usize,
    pub rates: Vec<f64>,
    pub probs: Vec<f64>,
    pub nll: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub nll: f64,
    pub entropy: f64,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<u64>>,
    /// NaN for classes without samples.
    pub class_accuracy: Vec<f64>,
    pub class_nll: Vec<f64>,
    pub samples: Vec<SampleOutcome>,
}

/// Probability smaller than this is treated as this when taking logs.
const LOG_FLOOR: f64 = f64::MIN_POSITIVE;

pub fn nll_of(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(LOG_FLOOR).ln()
}

pub fn entropy_of(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

pub fn outcome(index: usize, label: usize, rates: Vec<f64>, probs: Vec<f64>) -> SampleOutcome {
    SampleOutcome {
        index,
        label,
        pred: predict(&rates),
        nll: nll_of(&probs, label),
        entropy: entropy_of(&probs),
        rates,
        probs,
    }
}

pub fn report_from_outcomes(samples: Vec<SampleOutcome>, classes: usize) -> EvalReport {
    let mut confusion = vec![vec![0u64; classes]; classes];
    let mut class_nll = vec![0.0; classes];
    for s in &samples {
        confusion[s.label][s.pred] += 1;
        class_nll[s.label] += s.nll;
    }
    let n = samples.len() as f64;
    let correct: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let class_accuracy = (0..classes)
        .map(|c| {
            let total: u64 = confusion[c].iter().sum();
            if total == 0 {
                f64::NAN
            } else {
                confusion[c][c] as f64 / total as f64
            }
        })
        .collect();
    for (c, v) in class_nll.iter_mut().enumerate() {
        let total: u64 = confusion[c].iter().sum();
        *v = if total == 0 { f64::NAN } else { *v / total as f64 };
    }
    EvalReport {
        accuracy: correct as f64 / n,
        nll: samples.iter().map(|s| s.nll).sum::<f64>() / n,
        entropy: samples.iter().map(|s| s.entropy).sum::<f64>() / n,
        confusion,
        class_accuracy,
        class_nll,
        samples,
    }
}

pub fn report_from_runs(runs: &[SpikingRun], labels: &[u8], opts: &InferenceOptions) -> Result<EvalReport> {
    if runs.len() != labels.len() {
        return Err(Error::Shape(format!("{} evaluation labels for {} samples", labels.len(), runs.len())));
    }
    let classes = runs.first().map_or(0, |r| r.output.units());
    let samples = runs
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (run, &label))| {
            let dist = mc_split_predictive(&run.output, opts.runs, opts.rule)?;
            Ok(outcome(i, label as usize, run.output_rates(), dist.probs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(report_from_outcomes(samples, classes))
}

/// Spiking evaluation of a whole dataset; sample `i` uses stream `("spike", i)` of `seeds`.
pub fn evaluate<T: Scalar>(
    net: &InferenceNet<T>,
    data: &LabeledSet<T>,
    opts: &InferenceOptions,
    seeds: &SeedTree,
) -> Result<EvalReport> {
    evaluate_with(net, data.images.features.view(), &data.labels, opts, NeuronModel::StochasticThreshold, seeds)
}

pub fn evaluate_with<T: Scalar>(
    net: &InferenceNet<T>,
    x: ArrayView2<'_, T>,
    labels: &[u8],
    opts: &InferenceOptions,
    model: NeuronModel<'_>,
    seeds: &SeedTree,
) -> Result<EvalReport> {
    let ids: Vec<u64> = (0..x.nrows() as u64).collect();
    let runs = run_spiking_many(net, x, opts.total_steps(), model, seeds, "spike", &ids)?;
    report_from_runs(&runs, labels, opts)
}

impl EvalReport {
    /// Rows `sample_id,true_label,pred_label,rate_0..rate_{C-1},nll`.
    pub fn sample_table(&self) -> CsvTable<Vec<String>> {
        let classes = self.confusion.len();
        let mut header = vec!["sample_id".to_string(), "true_label".into(), "pred_label".into()];
        header.extend((0..classes).map(|c| format!("rate_{c}")));
        header.push("nll".into());
        let rows = self
            .samples
            .iter()
            .map(|s| {
                let mut r = vec![s.index.to_string(), s.label.to_string(), s.pred.to_string()];
                r.extend(s.rates.iter().map(|v| v.to_string()));
                r.push(s.nll.to_string());
                r
            })
            .collect();
        CsvTable { header, rows }
    }

    /// Rows `class,count,accuracy,nll`.
    pub fn class_table(&self) -> CsvTable<Vec<String>> {
        let mut t = CsvTable::new(&["class", "count", "accuracy", "nll"]);
        for c in 0..self.confusion.len() {
            t.rows.push(vec![
                c.to_string(),
                self.confusion[c].iter().sum::<u64>().to_string(),
                self.class_accuracy[c].to_string(),
                self.class_nll[c].to_string(),
            ]);
        }
        t
    }
}

fn gaussian(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Adds `N(0, (rel_sigma · max|W|)²)` to every weight, with the maximum taken per layer.
pub fn inject_weight_noise<T: Scalar>(net: &InferenceNet<T>, rel_sigma: f64, rng: &mut Rng) -> Result<InferenceNet<T>> {
    if !(rel_sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise strength must be nonnegative, got {rel_sigma}")));
    }
    let mut out = net.clone();
    if rel_sigma == 0.0 {
        return Ok(out);
    }
    for layer in &mut out.layers {
        let max = layer.weight.iter().fold(0.0f64, |m, w| m.max(w.f64().abs()));
        let sd = rel_sigma * max;
        layer.weight.mapv_inplace(|w| T::of(w.f64() + sd * gaussian(rng)));
    }
    Ok(out)
}

/// `clamp(x + N(0, σ²), 0, 1)` elementwise.
pub fn inject_input_noise<T: Scalar>(x: ArrayView2<'_, T>, sigma: f64, rng: &mut Rng) -> Result<Array2<T>> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("input noise must be nonnegative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(x.to_owned());
    }
    Ok(x.mapv(|v| T::of((v.f64() + sigma * gaussian(rng)).clamp(0.0, 1.0))))
}

/// Forces every threshold width to `softplus(rho)` and clips drives at `μ / clip_ratio`.
///
/// A clip ratio of 0 disables clipping.
pub fn threshold_noise_with_clipping<T: Scalar>(net: &InferenceNet<T>, rho: f64, clip_ratio: f64) -> Result<InferenceNet<T>> {
    if !(clip_ratio >= 0.0) || rho.is_nan() {
        return Err(Error::InvalidParameter(format!("need rho finite or -inf and clip ratio >= 0, got ({rho}, {clip_ratio})")));
    }
    let sd = if rho == f64::NEG_INFINITY { 0.0 } else { softplus(rho) };
    let mut out = net.clone();
    for layer in &mut out.layers {
        layer.threshold_sd.fill(T::of(sd));
        layer.drive_clip = (clip_ratio > 0.0).then(|| layer.threshold_mean.mapv(|m| T::of(m.f64() / clip_ratio)));
    }
    Ok(out)
}

/// One perturbation of a robustness sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Weight { rel_sigma: f64 },
    Input { sigma: f64 },
    Threshold { rho: f64, clip_ratio: f64 },
}

impl NoiseSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            NoiseSpec::Weight { .. } => "weight",
            NoiseSpec::Input { .. } => "input",
            NoiseSpec::Threshold { .. } => "threshold",
        }
    }

    pub fn params(&self) -> (f64, f64) {
        match *self {
            NoiseSpec::Weight { rel_sigma } => (rel_sigma, 0.0),
            NoiseSpec::Input { sigma } => (sigma, 0.0),
            NoiseSpec::Threshold { rho, clip_ratio } => (rho, clip_ratio),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            NoiseSpec::Weight { rel_sigma } => rel_sigma >= 0.0,
            NoiseSpec::Input { sigma } => sigma >= 0.0,
            NoiseSpec::Threshold { rho, clip_ratio } => !rho.is_nan() && clip_ratio >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid noise spec {self:?}")))
        }
    }
}

pub const SWEEP_HEADER: [&str; 6] = ["kind", "param1", "param2", "seed", "accuracy", "nll"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub kind: String,
    pub param1: f64,
    pub param2: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub nll: f64,
}

/// Mean and sample standard deviation over repeats of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub kind: String,
    pub param1: f64,
    pub param2: f64,
    pub repeats: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub nll_mean: f64,
    pub nll_std: f64,
}

pub const SUMMARY_HEADER: [&str; 8] = [
    "kind",
    "param1",
    "param2",
    "repeats",
    "accuracy_mean",
    "accuracy_std",
    "nll_mean",
    "nll_std",
];

/// Evaluates the model under every perturbation `repeats` times.
///
/// Repeat `r` draws its noise from `("noise", [r])` and its spikes from `("repeat", [r])`,
/// so all grid points of one repeat share their random numbers.
pub fn robustness_sweep<T: Scalar>(
    net: &InferenceNet<T>,
    data: &LabeledSet<T>,
    grid: &[NoiseSpec],
    repeats: usize,
    opts: &InferenceOptions,
    seeds: &SeedTree,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for spec in grid {
        spec.validate()?;
        let (p1, p2) = spec.params();
        for r in 0..repeats as u64 {
            let mut noise = seeds.stream("noise", &[r]);
            let spike_seeds = seeds.child("repeat", &[r]);
            let x = data.images.features.view();
            let report = match *spec {
                NoiseSpec::Weight { rel_sigma } => {
                    let noisy = inject_weight_noise(net, rel_sigma, &mut noise)?;
                    evaluate_with(&noisy, x, &data.labels, opts, NeuronModel::StochasticThreshold, &spike_seeds)?
                }
                NoiseSpec::Input { sigma } => {
                    let noisy = inject_input_noise(x, sigma, &mut noise)?;
                    evaluate_with(net, noisy.view(), &data.labels, opts, NeuronModel::StochasticThreshold, &spike_seeds)?
                }
                NoiseSpec::Threshold { rho, clip_ratio } => {
                    let perturbed = threshold_noise_with_clipping(net, rho, clip_ratio)?;
                    evaluate_with(&perturbed, x, &data.labels, opts, NeuronModel::StochasticThreshold, &spike_seeds)?
                }
            };
            rows.push(SweepRow {
                kind: spec.kind().into(),
                param1: p1,
                param2: p2,
                seed: r,
                accuracy: report.accuracy,
                nll: report.nll,
            });
        }
    }
    Ok(rows)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Groups sweep rows by grid point, keeping first-appearance order.
pub fn summarize_sweep(rows: &[SweepRow]) -> Vec<SweepSummary> {
    let mut keys: Vec<(String, u64, u64)> = Vec::new();
    for r in rows {
        let k = (r.kind.clone(), r.param1.to_bits(), r.param2.to_bits());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(kind, a, b)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.kind == kind && r.param1.to_bits() == a && r.param2.to_bits() == b)
                .collect();
            let (am, asd) = mean_std(&group.iter().map(|r| r.accuracy).collect::<Vec<_>>());
            let (nm, nsd) = mean_std(&group.iter().map(|r| r.nll).collect::<Vec<_>>());
            SweepSummary {
                kind,
                param1: f64::from_bits(a),
                param2: f64::from_bits(b),
                repeats: group.len(),
                accuracy_mean: am,
                accuracy_std: asd,
                nll_mean: nm,
                nll_std: nsd,
            }
        })
        .collect()
}
