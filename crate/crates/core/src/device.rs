//! Magnetic tunnel junction neuron model.
//!
//! A pulse of amplitude `V` switches the junction from anti-parallel to parallel with
//! probability `logistic((V − V50)/s)`; a switch is read out as a spike and the junction
//! is reset before the next pulse.

use std::collections::BTreeMap;

use ndarray::ArrayView2;
use rand::Rng as _;
use serde::Serialize;

use crate::data::idx::NUM_CLASSES;
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::eval::{report_from_runs, EvalReport, InferenceOptions};
use crate::network::InferenceNet;
use crate::rng::{Rng, SeedTree};
use crate::scalar::Scalar;
use crate::special::{logistic, norm_quantile};
use crate::spiking::{run_spiking_many, NeuronModel, SpikingRun};

/// Measured switching counts, `voltage_V<TAB>switch_count<TAB>total_pulses`.
pub const SWITCHING_TSV: &str = include_str!("../resources/switching_probability.tsv");
/// Published per-sample output rates of paired algorithm and device runs.
pub const HARDWARE_RATES_TSV: &str = include_str!("../resources/hardware_rates.tsv");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchingPoint {
    pub voltage: f64,
    pub switched: u64,
    pub total: u64,
}

impl SwitchingPoint {
    pub fn probability(&self) -> f64 {
        self.switched as f64 / self.total as f64
    }
}

pub fn parse_switching_tsv(text: &str) -> Result<Vec<SwitchingPoint>> {
    let ctx = "switching data";
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let expected = ["voltage_V", "switch_count", "total_pulses"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::format(ctx, format!("header must be {expected:?}, got {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim().to_string();
        let bad = |k: usize| Error::format(ctx, format!("row {}: cannot parse `{}`", i + 1, field(k)));
        let voltage: f64 = field(0).parse().map_err(|_| bad(0))?;
        let switched: u64 = field(1).parse().map_err(|_| bad(1))?;
        let total: u64 = field(2).parse().map_err(|_| bad(2))?;
        if total == 0 || switched > total {
            return Err(Error::format(ctx, format!("row {}: {switched} of {total} pulses", i + 1)));
        }
        out.push(SwitchingPoint { voltage, switched, total });
    }
    Ok(out)
}

pub fn bundled_switching_data() -> Vec<SwitchingPoint> {
    parse_switching_tsv(SWITCHING_TSV).expect("bundled table is well formed")
}

/// Fitted `P(V) = logistic((V − V50)/scale)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingCurve {
    pub v50: f64,
    /// Width of the logistic in volts; the slope at V50 is `1/(4·scale)`.
    pub scale: f64,
    pub points: Vec<(f64, f64)>,
    pub max_residual: f64,
    pub rms_residual: f64,
}

impl SwitchingCurve {
    /// A curve without data, e.g. for limits and tests.
    pub fn new(v50: f64, scale: f64) -> Self {
        SwitchingCurve {
            v50,
            scale,
            points: Vec::new(),
            max_residual: 0.0,
            rms_residual: 0.0,
        }
    }

    pub fn slope(&self) -> f64 {
        1.0 / self.scale
    }

    pub fn probability(&self, v: f64) -> f64 {
        switching_probability(self, v)
    }

    /// Voltage applied for a neuron with threshold mean `mu` receiving drive `d`; negatives clamp to 0 V.
    pub fn modulate(&self, d: f64, mu: f64) -> f64 {
        (self.v50 * d / mu).max(0.0)
    }
}

pub fn switching_probability(curve: &SwitchingCurve, v: f64) -> f64 {
    if curve.scale == 0.0 {
        return if v > curve.v50 {
            1.0
        } else if v < curve.v50 {
            0.0
        } else {
            0.5
        };
    }
    logistic((v - curve.v50) / curve.scale).clamp(0.0, 1.0)
}

/// `x_mod = V50 · x / μ`.
pub fn modulate_input(x: f64, mu: f64, v50: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::InvalidParameter(format!("threshold mean must be positive, got {mu}")));
    }
    Ok(v50 * x / mu)
}

fn sse(points: &[(f64, f64)], v50: f64, scale: f64) -> f64 {
    points.iter().map(|&(v, p)| (logistic((v - v50) / scale) - p).powi(2)).sum()
}

/// Linear interpolation of the voltage where the data first reach `level`.
fn crossing(points: &[(f64, f64)], level: f64) -> Option<f64> {
    points.windows(2).find_map(|w| {
        let ((v0, p0), (v1, p1)) = (w[0], w[1]);
        (p0 < level && p1 >= level).then(|| v0 + (level - p0) * (v1 - v0) / (p1 - p0))
    })
}

/// Unweighted least-squares logistic fit (Levenberg–Marquardt on `V50` and `ln scale`).
pub fn fit_switching_curve(data: &[(f64, f64)]) -> Result<SwitchingCurve> {
    let mut points = data.to_vec();
    if points.len() < 4 {
        return Err(Error::Fit(format!("need at least 4 points, got {}", points.len())));
    }
    if points.iter().any(|&(v, p)| !v.is_finite() || !(0.0..=1.0).contains(&p)) {
        return Err(Error::Fit("points must have finite voltages and probabilities in [0, 1]".into()));
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0));
    if points.windows(2).any(|w| w[1].1 < w[0].1) {
        return Err(Error::Fit("switching probability is not monotone in voltage".into()));
    }
    if !(points.iter().any(|p| p.1 < 0.5) && points.iter().any(|p| p.1 > 0.5)) {
        return Err(Error::Fit("data do not span both sides of P = 0.5".into()));
    }
    let v_span = points.last().expect("nonempty").0 - points[0].0;
    let mut v50 = crossing(&points, 0.5).expect("spans 0.5");
    let mut scale = match (crossing(&points, 0.25), crossing(&points, 0.75)) {
        (Some(a), Some(b)) if b > a => (b - a) / (2.0 * 3f64.ln()),
        _ => v_span / 10.0,
    };
    let mut lambda = 1e-3;
    let mut err = sse(&points, v50, scale);
    for _ in 0..500 {
        let (mut a11, mut a12, mut a22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(v, p) in &points {
            let q = logistic((v - v50) / scale);
            let r = q - p;
            let dq = q * (1.0 - q);
            let j1 = -dq / scale;
            let j2 = -dq * (v - v50) / scale;
            a11 += j1 * j1;
            a12 += j1 * j2;
            a22 += j2 * j2;
            g1 += j1 * r;
            g2 += j2 * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let (b11, b22) = (a11 * (1.0 + lambda), a22 * (1.0 + lambda));
            let det = b11 * b22 - a12 * a12;
            let d1 = -(b22 * g1 - a12 * g2) / det;
            let d2 = -(b11 * g2 - a12 * g1) / det;
            let (nv, ns) = (v50 + d1, scale * d2.exp());
            let ne = sse(&points, nv, ns);
            if ne.is_finite() && ne <= err {
                let done = d1.abs() < 1e-15 * v50.abs().max(1.0) && d2.abs() < 1e-14;
                v50 = nv;
                scale = ns;
                err = ne;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !done;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    if !(scale > 0.0 && scale.is_finite() && v50.is_finite()) {
        return Err(Error::Fit("fit did not converge".into()));
    }
    let residuals: Vec<f64> = points.iter().map(|&(v, p)| logistic((v - v50) / scale) - p).collect();
    let max_residual = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let rms_residual = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt();
    Ok(SwitchingCurve {
        v50,
        scale,
        points,
        max_residual,
        rms_residual,
    })
}

pub fn fit_switching_points(points: &[SwitchingPoint]) -> Result<SwitchingCurve> {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.voltage, p.probability())).collect();
    fit_switching_curve(&pairs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeviceState {
    Parallel,
    #[default]
    AntiParallel,
}

/// One junction, always reset to anti-parallel between pulses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DeviceNeuron {
    pub state: DeviceState,
}

impl DeviceNeuron {
    /// Applies one pulse and reads the junction out; a switch to parallel is a spike.
    pub fn pulse(&mut self, v: f64, curve: &SwitchingCurve, rng: &mut Rng) -> bool {
        assert_eq!(self.state, DeviceState::AntiParallel, "junction must be reset before every pulse");
        if rng.random::<f64>() < curve.probability(v) {
            self.state = DeviceState::Parallel;
        }
        let spiked = self.state == DeviceState::Parallel;
        self.state = DeviceState::AntiParallel;
        spiked
    }
}

/// Runs samples through the device model; see [`run_spiking_many`].
pub fn device_inference<T: Scalar>(
    net: &InferenceNet<T>,
    xs: ArrayView2<'_, T>,
    steps: usize,
    curve: &SwitchingCurve,
    seeds: &SeedTree,
    ids: &[u64],
) -> Result<Vec<SpikingRun>> {
    run_spiking_many(net, xs, steps, NeuronModel::Device(curve), seeds, "device", ids)
}

/// Wilson score interval for `k` successes in `n` trials at two-sided confidence `level`.
pub fn wilson_interval(k: u64, n: u64, level: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = norm_quantile(1.0 - (1.0 - level) / 2.0);
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub const COMPARISON_HEADER: [&str; 6] = ["layer", "neuron", "algo_rate", "device_rate", "ci_low", "ci_high"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeuronComparison {
    pub layer: usize,
    pub neuron: usize,
    pub algo_rate: f64,
    pub device_rate: f64,
    /// Wilson 97.5% interval of the device rate, pooled over samples and steps.
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub neurons: Vec<NeuronComparison>,
    pub algo: EvalReport,
    pub device: EvalReport,
    /// Samples whose predicted class differs between the two modes.
    pub disagreements: usize,
}

impl ComparisonReport {
    pub fn median_abs_rate_delta(&self, layer: Option<usize>) -> f64 {
        let mut d: Vec<f64> = self
            .neurons
            .iter()
            .filter(|n| layer.map_or(true, |l| n.layer == l))
            .map(|n| (n.algo_rate - n.device_rate).abs())
            .collect();
        median(&mut d)
    }

    /// Confusion matrices of both modes, one row per (mode, true label).
    pub fn confusion_rows(&self) -> (Vec<String>, Vec<Vec<String>>) {
        let mut header = vec!["mode".to_string(), "true_label".to_string()];
        header.extend((0..self.algo.confusion.len()).map(|c| format!("pred_{c}")));
        let mut rows = Vec::new();
        for (mode, rep) in [("algorithm", &self.algo), ("device", &self.device)] {
            for (t, row) in rep.confusion.iter().enumerate() {
                let mut r = vec![mode.to_string(), t.to_string()];
                r.extend(row.iter().map(|c| c.to_string()));
                rows.push(r);
            }
        }
        (header, rows)
    }
}

pub(crate) fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs the same samples in two neuron models and compares rates and predictions.
pub fn compare_modes<T: Scalar>(
    net: &InferenceNet<T>,
    data: &LabeledSet<T>,
    opts: &InferenceOptions,
    models: [(NeuronModel<'_>, &str); 2],
    seeds: &SeedTree,
) -> Result<ComparisonReport> {
    let ids: Vec<u64> = (0..data.len() as u64).collect();
    let steps = opts.total_steps();
    let x = data.images.features.view();
    let runs_a = run_spiking_many(net, x, steps, models[0].0, seeds, models[0].1, &ids)?;
    let runs_b = run_spiking_many(net, x, steps, models[1].0, seeds, models[1].1, &ids)?;
    let algo = report_from_runs(&runs_a, &data.labels, opts)?;
    let device = report_from_runs(&runs_b, &data.labels, opts)?;
    let disagreements = algo
        .samples
        .iter()
        .zip(&device.samples)
        .filter(|(a, b)| a.pred != b.pred)
        .count();
    let mut neurons = Vec::new();
    let trials = (steps * data.len()) as u64;
    for layer in 0..net.layers.len() {
        let width = net.layers[layer].weight.nrows();
        for j in 0..width {
            let ca: u64 = runs_a.iter().map(|r| r.counts[layer][j] as u64).sum();
            let cb: u64 = runs_b.iter().map(|r| r.counts[layer][j] as u64).sum();
            let (lo, hi) = wilson_interval(cb, trials, 0.975);
            neurons.push(NeuronComparison {
                layer,
                neuron: j,
                algo_rate: ca as f64 / trials as f64,
                device_rate: cb as f64 / trials as f64,
                ci_low: lo,
                ci_high: hi,
            });
        }
    }
    Ok(ComparisonReport {
        neurons,
        algo,
        device,
        disagreements,
    })
}

/// Algorithm mode (stochastic thresholds) against the device model on the same samples.
pub fn compare_algo_device<T: Scalar>(
    net: &InferenceNet<T>,
    data: &LabeledSet<T>,
    opts: &InferenceOptions,
    curve: &SwitchingCurve,
    seeds: &SeedTree,
) -> Result<ComparisonReport> {
    compare_modes(
        net,
        data,
        opts,
        [(NeuronModel::StochasticThreshold, "spike"), (NeuronModel::Device(curve), "device")],
        seeds,
    )
}

/// One published paired row: output rates of the algorithmic model and the hardware run.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishedPair {
    pub class: usize,
    pub sample: u32,
    pub algorithm: [f64; NUM_CLASSES],
    pub device: [f64; NUM_CLASSES],
}

pub fn published_pairs() -> Vec<PublishedPair> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .from_reader(HARDWARE_RATES_TSV.as_bytes());
    let mut rows: BTreeMap<(usize, u32), (Option<[f64; NUM_CLASSES]>, Option<[f64; NUM_CLASSES]>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.expect("bundled table is well formed");
        let class: usize = rec[0].parse().expect("class");
        let sample: u32 = rec[1].parse().expect("sample");
        let mut rates = [0.0; NUM_CLASSES];
        for (k, r) in rates.iter_mut().enumerate() {
            *r = rec[3 + k].parse().expect("rate");
        }
        let e = rows.entry((class, sample)).or_default();
        match &rec[2] {
            "algorithm" => e.0 = Some(rates),
            _ => e.1 = Some(rates),
        }
    }
    rows.into_iter()
        .filter_map(|((class, sample), (a, d))| {
            Some(PublishedPair {
                class,
                sample,
                algorithm: a?,
                device: d?,
            })
        })
        .collect()
}

/// Median over output neurons of |mean algorithm rate − mean device rate|.
pub fn published_median_rate_delta(pairs: &[PublishedPair]) -> f64 {
    let n = pairs.len() as f64;
    let mut deltas: Vec<f64> = (0..NUM_CLASSES)
        .map(|k| {
            let a: f64 = pairs.iter().map(|p| p.algorithm[k]).sum::<f64>() / n;
            let d: f64 = pairs.iter().map(|p| p.device[k]).sum::<f64>() / n;
            (a - d).abs()
        })
        .collect();
    median(&mut deltas)
}
