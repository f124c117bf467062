//! Subcommand implementations and the per-run manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use sbnn::data::{load_checkpoint, save_checkpoint, split_train_val, CsvTable, LabeledSet, Mnist};
use sbnn::device::{
    bundled_switching_data, compare_algo_device, fit_switching_points, parse_switching_tsv, ComparisonReport,
    SwitchingCurve, COMPARISON_HEADER,
};
use sbnn::distlab::{fan_in_sweep, NoiseFamily, SweepSettings, SWEEP_HEADER as DISTLAB_HEADER};
use sbnn::eval::{
    evaluate_with, report_from_runs, robustness_sweep, summarize_sweep, EvalReport, NoiseSpec, SUMMARY_HEADER,
    SWEEP_HEADER,
};
use sbnn::network::rate_forward_correlated;
use sbnn::spiking::{run_spiking_many, NeuronModel};
use sbnn::train::fit;
use sbnn::{Network32, SeedTree};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Split};
use crate::plot::{render_csv_heatmap, render_csv_plot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Spike,
    DeviceFit,
    DeviceCompare,
    Robustness,
    Distlab,
    Plot,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Train,
        Command::Eval,
        Command::Spike,
        Command::DeviceFit,
        Command::DeviceCompare,
        Command::Robustness,
        Command::Distlab,
        Command::Plot,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Spike => "spike",
            Command::DeviceFit => "device-fit",
            Command::DeviceCompare => "device-compare",
            Command::Robustness => "robustness",
            Command::Distlab => "distlab",
            Command::Plot => "plot",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Command::Train => "train a network and keep the best validation checkpoint",
            Command::Eval => "spiking evaluation of a checkpoint",
            Command::Spike => "spike records and rates of selected test samples",
            Command::DeviceFit => "fit the switching curve to measured data",
            Command::DeviceCompare => "compare algorithm and device inference",
            Command::Robustness => "accuracy under weight, input and threshold perturbations",
            Command::Distlab => "membrane-potential distributions across fan-in",
            Command::Plot => "render a CSV file as an SVG line chart",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .with_context(|| format!("unknown subcommand `{s}`"))
    }
}

/// Where a run wrote its artifacts.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: Value,
}

/// `<command>-<first 12 hex digits of the config hash>`.
pub fn run_id(command: Command, cfg: &ExperimentConfig) -> (String, String) {
    let mut h = Sha256::new();
    h.update(command.name().as_bytes());
    h.update(b"\n");
    h.update(cfg.to_text().as_bytes());
    let hash: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    (format!("{}-{}", command.name(), &hash[..12]), hash)
}

/// Collects output file names and summary values of one command.
struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
    results: Map<String, Value>,
}

impl Outputs {
    fn table<R: serde::Serialize>(&mut self, name: &str, table: &CsvTable<R>) -> Result<()> {
        table.write(self.dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn result(&mut self, key: &str, value: Value) {
        self.results.insert(key.to_string(), value);
    }
}

pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let (id, hash) = run_id(command, cfg);
    let dir = cfg.out_dir.join(&id);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut out = Outputs {
        dir: dir.clone(),
        files: Vec::new(),
        results: Map::new(),
    };
    let result = match command {
        Command::Train => train(cfg, &mut out),
        Command::Eval => eval(cfg, &mut out),
        Command::Spike => spike(cfg, &mut out),
        Command::DeviceFit => device_fit(cfg, &mut out),
        Command::DeviceCompare => device_compare(cfg, &mut out),
        Command::Robustness => robustness(cfg, &mut out),
        Command::Distlab => distlab(cfg, &mut out),
        Command::Plot => plot(cfg, &mut out),
    };
    if let Err(e) = result {
        // Only succeeds when nothing was written yet.
        let _ = fs::remove_dir(&dir);
        return Err(e);
    }
    let manifest = json!({
        "command": command.name(),
        "run_id": id,
        "config_hash": hash,
        "seed": cfg.train.seed,
        "threads": cfg.threads,
        "versions": {
            "sbnn": env!("CARGO_PKG_VERSION"),
            "sbnn-cli": env!("CARGO_PKG_VERSION"),
        },
        "config": cfg.to_pairs(),
        "wall_clock_seconds": started.elapsed().as_secs_f64(),
        "outputs": out.files,
        "results": out.results,
    });
    let path = dir.join("run.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(RunOutcome { dir, manifest })
}

fn load_mnist(cfg: &ExperimentConfig) -> Result<Mnist<f32>> {
    Mnist::load(&cfg.data_dir).with_context(|| format!("loading MNIST from {}", cfg.data_dir.display()))
}

fn split(cfg: &ExperimentConfig, seed: u64, data: &LabeledSet<f32>) -> Result<(LabeledSet<f32>, LabeledSet<f32>)> {
    Ok(split_train_val(data, cfg.validation_fraction, &mut SeedTree::new(seed).stream("split", &[]))?)
}

fn load_network(path: Option<&Path>, key: &str) -> Result<(Network32, u64)> {
    let path = path.with_context(|| format!("`{key}` must name a checkpoint directory"))?;
    let ckpt = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let seed = ckpt.manifest.seed;
    Ok((Network32::from_checkpoint(&ckpt)?, seed))
}

fn limit(data: LabeledSet<f32>, n: usize) -> LabeledSet<f32> {
    if n == 0 {
        data
    } else {
        data.head(n)
    }
}

fn train(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let mnist = load_mnist(cfg)?;
    let (tr, val) = split(cfg, cfg.train.seed, &mnist.train)?;
    let mut tc = cfg.train.clone();
    tc.dump_dir = Some(out.dir.clone());
    let outcome = fit(&tc, &tr, Some(&val), &mut |row| {
        eprintln!(
            "epoch {:>4} {:<5} loss {:.5} acc {:.4} nll {:.4}",
            row.epoch, row.split, row.loss, row.accuracy, row.nll
        )
    })?;
    out.table("metrics.csv", &outcome.metrics)?;
    let extra = cfg
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (k, Value::String(v)))
        .collect();
    save_checkpoint(&outcome.best.to_checkpoint(cfg.train.seed, &extra), out.dir.join("checkpoint"))?;
    save_checkpoint(&outcome.last.to_checkpoint(cfg.train.seed, &extra), out.dir.join("last"))?;
    out.files.push("checkpoint/".into());
    out.files.push("last/".into());
    out.result("best_epoch", json!(outcome.best_epoch));
    out.result("best_val_accuracy", json!(outcome.best_val_accuracy));
    Ok(())
}

/// The evaluation set and the spike seeds that go with it.
///
/// Validation reuses the training split and stream layout of the checkpoint's seed, so
/// its accuracy matches the record made during training.
fn eval_data(cfg: &ExperimentConfig, ckpt_seed: u64) -> Result<(LabeledSet<f32>, SeedTree)> {
    let mnist = load_mnist(cfg)?;
    let (data, seeds) = match cfg.split()? {
        Split::Test => (mnist.test, SeedTree::new(cfg.train.seed).child("test", &[])),
        Split::Val => (split(cfg, ckpt_seed, &mnist.train)?.1, SeedTree::new(ckpt_seed).child("validation", &[])),
        Split::Train => (split(cfg, ckpt_seed, &mnist.train)?.0, SeedTree::new(cfg.train.seed).child("train", &[])),
    };
    Ok((limit(data, cfg.eval_samples), seeds))
}

fn write_report(out: &mut Outputs, prefix: &str, report: &EvalReport) -> Result<()> {
    out.table(&format!("{prefix}samples.csv"), &report.sample_table())?;
    out.table(&format!("{prefix}classes.csv"), &report.class_table())?;
    let classes = report.confusion.len();
    let mut header = vec!["true_label".to_string()];
    header.extend((0..classes).map(|c| format!("pred_{c}")));
    let rows = report
        .confusion
        .iter()
        .enumerate()
        .map(|(t, row)| std::iter::once(t.to_string()).chain(row.iter().map(|c| c.to_string())).collect())
        .collect();
    out.table(&format!("{prefix}confusion.csv"), &CsvTable::<Vec<String>> { header, rows })?;
    Ok(())
}

fn eval(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let (net, ckpt_seed) = load_network(cfg.checkpoint.as_deref(), "checkpoint")?;
    let (data, seeds) = eval_data(cfg, ckpt_seed)?;
    let opts = cfg.inference()?;
    let report = evaluate_with(
        &net.inference(),
        data.images.features.view(),
        &data.labels,
        &opts,
        NeuronModel::StochasticThreshold,
        &seeds,
    )?;
    write_report(out, "", &report)?;
    let mut summary = CsvTable::new(&["split", "samples", "time_steps", "mc_runs", "accuracy", "nll", "entropy"]);
    summary.rows.push(vec![
        cfg.eval_split.clone(),
        data.len().to_string(),
        opts.steps.to_string(),
        opts.runs.to_string(),
        report.accuracy.to_string(),
        report.nll.to_string(),
        report.entropy.to_string(),
    ]);
    out.table("summary.csv", &summary)?;
    println!("accuracy {:.4}  nll {:.4}  entropy {:.4}", report.accuracy, report.nll, report.entropy);
    out.result("accuracy", json!(report.accuracy));
    out.result("nll", json!(report.nll));
    out.result("entropy", json!(report.entropy));
    Ok(())
}

fn spike(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let (net, _) = load_network(cfg.checkpoint.as_deref(), "checkpoint")?;
    let inet = net.inference();
    let mnist = load_mnist(cfg)?;
    if let Some(&bad) = cfg.spike_samples.iter().find(|&&i| i >= mnist.test.len()) {
        bail!("spike sample {bad} is outside the test set");
    }
    let data = mnist.test.subset(&cfg.spike_samples);
    let opts = cfg.inference()?;
    let ids: Vec<u64> = cfg.spike_samples.iter().map(|&i| i as u64).collect();
    let seeds = SeedTree::new(cfg.train.seed).child("spike-command", &[]);
    let x = data.images.features.view();
    let runs = run_spiking_many(&inet, x, opts.total_steps(), NeuronModel::StochasticThreshold, &seeds, "spike", &ids)?;
    let expected = rate_forward_correlated(&inet, x)?;
    let mut report = report_from_runs(&runs, &data.labels, &opts)?;
    for (s, &idx) in report.samples.iter_mut().zip(&cfg.spike_samples) {
        s.index = idx;
    }
    out.table("samples.csv", &report.sample_table())?;
    let mut neurons = CsvTable::new(&["sample_id", "layer", "neuron", "rate", "expected_rate"]);
    let mut raster = CsvTable::new(&["sample_id", "step", "output_spikes"]);
    for (b, (run, &idx)) in runs.iter().zip(&cfg.spike_samples).enumerate() {
        for (layer, counts) in run.counts.iter().enumerate() {
            for (j, &c) in counts.iter().enumerate() {
                neurons.rows.push(vec![
                    idx.to_string(),
                    layer.to_string(),
                    j.to_string(),
                    (c as f64 / run.steps as f64).to_string(),
                    expected[layer][[b, j]].to_string(),
                ]);
            }
        }
        for (t, row) in run.output.values.rows().into_iter().enumerate() {
            raster.rows.push(vec![idx.to_string(), t.to_string(), row.iter().map(|v| v.to_string()).collect::<String>()]);
        }
    }
    out.table("neurons.csv", &neurons)?;
    out.table("raster.csv", &raster)?;
    Ok(())
}

fn switching_curve(cfg: &ExperimentConfig) -> Result<SwitchingCurve> {
    let points = match &cfg.switching_data {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            parse_switching_tsv(&text)?
        }
        None => bundled_switching_data(),
    };
    Ok(fit_switching_points(&points)?)
}

fn device_fit(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let curve = switching_curve(cfg)?;
    let mut table = CsvTable::new(&["voltage_V", "measured", "fitted", "residual"]);
    for &(v, p) in &curve.points {
        let f = curve.probability(v);
        table.rows.push(vec![v.to_string(), p.to_string(), f.to_string(), (f - p).to_string()]);
    }
    out.table("curve.csv", &table)?;
    println!(
        "V50 = {:.4} V  scale = {:.5} V  max residual = {:.4}  rms = {:.4}",
        curve.v50, curve.scale, curve.max_residual, curve.rms_residual
    );
    out.result("v50", json!(curve.v50));
    out.result("scale", json!(curve.scale));
    out.result("slope", json!(curve.slope()));
    out.result("max_residual", json!(curve.max_residual));
    out.result("rms_residual", json!(curve.rms_residual));
    Ok(())
}

/// The first `per_class` test samples of every class, in index order.
pub fn balanced_subset(data: &LabeledSet<f32>, per_class: usize) -> Vec<usize> {
    let mut taken = [0usize; sbnn::data::idx::NUM_CLASSES];
    let mut idx = Vec::new();
    for (i, &l) in data.labels.iter().enumerate() {
        if taken[l as usize] < per_class {
            taken[l as usize] += 1;
            idx.push(i);
        }
    }
    idx
}

fn write_comparison(out: &mut Outputs, report: &ComparisonReport) -> Result<()> {
    let mut neurons = CsvTable::new(&COMPARISON_HEADER);
    neurons.rows.extend(report.neurons.iter().cloned());
    out.table("neurons.csv", &neurons)?;
    let (header, rows) = report.confusion_rows();
    out.table("confusion.csv", &CsvTable { header, rows })?;
    let mut classes = CsvTable::new(&["class", "algo_accuracy", "device_accuracy", "algo_nll", "device_nll"]);
    for c in 0..report.algo.confusion.len() {
        classes.rows.push(vec![
            c.to_string(),
            report.algo.class_accuracy[c].to_string(),
            report.device.class_accuracy[c].to_string(),
            report.algo.class_nll[c].to_string(),
            report.device.class_nll[c].to_string(),
        ]);
    }
    out.table("classes.csv", &classes)?;
    let mut summary = CsvTable::new(&["mode", "accuracy", "nll", "entropy"]);
    for (mode, r) in [("algorithm", &report.algo), ("device", &report.device)] {
        summary
            .rows
            .push(vec![mode.to_string(), r.accuracy.to_string(), r.nll.to_string(), r.entropy.to_string()]);
    }
    out.table("summary.csv", &summary)?;
    Ok(())
}

fn device_compare(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let (net, _) = load_network(cfg.checkpoint.as_deref(), "checkpoint")?;
    let curve = switching_curve(cfg)?;
    let mnist = load_mnist(cfg)?;
    let idx = balanced_subset(&mnist.test, cfg.device_samples_per_class);
    let data = mnist.test.subset(&idx);
    let opts = cfg.inference()?;
    let seeds = SeedTree::new(cfg.train.seed).child("device-compare", &[]);
    let report = compare_algo_device(&net.inference(), &data, &opts, &curve, &seeds)?;
    write_comparison(out, &report)?;
    println!(
        "algorithm accuracy {:.4}  device accuracy {:.4}  disagreements {}  median |rate delta| {:.4}",
        report.algo.accuracy,
        report.device.accuracy,
        report.disagreements,
        report.median_abs_rate_delta(None)
    );
    out.result("algo_accuracy", json!(report.algo.accuracy));
    out.result("device_accuracy", json!(report.device.accuracy));
    out.result("disagreements", json!(report.disagreements));
    out.result("median_abs_rate_delta", json!(report.median_abs_rate_delta(None)));
    out.result("v50", json!(curve.v50));
    Ok(())
}

pub fn noise_grid(cfg: &ExperimentConfig) -> Vec<NoiseSpec> {
    let mut grid: Vec<NoiseSpec> = cfg.weight_noise_grid.iter().map(|&s| NoiseSpec::Weight { rel_sigma: s }).collect();
    grid.extend(cfg.input_noise_grid.iter().map(|&s| NoiseSpec::Input { sigma: s }));
    for &rho in &cfg.threshold_rho_grid {
        grid.extend(cfg.clip_ratio_grid.iter().map(|&r| NoiseSpec::Threshold { rho, clip_ratio: r }));
    }
    grid
}

fn robustness(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let mnist = load_mnist(cfg)?;
    let data = limit(mnist.test, cfg.eval_samples);
    let grid = noise_grid(cfg);
    let opts = cfg.inference()?;
    let seeds = SeedTree::new(cfg.train.seed).child("robustness", &[]);
    let mut models = vec![("", cfg.checkpoint.as_deref(), "checkpoint")];
    if cfg.baseline_checkpoint.is_some() {
        models.push(("baseline_", cfg.baseline_checkpoint.as_deref(), "baseline_checkpoint"));
    }
    for (prefix, path, key) in models {
        let (net, _) = load_network(path, key)?;
        let rows = robustness_sweep(&net.inference(), &data, &grid, cfg.repeats, &opts, &seeds)?;
        let mut sweep = CsvTable::new(&SWEEP_HEADER);
        sweep.rows = rows;
        let mut summary = CsvTable::new(&SUMMARY_HEADER);
        summary.rows = summarize_sweep(&sweep.rows);
        for s in &summary.rows {
            println!(
                "{prefix}{:<9} {:>6} {:>6}  accuracy {:.4} +- {:.4}",
                s.kind, s.param1, s.param2, s.accuracy_mean, s.accuracy_std
            );
        }
        out.table(&format!("{prefix}sweep.csv"), &sweep)?;
        out.table(&format!("{prefix}summary.csv"), &summary)?;
    }
    Ok(())
}

fn distlab(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let families = cfg
        .families
        .iter()
        .map(|f| NoiseFamily::by_name(f))
        .collect::<sbnn::Result<Vec<_>>>()?;
    let settings = SweepSettings {
        samples: cfg.distlab_samples,
        reference_samples: cfg.reference_samples,
        bootstrap: cfg.bootstrap,
        activation_rate: cfg.activation_rate,
        histogram_bins: cfg.histogram_bins,
        ..SweepSettings::default()
    };
    let seeds = SeedTree::new(cfg.train.seed).child("distlab", &[]);
    let cells = fan_in_sweep(&families, &cfg.injection_modes()?, &cfg.fan_ins, &settings, &seeds)?;
    let mut hist = CsvTable::new(&["mode", "family", "n", "bin_low", "bin_high", "count"]);
    for c in &cells {
        println!(
            "{:<20} {:<16} n={:<4} d_N {:.4} ({:.4})  d_ori {:.4} ({:.4})",
            c.mode, c.family, c.n, c.d_n, c.boot_se_dn, c.d_ori, c.boot_se_dori
        );
        for &(lo, hi, count) in &c.histogram {
            hist.rows.push(vec![
                c.mode.clone(),
                c.family.clone(),
                c.n.to_string(),
                lo.to_string(),
                hi.to_string(),
                count.to_string(),
            ]);
        }
    }
    let mut table = CsvTable::new(&DISTLAB_HEADER);
    table.rows = cells;
    out.table("distlab.csv", &table)?;
    if cfg.histogram_bins > 0 {
        out.table("histograms.csv", &hist)?;
    }
    Ok(())
}

fn plot(cfg: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let input = cfg.plot_input.as_deref().context("`plot_input` must name a CSV file")?;
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let title = input.display().to_string();
    let svg = match cfg.plot_kind.as_str() {
        "line" => render_csv_plot(&text, &cfg.plot_x, &cfg.plot_y, &title)?,
        "heatmap" => render_csv_heatmap(&text, &cfg.plot_x, &cfg.plot_y, &title)?,
        other => bail!("plot_kind must be line or heatmap, got `{other}`"),
    };
    let path = out.dir.join("plot.svg");
    fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
    out.files.push("plot.svg".into());
    Ok(())
}
