//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use sbnn::distlab::InjectionMode;
use sbnn::eval::InferenceOptions;
use sbnn::spiking::PredictiveRule;
use sbnn::synapse::{SigmaType, WeightBits};
use sbnn::train::TrainConfig;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown configuration key `{key}`{}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },

    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("value `{value}` for `{key}` is not a valid {expected}")]
    Type { key: String, value: String, expected: &'static str },

    #[error("{0}")]
    Invalid(String),
}

/// A value that can be read from and written back to a config line.
trait ConfigValue {
    const EXPECTED: &'static str;
    fn parse_value(&mut self, text: &str) -> Option<()>;
    fn render(&self) -> String;
}

macro_rules! scalar_value {
    ($($t:ty => $name:literal),*) => {$(
        impl ConfigValue for $t {
            const EXPECTED: &'static str = $name;
            fn parse_value(&mut self, text: &str) -> Option<()> {
                *self = text.parse().ok()?;
                Some(())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

scalar_value!(f64 => "number", usize => "nonnegative integer", u64 => "nonnegative integer", bool => "boolean (true/false)", String => "string");

impl ConfigValue for PathBuf {
    const EXPECTED: &'static str = "path";
    fn parse_value(&mut self, text: &str) -> Option<()> {
        *self = PathBuf::from(text);
        Some(())
    }
    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl ConfigValue for Option<PathBuf> {
    const EXPECTED: &'static str = "path";
    fn parse_value(&mut self, text: &str) -> Option<()> {
        *self = (!text.is_empty()).then(|| PathBuf::from(text));
        Some(())
    }
    fn render(&self) -> String {
        self.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
    }
}

impl ConfigValue for Vec<f64> {
    const EXPECTED: &'static str = "comma-separated list of numbers";
    fn parse_value(&mut self, text: &str) -> Option<()> {
        *self = split_list(text, &[',']).map(|s| s.parse().ok()).collect::<Option<_>>()?;
        Some(())
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for Vec<usize> {
    const EXPECTED: &'static str = "list of integers separated by `,` or `-`";
    fn parse_value(&mut self, text: &str) -> Option<()> {
        *self = split_list(text, &[',', '-']).map(|s| s.parse().ok()).collect::<Option<_>>()?;
        Some(())
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl ConfigValue for Vec<String> {
    const EXPECTED: &'static str = "comma-separated list";
    fn parse_value(&mut self, text: &str) -> Option<()> {
        *self = split_list(text, &[',']).map(str::to_string).collect();
        Some(())
    }
    fn render(&self) -> String {
        self.join(",")
    }
}

impl ConfigValue for SigmaType {
    const EXPECTED: &'static str = "sigma type (sq or abs)";
    fn parse_value(&mut self, text: &str) -> Option<()> {
        *self = text.parse().ok()?;
        Some(())
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl ConfigValue for WeightBits {
    const EXPECTED: &'static str = "weight precision (1 or 8)";
    fn parse_value(&mut self, text: &str) -> Option<()> {
        *self = WeightBits::from_bits(text.parse().ok()?).ok()?;
        Some(())
    }
    fn render(&self) -> String {
        self.bits().to_string()
    }
}

fn split_list<'a>(text: &'a str, seps: &'a [char]) -> impl Iterator<Item = &'a str> {
    text.split(move |c| seps.contains(&c)).map(str::trim).filter(|s| !s.is_empty())
}

/// Which part of the data an evaluation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(ConfigError::Invalid(format!("eval_split must be train, val or test, got `{s}`"))),
        }
    }
}

/// Every setting of every subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub optimizer: String,
    pub loss_function: String,
    pub learning_rate_scheduler: String,
    pub weight_quantization_range: f64,

    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub baseline_checkpoint: Option<PathBuf>,
    pub validation_fraction: f64,
    pub threads: usize,

    pub predictive_rule: String,
    pub smoothing_alpha: f64,
    pub eval_split: String,
    pub eval_samples: usize,
    pub spike_samples: Vec<usize>,

    pub switching_data: Option<PathBuf>,
    pub device_samples_per_class: usize,

    pub weight_noise_grid: Vec<f64>,
    pub input_noise_grid: Vec<f64>,
    pub threshold_rho_grid: Vec<f64>,
    pub clip_ratio_grid: Vec<f64>,
    pub repeats: usize,

    pub families: Vec<String>,
    pub modes: Vec<String>,
    pub fan_ins: Vec<usize>,
    pub distlab_samples: usize,
    pub reference_samples: usize,
    pub bootstrap: usize,
    pub activation_rate: f64,
    pub histogram_bins: usize,

    pub plot_input: Option<PathBuf>,
    pub plot_x: String,
    pub plot_y: Vec<String>,
    pub plot_kind: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            optimizer: "adamw".into(),
            loss_function: "cross_entropy".into(),
            learning_rate_scheduler: "cosine_annealing_lr".into(),
            weight_quantization_range: 1.0,
            data_dir: PathBuf::from("data/mnist"),
            out_dir: PathBuf::from("runs"),
            checkpoint: None,
            baseline_checkpoint: None,
            validation_fraction: 5.0 / 6.0,
            threads: 0,
            predictive_rule: "count_softmax".into(),
            smoothing_alpha: 0.1,
            eval_split: "test".into(),
            eval_samples: 0,
            spike_samples: vec![0],
            switching_data: None,
            device_samples_per_class: 10,
            weight_noise_grid: vec![0.0, 0.05, 0.1, 0.15, 0.2],
            input_noise_grid: vec![0.0, 0.1, 0.25],
            threshold_rho_grid: vec![-0.5, 0.0, 0.5],
            clip_ratio_grid: vec![0.8, 0.9, 1.0],
            repeats: 3,
            families: vec!["levy_stable".into()],
            modes: InjectionMode::ALL.iter().map(|m| m.to_string()).collect(),
            fan_ins: vec![8, 64, 512],
            distlab_samples: 100_000,
            reference_samples: 1_000_000,
            bootstrap: 50,
            activation_rate: 0.5,
            histogram_bins: 100,
            plot_input: None,
            plot_x: "epoch".into(),
            plot_y: vec!["accuracy".into()],
            plot_kind: "line".into(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("optimizer", "optimiser; only adamw"),
    ("batch_size", "minibatch size"),
    ("epochs", "training epochs"),
    ("sigmoid_scale_factor", "probit-to-logit slope k"),
    ("threshold_initialization", "initial threshold mean"),
    ("minimum_of_threshold", "clamp floor of sampled thresholds"),
    ("learning_rate_threshold", "learning rate of threshold mean and rho"),
    ("weight_quantization_range", "weight clamp range; only 1"),
    ("learning_rate_weight", "learning rate of latent weights"),
    ("kl_beta", "weight of the KL term"),
    ("loss_function", "task loss; only cross_entropy"),
    ("learning_rate_scheduler", "schedule; only cosine_annealing_lr"),
    ("weight_decay", "decoupled weight decay on latent weights"),
    ("scheduler_max_epochs", "epoch at which the cosine schedule reaches 0"),
    ("prior_mu_initialization_mean", "mean of the per-neuron prior centres"),
    ("prior_mu_initialization_std", "spread of the per-neuron prior centres"),
    ("std_of_prior1", "wide prior component"),
    ("std_of_prior2", "narrow prior component"),
    ("mixture_ratio_of_prior", "weight of the wide component"),
    ("seed", "global seed"),
    ("warm_up_epochs", "linear warmup epochs"),
    ("architecture", "layer widths, e.g. 784-100-10"),
    ("weight_bits", "weight precision, 1 or 8"),
    ("sigma_type", "drive variance form, sq or abs"),
    ("eps", "std below which the firing probability is a step"),
    ("threshold_samples", "threshold draws averaged per training step"),
    ("rho_initialization", "initial threshold rho"),
    ("weight_init_gain", "weights start on +-gain/sqrt(fan_in)"),
    ("propagate_sigma_grad", "backpropagate through the drive std"),
    ("time_steps", "spiking steps per Monte-Carlo run"),
    ("mc_runs", "Monte-Carlo runs per sample"),
    ("val_every", "validate every this many epochs"),
    ("predictive_rule", "count_softmax or smoothed"),
    ("smoothing_alpha", "pseudo-count of the smoothed rule"),
    ("data_dir", "directory with the MNIST IDX files"),
    ("out_dir", "root of run directories"),
    ("checkpoint", "checkpoint directory to evaluate"),
    ("baseline_checkpoint", "second checkpoint for robustness comparisons"),
    ("validation_fraction", "fraction of the training images used for training"),
    ("threads", "worker threads; 1 is the reproducible mode, 0 picks automatically"),
    ("eval_split", "train, val or test"),
    ("eval_samples", "evaluate only the first n samples; 0 means all"),
    ("spike_samples", "sample indices for the spike command"),
    ("switching_data", "switching-probability TSV; empty uses the bundled table"),
    ("device_samples_per_class", "samples per class for device-compare"),
    ("weight_noise_grid", "relative weight noise levels"),
    ("input_noise_grid", "input noise standard deviations"),
    ("threshold_rho_grid", "threshold rho values"),
    ("clip_ratio_grid", "drive clip ratios"),
    ("repeats", "seeds per robustness grid point"),
    ("families", "noise families for distlab"),
    ("modes", "injection modes for distlab"),
    ("fan_ins", "fan-in grid for distlab"),
    ("distlab_samples", "membrane samples per cell"),
    ("reference_samples", "reference distribution samples"),
    ("bootstrap", "bootstrap resamples"),
    ("activation_rate", "fraction of active inputs"),
    ("histogram_bins", "bins of the membrane histograms"),
    ("plot_input", "CSV file to plot"),
    ("plot_x", "x column"),
    ("plot_y", "y columns (line) or value columns (heatmap)"),
    ("plot_kind", "line, or heatmap with one row per CSV row labelled by plot_x"),
];

impl ExperimentConfig {
    fn field(&mut self, key: &str) -> Option<&mut dyn ConfigValueDyn> {
        let t = &mut self.train;
        let f: &mut dyn ConfigValueDyn = match key {
            "optimizer" => &mut self.optimizer,
            "batch_size" => &mut t.batch_size,
            "epochs" => &mut t.epochs,
            "sigmoid_scale_factor" => &mut t.network.rate.slope,
            "threshold_initialization" => &mut t.init.threshold_mean,
            "minimum_of_threshold" => &mut t.network.threshold_floor,
            "learning_rate_threshold" => &mut t.lr_threshold,
            "weight_quantization_range" => &mut self.weight_quantization_range,
            "learning_rate_weight" => &mut t.lr_weight,
            "kl_beta" => &mut t.kl_beta,
            "loss_function" => &mut self.loss_function,
            "learning_rate_scheduler" => &mut self.learning_rate_scheduler,
            "weight_decay" => &mut t.weight_decay,
            "scheduler_max_epochs" => &mut t.scheduler_max_epochs,
            "prior_mu_initialization_mean" => &mut t.init.prior.center_mean,
            "prior_mu_initialization_std" => &mut t.init.prior.center_std,
            "std_of_prior1" => &mut t.init.prior.sigma_wide,
            "std_of_prior2" => &mut t.init.prior.sigma_narrow,
            "mixture_ratio_of_prior" => &mut t.init.prior.mixture,
            "seed" => &mut t.seed,
            "warm_up_epochs" => &mut t.warmup_epochs,
            "architecture" => &mut t.network.sizes,
            "weight_bits" => &mut t.network.bits,
            "sigma_type" => &mut t.network.sigma_type,
            "eps" => &mut t.network.rate.eps,
            "threshold_samples" => &mut t.network.threshold_samples,
            "rho_initialization" => &mut t.init.rho,
            "weight_init_gain" => &mut t.init.weight_gain,
            "propagate_sigma_grad" => &mut t.network.propagate_sigma_grad,
            "time_steps" => &mut t.time_steps,
            "mc_runs" => &mut t.mc_runs,
            "val_every" => &mut t.val_every,
            "predictive_rule" => &mut self.predictive_rule,
            "smoothing_alpha" => &mut self.smoothing_alpha,
            "data_dir" => &mut self.data_dir,
            "out_dir" => &mut self.out_dir,
            "checkpoint" => &mut self.checkpoint,
            "baseline_checkpoint" => &mut self.baseline_checkpoint,
            "validation_fraction" => &mut self.validation_fraction,
            "threads" => &mut self.threads,
            "eval_split" => &mut self.eval_split,
            "eval_samples" => &mut self.eval_samples,
            "spike_samples" => &mut self.spike_samples,
            "switching_data" => &mut self.switching_data,
            "device_samples_per_class" => &mut self.device_samples_per_class,
            "weight_noise_grid" => &mut self.weight_noise_grid,
            "input_noise_grid" => &mut self.input_noise_grid,
            "threshold_rho_grid" => &mut self.threshold_rho_grid,
            "clip_ratio_grid" => &mut self.clip_ratio_grid,
            "repeats" => &mut self.repeats,
            "families" => &mut self.families,
            "modes" => &mut self.modes,
            "fan_ins" => &mut self.fan_ins,
            "distlab_samples" => &mut self.distlab_samples,
            "reference_samples" => &mut self.reference_samples,
            "bootstrap" => &mut self.bootstrap,
            "activation_rate" => &mut self.activation_rate,
            "histogram_bins" => &mut self.histogram_bins,
            "plot_input" => &mut self.plot_input,
            "plot_x" => &mut self.plot_x,
            "plot_y" => &mut self.plot_y,
            "plot_kind" => &mut self.plot_kind,
            _ => return None,
        };
        Some(f)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let field = self.field(key).ok_or_else(|| ConfigError::UnknownKey {
            key: key.to_string(),
            line: None,
        })?;
        field.parse_dyn(value).ok_or_else(|| ConfigError::Type {
            key: key.to_string(),
            value: value.to_string(),
            expected: field.expected(),
        })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.clone().field(key).map(|f| f.render_dyn())
    }

    /// All settings in key order, as they would be written in a config file.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        KEYS.iter()
            .map(|(k, _)| (k.to_string(), self.get(k).expect("every listed key is settable")))
            .collect()
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn inference(&self) -> Result<InferenceOptions, ConfigError> {
        let rule = match self.predictive_rule.as_str() {
            "count_softmax" => PredictiveRule::CountSoftmax,
            "smoothed" => PredictiveRule::Smoothed {
                alpha: self.smoothing_alpha,
            },
            other => return Err(ConfigError::Invalid(format!("predictive_rule must be count_softmax or smoothed, got `{other}`"))),
        };
        Ok(InferenceOptions {
            steps: self.train.time_steps,
            runs: self.train.mc_runs,
            rule,
        })
    }

    pub fn split(&self) -> Result<Split, ConfigError> {
        self.eval_split.parse()
    }

    pub fn injection_modes(&self) -> Result<Vec<InjectionMode>, ConfigError> {
        self.modes
            .iter()
            .map(|m| m.parse().map_err(|e: sbnn::Error| ConfigError::Invalid(e.to_string())))
            .collect()
    }

    /// Checks settings that parse but are unsupported or inconsistent.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fixed = [
            ("optimizer", self.optimizer.as_str(), "adamw"),
            ("loss_function", self.loss_function.as_str(), "cross_entropy"),
            ("learning_rate_scheduler", self.learning_rate_scheduler.as_str(), "cosine_annealing_lr"),
        ];
        for (key, got, want) in fixed {
            if got != want {
                return Err(ConfigError::Invalid(format!("{key} `{got}` is not supported; use `{want}`")));
            }
        }
        if self.weight_quantization_range != 1.0 {
            return Err(ConfigError::Invalid("weight_quantization_range must be 1".into()));
        }
        if !(self.smoothing_alpha >= 0.0) {
            return Err(ConfigError::Invalid("smoothing_alpha must be nonnegative".into()));
        }
        self.inference()?;
        self.split()?;
        self.injection_modes()?;
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

/// Object-safe face of [`ConfigValue`].
trait ConfigValueDyn {
    fn parse_dyn(&mut self, text: &str) -> Option<()>;
    fn render_dyn(&self) -> String;
    fn expected(&self) -> &'static str;
}

impl<V: ConfigValue> ConfigValueDyn for V {
    fn parse_dyn(&mut self, text: &str) -> Option<()> {
        self.parse_value(text)
    }
    fn render_dyn(&self) -> String {
        self.render()
    }
    fn expected(&self) -> &'static str {
        V::EXPECTED
    }
}

/// Parses config text, then applies `overrides` in order.
pub fn parse_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.trim().to_string(),
        })?;
        let key = key.trim();
        cfg.set(key, value.trim()).map_err(|e| match e {
            ConfigError::UnknownKey { key, .. } => ConfigError::UnknownKey { key, line: Some(i + 1) },
            other => other,
        })?;
    }
    for (k, v) in overrides {
        cfg.set(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
