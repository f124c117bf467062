use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;

use crate::data::checkpoint::save_checkpoint;
use crate::data::metrics::{CsvTable, MetricsRow, METRICS_HEADER};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::eval::{entropy_of, evaluate, InferenceOptions};
use crate::network::{rate_backward, rate_forward, Network};
use crate::rate::Threshold;
use crate::rng::SeedTree;
use crate::scalar::Scalar;
use crate::spiking::predict;
use crate::threshold::{kl_backward, kl_estimate, sample_thresholds_backward};

use super::config::TrainConfig;
use super::loss::{softmax_cross_entropy, softmax_rows, total_loss};
use super::optim::{AdamHyper, AdamW, OptimizerState};
use super::schedule::cosine_lr;

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    /// Model with the best validation accuracy (the final one without validation data).
    pub best: Network<T>,
    pub last: Network<T>,
    pub best_epoch: Option<usize>,
    pub best_val_accuracy: Option<f64>,
    pub metrics: CsvTable<MetricsRow>,
}

/// Losses of one minibatch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub correct: usize,
    pub entropy: f64,
}

/// One optimisation step on a minibatch.
pub fn train_step<T: Scalar>(
    net: &mut Network<T>,
    state: &mut OptimizerState<T>,
    x: ndarray::ArrayView2<'_, T>,
    labels: &[u8],
    config: &TrainConfig,
    lrs: (f64, f64),
    seeds: &SeedTree,
    key: &[u64],
) -> Result<BatchLoss> {
    let samples = net.sample_thresholds(seeds, key);
    let thresholds: Vec<Threshold<T>> = samples.iter().map(|s| Threshold::PerUnit(s.effective())).collect();
    let pass = rate_forward(net, x, &thresholds)?;
    let (ce, grad) = softmax_cross_entropy(pass.output().view(), labels)?;
    let kl: f64 = net
        .layers
        .iter()
        .zip(&samples)
        .map(|(l, s)| kl_estimate(s, &l.threshold, &l.prior))
        .sum();
    let loss = total_loss(ce, kl, config.kl_beta);
    if !loss.is_finite() {
        return Err(Error::Diverged {
            quantity: format!("loss (ce {ce}, kl {kl})"),
            epoch: key.first().copied().unwrap_or(0) as usize,
            batch: key.get(1).copied().unwrap_or(0) as usize,
            dump: None,
        });
    }
    let out = pass.output();
    let probs = softmax_rows(out.view());
    let mut correct = 0;
    let mut entropy = 0.0;
    for (b, row) in out.axis_iter(Axis(0)).enumerate() {
        let r: Vec<f64> = row.iter().map(|v| v.f64()).collect();
        correct += usize::from(predict(&r) == labels[b] as usize);
        entropy += entropy_of(probs.row(b).as_slice().expect("contiguous"));
    }

    let mut grads = rate_backward(net, grad.view(), &pass, Some(&samples));
    if config.kl_beta > 0.0 {
        for (i, (layer, s)) in net.layers.iter().zip(&samples).enumerate() {
            let kg = kl_backward(s, &layer.threshold, &layer.prior, config.kl_beta);
            let (dm, dr) = sample_thresholds_backward(None, Some(&kg.raw), s, layer.threshold.mean.view(), layer.threshold.rho.view());
            grads.threshold_mean[i] = &grads.threshold_mean[i] + &dm + &kg.direct_mean;
            grads.threshold_rho[i] = &grads.threshold_rho[i] + &dr + &kg.direct_rho;
        }
    }

    state.step += 1;
    let opt = AdamW { hyper: AdamHyper::default() };
    let (lr_w, lr_t) = lrs;
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let mut res = Ok(());
        let gw: &Array2<T> = &grads.weight[i];
        let moments = &mut state.weight[i];
        layer.synapse.update_weight(|w| {
            res = opt.update(&format!("layer{i}.weight"), w.view_mut(), gw, moments, state.step, lr_w, config.weight_decay);
        });
        res?;
        let gm: &Array1<T> = &grads.threshold_mean[i];
        opt.update(
            &format!("layer{i}.threshold_mean"),
            layer.threshold.mean.view_mut(),
            gm,
            &mut state.threshold_mean[i],
            state.step,
            lr_t,
            0.0,
        )?;
        opt.update(
            &format!("layer{i}.threshold_rho"),
            layer.threshold.rho.view_mut(),
            &grads.threshold_rho[i],
            &mut state.threshold_rho[i],
            state.step,
            lr_t,
            0.0,
        )?;
    }
    Ok(BatchLoss {
        loss,
        ce,
        kl,
        correct,
        entropy,
    })
}

/// Trains from scratch; see [`fit_from`].
pub fn fit<T: Scalar>(
    config: &TrainConfig,
    train: &LabeledSet<T>,
    val: Option<&LabeledSet<T>>,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<FitOutcome<T>> {
    config.validate()?;
    let seeds = SeedTree::new(config.seed);
    let net = Network::init(config.network.clone(), &config.init, &seeds)?;
    fit_from(net, config, train, val, on_row)
}

/// Runs the epoch loop on `net`.
///
/// Every batch draws fresh thresholds from `("threshold", [epoch, batch, layer])`; the
/// sample order of each epoch comes from `("shuffle", [epoch])`. Validation runs the
/// spiking network with per-sample streams `("spike", i)` of the `"validation"` child.
pub fn fit_from<T: Scalar>(
    mut net: Network<T>,
    config: &TrainConfig,
    train: &LabeledSet<T>,
    val: Option<&LabeledSet<T>>,
    on_row: &mut dyn FnMut(&MetricsRow),
) -> Result<FitOutcome<T>> {
    config.validate()?;
    if train.images.dim() != net.inputs() {
        return Err(Error::Shape(format!(
            "training data has {} features, network expects {}",
            train.images.dim(),
            net.inputs()
        )));
    }
    let seeds = SeedTree::new(config.seed);
    let mut state = OptimizerState::for_network(&net);
    let mut metrics = CsvTable::new(&METRICS_HEADER);
    let mut best = net.clone();
    let mut best_epoch = None;
    let mut best_val_accuracy: Option<f64> = None;
    let opts = InferenceOptions::new(config.time_steps, config.mc_runs);
    let n = train.len();
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lrs = (
            cosine_lr(epoch, config.lr_weight, config.scheduler_max_epochs, config.warmup_epochs),
            cosine_lr(epoch, config.lr_threshold, config.scheduler_max_epochs, config.warmup_epochs),
        );
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeds.stream("shuffle", &[epoch as u64]));
        let (mut loss, mut ce, mut kl, mut entropy) = (0.0, 0.0, 0.0, 0.0);
        let mut correct = 0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let x = train.images.features.select(Axis(0), idx);
            let labels: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
            let before = config.dump_dir.as_ref().map(|_| net.clone());
            let step = train_step(
                &mut net,
                &mut state,
                x.view(),
                &labels,
                config,
                lrs,
                &seeds,
                &[epoch as u64, batch as u64],
            );
            let b = match step {
                Ok(b) => b,
                Err(err) => return Err(dump_on_divergence(err, before.as_ref(), config, epoch, batch)),
            };
            let w = idx.len() as f64 / n as f64;
            loss += b.loss * w;
            ce += b.ce * w;
            kl += b.kl * w;
            entropy += b.entropy / n as f64;
            correct += b.correct;
        }
        let seconds = if config.deterministic { 0.0 } else { started.elapsed().as_secs_f64() };
        let row = MetricsRow {
            epoch: epoch + 1,
            split: "train".into(),
            loss,
            ce,
            kl,
            accuracy: correct as f64 / n as f64,
            nll: ce,
            entropy,
            seconds,
        };
        on_row(&row);
        metrics.rows.push(row);

        let last = epoch + 1 == config.epochs;
        if let Some(val) = val.filter(|_| (epoch + 1) % config.val_every == 0 || last) {
            let report = evaluate(&net.inference(), val, &opts, &seeds.child("validation", &[]))?;
            let row = MetricsRow {
                epoch: epoch + 1,
                split: "val".into(),
                loss: f64::NAN,
                ce: f64::NAN,
                kl: f64::NAN,
                accuracy: report.accuracy,
                nll: report.nll,
                entropy: report.entropy,
                seconds: 0.0,
            };
            on_row(&row);
            metrics.rows.push(row);
            if best_val_accuracy.map_or(true, |b| report.accuracy > b) {
                best_val_accuracy = Some(report.accuracy);
                best_epoch = Some(epoch + 1);
                best = net.clone();
            }
        }
    }
    if val.is_none() || best_epoch.is_none() {
        best = net.clone();
    }
    Ok(FitOutcome {
        best,
        last: net,
        best_epoch,
        best_val_accuracy,
        metrics,
    })
}

fn dump_on_divergence<T: Scalar>(
    err: Error,
    before: Option<&Network<T>>,
    config: &TrainConfig,
    epoch: usize,
    batch: usize,
) -> Error {
    let (quantity, dump) = match err {
        Error::Diverged { quantity, .. } => (quantity, None),
        Error::InvalidParameter(msg) if msg.starts_with("non-finite gradient") => (msg, None),
        other => return other,
    };
    let dump = match (before, &config.dump_dir) {
        (Some(net), Some(dir)) => {
            let path = dir.join(format!("diverged-e{epoch}-b{batch}"));
            save_checkpoint(&net.to_checkpoint(config.seed, &Default::default()), &path)
                .ok()
                .map(|_| path)
        }
        _ => dump,
    };
    Error::Diverged {
        quantity,
        epoch,
        batch,
        dump,
    }
}
