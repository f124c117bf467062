//! Finite-difference gradient checks and exact small-layer oracles.
//!
//! Every check builds a small random problem in `f64`, evaluates a scalar loss
//! `L = Σ G ∘ output` with a fixed random `G`, and compares the analytic backward pass
//! against central differences. Noise is frozen by reseeding the same stream.

use ndarray::{Array1, Array2, Array4};
use rand::Rng as _;

use crate::error::Result;
use crate::network::{rate_backward, rate_forward, InitParams, Network, NetworkConfig};
use crate::rate::{sigmoid_prob_backward, sigmoid_prob_forward, RateParams, Threshold};
use crate::rng::Rng;
use crate::synapse::{layer_stats_backward, layer_stats_conv, layer_stats_conv_backward, layer_stats_dense, ConvGeometry, SigmaType};
use crate::threshold::{kl_backward, kl_estimate, sample_thresholds, sample_thresholds_backward, MixturePrior, ThresholdPosterior};
use crate::train::softmax_cross_entropy;
use crate::SeedTree;

/// Step of the central differences.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Worst norm-wise relative error over the checked tensors.
    pub rel_error: f64,
    /// Number of partial derivatives compared.
    pub checked: usize,
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both norms vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn uniform2(rng: &mut Rng, shape: (usize, usize), lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a * b).sum()
}

fn flat(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

fn reshape(v: &[f64], shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_vec(shape, v.to_vec()).expect("length matches shape")
}

struct Worst {
    rel: f64,
    count: usize,
}

impl Worst {
    fn new() -> Self {
        Worst { rel: 0.0, count: 0 }
    }

    fn add(&mut self, analytic: &[f64], numeric: &[f64]) {
        self.rel = self.rel.max(relative_error(analytic, numeric));
        self.count += analytic.len();
    }

    fn finish(self, name: &str) -> GradCheck {
        GradCheck {
            name: name.to_string(),
            rel_error: self.rel,
            checked: self.count,
        }
    }
}

/// Firing probability w.r.t. drive mean, drive std and a per-unit threshold.
pub fn check_sigmoid_prob(rng: &mut Rng) -> Result<GradCheck> {
    let (b, n) = (rng.random_range(1..5), rng.random_range(1..6));
    let std = uniform2(rng, (b, n), 0.3, 2.0);
    let mean = uniform2(rng, (b, n), -1.0, 2.0);
    let th = Array1::from_shape_simple_fn(n, || rng.random_range(0.0..1.5));
    let g = uniform2(rng, (b, n), -1.0, 1.0);
    let params = RateParams::default();
    let loss = |m: &Array2<f64>, s: &Array2<f64>, t: &Array1<f64>| -> f64 {
        let (out, _) = sigmoid_prob_forward(m, s, &Threshold::PerUnit(t.clone()), params).expect("shapes agree");
        dot(&out, &g)
    };
    let (_, saved) = sigmoid_prob_forward(&mean, &std, &Threshold::PerUnit(th.clone()), params)?;
    let (dm, ds, dt) = sigmoid_prob_backward(g.view(), &saved);
    let dt = dt.per_unit().expect("per-unit in, per-unit out").to_vec();
    let mut w = Worst::new();
    w.add(&flat(&dm), &central_difference(&flat(&mean), FD_STEP, |x| loss(&reshape(x, (b, n)), &std, &th)));
    w.add(&flat(&ds), &central_difference(&flat(&std), FD_STEP, |x| loss(&mean, &reshape(x, (b, n)), &th)));
    w.add(&dt, &central_difference(&th.to_vec(), FD_STEP, |x| loss(&mean, &std, &Array1::from(x.to_vec()))));
    Ok(w.finish("sigmoid_prob"))
}

/// Dense drive statistics w.r.t. quantised weights and input rates.
pub fn check_dense_stats(rng: &mut Rng, sigma_type: SigmaType) -> Result<GradCheck> {
    let (b, i, o) = (rng.random_range(1..4), rng.random_range(1..8), rng.random_range(1..5));
    let p = uniform2(rng, (b, i), 0.05, 0.95);
    // Keep weights away from zero so |w| stays differentiable.
    let w = uniform2(rng, (o, i), 0.1, 1.0).mapv(|v| if rng.random_bool(0.5) { v } else { -v });
    let gm = uniform2(rng, (b, o), -1.0, 1.0);
    let gs = uniform2(rng, (b, o), -1.0, 1.0);
    let loss = |p: &Array2<f64>, w: &Array2<f64>| -> f64 {
        let s = layer_stats_dense(p.view(), w.view(), sigma_type).expect("shapes agree");
        dot(&s.mean, &gm) + dot(&s.std, &gs)
    };
    let stats = layer_stats_dense(p.view(), w.view(), sigma_type)?;
    let (dw, dp) = layer_stats_backward(gm.view(), gs.view(), &stats, w.view());
    let mut worst = Worst::new();
    worst.add(&flat(&dw), &central_difference(&flat(&w), FD_STEP, |x| loss(&p, &reshape(x, (o, i)))));
    worst.add(&flat(&dp), &central_difference(&flat(&p), FD_STEP, |x| loss(&reshape(x, (b, i)), &w)));
    Ok(worst.finish(&format!("layer_stats_dense[{sigma_type}]")))
}

/// Convolutional drive statistics w.r.t. the kernel and the input map.
pub fn check_conv_stats(rng: &mut Rng) -> Result<GradCheck> {
    let g = ConvGeometry {
        in_channels: rng.random_range(1..3),
        out_channels: rng.random_range(1..4),
        kernel: (rng.random_range(1..4), rng.random_range(1..4)),
        stride: rng.random_range(1..3),
        padding: rng.random_range(0..2),
    };
    let (b, h, wd) = (rng.random_range(1..3), rng.random_range(3..6), rng.random_range(3..6));
    let shape = (b, g.in_channels, h, wd);
    let p = Array4::from_shape_simple_fn(shape, || rng.random_range(0.05..0.95));
    let klen = g.in_channels * g.kernel.0 * g.kernel.1;
    let k = uniform2(rng, (g.out_channels, klen), 0.1, 1.0).mapv(|v| if rng.random_bool(0.5) { v } else { -v });
    let stats = layer_stats_conv(p.view(), k.view(), &g, SigmaType::Squared)?;
    let gm = uniform2(rng, stats.mean.dim(), -1.0, 1.0);
    let gs = uniform2(rng, stats.std.dim(), -1.0, 1.0);
    let loss = |p: &Array4<f64>, k: &Array2<f64>| -> f64 {
        let s = layer_stats_conv(p.view(), k.view(), &g, SigmaType::Squared).expect("shapes agree");
        dot(&s.mean, &gm) + dot(&s.std, &gs)
    };
    let (dk, dp) = layer_stats_conv_backward(gm.view(), gs.view(), &stats, k.view(), &g);
    let pflat: Vec<f64> = p.iter().copied().collect();
    let mut worst = Worst::new();
    worst.add(&flat(&dk), &central_difference(&flat(&k), FD_STEP, |x| loss(&p, &reshape(x, k.dim()))));
    worst.add(
        &dp.iter().copied().collect::<Vec<_>>(),
        &central_difference(&pflat, FD_STEP, |x| {
            loss(&Array4::from_shape_vec(shape, x.to_vec()).expect("length matches"), &k)
        }),
    );
    Ok(worst.finish("layer_stats_conv"))
}

/// The clamped threshold sampler with frozen noise, on neurons that never touch the floor.
pub fn check_threshold_sampler(rng: &mut Rng) -> Result<GradCheck> {
    let n = rng.random_range(1..6);
    let s_count = rng.random_range(1..6);
    let floor = crate::threshold::THRESHOLD_FLOOR;
    let mean = Array1::from_shape_simple_fn(n, || rng.random_range(0.8..1.6));
    let rho = Array1::from_shape_simple_fn(n, || rng.random_range(-2.5..-0.5));
    let g = uniform2(rng, (s_count, n), -1.0, 1.0);
    let seed: u64 = rng.random();
    let draw = |m: &Array1<f64>, r: &Array1<f64>| {
        sample_thresholds(m.view(), r.view(), s_count, floor, &mut crate::rng::substream(seed, "frozen", &[]))
    };
    let samples = draw(&mean, &rho);
    let (dm, dr) = sample_thresholds_backward(Some(&g), None, &samples, mean.view(), rho.view());
    let keep: Vec<usize> = (0..n)
        .filter(|&j| samples.raw.column(j).iter().all(|&t| t > floor + 1e-3))
        .collect();
    let loss = |m: &Array1<f64>, r: &Array1<f64>| dot(&draw(m, r).clamped, &g);
    let num_m = central_difference(&mean.to_vec(), FD_STEP, |x| loss(&Array1::from(x.to_vec()), &rho));
    let num_r = central_difference(&rho.to_vec(), FD_STEP, |x| loss(&mean, &Array1::from(x.to_vec())));
    let pick = |v: &[f64]| keep.iter().map(|&j| v[j]).collect::<Vec<_>>();
    let mut worst = Worst::new();
    worst.add(&pick(&dm.to_vec()), &pick(&num_m));
    worst.add(&pick(&dr.to_vec()), &pick(&num_r));
    Ok(worst.finish("threshold_sampler"))
}

/// Monte-Carlo KL with frozen noise, through both the samples and the posterior density.
pub fn check_kl(rng: &mut Rng) -> Result<GradCheck> {
    let n = rng.random_range(1..5);
    let s_count = rng.random_range(1..6);
    let floor = crate::threshold::THRESHOLD_FLOOR;
    let center = Array1::from_shape_simple_fn(n, || rng.random_range(0.5..2.0));
    let prior = MixturePrior::new(center, 0.5, 0.05, 0.5)?;
    let mut post = ThresholdPosterior::<f64>::new(n, 1.0, -1.0, floor, s_count)?;
    post.mean.mapv_inplace(|_| rng.random_range(0.8..1.6));
    post.rho.mapv_inplace(|_| rng.random_range(-2.5..-0.5));
    let seed: u64 = rng.random();
    let scale = rng.random_range(0.5..2.0);
    let kl_at = |m: &[f64], r: &[f64]| {
        let mut q = post.clone();
        q.mean = Array1::from(m.to_vec());
        q.rho = Array1::from(r.to_vec());
        let s = q.sample(&mut crate::rng::substream(seed, "frozen", &[]));
        scale * kl_estimate(&s, &q, &prior)
    };
    let samples = post.sample(&mut crate::rng::substream(seed, "frozen", &[]));
    let kg = kl_backward(&samples, &post, &prior, scale);
    let (rm, rr) = sample_thresholds_backward(None, Some(&kg.raw), &samples, post.mean.view(), post.rho.view());
    let keep: Vec<usize> = (0..n)
        .filter(|&j| samples.raw.column(j).iter().all(|&t| t > floor + 1e-3))
        .collect();
    let (m0, r0) = (post.mean.to_vec(), post.rho.to_vec());
    let num_m = central_difference(&m0, FD_STEP, |x| kl_at(x, &r0));
    let num_r = central_difference(&r0, FD_STEP, |x| kl_at(&m0, x));
    let pick = |v: &[f64]| keep.iter().map(|&j| v[j]).collect::<Vec<_>>();
    let mut worst = Worst::new();
    worst.add(&pick(&(&rm + &kg.direct_mean).to_vec()), &pick(&num_m));
    worst.add(&pick(&(&rr + &kg.direct_rho).to_vec()), &pick(&num_r));
    Ok(worst.finish("kl"))
}

/// Batch-mean softmax cross-entropy w.r.t. the output rates.
pub fn check_cross_entropy(rng: &mut Rng) -> Result<GradCheck> {
    let (b, c) = (rng.random_range(1..5), rng.random_range(2..8));
    let rates = uniform2(rng, (b, c), 0.0, 1.0);
    let labels: Vec<u8> = (0..b).map(|_| rng.random_range(0..c) as u8).collect();
    let (_, grad) = softmax_cross_entropy(rates.view(), &labels)?;
    let num = central_difference(&flat(&rates), FD_STEP, |x| {
        softmax_cross_entropy(reshape(x, (b, c)).view(), &labels).expect("valid labels").0
    });
    let mut worst = Worst::new();
    worst.add(&flat(&grad), &num);
    Ok(worst.finish("cross_entropy"))
}

/// A whole network, cross-entropy loss, w.r.t. quantised weights and threshold posteriors.
pub fn check_network(rng: &mut Rng, sizes: &[usize]) -> Result<GradCheck> {
    let config = NetworkConfig {
        sizes: sizes.to_vec(),
        ..NetworkConfig::default()
    };
    let init = InitParams {
        rho: -1.5,
        ..InitParams::default()
    };
    let mut net = Network::<f64>::init(config, &init, &SeedTree::new(rng.random()))?;
    for layer in &mut net.layers {
        layer.threshold.mean.mapv_inplace(|_| rng.random_range(0.3..1.2));
    }
    let b = rng.random_range(1..4);
    let x = uniform2(rng, (b, sizes[0]), 0.05, 0.95);
    let labels: Vec<u8> = (0..b).map(|_| rng.random_range(0..*sizes.last().expect("sizes")) as u8).collect();
    let seeds = SeedTree::new(rng.random());
    let key = [0u64, 0];

    // Forward built from the public primitives so quantised weights can be perturbed freely.
    let forward = |net: &Network<f64>, wq: &[Array2<f64>]| -> f64 {
        let samples = net.sample_thresholds(&seeds, &key);
        let mut a = x.clone();
        for (w, s) in wq.iter().zip(&samples) {
            let st = layer_stats_dense(a.view(), w.view(), net.config.sigma_type).expect("shapes agree");
            let th = Threshold::PerUnit(s.effective());
            a = sigmoid_prob_forward(&st.mean, &st.std, &th, net.config.rate).expect("shapes agree").0;
        }
        softmax_cross_entropy(a.view(), &labels).expect("valid labels").0
    };
    let wq: Vec<Array2<f64>> = net.layers.iter().map(|l| l.synapse.quantized().clone()).collect();
    let samples = net.sample_thresholds(&seeds, &key);
    let th: Vec<Threshold<f64>> = samples.iter().map(|s| Threshold::PerUnit(s.effective())).collect();
    let pass = rate_forward(&net, x.view(), &th)?;
    let (_, grad_out) = softmax_cross_entropy(pass.output().view(), &labels)?;
    let grads = rate_backward(&net, grad_out.view(), &pass, Some(&samples));

    let mut worst = Worst::new();
    for i in 0..net.layers.len() {
        // The straight-through estimator is the identity inside the clamp range.
        let inside: Vec<f64> = net.layers[i]
            .synapse
            .weight()
            .iter()
            .zip(grads.weight[i].iter())
            .map(|(&w, &g)| if w.abs() <= crate::synapse::W_MAX { g } else { f64::NAN })
            .collect();
        let num = central_difference(&flat(&wq[i]), FD_STEP, |v| {
            let mut w = wq.clone();
            w[i] = reshape(v, wq[i].dim());
            forward(&net, &w)
        });
        let (a, n): (Vec<f64>, Vec<f64>) = inside.iter().zip(&num).filter(|(a, _)| a.is_finite()).map(|(a, n)| (*a, *n)).unzip();
        worst.add(&a, &n);

        let floor = net.layers[i].threshold.floor;
        let keep: Vec<usize> = (0..net.layers[i].threshold.len())
            .filter(|&j| samples[i].raw.column(j).iter().all(|&t| t > floor + 1e-3))
            .collect();
        let pick = |v: &[f64]| keep.iter().map(|&j| v[j]).collect::<Vec<_>>();
        for (analytic, is_mean) in [(&grads.threshold_mean[i], true), (&grads.threshold_rho[i], false)] {
            let base = if is_mean { &net.layers[i].threshold.mean } else { &net.layers[i].threshold.rho };
            let num = central_difference(&base.to_vec(), FD_STEP, |v| {
                let mut probe = net.clone();
                let target = if is_mean { &mut probe.layers[i].threshold.mean } else { &mut probe.layers[i].threshold.rho };
                *target = Array1::from(v.to_vec());
                forward(&probe, &wq)
            });
            worst.add(&pick(&analytic.to_vec()), &pick(&num));
        }
    }
    let arch: Vec<String> = sizes.iter().map(|s| s.to_string()).collect();
    Ok(worst.finish(&format!("network[{}]", arch.join("-"))))
}

/// Every gradient check once, drawing problem sizes and values from `rng`.
pub fn check_all(rng: &mut Rng) -> Result<Vec<GradCheck>> {
    Ok(vec![
        check_sigmoid_prob(rng)?,
        check_dense_stats(rng, SigmaType::Squared)?,
        check_dense_stats(rng, SigmaType::Absolute)?,
        check_conv_stats(rng)?,
        check_threshold_sampler(rng)?,
        check_kl(rng)?,
        check_cross_entropy(rng)?,
        check_network(rng, &[6, 4, 3])?,
    ])
}

/// Exact mean and variance of `D_j = Σ_i w_ji s_i` with independent `s_i ~ Bernoulli(p_i)`,
/// by summing over all `2^n` spike patterns.
///
/// # Panics
/// If there are more than 20 inputs.
pub fn enumerate_drive_moments(p: &[f64], w: &Array2<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = p.len();
    assert!(n <= 20, "enumeration over {n} inputs is too large");
    assert_eq!(w.ncols(), n);
    let outs = w.nrows();
    let mut m1 = vec![0.0; outs];
    let mut m2 = vec![0.0; outs];
    for pattern in 0u32..(1 << n) {
        let prob: f64 = (0..n)
            .map(|i| if pattern >> i & 1 == 1 { p[i] } else { 1.0 - p[i] })
            .product();
        for j in 0..outs {
            let d: f64 = (0..n).filter(|&i| pattern >> i & 1 == 1).map(|i| w[[j, i]]).sum();
            m1[j] += prob * d;
            m2[j] += prob * d * d;
        }
    }
    let var = m1.iter().zip(&m2).map(|(m, s)| s - m * m).collect();
    (m1, var)
}
