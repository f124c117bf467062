use ndarray::{Array1, Array2};
use proptest::prelude::*;
use sbnn::rate::{sigmoid_prob_forward, RateParams, Threshold};
use sbnn::rng::substream;
use sbnn::special::{logistic, norm_cdf, softplus, PROBIT_LOGIT_SLOPE};
use sbnn::synapse::quant::{level_index, level_value};
use sbnn::synapse::{layer_stats_dense, quantize, ste_backward, SigmaType, WeightBits};
use sbnn::threshold::{kl_estimate, MixturePrior, ThresholdPosterior, THRESHOLD_FLOOR};
use sbnn::verify::enumerate_drive_moments;
use statrs::function::erf::erfc;

fn phi_oracle(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

proptest! {
    #[test]
    fn quantize_is_idempotent(w in prop::collection::vec(-3.0f64..3.0, 1..40)) {
        let a = Array2::from_shape_vec((1, w.len()), w).unwrap();
        for bits in [WeightBits::One, WeightBits::Eight] {
            let q = quantize(a.view(), bits);
            prop_assert_eq!(quantize(q.view(), bits), q);
        }
    }

    #[test]
    fn eight_bit_values_lie_on_the_grid(w in -3.0f64..3.0) {
        let q = quantize(Array2::from_elem((1, 1), w).view(), WeightBits::Eight)[[0, 0]];
        let k = (q + 1.0) * 255.0 / 2.0;
        prop_assert!((k - k.round()).abs() < 1e-9);
        prop_assert!((0.0..=255.0).contains(&k.round()));
        prop_assert!((q - (-1.0 + k.round() * 2.0 / 255.0)).abs() < 1e-12);
        prop_assert!((q - w.clamp(-1.0, 1.0)).abs() <= 1.0 / 255.0 + 1e-12);
    }

    #[test]
    fn levels_round_trip(k in 0u8..=255) {
        prop_assert_eq!(level_index(level_value(k)), k);
    }

    #[test]
    fn ste_masks_only_outside_the_clamp(w in -2.0f64..2.0, g in -1.0f64..1.0) {
        let out = ste_backward(Array2::from_elem((1, 1), g).view(), Array2::from_elem((1, 1), w).view())[[0, 0]];
        prop_assert_eq!(out, if w.abs() <= 1.0 { g } else { 0.0 });
    }

    #[test]
    fn bernoulli_enumeration_matches_closed_form(
        n in 1usize..=12,
        outs in 1usize..4,
        seed in any::<u64>(),
        sq in any::<bool>(),
    ) {
        use rand::Rng as _;
        let mut rng = substream(seed, "bern", &[]);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.99)).collect();
        let w = Array2::from_shape_simple_fn((outs, n), || rng.random_range(-1.0..1.0));
        let (m, v) = enumerate_drive_moments(&p, &w);
        let x = Array2::from_shape_vec((1, n), p).unwrap();
        let st = if sq { SigmaType::Squared } else { SigmaType::Absolute };
        let s = layer_stats_dense(x.view(), w.view(), st).unwrap();
        for j in 0..outs {
            prop_assert!((s.mean[[0, j]] - m[j]).abs() < 1e-12);
            if sq {
                prop_assert!((s.std[[0, j]].powi(2) - v[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn probability_is_monotone(
        mean in -3.0f64..3.0, std in 0.0f64..3.0, theta in -3.0f64..3.0, d in 0.0f64..1.0,
    ) {
        let p = RateParams::default();
        let f = |m: f64, t: f64| {
            sigmoid_prob_forward(&Array2::from_elem((1, 1), m), &Array2::from_elem((1, 1), std), &Threshold::Scalar(t), p)
                .unwrap().0[[0, 0]]
        };
        let base = f(mean, theta);
        prop_assert!(f(mean + d, theta) >= base);
        prop_assert!(f(mean, theta + d) <= base);
        if std > p.eps {
            prop_assert!(base >= 0.0 && base <= 1.0);
        } else {
            prop_assert!(base == 0.0 || base == 1.0);
        }
    }
}

#[test]
fn probit_logit_bound_against_erf() {
    let mut worst: f64 = 0.0;
    let mut z = -8.0;
    while z <= 8.0 {
        worst = worst.max((phi_oracle(z) - logistic(PROBIT_LOGIT_SLOPE * z)).abs());
        z += 1e-4;
    }
    assert!(worst < 0.02, "max gap {worst}");
    assert!(worst > 0.005, "gap {worst} suspiciously small");
}

#[test]
fn normal_cdf_matches_erf_oracle() {
    for i in -800..=800 {
        let z = i as f64 / 100.0;
        let (a, b) = (norm_cdf(z), phi_oracle(z));
        // The statrs erfc is good to roughly ten digits in the far tail.
        assert!((a - b).abs() <= 1e-9 * b, "z = {z}: {a} vs {b}");
    }
}

#[test]
fn logistic_rates_stay_open_on_moderate_inputs() {
    let p = RateParams::default();
    let m = Array2::from_shape_fn((1, 41), |(_, j)| j as f64 / 10.0 - 2.0);
    let s = Array2::from_elem((1, 41), 1.0);
    let (o, _) = sigmoid_prob_forward(&m, &s, &Threshold::Scalar(0.0), p).unwrap();
    assert!(o.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn reparameterised_samples_have_the_posterior_moments() {
    let n = 100_000;
    let (mu, rho) = (2.0, 0.3);
    let post = ThresholdPosterior::<f64>::new(1, mu, rho, THRESHOLD_FLOOR, n).unwrap();
    let s = post.sample(&mut substream(11, "reparam", &[]));
    let raw: Vec<f64> = s.raw.iter().copied().collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let sd = (raw.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let sigma = softplus(rho);
    assert!((mean - mu).abs() < 4.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    // sd of the sample sd is about sigma / sqrt(2n).
    assert!((sd - sigma).abs() < 4.0 * sigma / (2.0 * n as f64).sqrt(), "sd {sd}");
}

#[test]
fn clamp_floor_is_exact() {
    let mut post = ThresholdPosterior::<f32>::new(50, 0.0, 0.5, THRESHOLD_FLOOR, 20).unwrap();
    post.mean = Array1::from_shape_fn(50, |j| j as f32 / 25.0 - 1.0);
    let s = post.sample(&mut substream(3, "clamp", &[]));
    let floor = THRESHOLD_FLOOR as f32;
    assert!(s.clamped.iter().all(|&t| t >= floor));
    assert!(s.clamped.iter().any(|&t| t == floor));
    for (c, r) in s.clamped.iter().zip(s.raw.iter()) {
        assert_eq!(*c, r.max(floor));
    }
}

#[test]
fn kl_converges_to_closed_form_for_a_single_component() {
    let (mu, rho, mu0, s1) = (1.2, -0.4, 1.0, 0.5);
    let sigma = softplus(rho);
    let prior = MixturePrior::<f64>::new(Array1::from_elem(1, mu0), s1, 0.05, 1.0).unwrap();
    let post = ThresholdPosterior::<f64>::new(1, mu, rho, THRESHOLD_FLOOR, 100_000).unwrap();
    let s = post.sample(&mut substream(5, "kl", &[]));
    let mc = kl_estimate(&s, &post, &prior);
    let exact = (s1 / sigma).ln() + (sigma * sigma + (mu - mu0).powi(2)) / (2.0 * s1 * s1) - 0.5;
    assert!((mc - exact).abs() < 0.02, "mc {mc} exact {exact}");
}
