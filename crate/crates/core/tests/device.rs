use proptest::prelude::*;
use sbnn::device::*;
use sbnn::rng::substream;
use sbnn::spiking::{draw_step_threshold, sb_neuron_step};

#[test]
fn bundled_fit_recovers_the_published_v50() {
    let curve = fit_switching_points(&bundled_switching_data()).unwrap();
    assert!((0.496..=0.503).contains(&curve.v50), "V50 {}", curve.v50);
    assert_eq!(curve.probability(curve.v50), 0.5);
}

#[test]
fn bundled_fit_is_the_least_squares_optimum() {
    let curve = fit_switching_points(&bundled_switching_data()).unwrap();
    let sse = |c: &SwitchingCurve| curve.points.iter().map(|&(v, p)| (c.probability(v) - p).powi(2)).sum::<f64>();
    let best = sse(&curve);
    // Independent oracle: a dense grid around the optimum never does better.
    for i in -40..=40 {
        for j in -40..=40 {
            let probe = SwitchingCurve::new(curve.v50 + i as f64 * 5e-5, curve.scale * (1.0 + j as f64 * 2e-3));
            assert!(sse(&probe) >= best - 1e-12, "grid point ({i}, {j}) beats the fit");
        }
    }
    let worst = curve.points.iter().map(|&(v, p)| (curve.probability(v) - p).abs()).fold(0.0, f64::max);
    assert_eq!(worst, curve.max_residual);
}

#[test]
fn fitted_curve_is_monotone() {
    let curve = fit_switching_points(&bundled_switching_data()).unwrap();
    let mut last = 0.0;
    for i in 0..=1000 {
        let p = curve.probability(0.3 + i as f64 * 4e-4);
        assert!(p >= last);
        last = p;
    }
}

#[test]
fn synthetic_logistic_is_recovered() {
    let truth = SwitchingCurve::new(0.61, 0.03);
    let data: Vec<(f64, f64)> = (0..15).map(|i| 0.5 + i as f64 * 0.015).map(|v| (v, truth.probability(v))).collect();
    let fit = fit_switching_curve(&data).unwrap();
    assert!((fit.v50 - 0.61).abs() < 1e-6 && (fit.scale - 0.03).abs() < 1e-6, "{fit:?}");
}

#[test]
fn bad_switching_data_is_rejected() {
    assert!(fit_switching_curve(&[(0.1, 0.1), (0.2, 0.2), (0.3, 0.3)]).is_err());
    assert!(fit_switching_curve(&[(0.1, 0.1), (0.2, 0.2), (0.3, 0.3), (0.4, 0.45)]).is_err());
    assert!(fit_switching_curve(&[(0.1, 0.1), (0.2, 0.6), (0.3, 0.3), (0.4, 0.9)]).is_err());
    assert!(parse_switching_tsv("volts\tcount\n").is_err());
}

#[test]
fn device_neuron_matches_a_gaussian_threshold_neuron() {
    let curve = fit_switching_points(&bundled_switching_data()).unwrap();
    let sd = curve.scale * std::f64::consts::PI / 3f64.sqrt();
    let trials = 100_000;
    for (i, &v) in [0.42, 0.50, 0.58].iter().enumerate() {
        let mut rng = substream(1, "equiv", &[i as u64]);
        let mut neuron = DeviceNeuron::default();
        let dev = (0..trials).filter(|_| neuron.pulse(v, &curve, &mut rng)).count() as f64 / trials as f64;
        let alg = (0..trials)
            .filter(|_| sb_neuron_step(v, draw_step_threshold(curve.v50, sd, 1e-9, &mut rng)))
            .count() as f64
            / trials as f64;
        assert!((dev - alg).abs() < 0.01, "v={v}: device {dev} algorithm {alg}");
        assert_eq!(neuron.state, DeviceState::AntiParallel);
    }
}

#[test]
#[should_panic(expected = "reset")]
fn pulsing_an_unreset_junction_panics() {
    let curve = SwitchingCurve::new(0.5, 0.02);
    let mut n = DeviceNeuron { state: DeviceState::Parallel };
    n.pulse(0.5, &curve, &mut substream(0, "x", &[]));
}

#[test]
fn modulation_maps_threshold_mean_to_v50() {
    let curve = SwitchingCurve::new(0.5, 0.02);
    assert_eq!(curve.modulate(1.3, 1.3), 0.5);
    assert_eq!(curve.modulate(-2.0, 1.0), 0.0);
    assert!(modulate_input(1.0, 0.0, 0.5).is_err());
    assert_eq!(modulate_input(2.0, 4.0, 0.5).unwrap(), 0.25);
}

#[test]
fn published_pairs_are_complete() {
    let pairs = published_pairs();
    assert_eq!(pairs.len(), 29);
    assert!(pairs.iter().all(|p| (7..=9).contains(&p.class)));
    let d = published_median_rate_delta(&pairs);
    assert!(d.is_finite() && d < 0.1, "median delta {d}");
}

proptest! {
    #[test]
    fn wilson_interval_contains_the_estimate(n in 1u64..10_000, frac in 0.0f64..=1.0, level in 0.5f64..0.999) {
        let k = ((n as f64) * frac).round() as u64;
        let (lo, hi) = wilson_interval(k, n, level);
        let p = k as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }

    #[test]
    fn switching_probability_is_monotone(v in 0.0f64..1.0, dv in 0.0f64..0.2) {
        let c = SwitchingCurve::new(0.5, 0.02);
        prop_assert!(c.probability(v + dv) >= c.probability(v));
    }
}
