use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng as _;
use sbnn::data::{LabeledSet, ProbImageSet};
use sbnn::eval::*;
use sbnn::network::{InferenceLayer, InferenceNet};
use sbnn::rng::substream;
use sbnn::spiking::PredictiveRule;
use sbnn::SeedTree;

fn fixture(seed: u64) -> (InferenceNet<f32>, LabeledSet<f32>) {
    let mut rng = substream(seed, "fixture", &[]);
    let (inputs, hidden, classes, n) = (16, 12, 4, 60);
    let mut layer = |o: usize, i: usize| InferenceLayer {
        weight: Array2::from_shape_simple_fn((o, i), || rng.random_range(-0.6f32..0.9)),
        threshold_mean: Array1::from_elem(o, 0.8),
        threshold_sd: Array1::from_elem(o, 0.4),
        floor: 1.0 / 128.0,
        drive_clip: None,
    };
    let net = InferenceNet { layers: vec![layer(hidden, inputs), layer(classes, hidden)] };
    let features = Array2::from_shape_simple_fn((n, inputs), || rng.random_range(0.0f32..1.0));
    let labels = (0..n).map(|_| rng.random_range(0..classes as u8)).collect();
    let data = LabeledSet::new(ProbImageSet { rows: 4, cols: 4, features }, labels).unwrap();
    (net, data)
}

#[test]
fn mean_nll_is_the_mean_of_per_sample_nll() {
    let (net, data) = fixture(1);
    for rule in [PredictiveRule::CountSoftmax, PredictiveRule::Smoothed { alpha: 0.1 }] {
        let opts = InferenceOptions { steps: 4, runs: 3, rule };
        let r = evaluate(&net, &data, &opts, &SeedTree::new(3)).unwrap();
        let manual: f64 = r.samples.iter().map(|s| -s.probs[s.label].ln()).sum::<f64>() / r.samples.len() as f64;
        assert!((r.nll - manual).abs() < 1e-12);
        let ln_c = (r.confusion.len() as f64).ln();
        for s in &r.samples {
            assert!(s.entropy >= 0.0 && s.entropy <= ln_c + 1e-12);
            assert!((s.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let total: u64 = r.confusion.iter().flatten().sum();
        assert_eq!(total as usize, data.len());
        let correct: u64 = (0..r.confusion.len()).map(|c| r.confusion[c][c]).sum();
        assert_eq!(r.accuracy, correct as f64 / data.len() as f64);
    }
}

#[test]
fn zero_noise_is_an_exact_identity() {
    let (net, data) = fixture(2);
    let mut rng = substream(0, "noise", &[]);
    assert_eq!(inject_weight_noise(&net, 0.0, &mut rng).unwrap(), net);
    let x = data.images.features.view();
    assert_eq!(inject_input_noise(x, 0.0, &mut rng).unwrap(), x.to_owned());
    let t = threshold_noise_with_clipping(&net, 0.0, 0.0).unwrap();
    for (a, b) in t.layers.iter().zip(&net.layers) {
        assert_eq!(a.weight, b.weight);
        assert_eq!(a.threshold_mean, b.threshold_mean);
        assert!(a.drive_clip.is_none());
    }
}

#[test]
fn zero_noise_sweep_reproduces_plain_evaluation() {
    let (net, data) = fixture(3);
    let opts = InferenceOptions::new(8, 1);
    let seeds = SeedTree::new(5);
    let grid = [NoiseSpec::Weight { rel_sigma: 0.0 }, NoiseSpec::Input { sigma: 0.0 }];
    let rows = robustness_sweep(&net, &data, &grid, 2, &opts, &seeds).unwrap();
    for row in rows {
        let plain = evaluate(&net, &data, &opts, &seeds.child("repeat", &[row.seed])).unwrap();
        assert_eq!(row.accuracy, plain.accuracy);
        assert_eq!(row.nll, plain.nll);
    }
}

#[test]
fn threshold_perturbation_sets_width_and_clip() {
    let (net, _) = fixture(4);
    let t = threshold_noise_with_clipping(&net, 0.0, 0.8).unwrap();
    for (a, b) in t.layers.iter().zip(&net.layers) {
        assert!(a.threshold_sd.iter().all(|&s| (s - std::f32::consts::LN_2).abs() < 1e-7));
        let clip = a.drive_clip.as_ref().unwrap();
        for (c, m) in clip.iter().zip(&b.threshold_mean) {
            assert!((c - m / 0.8).abs() < 1e-6);
        }
    }
    let det = threshold_noise_with_clipping(&net, f64::NEG_INFINITY, 0.0).unwrap();
    assert!(det.layers.iter().all(|l| l.threshold_sd.iter().all(|&s| s == 0.0)));
    assert!(threshold_noise_with_clipping(&net, f64::NAN, 0.9).is_err());
}

#[test]
fn weight_noise_scales_with_the_largest_weight() {
    let net = InferenceNet {
        layers: vec![InferenceLayer {
            weight: Array2::from_elem((200, 200), 0.5f64),
            threshold_mean: Array1::ones(200),
            threshold_sd: Array1::ones(200),
            floor: 0.01,
            drive_clip: None,
        }],
    };
    let noisy = inject_weight_noise(&net, 0.2, &mut substream(1, "w", &[])).unwrap();
    let d: Vec<f64> = noisy.layers[0].weight.iter().map(|w| w - 0.5).collect();
    let sd = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
    assert!((sd - 0.1).abs() < 0.002, "sd {sd}");
}

#[test]
fn sweep_summary_groups_repeats() {
    let (net, data) = fixture(6);
    let grid = [NoiseSpec::Weight { rel_sigma: 0.1 }, NoiseSpec::Threshold { rho: 0.0, clip_ratio: 0.9 }];
    let rows = robustness_sweep(&net, &data, &grid, 3, &InferenceOptions::new(4, 1), &SeedTree::new(1)).unwrap();
    assert_eq!(rows.len(), 6);
    let summary = summarize_sweep(&rows);
    assert_eq!(summary.len(), 2);
    assert!(summary.iter().all(|s| s.repeats == 3));
    let m = rows[..3].iter().map(|r| r.accuracy).sum::<f64>() / 3.0;
    assert!((summary[0].accuracy_mean - m).abs() < 1e-15);
}

#[test]
fn tables_have_one_row_per_sample_and_class() {
    let (net, data) = fixture(7);
    let r = evaluate(&net, &data, &InferenceOptions::new(4, 1), &SeedTree::new(0)).unwrap();
    let s = r.sample_table();
    assert_eq!(s.rows.len(), data.len());
    assert_eq!(s.header.len(), 4 + r.confusion.len());
    assert_eq!(r.class_table().rows.len(), r.confusion.len());
}

proptest! {
    #[test]
    fn nll_and_entropy_bounds(raw in prop::collection::vec(0.0f64..1.0, 2..12), label in 0usize..12) {
        let z: f64 = raw.iter().sum();
        prop_assume!(z > 0.0);
        let probs: Vec<f64> = raw.iter().map(|p| p / z).collect();
        let label = label % probs.len();
        prop_assert!(nll_of(&probs, label) >= 0.0);
        let h = entropy_of(&probs);
        prop_assert!(h >= -1e-15 && h <= (probs.len() as f64).ln() + 1e-12);
    }
}
