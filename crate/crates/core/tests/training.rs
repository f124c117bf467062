use std::path::PathBuf;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;
use sbnn::data::{LabeledSet, Mnist, ProbImageSet};
use sbnn::network::{InitParams, Network, NetworkConfig};
use sbnn::rng::substream;
use sbnn::train::fit::train_step;
use sbnn::train::{cosine_lr, fit, OptimizerState, TrainConfig};
use sbnn::SeedTree;

/// Four classes, each lighting up its own block of four pixels.
fn blocks(n: usize, seed: u64) -> LabeledSet<f32> {
    let mut rng = substream(seed, "blocks", &[]);
    let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..4u8)).collect();
    let features = Array2::from_shape_fn((n, 16), |(i, j)| if j / 4 == labels[i] as usize { 0.9 } else { 0.1 });
    LabeledSet::new(ProbImageSet { rows: 4, cols: 4, features }, labels).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        network: NetworkConfig { sizes: vec![16, 12, 4], ..NetworkConfig::default() },
        lr_weight: 5e-3,
        lr_threshold: 1e-3,
        epochs: 12,
        scheduler_max_epochs: 12,
        batch_size: 32,
        time_steps: 16,
        deterministic: true,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn fit_learns_a_separable_task() {
    let cfg = small_config();
    let (train, val) = (blocks(512, 1), blocks(200, 2));
    let mut seen = 0;
    let out = fit(&cfg, &train, Some(&val), &mut |_| seen += 1).unwrap();
    assert_eq!(seen, 2 * cfg.epochs);
    let train_rows: Vec<_> = out.metrics.rows.iter().filter(|r| r.split == "train").collect();
    let first = train_rows.first().unwrap();
    let last = train_rows.last().unwrap();
    assert!(last.ce < 0.7 * first.ce, "ce {} -> {}", first.ce, last.ce);
    for r in &train_rows {
        assert!(r.kl >= -0.05, "epoch {} kl {}", r.epoch, r.kl);
        assert_eq!(r.seconds, 0.0);
    }
    let best = out.best_val_accuracy.unwrap();
    assert!(best > 0.9, "val accuracy {best}");
    let best_row = out.metrics.rows.iter().find(|r| r.split == "val" && Some(r.epoch) == out.best_epoch).unwrap();
    assert_eq!(best_row.accuracy, best);
}

#[test]
fn fit_is_deterministic_and_thread_independent() {
    let cfg = TrainConfig { epochs: 2, ..small_config() };
    let (train, val) = (blocks(128, 5), blocks(40, 6));
    let a = fit(&cfg, &train, Some(&val), &mut |_| ()).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| fit(&cfg, &train, Some(&val), &mut |_| ()).unwrap());
    assert_eq!(a.last, b.last);
    assert_eq!(a.metrics.to_bytes().unwrap(), b.metrics.to_bytes().unwrap());
    let c = fit(&TrainConfig { seed: 4, ..cfg }, &train, Some(&val), &mut |_| ()).unwrap();
    assert_ne!(a.last, c.last);
}

#[test]
fn mismatched_input_width_is_an_error() {
    let cfg = TrainConfig { network: NetworkConfig { sizes: vec![10, 4], ..NetworkConfig::default() }, ..small_config() };
    assert!(fit(&cfg, &blocks(8, 0), None, &mut |_| ()).is_err());
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SBNN_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join(Mnist::<f32>::FILES[0]).exists().then_some(dir)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

#[test]
fn mnist_median_batch_loss_falls_over_the_first_epochs() {
    let Some(dir) = mnist_dir() else {
        eprintln!("skipping: MNIST not found (set SBNN_MNIST_DIR or run scripts/fetch_mnist.sh)");
        return;
    };
    let data = Mnist::<f32>::load(dir).unwrap();
    let cfg = TrainConfig::default();
    let seeds = SeedTree::new(cfg.seed);
    let mut net = Network::<f32>::init(cfg.network.clone(), &cfg.init, &seeds).unwrap();
    let mut state = OptimizerState::for_network(&net);
    let train = &data.train;
    let mut medians = Vec::new();
    for epoch in 0..5 {
        let lrs = (
            cosine_lr(epoch, cfg.lr_weight, cfg.scheduler_max_epochs, 0),
            cosine_lr(epoch, cfg.lr_threshold, cfg.scheduler_max_epochs, 0),
        );
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeds.stream("shuffle", &[epoch as u64]));
        let (mut ces, mut kls) = (Vec::new(), Vec::new());
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = train.images.features.select(Axis(0), idx);
            let labels: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
            let b = train_step(&mut net, &mut state, x.view(), &labels, &cfg, lrs, &seeds, &[epoch as u64, batch as u64]).unwrap();
            kls.push(b.kl);
            ces.push(b.ce);
        }
        let kl = kls.iter().sum::<f64>() / kls.len() as f64;
        assert!(kl >= -0.05, "epoch {epoch} mean kl {kl}");
        medians.push(median(ces));
    }
    eprintln!("median batch cross-entropy per epoch: {medians:?}");
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}

#[test]
fn default_init_matches_the_configured_architecture() {
    let net = Network::<f64>::init(NetworkConfig { sizes: vec![7, 5, 2], ..NetworkConfig::default() }, &InitParams::default(), &SeedTree::new(0)).unwrap();
    assert_eq!((net.inputs(), net.outputs(), net.layers.len()), (7, 2, 2));
}
