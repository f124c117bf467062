use std::collections::BTreeMap;

use ndarray::Array1;
use sbnn::data::idx::{labels_to_idx_bytes, parse_idx_labels};
use sbnn::data::split::split_train_val;
use sbnn::data::*;
use sbnn::network::{InitParams, Network, NetworkConfig};
use sbnn::rng::substream;
use sbnn::{Error, SeedTree};

fn tiny_images() -> ImageSet {
    ImageSet { count: 3, rows: 2, cols: 2, pixels: vec![0, 255, 51, 102, 1, 2, 3, 4, 250, 0, 0, 7] }
}

#[test]
fn idx_round_trip_and_normalization() {
    let images = tiny_images();
    let back = ImageSet::from_idx_bytes(&images.to_idx_bytes()).unwrap();
    assert_eq!(back, images);
    let p = normalize::<f64>(&images);
    assert_eq!((p.count(), p.dim()), (3, 4));
    assert_eq!(p.features[[0, 1]], 1.0);
    assert_eq!(p.features[[0, 2]], 0.2);
    let labels = vec![3, 9, 0];
    assert_eq!(parse_idx_labels(&labels_to_idx_bytes(&labels)).unwrap(), labels);
}

#[test]
fn malformed_idx_is_rejected() {
    let good = tiny_images().to_idx_bytes();
    let mut bad_magic = good.clone();
    bad_magic[3] = 0x01;
    assert!(matches!(ImageSet::from_idx_bytes(&bad_magic), Err(Error::Format { .. })));
    assert!(matches!(ImageSet::from_idx_bytes(&good[..good.len() - 1]), Err(Error::Length { .. })));
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(ImageSet::from_idx_bytes(&long), Err(Error::Length { .. })));
    assert!(ImageSet::from_idx_bytes(&good[..10]).is_err());
    // Labels must be in range and the file must use the label magic.
    assert!(parse_idx_labels(&good).is_err());
    let mut out_of_range = labels_to_idx_bytes(&[1, 2]);
    out_of_range[9] = 10;
    assert!(parse_idx_labels(&out_of_range).is_err());
}

#[test]
fn labeled_set_rejects_count_mismatch() {
    let images = normalize::<f32>(&tiny_images());
    assert!(LabeledSet::new(images.clone(), vec![1, 2]).is_err());
    let set = LabeledSet::new(images, vec![1, 2, 3]).unwrap();
    let sub = set.subset(&[2, 0]);
    assert_eq!(sub.labels, vec![3, 1]);
    assert_eq!(sub.images.features.row(0), set.images.features.row(2));
    assert_eq!(set.head(2).len(), 2);
}

#[test]
fn split_is_a_seeded_partition() {
    let n = 97;
    let images = ProbImageSet { rows: 1, cols: 1, features: Array1::from_iter((0..n).map(|i| i as f64)).insert_axis(ndarray::Axis(1)) };
    let set = LabeledSet::new(images, (0..n).map(|i| (i % 10) as u8).collect()).unwrap();
    let (a, b) = split_train_val(&set, 0.8, &mut substream(9, "split", &[])).unwrap();
    let (a2, _) = split_train_val(&set, 0.8, &mut substream(9, "split", &[])).unwrap();
    assert_eq!(a, a2);
    assert_eq!((a.len(), b.len()), (77, 20));
    let mut ids: Vec<f64> = a.images.features.iter().chain(b.images.features.iter()).cloned().collect();
    ids.sort_by(f64::total_cmp);
    assert_eq!(ids, (0..n).map(|i| i as f64).collect::<Vec<_>>());
    let (c, _) = split_train_val(&set, 0.8, &mut substream(10, "split", &[])).unwrap();
    assert_ne!(a, c);
}

fn trained_like_network() -> Network<f32> {
    let config = NetworkConfig { sizes: vec![6, 5, 3], ..NetworkConfig::default() };
    Network::init(config, &InitParams::default(), &SeedTree::new(11)).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let net = trained_like_network();
    let mut extra = BTreeMap::new();
    extra.insert("lr_weight".to_string(), serde_json::json!(5e-4));
    let ckpt = net.to_checkpoint(11, &extra);
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let loaded = load_checkpoint(dir.path()).unwrap();
    assert_eq!(loaded.manifest.architecture, vec![6, 5, 3]);
    assert_eq!(loaded.manifest.seed, 11);
    assert_eq!(loaded.manifest.hyperparameters["lr_weight"], serde_json::json!(5e-4));
    for (name, t) in &ckpt.tensors {
        let u = loaded.tensor(name).unwrap();
        assert_eq!(u.shape, t.shape);
        let a: Vec<u32> = t.data.iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = u.data.iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "{name}");
    }
    let rebuilt = Network::<f32>::from_checkpoint(&loaded).unwrap();
    assert_eq!(rebuilt.layers, net.layers);
    assert_eq!(rebuilt.inference(), net.inference());
}

#[test]
fn corrupted_tensor_fails_its_checksum() {
    let ckpt = trained_like_network().to_checkpoint(0, &BTreeMap::new());
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let file = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "f32le"))
        .unwrap();
    let mut bytes = std::fs::read(&file).unwrap();
    bytes[0] ^= 0x40;
    std::fs::write(&file, bytes).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Checksum { .. })));
}

#[test]
fn unknown_checkpoint_version_is_refused() {
    let ckpt = trained_like_network().to_checkpoint(0, &BTreeMap::new());
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&ckpt, dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let mut manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    manifest["version"] = serde_json::json!(99);
    std::fs::write(&path, manifest.to_string()).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Version { found: 99, .. })));
}

#[test]
fn metrics_csv_has_the_fixed_header() {
    let mut t = CsvTable::new(&METRICS_HEADER);
    t.rows.push(MetricsRow {
        epoch: 1,
        split: "train".into(),
        loss: 0.5,
        ce: 0.4,
        kl: 100.0,
        accuracy: 0.9,
        nll: f64::NAN,
        entropy: 0.1,
        seconds: 0.0,
    });
    let text = String::from_utf8(t.to_bytes().unwrap()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), METRICS_HEADER.join(","));
    assert!(lines.next().unwrap().starts_with("1,train,0.5,0.4,100"));
}
