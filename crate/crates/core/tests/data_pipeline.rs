use std::fs;

use dsffs::data::{
    generate_synthetic, normalize, partition_noniid, read_csv, read_idx, read_libsvm, stratified_split, write_csv,
    write_idx, write_libsvm, Dataset, NormalizeMode, Normalizer, PartitionedDataset, SyntheticSpec,
};
use dsffs::sparse_net::{init_er_topology, Sgd};
use dsffs::DsffsError;
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(seed: u64, n: usize, d: usize, c: usize, integer: bool) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, d), |_| {
        if integer {
            rng.random_range(0..=255) as f64
        } else if rng.random_bool(0.3) {
            0.0
        } else {
            rng.random_range(-5.0..5.0)
        }
    });
    let y = (0..n).map(|i| i % c).collect();
    Dataset::new(x, y, "data").unwrap()
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.csv");
    let mut ds = random_dataset(1, 30, 4, 3, false);
    ds.feature_names = Some(vec!["a".into(), "b".into(), "c".into(), "d".into()]);
    write_csv(&ds, &path).unwrap();
    assert_eq!(read_csv(&path, None).unwrap(), ds);
    assert_eq!(read_csv(&path, Some("label")).unwrap(), ds);
}

#[test]
fn libsvm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.svm");
    let ds = random_dataset(2, 25, 6, 4, false);
    write_libsvm(&ds, &path).unwrap();
    let back = read_libsvm(&path, Some(6)).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn idx_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = (dir.path().join("data-images"), dir.path().join("data-labels"));
    let mut ds = random_dataset(3, 12, 6, 10, true);
    ds.labels = (0..12).map(|i| i % 10).collect();
    write_idx(&ds, &img, &lab, 2, 3).unwrap();
    let back = read_idx(&img, &lab).unwrap();
    assert_eq!(back.features, ds.features);
    assert_eq!(back.labels, ds.labels);
    assert_eq!(back.n_classes, 10);
}

#[test]
fn small_files_parse() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("three.csv");
    fs::write(&csv, "x1,x2,y\n1,2,a\n3,4,b\n5,6,a\n").unwrap();
    let ds = read_csv(&csv, Some("y")).unwrap();
    assert_eq!((ds.n_samples(), ds.n_features(), ds.n_classes), (3, 2, 2));

    let svm = dir.path().join("one.svm");
    fs::write(&svm, "1 3:0.5\n").unwrap();
    let ds = read_libsvm(&svm, Some(4)).unwrap();
    assert_eq!(ds.features, array![[0.0, 0.0, 0.5, 0.0]]);
}

#[test]
fn malformed_input_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "x1,x2,y\n1,2,0\n3,oops,1\n").unwrap();
    match read_csv(&csv, None).unwrap_err() {
        DsffsError::Parse { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected error {e}"),
    }
    assert!(read_csv(&csv, Some("missing")).is_err());

    let svm = dir.path().join("bad.svm");
    fs::write(&svm, "0 1:1\n1 2:x\n").unwrap();
    match read_libsvm(&svm, None).unwrap_err() {
        DsffsError::Parse { line, .. } => assert_eq!(line, 2),
        e => panic!("unexpected error {e}"),
    }
}

#[test]
fn minmax_and_zscore() {
    let ds = Dataset::new(array![[0.0, 7.0], [5.0, 7.0], [10.0, 7.0]], vec![0, 1, 0], "t").unwrap();
    let m = normalize(&ds, NormalizeMode::Minmax);
    assert_eq!(m.features, array![[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]);
    let z = normalize(&ds, NormalizeMode::Zscore);
    assert!(z.features.column(1).iter().all(|&v| v == 0.0));

    let ds = random_dataset(4, 200, 5, 2, false);
    let (train, _) = stratified_split(&ds.labels, 2, 0.2, 1).unwrap();
    let mut x = ds.features.clone();
    Normalizer::fit(&x, Some(&train), NormalizeMode::Zscore).apply(&mut x);
    let tx = x.select(ndarray::Axis(0), &train);
    for col in tx.columns() {
        let mean = col.mean().unwrap();
        let sd = (col.mapv(|v| (v - mean).powi(2)).mean().unwrap()).sqrt();
        assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }
    for mode in [NormalizeMode::Minmax, NormalizeMode::Zscore] {
        let once = normalize(&ds, mode);
        let twice = normalize(&once, mode);
        for (a, b) in once.features.iter().zip(&twice.features) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn near_iid_partition_tracks_global_proportions() {
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 2000,
        n_classes: 3,
        ..Default::default()
    })
    .unwrap();
    let train: Vec<usize> = (0..ds.n_samples()).collect();
    let global: Vec<f64> = ds.class_histogram().iter().map(|&c| c as f64 / 2000.0).collect();
    for seed in 0..10 {
        let shards = partition_noniid(&ds.labels, &train, 2, 1e6, seed).unwrap();
        for shard in &shards {
            let h = ds.class_histogram_of(shard);
            for (c, &n) in h.iter().enumerate() {
                let p = n as f64 / shard.len() as f64;
                assert!(
                    (p - global[c]).abs() <= 0.05,
                    "seed {seed} class {c}: {p} vs {}",
                    global[c]
                );
            }
        }
    }
}

#[test]
fn strong_skew_leaves_classes_out() {
    let ds = generate_synthetic(&SyntheticSpec {
        n_samples: 1000,
        n_classes: 10,
        ..Default::default()
    })
    .unwrap();
    let train: Vec<usize> = (0..ds.n_samples()).collect();
    for seed in 0..10 {
        let shards = partition_noniid(&ds.labels, &train, 10, 0.1, seed).unwrap();
        let missing = shards.iter().any(|s| ds.class_histogram_of(s).contains(&0));
        assert!(missing, "seed {seed}");
    }
}

#[test]
fn partition_rejects_bad_arguments() {
    let labels = vec![0, 1, 0, 1];
    let train = [0, 1, 2, 3];
    assert!(partition_noniid(&labels, &train, 1, 0.5, 0).is_err());
    assert!(partition_noniid(&labels, &train, 5, 0.5, 0).is_err());
    assert!(partition_noniid(&labels, &train, 2, 0.0, 0).is_err());
}

#[test]
fn separable_without_noise() {
    // one dense linear layer trained with the engine itself
    let ds = generate_synthetic(&SyntheticSpec {
        n_noise: 0,
        ..Default::default()
    })
    .unwrap();
    let ds = normalize(&ds, NormalizeMode::Zscore);
    let mut net = init_er_topology(&[ds.n_features(), 2], 0.0, 1).unwrap();
    let mut opt = Sgd::new(0.05, 0.9).unwrap();
    for _ in 0..50 {
        for chunk in (0..ds.n_samples()).collect::<Vec<_>>().chunks(64) {
            let (x, y) = ds.rows(chunk);
            let g = net.gradients(x.view(), &y).unwrap();
            opt.step(&mut net, &g, None).unwrap();
        }
    }
    let acc = dsffs::metrics::accuracy(&net, ds.features.view(), &ds.labels).unwrap();
    assert!(acc > 0.9, "train accuracy {acc}");
}

#[test]
fn synthetic_noise_is_label_independent() {
    let spec = SyntheticSpec {
        n_informative: 4,
        n_noise: 6,
        n_samples: 100,
        ..Default::default()
    };
    let a = generate_synthetic(&spec).unwrap();
    assert_eq!(a, generate_synthetic(&spec).unwrap());
    assert_eq!(a.n_features(), 10);
    let inf = a.informative.clone().unwrap();
    assert_eq!(inf.len(), 4);
    // reordering noise columns leaves the informative block untouched
    let noise: Vec<usize> = (0..10).filter(|c| !inf.contains(c)).rev().collect();
    let mut order = inf.clone();
    order.extend(noise);
    let b = a.select_columns(&order).unwrap();
    assert_eq!(b.informative.as_deref(), Some(&[0, 1, 2, 3][..]));
    for (k, &c) in inf.iter().enumerate() {
        assert_eq!(b.features.column(k), a.features.column(c));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partition_is_a_true_partition(
        n in 20usize..300,
        clients in 2usize..12,
        alpha in 0.01f64..100.0,
        seed in any::<u64>(),
        c in 2usize..6,
    ) {
        prop_assume!(clients * 2 <= n);
        let labels: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % c).collect();
        let ds = Dataset::new(Array2::zeros((n, 1)), labels.clone(), "p").unwrap();
        let (train, test) = stratified_split(&labels, c, 0.2, seed).unwrap();
        prop_assume!(train.len() >= clients);
        let shards = partition_noniid(&labels, &train, clients, alpha, seed).unwrap();
        let mut all: Vec<usize> = shards.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(&all, &train);
        prop_assert!(shards.iter().all(|s| !s.is_empty()));
        let data = PartitionedDataset::from_parts(ds, shards, test).unwrap();
        prop_assert_eq!(data.n_train() + data.test.len(), n);
        prop_assert_eq!(partition_noniid(&labels, &train, clients, alpha, seed).unwrap(), data.shards);
    }
}
