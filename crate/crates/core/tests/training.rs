use ndarray::Array2;
use rand::Rng;
use slicegru::data::{Label, Laterality, VolumeRecord};
use slicegru::eval::{cross_validate, HeadConfig};
use slicegru::model::{predict, GruDirectionParams, HeadParams, HeadShape};
use slicegru::rng::rng_from;
use slicegru::train::{lr_at, train_model, OptimConfig, TrainConfig};

const SHAPE: HeadShape = HeadShape {
    input_dim: 4,
    hidden1: 4,
    hidden2: 3,
};

/// Sequences whose first feature carries the class sign on every slice.
fn toy(n_pos: usize, n_neg: usize, seed: u64) -> (Vec<Array2<f64>>, Vec<Label>) {
    let mut rng = rng_from(seed, 77);
    let mut seqs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n_pos + n_neg {
        let label = if i < n_pos { Label::Glaucoma } else { Label::Normal };
        let sign = if label.is_positive() { 1.0 } else { -1.0 };
        seqs.push(Array2::from_shape_fn((6, 4), |(_, c)| {
            let noise = rng.random_range(-0.3..0.3);
            if c == 0 { sign + noise } else { noise }
        }));
        labels.push(label);
    }
    (seqs, labels)
}

fn config(max_epochs: usize, patience: usize) -> TrainConfig {
    TrainConfig {
        optim: OptimConfig {
            lr0: 1e-2,
            batch_size: 8,
            max_epochs,
            patience,
            seed: 11,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn split(labels: &[Label]) -> (Vec<usize>, Vec<usize>) {
    (0..labels.len()).partition(|i| i % 4 != 0)
}

#[test]
fn learns_a_separable_toy_problem() {
    let (seqs, labels) = toy(24, 12, 1);
    let (train, val) = split(&labels);
    let init = HeadParams::<GruDirectionParams>::init(SHAPE, 0.3, 5).unwrap();
    let cfg = config(20, 20);
    let out = train_model(&seqs, &labels, &train, &val, init, &cfg).unwrap();
    let h = &out.history;

    assert!(h.best_val_loss < h.initial_val_loss);
    assert_eq!(h.epochs.len(), 20);
    assert!(!h.stopped_early);
    for (i, e) in h.epochs.iter().enumerate() {
        assert_eq!(e.epoch, i);
        assert_eq!(e.lr, lr_at(i, &cfg.optim));
        assert!(e.train_loss.is_finite() && e.val_loss.is_finite());
    }
    let min = h.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(h.best_val_loss, min);
    assert_eq!(h.epochs[h.best_epoch].val_loss, min);

    for &i in &val {
        let p = predict(seqs[i].view(), &out.params).unwrap();
        assert_eq!(p >= 0.5, labels[i].is_positive(), "item {i}: p = {p}");
    }
}

#[test]
fn training_is_reproducible_and_thread_count_independent() {
    let (seqs, labels) = toy(20, 10, 2);
    let (train, val) = split(&labels);
    let init = HeadParams::<GruDirectionParams>::init(SHAPE, 0.3, 9).unwrap();
    let cfg = config(5, 5);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_model(&seqs, &labels, &train, &val, init.clone(), &cfg).unwrap())
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.params.flatten(), b.params.flatten());
    assert_eq!(a.history, b.history);

    let mut other = cfg;
    other.optim.seed += 1;
    let c = train_model(&seqs, &labels, &train, &val, init.clone(), &other).unwrap();
    assert_ne!(a.params.flatten(), c.params.flatten());
}

#[test]
fn stops_after_patience_epochs_without_improvement() {
    let (mut seqs, mut labels) = toy(20, 10, 3);
    let train: Vec<usize> = (0..seqs.len()).collect();
    // validation items whose features contradict their labels
    let (flipped, _) = toy(4, 4, 4);
    for (i, s) in flipped.into_iter().enumerate() {
        seqs.push(s);
        labels.push(if i < 4 { Label::Normal } else { Label::Glaucoma });
    }
    let val: Vec<usize> = (30..38).collect();
    let init = HeadParams::<GruDirectionParams>::init(SHAPE, 0.3, 1).unwrap();
    let patience = 2;
    let out = train_model(&seqs, &labels, &train, &val, init, &config(50, patience)).unwrap();
    let h = &out.history;
    assert!(h.stopped_early);
    assert_eq!(h.epochs.len(), h.best_epoch + patience + 1);
    for e in &h.epochs[h.best_epoch + 1..] {
        assert!(e.val_loss >= h.best_val_loss);
    }
}

#[test]
fn rejects_bad_inputs() {
    let (seqs, labels) = toy(4, 4, 5);
    let init = HeadParams::<GruDirectionParams>::init(SHAPE, 0.3, 1).unwrap();
    assert!(train_model(&seqs, &labels, &[0, 99], &[1], init.clone(), &config(1, 1)).is_err());
    assert!(train_model(&seqs, &labels[..3], &[0], &[1], init.clone(), &config(1, 1)).is_err());
    let mut bad = config(1, 1);
    bad.optim.batch_size = 1;
    assert!(train_model(&seqs, &labels, &[0, 5], &[1], init, &bad).is_err());
}

fn records(labels: &[Label]) -> Vec<VolumeRecord> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| VolumeRecord {
            volume_id: format!("v{i}"),
            subject_id: format!("s{i}"),
            label,
            laterality: Laterality::Unknown,
            signal_strength: None,
            relative_path: format!("v{i}.raw").into(),
            shape: (6, 1, 1),
            voxels: None,
        })
        .collect()
}

#[test]
fn cross_validation_tests_every_volume_once() {
    let (seqs, labels) = toy(20, 10, 6);
    let recs = records(&labels);
    let head = HeadConfig {
        hidden1: 4,
        hidden2: 3,
        ..Default::default()
    };
    let cfg = config(8, 8);
    let a = cross_validate(&recs, &seqs, 3, 2, &head, &cfg).unwrap();
    assert_eq!(a.folds.len(), 3);
    assert_eq!(a.report.k, 3);
    let mut tested: Vec<String> = a
        .folds
        .iter()
        .flat_map(|f| f.predictions.iter().map(|p| p.volume_id.clone()))
        .collect();
    tested.sort();
    let mut all: Vec<String> = recs.iter().map(|r| r.volume_id.clone()).collect();
    all.sort();
    assert_eq!(tested, all);
    assert!(a.report.mean.auc > 0.9);

    let b = cross_validate(&recs, &seqs, 3, 2, &head, &cfg).unwrap();
    assert_eq!(a.report, b.report);
}
