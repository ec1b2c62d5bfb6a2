mod common;

use common::*;
use curvprobe::checkpoint::load_checkpoint;
use curvprobe::data::{synthetic, Dataset};
use curvprobe::train::{checkpoint_file_name, dynamics_report, train, Optimizer, Schedule, TrainConfig, TrainingDynamicsLog};
use curvprobe::zoo::ZooModel;
use curvprobe::Error;

fn data() -> Dataset {
    synthetic(SHAPE, 3, 96, 17).unwrap()
}

fn small(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 16,
        lr: 5e-3,
        ckpt_every: 2,
        track_n: 12,
        ..TrainConfig::default()
    }
}

fn values(m: &ZooModel) -> Vec<Vec<f32>> {
    m.params().entries().iter().map(|e| e.tensor.data().to_vec()).collect()
}

/// Class `k` brightens channel `k`; any model can separate it.
fn separable() -> Dataset {
    let n = 96;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let mut images = Vec::with_capacity(n * DIM);
    for (i, &k) in labels.iter().enumerate() {
        let noise = image(DIM, 1000 + i as u64, 0.0, 0.5);
        images.extend(noise.iter().enumerate().map(|(j, v)| if j / 64 == k { v + 0.4 } else { *v }));
    }
    Dataset::new(SHAPE, 3, images, labels, "train").unwrap()
}

#[test]
fn training_reduces_the_loss() {
    let ds = separable();
    for init in [tiny_cnn(0), tiny_vit(0)] {
        let out = train(init, &ds, &small(10), None, |_| {}).unwrap();
        let (first, last) = (out.epoch_losses[0], *out.epoch_losses.last().unwrap());
        assert!(last < 0.8 * first, "{first} -> {last}");
    }
}

#[test]
fn sgd_with_a_constant_rate_also_learns() {
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        schedule: Schedule::Constant,
        lr: 0.05,
        weight_decay: 5e-4,
        ..small(10)
    };
    let out = train(tiny_cnn(1), &data(), &cfg, None, |_| {}).unwrap();
    assert!(out.epoch_losses.last().unwrap() < &out.epoch_losses[0]);
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let init = tiny_vit(2);
    let before = values(&init);
    let cfg = TrainConfig { lr: 0.0, ..small(3) };
    let out = train(init, &data(), &cfg, None, |_| {}).unwrap();
    assert_eq!(values(&out.model), before);
}

#[test]
fn training_is_deterministic_given_the_seed() {
    let cfg = small(3);
    let a = train(tiny_cnn(3), &data(), &cfg, None, |_| {}).unwrap();
    let b = train(tiny_cnn(3), &data(), &cfg, None, |_| {}).unwrap();
    assert_eq!(values(&a.model), values(&b.model));
    assert_eq!(a.log, b.log);
    assert_eq!(a.epoch_losses, b.epoch_losses);
    let other = TrainConfig { seed: 1, ..cfg };
    let c = train(tiny_cnn(3), &data(), &other, None, |_| {}).unwrap();
    assert_ne!(values(&a.model), values(&c.model));
}

#[test]
fn checkpoints_cover_the_schedule_and_epoch_zero_is_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let init = tiny_cnn(4);
    let before = values(&init);
    let cfg = small(5);
    let mut seen = Vec::new();
    let out = train(init, &data(), &cfg, Some(dir.path()), |s| seen.push(s.epoch)).unwrap();
    assert_eq!(seen, vec![1, 2, 3, 4, 5]);
    assert_eq!(cfg.checkpoint_epochs(), vec![0, 2, 4, 5]);
    let epochs: Vec<usize> = out.checkpoints.iter().map(|c| c.0).collect();
    assert_eq!(epochs, vec![0, 2, 4, 5]);
    assert_eq!(out.log.epochs, epochs);
    for (e, path) in &out.checkpoints {
        assert_eq!(path, &dir.path().join(checkpoint_file_name(*e)));
        assert_eq!(load_checkpoint(path).unwrap().epoch, *e);
    }
    assert_eq!(values(&load_checkpoint(&out.checkpoints[0].1).unwrap().model), before);
    assert_eq!(values(&load_checkpoint(&out.checkpoints[3].1).unwrap().model), values(&out.model));
    assert_eq!(TrainConfig::default().checkpoint_epochs(), vec![0, 10, 20, 30, 40, 50, 60]);
}

#[test]
fn dynamics_log_has_one_entry_per_sample_and_checkpoint() {
    let out = train(tiny_vit(5), &data(), &small(4), None, |_| {}).unwrap();
    let log = &out.log;
    assert_eq!(log.sample_ids.len(), 12);
    assert!(log.losses.iter().all(|r| r.len() == 3));
    assert!(log.theta1.iter().all(|r| r.len() == 3));
    assert!(log.losses.iter().flatten().all(|l| l.is_finite() && *l >= 0.0));
    let report = dynamics_report(log).unwrap();
    assert_eq!(report.loss_change.intervals, vec![(0, 2), (2, 4)]);
    assert_eq!(report.loss_change.values.len(), 12);
    assert!(report.loss_change.values.iter().flatten().all(|v| v.abs() <= 2.0));
    let finals: Vec<f64> = report.loss_change.final_theta1.iter().map(|t| t.unwrap_or(f64::INFINITY)).collect();
    assert!(finals.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(report.loss_scatter.len(), 12 * 3);
}

#[test]
fn incomplete_logs_are_rejected() {
    let log = TrainingDynamicsLog {
        epochs: vec![0, 10],
        sample_ids: vec![4, 7],
        losses: vec![vec![1.0, 0.5], vec![1.0]],
        theta1: vec![vec![None, Some(0.1)], vec![None, None]],
    };
    assert!(matches!(dynamics_report(&log), Err(Error::IncompleteLog(_))));
}

#[test]
fn divergence_is_reported_with_the_last_good_epoch() {
    let cfg = TrainConfig {
        optimizer: Optimizer::Sgd,
        schedule: Schedule::Constant,
        lr: 1e30,
        ..small(4)
    };
    match train(tiny_cnn(6), &data(), &cfg, None, |_| {}) {
        Err(Error::Divergence { last_good_epoch, epoch, .. }) => assert!(last_good_epoch < epoch),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("training with a huge rate did not diverge"),
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    for cfg in [
        TrainConfig { batch: 0, ..small(1) },
        TrainConfig { lr: -1.0, ..small(1) },
        TrainConfig { ckpt_every: 0, ..small(1) },
    ] {
        assert!(matches!(train(tiny_cnn(0), &data(), &cfg, None, |_| {}), Err(Error::Config(_))));
    }
}

