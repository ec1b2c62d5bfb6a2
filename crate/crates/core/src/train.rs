//! Training loop with per-sample loss and curvedness snapshots.
//!
//! At every checkpoint epoch (0, every `ckpt_every` epochs, and the last) the
//! tracked samples get an inference-mode loss and a `theta(1)` along their
//! FGSM direction. The resulting log feeds three report tables: a clipped
//! loss-change matrix sorted by final `theta(1)`, loss against loss-to-go,
//! and `theta(1)` against its final value.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::save_checkpoint;
use crate::data::{subset_indices, Dataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::trajectory::first_turn_fgsm;
use crate::zoo::{BatchGradients, ZooModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    AdamW,
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adamw" => Ok(Optimizer::AdamW),
            "sgd" => Ok(Optimizer::Sgd),
            other => Err(Error::Config(format!("unknown optimizer '{other}' (expected adamw or sgd)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Constant,
    Cosine,
}

impl std::str::FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "cosine" => Ok(Schedule::Cosine),
            other => Err(Error::Config(format!("unknown schedule '{other}' (expected constant or cosine)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: Optimizer,
    pub schedule: Schedule,
    pub ckpt_every: usize,
    pub seed: u64,
    pub track_n: usize,
    /// Step length of the `theta(1)` snapshots.
    pub theta_step: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch: 64,
            lr: 5e-4,
            weight_decay: 0.05,
            optimizer: Optimizer::AdamW,
            schedule: Schedule::Cosine,
            ckpt_every: 10,
            seed: 0,
            track_n: 1000,
            theta_step: 0.002,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || self.ckpt_every == 0 {
            return Err(Error::Config("batch size and checkpoint period must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config("learning rate and weight decay must be finite and non-negative".into()));
        }
        if !(self.theta_step > 0.0) {
            return Err(Error::Config("theta step must be positive".into()));
        }
        Ok(())
    }

    /// Seed used to initialize the model before training.
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, &[0x1417])
    }

    /// Epochs that get a checkpoint: 0, multiples of `ckpt_every`, and the last.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        let mut e: Vec<usize> = (0..=self.epochs).filter(|e| e % self.ckpt_every == 0).collect();
        if e.last() != Some(&self.epochs) {
            e.push(self.epochs);
        }
        e
    }
}

/// Per-sample loss and `theta(1)` at each checkpoint epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingDynamicsLog {
    pub epochs: Vec<usize>,
    /// Dataset indices of the tracked samples.
    pub sample_ids: Vec<usize>,
    /// `[sample][checkpoint]`.
    pub losses: Vec<Vec<f64>>,
    /// `[sample][checkpoint]`; `None` where the FGSM direction is undefined.
    pub theta1: Vec<Vec<Option<f64>>>,
}

impl TrainingDynamicsLog {
    pub fn final_theta1(&self) -> Vec<Option<f64>> {
        self.theta1.iter().map(|r| r.last().copied().flatten()).collect()
    }

    fn check(&self) -> Result<()> {
        let k = self.epochs.len();
        if k == 0 {
            return Err(Error::IncompleteLog("no checkpoints".into()));
        }
        let n = self.sample_ids.len();
        if self.losses.len() != n || self.theta1.len() != n {
            return Err(Error::IncompleteLog(format!(
                "{} samples but {} loss rows and {} theta rows",
                n,
                self.losses.len(),
                self.theta1.len()
            )));
        }
        if let Some(i) = (0..n).find(|&i| self.losses[i].len() != k || self.theta1[i].len() != k) {
            return Err(Error::IncompleteLog(format!(
                "sample {} lacks entries for some of the {k} checkpoints",
                self.sample_ids[i]
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

pub struct TrainOutcome {
    pub model: ZooModel,
    pub log: TrainingDynamicsLog,
    /// Mean training-mode loss of each epoch `1..=epochs`.
    pub epoch_losses: Vec<f64>,
    pub checkpoints: Vec<(usize, PathBuf)>,
}

pub fn checkpoint_file_name(epoch: usize) -> String {
    format!("epoch_{epoch:04}.cprb")
}

struct OptState {
    m: Vec<Option<Vec<f32>>>,
    v: Vec<Option<Vec<f32>>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const MOMENTUM: f32 = 0.9;

fn optimizer_step(model: &mut ZooModel, g: &BatchGradients, st: &mut OptState, cfg: &TrainConfig, lr: f64) {
    st.t += 1;
    let bc1 = 1.0 - BETA1.powi(st.t);
    let bc2 = 1.0 - BETA2.powi(st.t);
    let store = model.params_mut();
    for (i, grad) in g.grads.iter().enumerate() {
        let Some(grad) = grad else { continue };
        let decay = store.tensor(i).ndim() >= 2;
        let p = store.tensor_mut(i).data_mut();
        let m = st.m[i].get_or_insert_with(|| vec![0.0; p.len()]);
        match cfg.optimizer {
            Optimizer::AdamW => {
                let v = st.v[i].get_or_insert_with(|| vec![0.0; p.len()]);
                for k in 0..p.len() {
                    let gk = grad.data()[k] as f64;
                    let mk = BETA1 * m[k] as f64 + (1.0 - BETA1) * gk;
                    let vk = BETA2 * v[k] as f64 + (1.0 - BETA2) * gk * gk;
                    m[k] = mk as f32;
                    v[k] = vk as f32;
                    let mut pk = p[k] as f64;
                    if decay {
                        pk -= lr * cfg.weight_decay * pk;
                    }
                    pk -= lr * (mk / bc1) / ((vk / bc2).sqrt() + ADAM_EPS);
                    p[k] = pk as f32;
                }
            }
            Optimizer::Sgd => {
                for k in 0..p.len() {
                    let mut gk = grad.data()[k];
                    if decay {
                        gk += cfg.weight_decay as f32 * p[k];
                    }
                    m[k] = MOMENTUM * m[k] + gk;
                    p[k] -= lr as f32 * m[k];
                }
            }
        }
    }
}

fn learning_rate(cfg: &TrainConfig, step: usize, total: usize) -> f64 {
    match cfg.schedule {
        Schedule::Constant => cfg.lr,
        Schedule::Cosine => {
            let t = step as f64 / total.max(1) as f64;
            0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * t).cos())
        }
    }
}

const SNAPSHOT_CHUNK: usize = 64;

/// Inference-mode loss and FGSM `theta(1)` of the tracked samples.
fn snapshot(model: &ZooModel, ds: &Dataset, ids: &[usize], step: f64) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
    let mut losses = Vec::with_capacity(ids.len());
    let mut thetas = Vec::with_capacity(ids.len());
    for part in ids.chunks(SNAPSHOT_CHUNK) {
        let (images, labels) = ds.batch(part)?;
        losses.extend(model.per_sample_loss(&images, &labels)?.iter().map(|l| *l as f64));
        let imgs: Vec<&[f32]> = part.iter().map(|&i| ds.image(i)).collect();
        thetas.extend(first_turn_fgsm(model, &imgs, &labels, step)?);
    }
    Ok((losses, thetas))
}

/// Trains `model` on `ds`. Checkpoints go to `ckpt_dir` when given.
pub fn train(
    mut model: ZooModel,
    ds: &Dataset,
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let tracked = subset_indices(ds.len(), cfg.track_n.min(ds.len()), derive_seed(cfg.seed, &[0x7ac]))?;
    let ckpt_epochs = cfg.checkpoint_epochs();
    let mut log = TrainingDynamicsLog {
        epochs: Vec::new(),
        sample_ids: tracked.clone(),
        losses: vec![Vec::new(); tracked.len()],
        theta1: vec![Vec::new(); tracked.len()],
    };
    let mut checkpoints = Vec::new();
    let mut record = |model: &ZooModel, epoch: usize, log: &mut TrainingDynamicsLog| -> Result<()> {
        let (l, t) = snapshot(model, ds, &tracked, cfg.theta_step)?;
        log.epochs.push(epoch);
        for (i, (li, ti)) in l.into_iter().zip(t).enumerate() {
            log.losses[i].push(li);
            log.theta1[i].push(ti);
        }
        if let Some(dir) = ckpt_dir {
            let path = dir.join(checkpoint_file_name(epoch));
            save_checkpoint(model, epoch, &path)?;
            checkpoints.push((epoch, path));
        }
        Ok(())
    };
    record(&model, 0, &mut log)?;
    let mut last_good = 0;

    let n_params = model.params().len();
    let mut st = OptState {
        m: vec![None; n_params],
        v: vec![None; n_params],
        t: 0,
    };
    let steps_per_epoch = ds.len().div_ceil(cfg.batch);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut step = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let mut rng = seeded(derive_seed(cfg.seed, &[0x5b0f, epoch as u64]));
        let mut order: Vec<usize> = (0..ds.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let (mut sum, mut count) = (0.0f64, 0usize);
        let mut lr = cfg.lr;
        for chunk in order.chunks(cfg.batch) {
            let (images, labels) = ds.batch(chunk)?;
            let g = model.batch_gradients(&images, &labels)?;
            if !g.loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    loss: g.loss,
                    last_good_epoch: last_good,
                });
            }
            lr = learning_rate(cfg, step, total_steps);
            optimizer_step(&mut model, &g, &mut st, cfg, lr);
            model.apply_bn_updates(&g);
            sum += g.loss as f64 * chunk.len() as f64;
            count += chunk.len();
            step += 1;
        }
        let mean_loss = sum / count as f64;
        epoch_losses.push(mean_loss);
        on_epoch(&EpochSummary { epoch, mean_loss, lr });
        if ckpt_epochs.contains(&epoch) {
            record(&model, epoch, &mut log)?;
            last_good = epoch;
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        epoch_losses,
        checkpoints,
    })
}

/// Loss change per checkpoint interval, rows sorted by final `theta(1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossChangeMatrix {
    /// `(epoch_from, epoch_to)` per column.
    pub intervals: Vec<(usize, usize)>,
    pub sample_ids: Vec<usize>,
    pub final_theta1: Vec<Option<f64>>,
    /// Clipped to `[-2, 2]`.
    pub values: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossScatterRow {
    pub sample_id: usize,
    pub epoch: usize,
    pub loss: f64,
    /// `loss(final) - loss(epoch)`, unclipped.
    pub loss_change_to_end: f64,
    pub final_theta1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThetaScatterRow {
    pub sample_id: usize,
    pub epoch: usize,
    pub theta1: Option<f64>,
    pub final_theta1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DynamicsReport {
    pub loss_change: LossChangeMatrix,
    pub loss_scatter: Vec<LossScatterRow>,
    pub theta_scatter: Vec<ThetaScatterRow>,
}

pub const LOSS_CHANGE_CLIP: f64 = 2.0;

pub fn dynamics_report(log: &TrainingDynamicsLog) -> Result<DynamicsReport> {
    log.check()?;
    let final_theta = log.final_theta1();
    let k = log.epochs.len();
    let mut order: Vec<usize> = (0..log.sample_ids.len()).collect();
    // Ascending final theta(1); undefined values last; ties by sample id.
    order.sort_by(|&a, &b| {
        let key = |i: usize| final_theta[i].unwrap_or(f64::INFINITY);
        key(a).total_cmp(&key(b)).then(log.sample_ids[a].cmp(&log.sample_ids[b]))
    });
    let intervals = log.epochs.windows(2).map(|w| (w[0], w[1])).collect();
    let values = order
        .iter()
        .map(|&i| {
            log.losses[i]
                .windows(2)
                .map(|w| (w[1] - w[0]).clamp(-LOSS_CHANGE_CLIP, LOSS_CHANGE_CLIP))
                .collect()
        })
        .collect();
    let loss_change = LossChangeMatrix {
        intervals,
        sample_ids: order.iter().map(|&i| log.sample_ids[i]).collect(),
        final_theta1: order.iter().map(|&i| final_theta[i]).collect(),
        values,
    };
    let mut loss_scatter = Vec::new();
    let mut theta_scatter = Vec::new();
    for i in 0..log.sample_ids.len() {
        let end = log.losses[i][k - 1];
        for (c, &epoch) in log.epochs.iter().enumerate() {
            loss_scatter.push(LossScatterRow {
                sample_id: log.sample_ids[i],
                epoch,
                loss: log.losses[i][c],
                loss_change_to_end: end - log.losses[i][c],
                final_theta1: final_theta[i],
            });
            theta_scatter.push(ThetaScatterRow {
                sample_id: log.sample_ids[i],
                epoch,
                theta1: log.theta1[i][c],
                final_theta1: final_theta[i],
            });
        }
    }
    Ok(DynamicsReport {
        loss_change,
        loss_scatter,
        theta_scatter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(losses: Vec<Vec<f64>>, final_theta: &[f64]) -> TrainingDynamicsLog {
        let k = losses[0].len();
        TrainingDynamicsLog {
            epochs: (0..k).map(|e| e * 10).collect(),
            sample_ids: (0..losses.len()).collect(),
            theta1: final_theta.iter().map(|t| vec![Some(*t); k]).collect(),
            losses,
        }
    }

    #[test]
    fn checkpoint_epochs_include_both_ends() {
        let cfg = TrainConfig {
            epochs: 25,
            ckpt_every: 10,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.checkpoint_epochs(), vec![0, 10, 20, 25]);
        assert_eq!(TrainConfig::default().checkpoint_epochs().len(), 7);
        let zero = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(zero.checkpoint_epochs(), vec![0]);
    }

    #[test]
    fn constant_loss_gives_zero_changes() {
        let r = dynamics_report(&log(vec![vec![1.0; 3]; 2], &[0.2, 0.1])).unwrap();
        assert!(r.loss_change.values.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn rows_sorted_by_final_theta() {
        let r = dynamics_report(&log(vec![vec![1.0, 1.0]; 2], &[0.9, 0.1])).unwrap();
        assert_eq!(r.loss_change.sample_ids, vec![1, 0]);
    }

    #[test]
    fn clipping_only_in_matrix() {
        let r = dynamics_report(&log(vec![vec![6.0, 1.0]], &[0.3])).unwrap();
        assert_eq!(r.loss_change.values[0], vec![-2.0]);
        assert_eq!(r.loss_scatter[0].loss_change_to_end, -5.0);
    }

    #[test]
    fn ragged_log_is_rejected() {
        let mut l = log(vec![vec![1.0, 1.0]; 2], &[0.1, 0.2]);
        l.losses[1].pop();
        assert!(matches!(dynamics_report(&l), Err(Error::IncompleteLog(_))));
    }
}
