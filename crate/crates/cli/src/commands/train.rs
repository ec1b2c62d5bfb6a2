//! Training with checkpoints and per-sample dynamics tables.

use anyhow::Result;
use curvprobe::train::{checkpoint_file_name, dynamics_report, train, EpochSummary, TrainConfig};
use curvprobe::zoo::{ArchConfig, ModelConfig, ZooModel};

use crate::args::{Arch, TrainArgs};
use crate::output::{num, opt, Artifacts};
use crate::plot::{self, Axes, Series};
use crate::{load_data, Report};

pub(crate) fn run(a: &mut TrainArgs, seed: u64) -> Result<Report> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr: a.lr,
        weight_decay: a.wd,
        optimizer: a.optimizer,
        schedule: a.schedule,
        ckpt_every: a.ckpt_every,
        seed,
        track_n: a.track_n,
        theta_step: a.theta_step,
    };
    cfg.validate()?;
    let (full, ids) = load_data(&mut a.data, "train", seed)?;
    let ds = if ids.len() == full.len() { full } else { full.select(&ids) };
    let config = ModelConfig {
        arch: match a.arch {
            Arch::Cnn => ArchConfig::default_cnn(),
            Arch::Vit => ArchConfig::default_vit(),
        },
        input: ds.shape(),
        num_classes: ds.num_classes(),
        normalization: ds.channel_stats(),
    };
    let model = ZooModel::new(config, cfg.init_seed())?;
    eprintln!(
        "training {} ({} parameters) on {} samples for {} epochs",
        a.arch.tag(),
        model.params().trainable_count(),
        ds.len(),
        cfg.epochs
    );

    let mut out = Artifacts::new(&a.out)?;
    let ckpt_dir = out.dir().join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;
    let mut epochs: Vec<EpochSummary> = Vec::new();
    let outcome = train(model, &ds, &cfg, Some(&ckpt_dir), |s| {
        eprintln!("epoch {:>3}  loss {:.4}  lr {:.3e}", s.epoch, s.mean_loss, s.lr);
        epochs.push(s.clone());
    })?;
    for (e, _) in &outcome.checkpoints {
        out.written.push(format!("checkpoints/{}", checkpoint_file_name(*e)));
    }

    out.csv(
        "epochs.csv",
        &["epoch", "mean_loss", "lr"],
        epochs.iter().map(|s| vec![s.epoch.to_string(), num(s.mean_loss), num(s.lr)]),
    )?;
    out.csv(
        "checkpoints.csv",
        &["epoch", "file"],
        outcome
            .checkpoints
            .iter()
            .map(|(e, _)| vec![e.to_string(), format!("checkpoints/{}", checkpoint_file_name(*e))]),
    )?;
    let log = &outcome.log;
    out.csv(
        "dynamics.csv",
        &["sample_id", "epoch", "loss", "theta1"],
        log.sample_ids.iter().enumerate().flat_map(|(s, id)| {
            log.epochs
                .iter()
                .enumerate()
                .map(move |(k, e)| vec![id.to_string(), e.to_string(), num(log.losses[s][k]), opt(log.theta1[s][k])])
        }),
    )?;

    let report = dynamics_report(log)?;
    let lc = &report.loss_change;
    out.csv(
        "loss_change.csv",
        &["rank", "sample_id", "final_theta1", "epoch_from", "epoch_to", "loss_change"],
        lc.sample_ids.iter().enumerate().flat_map(|(r, id)| {
            lc.intervals.iter().zip(&lc.values[r]).map(move |((from, to), v)| {
                vec![
                    r.to_string(),
                    id.to_string(),
                    opt(lc.final_theta1[r]),
                    from.to_string(),
                    to.to_string(),
                    num(*v),
                ]
            })
        }),
    )?;
    out.csv(
        "loss_scatter.csv",
        &["sample_id", "epoch", "loss", "loss_change_to_end", "final_theta1"],
        report.loss_scatter.iter().map(|r| {
            vec![
                r.sample_id.to_string(),
                r.epoch.to_string(),
                num(r.loss),
                num(r.loss_change_to_end),
                opt(r.final_theta1),
            ]
        }),
    )?;
    out.csv(
        "theta_scatter.csv",
        &["sample_id", "epoch", "theta1", "final_theta1"],
        report
            .theta_scatter
            .iter()
            .map(|r| vec![r.sample_id.to_string(), r.epoch.to_string(), opt(r.theta1), opt(r.final_theta1)]),
    )?;

    out.svg("loss_curve.svg", |p| {
        let pts = epochs.iter().map(|s| (s.epoch as f64, s.mean_loss)).collect();
        plot::xy(
            p,
            &Axes {
                title: "Training loss",
                x: "epoch",
                y: "mean loss",
            },
            &[Series::line("train", pts)],
        )
    });
    out.svg("loss_change.svg", |p| {
        let rows: Vec<Vec<Option<f64>>> = lc.values.iter().map(|r| r.iter().map(|v| Some(*v)).collect()).collect();
        plot::heatmap(
            p,
            &Axes {
                title: "Loss change per interval, rows by final theta(1)",
                x: "checkpoint interval",
                y: "sample rank",
            },
            &rows,
            (-2.0, 2.0),
        )
    });
    out.svg("theta_scatter.svg", |p| {
        let series: Vec<Series> = log
            .epochs
            .iter()
            .map(|&e| {
                let pts = report
                    .theta_scatter
                    .iter()
                    .filter(|r| r.epoch == e)
                    .filter_map(|r| Some((r.final_theta1?, r.theta1?)))
                    .collect();
                Series::dots(format!("epoch {e}"), pts)
            })
            .collect();
        plot::xy(
            p,
            &Axes {
                title: "theta(1) during training against final theta(1)",
                x: "final theta(1)",
                y: "theta(1) at checkpoint",
            },
            &series,
        )
    });
    Ok(Report {
        inputs: vec![a.data.data.clone()],
        artifacts: out.written,
    })
}

impl Arch {
    fn tag(self) -> &'static str {
        match self {
            Arch::Cnn => "cnn",
            Arch::Vit => "vit",
        }
    }
}
