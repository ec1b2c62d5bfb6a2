//! Feature trajectories, curvedness tables and boundary distances.

use anyhow::Result;
use curvprobe::stats::Histogram;
use curvprobe::trajectory::{analyze, boundary_distance_report, curvedness_stats, ModeTag, TrajectoryConfig, TravelLength};

use crate::args::TrajectoryArgs;
use crate::output::{num, opt, Artifacts};
use crate::plot::{self, Axes, Series};
use crate::{check_shape, load_data, load_model, samples, usage, Report};

const HIST_BINS: usize = 30;

pub(crate) fn run(a: &mut TrajectoryArgs, seed: u64) -> Result<Report> {
    if a.modes.is_empty() {
        return Err(usage("--modes needs at least one direction mode"));
    }
    if a.n_steps < 2 || !(a.step > 0.0) || !(a.eps_r >= 0.0) {
        return Err(usage("trajectories need --n-steps >= 2, a positive --step and a non-negative --eps-r"));
    }
    if a.seeds.is_empty() {
        a.seeds.push(seed);
    }
    let mut modes = a.modes.clone();
    modes.sort();
    modes.dedup();
    let cfg = TrajectoryConfig {
        n_steps: a.n_steps,
        length: if a.to_boundary {
            TravelLength::ToBoundary
        } else {
            TravelLength::FixedStep(a.step)
        },
        eps_r: a.eps_r,
        travel: a.travel.params(),
        seeds: a.seeds.clone(),
    };
    cfg.travel.validate()?;
    let model = load_model(&a.model.model)?;
    let (ds, ids) = load_data(&mut a.data, "test", seed)?;
    check_shape(&model, &ds)?;
    let run = analyze(&model, &samples(&ds, &ids), &modes, &cfg)?;
    let failed = run.rows.iter().filter(|r| r.error.is_some()).count();
    println!(
        "{} trajectories over {} samples ({} skipped as misclassified, {} failed)",
        run.rows.len(),
        ids.len() - run.skipped,
        run.skipped,
        failed
    );

    let mut out = Artifacts::new(&a.out)?;
    out.csv(
        "trajectory.csv",
        &[
            "sample_id",
            "mode",
            "seed_index",
            "label",
            "confidence",
            "eps_star",
            "crossed",
            "boundary_repr_distance",
            "epsilon",
            "theta1",
            "total_turn",
            "repr_distance",
            "missing_theta",
            "label_end",
            "error",
        ],
        run.rows.iter().map(|r| {
            let t = r.record.as_ref();
            vec![
                r.sample_id.to_string(),
                r.mode.to_string(),
                r.seed_index.to_string(),
                r.label.to_string(),
                num(r.confidence),
                opt(r.eps_star),
                r.crossed.to_string(),
                opt(r.boundary_repr_distance),
                opt(t.map(|t| t.epsilon)),
                opt(t.and_then(|t| t.theta1)),
                opt(t.map(|t| t.total_turn)),
                opt(t.map(|t| t.repr_distance)),
                t.map(|t| t.missing_theta.to_string()).unwrap_or_default(),
                t.map(|t| t.label_end.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )?;

    let bd = boundary_distance_report(&run.rows);
    out.csv(
        "boundary_distance.csv",
        &["sample_id", "mode", "confidence", "eps_star", "repr_distance", "theta1", "crossed"],
        bd.rows.iter().map(|r| {
            vec![
                r.sample_id.to_string(),
                r.mode.to_string(),
                num(r.confidence),
                opt(r.eps_star),
                opt(r.repr_distance),
                opt(r.theta1),
                r.crossed.to_string(),
            ]
        }),
    )?;
    out.csv(
        "jump_pairs.csv",
        &["sample_id", "eps_fgsm", "eps_rand_jump"],
        bd.jump_pairs
            .iter()
            .map(|p| vec![p.sample_id.to_string(), num(p.eps_fgsm), num(p.eps_rand_jump)]),
    )?;
    out.svg("distance_hist.svg", |p| {
        let groups: Vec<(String, Vec<(f64, f64, f64)>)> = modes
            .iter()
            .map(|&m| {
                let v: Vec<f64> = bd.rows.iter().filter(|r| r.mode == m).filter_map(|r| r.repr_distance).collect();
                (m.to_string(), v)
            })
            .filter(|(_, v)| !v.is_empty())
            .map(|(name, v)| {
                let hi = v.iter().copied().fold(0.0, f64::max);
                (name, hist_bars(&v, 0.0, hi))
            })
            .collect();
        plot::bars(
            p,
            &Axes {
                title: "Representation distance to the boundary",
                x: "|z(x') - z(x)|",
                y: "samples",
            },
            &groups,
        )
    });

    let stats = match curvedness_stats(&run.rows) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("warning: curvedness tables skipped: {e}");
            return Ok(Report {
                inputs: vec![a.model.model.clone(), a.data.data.clone()],
                artifacts: out.written,
            });
        }
    };
    let corr_rows = |rows: &[curvprobe::trajectory::CorrelationRow]| -> Vec<Vec<String>> {
        rows.iter()
            .map(|c| vec![c.mode.to_string(), c.count.to_string(), opt(c.pearson)])
            .collect()
    };
    out.csv("correlations.csv", &["mode", "count", "pearson_theta1_total_turn"], corr_rows(&stats.correlations))?;
    out.csv("paired_pearson.csv", &["mode", "count", "pearson_seed0_seed1"], corr_rows(&stats.paired_pearson))?;
    out.csv(
        "paired.csv",
        &["sample_id", "mode", "theta1_a", "theta1_b"],
        stats
            .paired
            .iter()
            .map(|p| vec![p.sample_id.to_string(), p.mode.to_string(), num(p.theta1_a), num(p.theta1_b)]),
    )?;
    out.csv(
        "early_steps.csv",
        &["mode", "quantity", "step", "count", "mean", "median"],
        stats.early_steps.iter().map(|e| {
            vec![
                e.mode.to_string(),
                e.quantity.to_string(),
                e.step.to_string(),
                e.count.to_string(),
                opt(e.mean),
                opt(e.median),
            ]
        }),
    )?;
    out.csv(
        "joint.csv",
        &["sample_id", "mode", "confidence", "repr_distance", "theta1"],
        stats.joint.iter().map(|j| {
            vec![
                j.sample_id.to_string(),
                j.mode.to_string(),
                num(j.confidence),
                num(j.repr_distance),
                opt(j.theta1),
            ]
        }),
    )?;
    out.csv(
        "profiles.csv",
        &["sample_id", "mode", "step", "omega_share", "theta"],
        stats.profiles.iter().flat_map(|p| {
            (0..p.omega_share.len()).map(move |n| {
                vec![
                    p.sample_id.to_string(),
                    p.mode.to_string(),
                    (n + 1).to_string(),
                    opt(p.omega_share[n]),
                    opt(p.theta.get(n).copied().flatten()),
                ]
            })
        }),
    )?;

    out.svg("joint.svg", |p| {
        let curved = |j: &&curvprobe::trajectory::JointRow| j.theta1.is_some_and(|t| t >= std::f64::consts::FRAC_PI_4);
        let pts = |keep: bool| {
            stats
                .joint
                .iter()
                .filter(|j| curved(j) == keep)
                .map(|j| (j.confidence, j.repr_distance))
                .collect()
        };
        plot::xy(
            p,
            &Axes {
                title: "Confidence, representation distance and theta(1)",
                x: "confidence",
                y: "representation distance",
            },
            &[Series::dots("theta(1) < pi/4", pts(false)), Series::dots("theta(1) >= pi/4", pts(true))],
        )
    });
    for (quantity, file) in [("theta", "early_theta.svg"), ("omega", "early_omega.svg")] {
        out.svg(file, |p| {
            let rows: Vec<_> = stats.early_steps.iter().filter(|e| e.quantity == quantity && e.step == 1).collect();
            let hi = rows.iter().flat_map(|e| e.values.iter().copied()).fold(0.0, f64::max);
            let hi = if quantity == "theta" { std::f64::consts::PI } else { hi };
            let groups = rows.iter().map(|e| (e.mode.to_string(), hist_bars(&e.values, 0.0, hi))).collect::<Vec<_>>();
            let title = format!("First-step {quantity} by direction mode");
            plot::bars(
                p,
                &Axes {
                    title: &title,
                    x: quantity,
                    y: "samples",
                },
                &groups,
            )
        });
    }
    out.svg("profiles.svg", |p| {
        let first = modes.first().copied().unwrap_or(ModeTag::Fgsm);
        let mut rows: Vec<_> = stats.profiles.iter().filter(|r| r.mode == first).collect();
        let key = |r: &&curvprobe::trajectory::ProfileRow| r.theta.first().copied().flatten().unwrap_or(f64::INFINITY);
        rows.sort_by(|x, y| key(x).total_cmp(&key(y)).then(x.sample_id.cmp(&y.sample_id)));
        let matrix: Vec<Vec<Option<f64>>> = rows.iter().map(|r| r.theta.clone()).collect();
        let title = format!("theta(n) along whole travels ({first}), rows by theta(1)");
        plot::heatmap(
            p,
            &Axes {
                title: &title,
                x: "step n",
                y: "sample rank",
            },
            &matrix,
            (0.0, std::f64::consts::PI),
        )
    });
    Ok(Report {
        inputs: vec![a.model.model.clone(), a.data.data.clone()],
        artifacts: out.written,
    })
}

fn hist_bars(values: &[f64], lo: f64, hi: f64) -> Vec<(f64, f64, f64)> {
    let h = Histogram::new(values, lo, hi, HIST_BINS);
    (0..h.counts.len())
        .map(|i| {
            let (a, b) = h.bin_edges(i);
            (a, b, h.counts[i] as f64)
        })
        .collect()
}
