//! Boundary distance against confidence.

use anyhow::Result;
use curvprobe::boundary::{epsilon_vs_confidence, Start};
use curvprobe::trajectory::{make_direction, sample_seed, DirectionMode};

use crate::args::BoundaryArgs;
use crate::output::{num, opt, Artifacts};
use crate::plot::{self, Axes, Series};
use crate::{check_shape, load_data, load_model, samples, usage, Report};

pub(crate) fn run(a: &mut BoundaryArgs, seed: u64) -> Result<Report> {
    if a.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let params = a.travel.params();
    params.validate()?;
    let model = load_model(&a.model.model)?;
    let (ds, ids) = load_data(&mut a.data, "test", seed)?;
    check_shape(&model, &ds)?;
    let (mode, eps_r) = (a.mode, a.eps_r);
    let report = epsilon_vs_confidence(&model, &samples(&ds, &ids), &params, a.bins, |id, x, y| {
        let dm = DirectionMode {
            tag: mode,
            eps_r,
            seed: sample_seed(seed, id, mode),
        };
        let dir = make_direction(&model, x, y, &dm)?;
        Ok(Start { x0: dir.x0, d: dir.d })
    })?;
    let crossed = report.rows.iter().filter(|r| r.crossed).count();
    println!(
        "analyzed {}  crossed {}  skipped (misclassified) {}",
        report.rows.len(),
        crossed,
        report.skipped
    );

    let mut out = Artifacts::new(&a.out)?;
    out.csv(
        "boundary.csv",
        &["sample_id", "label", "confidence", "eps_star", "crossed", "probes", "error"],
        report.rows.iter().map(|r| {
            vec![
                r.sample_id.to_string(),
                r.label.to_string(),
                num(r.confidence),
                opt(r.eps_star),
                r.crossed.to_string(),
                r.probes.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        }),
    )?;
    out.csv(
        "boundary_bins.csv",
        &["lo", "hi", "count", "mean_eps"],
        report
            .bin_means
            .iter()
            .map(|b| vec![num(b.lo), num(b.hi), b.count.to_string(), opt(b.mean_eps)]),
    )?;
    out.svg("boundary.svg", |p| {
        let pts = report.rows.iter().filter_map(|r| Some((r.confidence, r.eps_star?))).collect();
        let means = report
            .bin_means
            .iter()
            .filter_map(|b| Some((0.5 * (b.lo + b.hi), b.mean_eps?)))
            .collect();
        let title = format!("Boundary distance along {}", a.mode);
        plot::xy(
            p,
            &Axes {
                title: &title,
                x: "confidence",
                y: "epsilon to boundary",
            },
            &[Series::dots("samples", pts), Series::line("bin mean", means)],
        )
    });
    Ok(Report {
        inputs: vec![a.model.model.clone(), a.data.data.clone()],
        artifacts: out.written,
    })
}
