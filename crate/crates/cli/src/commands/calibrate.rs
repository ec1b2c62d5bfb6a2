//! Calibration table, summary and reliability diagram.

use anyhow::Result;
use curvprobe::calibration::{calibrate, reliability_rows};
use curvprobe::model::{predict, stack_images};
use curvprobe::Classifier;

use crate::args::CalibrateArgs;
use crate::output::{num, Artifacts};
use crate::plot::{self, Axes, Series};
use crate::{check_shape, load_data, load_model, usage, Report};

const CHUNK: usize = 256;

pub(crate) fn run(a: &mut CalibrateArgs, seed: u64) -> Result<Report> {
    if a.bins == 0 {
        return Err(usage("--bins must be at least 1"));
    }
    let model = load_model(&a.model.model)?;
    let (ds, ids) = load_data(&mut a.data, "test", seed)?;
    check_shape(&model, &ds)?;
    let mut preds = Vec::with_capacity(ids.len());
    for part in ids.chunks(CHUNK) {
        let batch = stack_images(model.input_shape(), part.iter().map(|&i| ds.image(i)))?;
        for (p, &i) in predict(&model, &batch)?.iter().zip(part) {
            preds.push((p.confidence, p.label == ds.label(i)));
        }
    }
    let report = calibrate(&preds, a.bins)?;
    let accuracy = preds.iter().filter(|p| p.1).count() as f64 / preds.len() as f64;
    println!(
        "samples {}  accuracy {:.4}  ECE {:.6}  sECE {:.6}  (K={})",
        report.total, accuracy, report.ece, report.sece, a.bins
    );

    let mut out = Artifacts::new(&a.out)?;
    out.csv(
        "calibration.csv",
        &["bin", "lo", "hi", "count", "P", "acc", "conf"],
        report.bins.iter().enumerate().map(|(i, b)| {
            vec![
                i.to_string(),
                num(b.lo),
                num(b.hi),
                b.count.to_string(),
                num(b.fraction),
                num(b.accuracy),
                num(b.confidence),
            ]
        }),
    )?;
    out.csv(
        "summary.csv",
        &["samples", "bins", "accuracy", "ece", "sece"],
        [vec![
            report.total.to_string(),
            a.bins.to_string(),
            num(accuracy),
            num(report.ece),
            num(report.sece),
        ]],
    )?;
    let rows = reliability_rows(&report);
    out.svg("reliability.svg", |p| {
        let width = 1.0 / a.bins as f64;
        let filled: Vec<_> = rows.iter().filter(|r| r.count > 0).collect();
        let mut series = vec![Series::line("perfect calibration", vec![(0.0, 0.0), (1.0, 1.0)])];
        series.push(Series::dots(
            "accuracy",
            filled.iter().map(|r| (r.bin_center, r.accuracy)).collect(),
        ));
        series.push(Series::dots(
            "mean confidence",
            filled.iter().map(|r| (r.bin_center, r.mean_confidence)).collect(),
        ));
        let title = format!("Reliability (ECE {:.4}, sECE {:.4}, bin width {width})", report.ece, report.sece);
        plot::xy(
            p,
            &Axes {
                title: &title,
                x: "confidence bin",
                y: "accuracy",
            },
            &series,
        )
    });
    Ok(Report {
        inputs: vec![a.model.model.clone(), a.data.data.clone()],
        artifacts: out.written,
    })
}
