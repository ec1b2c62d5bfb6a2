//! Attacks, robustness by curvedness, and random-jump pairing.

use anyhow::Result;
use curvprobe::attacks::{jump_dominance, robustness_by_curvedness, run_attacks, AttackConfig, AttackKind, AttackRun, CURVED_THRESHOLD};
use curvprobe::trajectory::first_turn_fgsm;

use crate::args::AttackArgs;
use crate::output::{num, opt, Artifacts};
use crate::plot::{self, Axes};
use crate::{check_shape, load_data, load_model, samples, usage, Report};

pub(crate) fn run(a: &mut AttackArgs, seed: u64) -> Result<Report> {
    if a.theta_bins == 0 || !(a.theta_step > 0.0) {
        return Err(usage("--theta-bins must be at least 1 and --theta-step positive"));
    }
    let cfg = AttackConfig {
        kind: a.kind,
        eps: a.eps,
        iters: a.iters,
        eps_r: a.eps_r,
        seed,
        travel: a.travel.params(),
    };
    cfg.validate()?;
    let model = load_model(&a.model.model)?;
    let (ds, ids) = load_data(&mut a.data, "test", seed)?;
    check_shape(&model, &ds)?;
    let batch = samples(&ds, &ids);
    let run = run_attacks(&model, &batch, &cfg)?;

    let images: Vec<&[f32]> = run.rows.iter().map(|r| ds.image(r.sample_id)).collect();
    let labels: Vec<usize> = run.rows.iter().map(|r| r.label).collect();
    let theta1 = first_turn_fgsm(&model, &images, &labels, a.theta_step)?;
    let outcomes: Vec<(Option<f64>, bool)> = run
        .rows
        .iter()
        .zip(&theta1)
        .filter_map(|(r, t)| r.result.as_ref().ok().map(|res| (*t, res.success)))
        .collect();
    let table = robustness_by_curvedness(&outcomes, a.theta_bins);
    let succeeded = outcomes.iter().filter(|o| o.1).count();
    println!(
        "{}: attacked {}  succeeded {}  accuracy after attack {}  skipped (misclassified) {}",
        a.kind,
        outcomes.len(),
        succeeded,
        table.overall_accuracy.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into()),
        run.skipped
    );

    let mut out = Artifacts::new(&a.out)?;
    out.csv(
        "attacks.csv",
        &[
            "sample_id",
            "label",
            "theta1",
            "success",
            "eps_used",
            "linf",
            "psnr_db",
            "label_after",
            "iterations",
            "aborted",
            "error",
        ],
        run.rows.iter().zip(&theta1).map(|(r, t)| match &r.result {
            Ok(res) => vec![
                r.sample_id.to_string(),
                r.label.to_string(),
                opt(*t),
                res.success.to_string(),
                num(res.eps_used),
                num(res.linf),
                num(res.psnr_db),
                res.label_after.to_string(),
                res.iterations.to_string(),
                res.aborted.clone().unwrap_or_default(),
                String::new(),
            ],
            Err(e) => {
                let mut row = vec![r.sample_id.to_string(), r.label.to_string(), opt(*t)];
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(e.clone());
                row
            }
        }),
    )?;
    out.csv(
        "robustness.csv",
        &["theta1_lo", "theta1_hi", "count", "accuracy_after_attack"],
        table
            .bins
            .iter()
            .map(|b| vec![num(b.lo), num(b.hi), b.count.to_string(), opt(b.accuracy)]),
    )?;
    out.csv(
        "summary.csv",
        &["kind", "attacked", "succeeded", "skipped", "unbinned", "accuracy_after_attack"],
        [vec![
            a.kind.to_string(),
            outcomes.len().to_string(),
            succeeded.to_string(),
            run.skipped.to_string(),
            table.unbinned.to_string(),
            opt(table.overall_accuracy),
        ]],
    )?;
    out.svg("robustness.svg", |p| {
        let bars = table.bins.iter().filter_map(|b| Some((b.lo, b.hi, b.accuracy?))).collect();
        let title = format!("Accuracy after {} by theta(1)", a.kind);
        plot::bars(
            p,
            &Axes {
                title: &title,
                x: "theta(1)",
                y: "accuracy after attack",
            },
            &[(a.kind.to_string(), bars)],
        )
    });

    if a.kind == AttackKind::RandJumpFgsm {
        let plain = run_attacks(&model, &batch, &AttackConfig { kind: AttackKind::Fgsm, ..cfg })?;
        write_jump_pairs(&mut out, &plain, &run, &theta1)?;
    }
    Ok(Report {
        inputs: vec![a.model.model.clone(), a.data.data.clone()],
        artifacts: out.written,
    })
}

/// Total perturbation of plain FGSM travel and of the jump attack, per sample.
fn write_jump_pairs(out: &mut Artifacts, plain: &AttackRun, jump: &AttackRun, theta1: &[Option<f64>]) -> Result<()> {
    let mut rows = Vec::new();
    let mut dominance = Vec::new();
    for ((p, j), t) in plain.rows.iter().zip(&jump.rows).zip(theta1) {
        debug_assert_eq!(p.sample_id, j.sample_id);
        let (Ok(pr), Ok(jr)) = (&p.result, &j.result) else {
            continue;
        };
        rows.push(vec![
            p.sample_id.to_string(),
            opt(*t),
            num(pr.eps_used),
            num(jr.eps_used),
            pr.success.to_string(),
            jr.success.to_string(),
        ]);
        if let (Some(t), true, true) = (t, pr.success, jr.success) {
            dominance.push((*t, pr.eps_used, jr.eps_used));
        }
    }
    out.csv(
        "jump_pairs.csv",
        &["sample_id", "theta1", "eps_fgsm", "eps_rand_jump", "success_fgsm", "success_rand_jump"],
        rows,
    )?;
    let d = jump_dominance(&dominance, CURVED_THRESHOLD);
    println!(
        "curved samples (theta(1) >= pi/4): {}  median eps fgsm {}  median eps after jump {}",
        d.curved,
        opt(d.median_fgsm),
        opt(d.median_jump)
    );
    out.csv(
        "jump_dominance.csv",
        &["threshold", "curved", "median_eps_fgsm", "median_eps_rand_jump", "jump_not_larger"],
        [vec![
            num(d.threshold),
            d.curved.to_string(),
            opt(d.median_fgsm),
            opt(d.median_jump),
            d.holds.map(|h| h.to_string()).unwrap_or_default(),
        ]],
    )
}
