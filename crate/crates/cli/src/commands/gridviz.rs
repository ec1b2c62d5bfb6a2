//! Feature grid around one image, projected to 2D.

use anyhow::Result;
use curvprobe::boundary::{fgsm_direction, travel_to_boundary, TravelParams};
use curvprobe::model::forward_one;
use curvprobe::projection::{grid_features, grid_lines, project2d, GridConfig};

use crate::args::GridvizArgs;
use crate::output::{num, opt, Artifacts};
use crate::plot::{self, Axes};
use crate::{check_shape, load_data, load_model, usage, Report};

/// Extent used when the image has no reachable FGSM boundary.
const FALLBACK_ALPHA: f64 = 0.1;

pub(crate) fn run(a: &mut GridvizArgs, seed: u64) -> Result<Report> {
    let model = load_model(&a.model.model)?;
    let (ds, _) = load_data(&mut a.data, "test", seed)?;
    check_shape(&model, &ds)?;
    if a.image >= ds.len() {
        return Err(usage(format!("--image {} is out of range for {} samples", a.image, ds.len())));
    }
    let (x, y) = (ds.image(a.image), ds.label(a.image));

    // The boundary scale of this image sets the default extent.
    let (pred, _) = forward_one(&model, x)?;
    let eps_star = if pred.label == y {
        let d = fgsm_direction(&model, x, y)?;
        travel_to_boundary(&model, x, y, &d, &TravelParams::default())?.eps_star
    } else {
        None
    };
    let alpha = a.alpha.unwrap_or_else(|| eps_star.map_or(FALLBACK_ALPHA, |e| 2.0 * e));
    let cfg = GridConfig {
        alpha,
        n: a.n,
        basis: a.basis,
        seed,
        eps_r: a.eps_r,
    };
    cfg.validate()?;
    let grid = grid_features(&model, x, y, &cfg)?;
    let proj = project2d(&grid, a.basis, seed)?;
    if proj.fallback {
        eprintln!("warning: the grid features have rank < 2; used a random orthonormal basis");
    }

    let mut out = Artifacts::new(&a.out)?;
    out.csv(
        "grid.csv",
        &["i", "j", "px", "py"],
        proj.points
            .iter()
            .map(|&(i, j, px, py)| vec![i.to_string(), j.to_string(), num(px), num(py)]),
    )?;
    out.csv(
        "grid_info.csv",
        &["image", "label", "predicted", "eps_star", "alpha", "n", "basis", "fallback", "eps_r"],
        [vec![
            a.image.to_string(),
            y.to_string(),
            pred.label.to_string(),
            opt(eps_star),
            num(alpha),
            a.n.to_string(),
            proj.basis.to_string(),
            proj.fallback.to_string(),
            opt(a.eps_r),
        ]],
    )?;
    out.svg("grid.svg", |p| {
        let lines = grid_lines(&proj, a.n);
        let c = proj.points[proj.points.len() / 2];
        let title = format!("Feature grid around image {} ({}, alpha {alpha:.4})", a.image, proj.basis);
        plot::grid(
            p,
            &Axes {
                title: &title,
                x: "first basis direction",
                y: "second basis direction",
            },
            &lines,
            (c.2, c.3),
        )
    });
    Ok(Report {
        inputs: vec![a.model.model.clone(), a.data.data.clone()],
        artifacts: out.written,
    })
}
