//! SVG figures drawn with plotters.

use std::ops::Range;
use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

const SIZE: (u32, u32) = (720, 540);

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Draw as a connected line instead of dots.
    pub line: bool,
}

impl Series {
    pub fn dots(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            line: false,
        }
    }

    pub fn line(name: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            line: true,
        }
    }
}

pub struct Axes<'a> {
    pub title: &'a str,
    pub x: &'a str,
    pub y: &'a str,
}

fn err(e: impl std::fmt::Display) -> anyhow::Error {
    anyhow!("{e}")
}

/// Finite bounds padded by 5%, widened when degenerate.
fn bounds(values: impl Iterator<Item = f64>) -> Range<f64> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1e-3) };
    (lo - pad)..(hi + pad)
}

/// Scatter points and polylines on shared axes.
pub fn xy(path: &Path, axes: &Axes, series: &[Series]) -> Result<()> {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let xr = bounds(all().map(|p| p.0));
    let yr = bounds(all().map(|p| p.1));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(axes.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(xr, yr)
        .map_err(err)?;
    chart.configure_mesh().x_desc(axes.x).y_desc(axes.y).draw().map_err(err)?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts = s.points.iter().copied().filter(|p| p.0.is_finite() && p.1.is_finite());
        let anno = if s.line {
            chart.draw_series(LineSeries::new(pts, color.stroke_width(2))).map_err(err)?
        } else {
            chart
                .draw_series(pts.map(|p| Circle::new(p, 2, color.mix(0.6).filled())))
                .map_err(err)?
        };
        anno.label(s.name.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 4), (x + 12, y + 4)], color.filled()));
    }
    if series.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)?;
    Ok(())
}

/// Bars `(lo, hi, height)` per group; groups are drawn side by side within each bar's range.
pub fn bars(path: &Path, axes: &Axes, groups: &[(String, Vec<(f64, f64, f64)>)]) -> Result<()> {
    let xr = bounds(groups.iter().flat_map(|g| g.1.iter().flat_map(|b| [b.0, b.1])));
    let top = groups
        .iter()
        .flat_map(|g| g.1.iter().map(|b| b.2))
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let yr = 0.0..if top > 0.0 { top * 1.1 } else { 1.0 };
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(axes.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(xr, yr)
        .map_err(err)?;
    chart.configure_mesh().x_desc(axes.x).y_desc(axes.y).draw().map_err(err)?;
    let k = groups.len().max(1) as f64;
    for (gi, (name, bars)) in groups.iter().enumerate() {
        let color = Palette99::pick(gi).to_rgba();
        let rects = bars.iter().filter(|b| b.2.is_finite()).map(|&(lo, hi, h)| {
            let w = (hi - lo) / k;
            let x0 = lo + w * gi as f64;
            Rectangle::new([(x0, 0.0), (x0 + w, h)], color.mix(0.7).filled())
        });
        chart
            .draw_series(rects)
            .map_err(err)?
            .label(name.clone())
            .legend(move |(x, y)| Rectangle::new([(x, y - 4), (x + 12, y + 4)], color.filled()));
    }
    if groups.len() > 1 {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(err)?;
    }
    root.present().map_err(err)?;
    Ok(())
}

/// Matrix heatmap; cells are clamped to `range` and missing cells stay white.
pub fn heatmap(path: &Path, axes: &Axes, rows: &[Vec<Option<f64>>], range: (f64, f64)) -> Result<()> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
    let n = rows.len().max(1);
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(axes.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..cols as f64, 0.0..n as f64)
        .map_err(err)?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc(axes.x)
        .y_desc(axes.y)
        .draw()
        .map_err(err)?;
    let (lo, hi) = range;
    let cells = rows.iter().enumerate().flat_map(|(r, row)| {
        row.iter().enumerate().filter_map(move |(c, v)| {
            let v = (*v)?;
            let t = if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.5 };
            let color = diverging(t);
            Some(Rectangle::new(
                [(c as f64, r as f64), (c as f64 + 1.0, r as f64 + 1.0)],
                color.filled(),
            ))
        })
    });
    chart.draw_series(cells).map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}

/// Blue through white to red.
fn diverging(t: f64) -> RGBColor {
    let lerp = |a: f64, b: f64, s: f64| (a + (b - a) * s).round() as u8;
    if t < 0.5 {
        let s = t / 0.5;
        RGBColor(lerp(40.0, 255.0, s), lerp(90.0, 255.0, s), lerp(200.0, 255.0, s))
    } else {
        let s = (t - 0.5) / 0.5;
        RGBColor(lerp(255.0, 200.0, s), lerp(255.0, 40.0, s), lerp(255.0, 40.0, s))
    }
}

/// Grid lines through projected points, with the center marked.
pub fn grid(path: &Path, axes: &Axes, lines: &[Vec<(f64, f64)>], center: (f64, f64)) -> Result<()> {
    let all = || lines.iter().flatten();
    let xr = bounds(all().map(|p| p.0));
    let yr = bounds(all().map(|p| p.1));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(axes.title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(xr, yr)
        .map_err(err)?;
    chart.configure_mesh().x_desc(axes.x).y_desc(axes.y).draw().map_err(err)?;
    let half = lines.len() / 2;
    for (k, line) in lines.iter().enumerate() {
        let color = if k < half { BLUE.mix(0.7) } else { RED.mix(0.7) };
        chart
            .draw_series(LineSeries::new(line.iter().copied(), color.stroke_width(1)))
            .map_err(err)?;
        chart
            .draw_series(line.iter().map(|p| Circle::new(*p, 2, color.filled())))
            .map_err(err)?;
    }
    chart
        .draw_series(std::iter::once(Circle::new(center, 5, BLACK.filled())))
        .map_err(err)?;
    root.present().map_err(err)?;
    Ok(())
}
