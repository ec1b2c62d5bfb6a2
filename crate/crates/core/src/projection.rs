//! Input-space grids around an image and their 2D feature projections.
//!
//! The grid is `x_ij = clip01(x + (alpha i / N) d + (alpha j / N) d_perp)` for
//! `i, j` in `-N..=N`, with `d` the FGSM direction at `x` and `d_perp` a random
//! direction orthogonal to it. Features of all grid points are projected onto
//! two orthonormal vectors of the representation space.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::boundary::fgsm_direction;
use crate::error::{Error, Result};
use crate::model::{clip01, stack_images, Classifier};
use crate::rng::{derive_seed, gaussian, random_direction, seeded};
use crate::trajectory::orthogonal_direction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Basis {
    RandomOrthonormal,
    PcaTop2,
}

impl fmt::Display for Basis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Basis::RandomOrthonormal => "random_orthonormal",
            Basis::PcaTop2 => "pca_top2",
        })
    }
}

impl FromStr for Basis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_orthonormal" | "random" => Ok(Basis::RandomOrthonormal),
            "pca_top2" | "pca" => Ok(Basis::PcaTop2),
            other => Err(Error::Config(format!("unknown projection basis '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub alpha: f64,
    /// Half-width: the grid has `(2N+1)^2` points.
    pub n: usize,
    pub basis: Basis,
    pub seed: u64,
    /// Random jump applied to the center before building the grid.
    pub eps_r: Option<f64>,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "grid needs N >= 1 and a finite non-negative alpha (got N={}, alpha={})",
                self.n, self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub n: usize,
    /// Row-major over `i` then `j`, both running `-N..=N`.
    pub z: Vec<Vec<f64>>,
    pub center: Vec<f32>,
    pub d: Vec<f32>,
    pub d_perp: Vec<f32>,
}

impl FeatureGrid {
    pub fn side(&self) -> usize {
        2 * self.n + 1
    }

    pub fn at(&self, i: isize, j: isize) -> &[f64] {
        let n = self.n as isize;
        let s = self.side() as isize;
        &self.z[((i + n) * s + (j + n)) as usize]
    }
}

const GRID_CHUNK: usize = 64;

/// Grid point `clip01(c + a d + b e)` in f64, rounded once.
fn grid_point(c: &[f32], d: &[f32], e: &[f32], a: f64, b: f64) -> Vec<f32> {
    c.iter()
        .zip(d)
        .zip(e)
        .map(|((x, p), q)| clip01(*x as f64 + a * *p as f64 + b * *q as f64))
        .collect()
}

/// Features over the grid around `x` (or around its random jump when `cfg.eps_r` is set).
pub fn grid_features(model: &(impl Classifier + ?Sized), x: &[f32], y: usize, cfg: &GridConfig) -> Result<FeatureGrid> {
    cfg.validate()?;
    let center = match cfg.eps_r {
        Some(r) if r > 0.0 => {
            let dir = random_direction(x.len(), derive_seed(cfg.seed, &[1]));
            x.iter().zip(&dir).map(|(a, b)| clip01(*a as f64 + r * *b as f64)).collect()
        }
        _ => x.to_vec(),
    };
    let d = fgsm_direction(model, &center, y)?;
    let d_perp = orthogonal_direction(&d, derive_seed(cfg.seed, &[2]))?;
    let n = cfg.n as isize;
    let step = cfg.alpha / cfg.n as f64;
    let mut points = Vec::with_capacity((2 * cfg.n + 1).pow(2));
    for i in -n..=n {
        for j in -n..=n {
            points.push(grid_point(&center, &d, &d_perp, step * i as f64, step * j as f64));
        }
    }
    let f = model.feature_dim();
    let mut z = Vec::with_capacity(points.len());
    for part in points.chunks(GRID_CHUNK) {
        let batch = stack_images(model.input_shape(), part)?;
        z.extend(model.features_f64(&batch)?.chunks(f).map(<[f64]>::to_vec));
    }
    Ok(FeatureGrid {
        n: cfg.n,
        z,
        center,
        d,
        d_perp,
    })
}

/// The same grid centered at the randomly jumped image.
pub fn grid_after_jump(model: &(impl Classifier + ?Sized), x: &[f32], y: usize, cfg: &GridConfig) -> Result<FeatureGrid> {
    match cfg.eps_r {
        Some(r) if r > 0.0 => grid_features(model, x, y, cfg),
        _ => Err(Error::Config("grid after jump needs a positive jump length".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Projection {
    /// `(i, j, px, py)` in grid order.
    pub points: Vec<(isize, isize, f64, f64)>,
    pub basis: Basis,
    /// PCA was requested but the grid has rank < 2; a random basis was used.
    pub fallback: bool,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Projects onto `(b1, b2)`, which must be orthonormal within 1e-6.
pub fn project_onto(z: &[Vec<f64>], b1: &[f64], b2: &[f64]) -> Result<Vec<(f64, f64)>> {
    let ok = (dot(b1, b1) - 1.0).abs() <= 1e-6 && (dot(b2, b2) - 1.0).abs() <= 1e-6 && dot(b1, b2).abs() <= 1e-6;
    if !ok {
        return Err(Error::Config("projection basis is not orthonormal".into()));
    }
    Ok(z.iter().map(|v| (dot(v, b1), dot(v, b2))).collect())
}

/// Two orthonormal Gaussian vectors of dimension `dim >= 2`.
pub fn random_orthonormal(dim: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    if dim < 2 {
        return Err(Error::Config("a 2D projection needs features of dimension >= 2".into()));
    }
    let mut rng = seeded(seed);
    loop {
        let a = gaussian(dim, &mut rng);
        let b = gaussian(dim, &mut rng);
        let na = dot(&a, &a).sqrt();
        if na == 0.0 {
            continue;
        }
        let b1: Vec<f64> = a.iter().map(|v| v / na).collect();
        let c = dot(&b, &b1);
        let r: Vec<f64> = b.iter().zip(&b1).map(|(p, q)| p - c * q).collect();
        let nr = dot(&r, &r).sqrt();
        if nr <= 1e-9 {
            continue;
        }
        return Ok((b1, r.iter().map(|v| v / nr).collect()));
    }
}

/// Top-2 principal directions of the points, or `None` if they span fewer than 2 dimensions.
pub fn pca_top2(z: &[Vec<f64>]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = z.len();
    let f = z.first()?.len();
    if n < 3 || f < 2 {
        return None;
    }
    let mu: Vec<f64> = (0..f).map(|k| z.iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, f, |r, c| z[r][c] - mu[c]);
    let cov = centered.transpose() * &centered;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    let scale: f64 = centered.iter().map(|v| v * v).sum::<f64>();
    if !(l1 > 0.0) || l2 <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return None;
    }
    let col = |i: usize| -> Vec<f64> {
        let v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        // Fix the sign so the largest component is positive.
        let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            v.iter().map(|x| -x).collect()
        } else {
            v
        }
    };
    Some((col(order[0]), col(order[1])))
}

pub fn project2d(grid: &FeatureGrid, basis: Basis, seed: u64) -> Result<Projection> {
    let f = grid.z.first().map_or(0, Vec::len);
    let (b1, b2, used, fallback) = match basis {
        Basis::PcaTop2 => match pca_top2(&grid.z) {
            Some((a, b)) => (a, b, Basis::PcaTop2, false),
            None => {
                let (a, b) = random_orthonormal(f, seed)?;
                (a, b, Basis::RandomOrthonormal, true)
            }
        },
        Basis::RandomOrthonormal => {
            let (a, b) = random_orthonormal(f, seed)?;
            (a, b, Basis::RandomOrthonormal, false)
        }
    };
    let p = project_onto(&grid.z, &b1, &b2)?;
    let n = grid.n as isize;
    let side = grid.side();
    let points = p
        .into_iter()
        .enumerate()
        .map(|(k, (px, py))| ((k / side) as isize - n, (k % side) as isize - n, px, py))
        .collect();
    Ok(Projection {
        points,
        basis: used,
        fallback,
        b1,
        b2,
    })
}

/// Relative reconstruction residual of the centered points in the plane of `(b1, b2)`.
pub fn planar_residual(z: &[Vec<f64>], b1: &[f64], b2: &[f64]) -> f64 {
    let n = z.len().max(1) as f64;
    let f = z.first().map_or(0, Vec::len);
    let mu: Vec<f64> = (0..f).map(|k| z.iter().map(|v| v[k]).sum::<f64>() / n).collect();
    let (mut res, mut tot) = (0.0, 0.0);
    for v in z {
        let c: Vec<f64> = v.iter().zip(&mu).map(|(a, m)| a - m).collect();
        let (p, q) = (dot(&c, b1), dot(&c, b2));
        for k in 0..f {
            let r = c[k] - p * b1[k] - q * b2[k];
            res += r * r;
        }
        tot += dot(&c, &c);
    }
    if tot == 0.0 {
        0.0
    } else {
        (res / tot).sqrt()
    }
}

/// Straightness of a polyline: perpendicular RMS distance from the best-fit
/// line over the span, and the largest relative deviation of the segment
/// lengths from their mean.
pub fn line_residual(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len();
    if n < 3 {
        return (0.0, 0.0);
    }
    let (mx, my) = points.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (mx / n as f64, my / n as f64);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.0 - mx, p.1 - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let small = (0.5 * tr - disc).max(0.0);
    let span = {
        let (a, b) = (points[0], points[n - 1]);
        ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
    };
    let seg: Vec<f64> = points
        .windows(2)
        .map(|w| ((w[1].0 - w[0].0).powi(2) + (w[1].1 - w[0].1).powi(2)).sqrt())
        .collect();
    let mean_seg = seg.iter().sum::<f64>() / seg.len() as f64;
    if span == 0.0 || mean_seg == 0.0 {
        return (0.0, 0.0);
    }
    let perp = (small / n as f64).sqrt() / span;
    let spacing = seg.iter().map(|s| (s - mean_seg).abs() / mean_seg).fold(0.0, f64::max);
    (perp, spacing)
}

/// Rows (fixed `i`) and columns (fixed `j`) of a projected grid as polylines.
pub fn grid_lines(p: &Projection, n: usize) -> Vec<Vec<(f64, f64)>> {
    let side = 2 * n + 1;
    let at = |i: usize, j: usize| {
        let q = p.points[i * side + j];
        (q.2, q.3)
    };
    let mut lines = Vec::with_capacity(2 * side);
    for i in 0..side {
        lines.push((0..side).map(|j| at(i, j)).collect());
    }
    for j in 0..side {
        lines.push((0..side).map(|i| at(i, j)).collect());
    }
    lines
}
