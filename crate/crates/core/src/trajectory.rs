//! Feature-space trajectories of straight input-space travels.
//!
//! The input moves in `N` equal steps `x(n) = clip01(x(0) + n (eps/N) d)`.
//! With `m(n) = z(n) - z(n-1)` the feature-space movement, each step has a
//! magnitude `omega(n) = |m(n)|` and a direction change
//! `theta(n) = angle(m(n), m(n+1))`. `theta(1)` is the curvedness measure:
//! an affine feature map gives `theta = 0` everywhere.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{fgsm_direction, travel_point, travel_to_boundary, TravelParams};
use crate::error::{Error, Result};
use crate::model::{forward_one, stack_images, Classifier};
use crate::rng::{derive_seed, gaussian, random_direction, seeded, to_sqrt_dim_norm};
use crate::stats::{mean, median, pearson};

/// Attempts at drawing a direction orthogonal to the FGSM direction.
pub const ORTHOGONAL_ATTEMPTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeTag {
    Fgsm,
    Rand,
    FgsmPerp,
    RandJumpFgsm,
    FgsmJumpFgsm,
}

impl ModeTag {
    pub const ALL: [ModeTag; 5] = [
        ModeTag::Fgsm,
        ModeTag::Rand,
        ModeTag::FgsmPerp,
        ModeTag::RandJumpFgsm,
        ModeTag::FgsmJumpFgsm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModeTag::Fgsm => "fgsm",
            ModeTag::Rand => "rand",
            ModeTag::FgsmPerp => "fgsm_perp",
            ModeTag::RandJumpFgsm => "rand_jump_fgsm",
            ModeTag::FgsmJumpFgsm => "fgsm_jump_fgsm",
        }
    }

    /// Whether the direction depends on the random seed.
    pub fn is_random(self) -> bool {
        self != ModeTag::Fgsm
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for ModeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModeTag::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown direction mode '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionMode {
    pub tag: ModeTag,
    /// Jump length for the jump modes.
    pub eps_r: f64,
    pub seed: u64,
}

/// Start point `x0` (the jumped image for jump modes) and unit-RMS direction `d`.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub x0: Vec<f32>,
    pub d: Vec<f32>,
}

/// Random direction orthogonal to `reference`, rescaled to norm `sqrt(D)`.
pub fn orthogonal_direction(reference: &[f32], seed: u64) -> Result<Vec<f32>> {
    let dim = reference.len();
    let r: Vec<f64> = reference.iter().map(|v| *v as f64).collect();
    let rr: f64 = r.iter().map(|v| v * v).sum();
    if rr == 0.0 {
        return Err(Error::DegenerateOrthogonalization(0));
    }
    let mut rng = seeded(seed);
    for _ in 0..ORTHOGONAL_ATTEMPTS {
        let g = gaussian(dim, &mut rng);
        let gn: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let c = g.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / rr;
        let p: Vec<f64> = g.iter().zip(&r).map(|(a, b)| a - c * b).collect();
        let pn: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if pn <= 1e-6 * gn {
            continue;
        }
        let Some(d) = to_sqrt_dim_norm(&p) else { continue };
        let dot: f64 = d.iter().zip(reference).map(|(a, b)| *a as f64 * *b as f64).sum();
        if dot.abs() <= 1e-4 * dim as f64 {
            return Ok(d);
        }
    }
    Err(Error::DegenerateOrthogonalization(ORTHOGONAL_ATTEMPTS))
}

pub fn make_direction(model: &(impl Classifier + ?Sized), x: &[f32], y: usize, mode: &DirectionMode) -> Result<Direction> {
    let dim = x.len();
    Ok(match mode.tag {
        ModeTag::Fgsm => Direction {
            x0: x.to_vec(),
            d: fgsm_direction(model, x, y)?,
        },
        ModeTag::Rand => Direction {
            x0: x.to_vec(),
            d: random_direction(dim, mode.seed),
        },
        ModeTag::FgsmPerp => {
            let f = fgsm_direction(model, x, y)?;
            Direction {
                x0: x.to_vec(),
                d: orthogonal_direction(&f, mode.seed)?,
            }
        }
        ModeTag::RandJumpFgsm => {
            let r = random_direction(dim, mode.seed);
            let x0 = travel_point(x, &r, mode.eps_r);
            let d = fgsm_direction(model, &x0, y)?;
            Direction { x0, d }
        }
        ModeTag::FgsmJumpFgsm => {
            let r = random_direction(dim, mode.seed);
            let jump = fgsm_direction(model, &travel_point(x, &r, mode.eps_r), y)?;
            let x0 = travel_point(x, &jump, mode.eps_r);
            let d = fgsm_direction(model, &x0, y)?;
            Direction { x0, d }
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub n_steps: usize,
    pub epsilon: f64,
    /// `omega(1..=N)`.
    pub omega: Vec<f64>,
    /// `theta(1..=N-1)` in radians; `None` where a step has zero length.
    pub theta: Vec<Option<f64>>,
    pub z_start: Vec<f64>,
    pub z_end: Vec<f64>,
    /// `|z(N) - z(0)|`.
    pub repr_distance: f64,
    pub theta1: Option<f64>,
    /// Sum of the defined `theta(n)`.
    pub total_turn: f64,
    pub missing_theta: usize,
    /// Prediction confidence at `x(0)`.
    pub confidence: f64,
    pub label_start: usize,
    pub label_end: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Angle between two vectors in `[0, pi]`, `None` if either is zero.
pub fn angle(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let c = a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / (na * nb);
    Some(c.clamp(-1.0, 1.0).acos())
}

/// Step magnitudes and direction changes of a sequence of feature vectors.
pub fn step_geometry(zs: &[Vec<f64>]) -> (Vec<f64>, Vec<Option<f64>>) {
    let moves: Vec<Vec<f64>> = zs
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect())
        .collect();
    let omega = moves.iter().map(|m| norm(m)).collect();
    let theta = moves.windows(2).map(|w| angle(&w[0], &w[1])).collect();
    (omega, theta)
}

const FORWARD_CHUNK: usize = 64;

/// Travels `N` equal steps of total length `eps` from `x0` along `d`.
pub fn run_trajectory(model: &(impl Classifier + ?Sized), x0: &[f32], d: &[f32], n_steps: usize, eps: f64) -> Result<TrajectoryRecord> {
    if n_steps < 2 {
        return Err(Error::Config(format!("a trajectory needs at least 2 steps (got {n_steps})")));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Config(format!("travel length must be finite and non-negative (got {eps})")));
    }
    if d.len() != x0.len() {
        return Err(Error::InputShape {
            found: vec![d.len()],
            expected: vec![x0.len()],
        });
    }
    let step = eps / n_steps as f64;
    let points: Vec<Vec<f32>> = (0..=n_steps).map(|k| travel_point(x0, d, k as f64 * step)).collect();
    let f = model.feature_dim();
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    for part in points.chunks(FORWARD_CHUNK) {
        let batch = stack_images(model.input_shape(), part)?;
        zs.extend(model.features_f64(&batch)?.chunks(f).map(<[f64]>::to_vec));
    }
    let (omega, theta) = step_geometry(&zs);
    let missing_theta = theta.iter().filter(|t| t.is_none()).count();
    let total_turn = theta.iter().flatten().sum();
    let (p_start, _) = forward_one(model, &points[0])?;
    let (p_end, _) = forward_one(model, &points[n_steps])?;
    let z_start = zs[0].clone();
    let z_end = zs[n_steps].clone();
    let repr_distance = norm(&z_end.iter().zip(&z_start).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(TrajectoryRecord {
        n_steps,
        epsilon: eps,
        theta1: theta[0],
        omega,
        theta,
        z_start,
        z_end,
        repr_distance,
        total_turn,
        missing_theta,
        confidence: p_start.confidence,
        label_start: p_start.label,
        label_end: p_end.label,
    })
}

/// `theta(1)` along the FGSM direction with step length `step` for a batch
/// of images: one gradient pass and one forward pass over three points per image.
pub fn first_turn_fgsm(model: &(impl Classifier + ?Sized), images: &[&[f32]], labels: &[usize], step: f64) -> Result<Vec<Option<f64>>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let batch = stack_images(model.input_shape(), images.iter().copied())?;
    // The mean loss scales each sample's gradient by 1/B, which leaves the sign intact.
    let grad = model.loss_gradient(&batch, labels)?;
    let d = images[0].len();
    let mut points: Vec<Vec<f32>> = Vec::with_capacity(3 * images.len());
    let mut valid = Vec::with_capacity(images.len());
    for (x, g) in images.iter().zip(grad.data().chunks(d)) {
        match crate::boundary::sign_direction(g) {
            Ok(dir) => {
                valid.push(true);
                for k in 0..3 {
                    points.push(travel_point(x, &dir, k as f64 * step));
                }
            }
            Err(_) => valid.push(false),
        }
    }
    let f = model.feature_dim();
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(points.len());
    for part in points.chunks(FORWARD_CHUNK.max(3) / 3 * 3) {
        let b = stack_images(model.input_shape(), part)?;
        zs.extend(model.features_f64(&b)?.chunks(f).map(<[f64]>::to_vec));
    }
    let mut out = Vec::with_capacity(images.len());
    let mut k = 0;
    for v in valid {
        if v {
            let (_, theta) = step_geometry(&zs[k..k + 3]);
            out.push(theta[0]);
            k += 3;
        } else {
            out.push(None);
        }
    }
    Ok(out)
}

/// How long each analyzed trajectory travels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum TravelLength {
    /// `eps = N * step`.
    FixedStep(f64),
    /// `eps` is the sample's own boundary distance along the direction.
    ToBoundary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryConfig {
    pub n_steps: usize,
    pub length: TravelLength,
    pub eps_r: f64,
    pub travel: TravelParams,
    /// Base seeds; random modes run once per seed.
    pub seeds: Vec<u64>,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            n_steps: 50,
            length: TravelLength::FixedStep(0.002),
            eps_r: 0.05,
            travel: TravelParams::default(),
            seeds: vec![0],
        }
    }
}

/// One (sample, mode, seed) analysis.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleTrajectory {
    pub sample_id: usize,
    pub mode: ModeTag,
    pub seed_index: usize,
    pub label: usize,
    /// Confidence on the original image.
    pub confidence: f64,
    /// Boundary distance from `x0` along `d`.
    pub eps_star: Option<f64>,
    pub crossed: bool,
    /// `|z(x0 + eps_star d) - z(x0)|`.
    pub boundary_repr_distance: Option<f64>,
    pub record: Option<TrajectoryRecord>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRun {
    pub rows: Vec<SampleTrajectory>,
    /// Misclassified samples left out.
    pub skipped: usize,
}

/// Seed for one sample, mode and base seed; independent of scheduling.
pub fn sample_seed(base: u64, sample_id: usize, mode: ModeTag) -> u64 {
    derive_seed(base, &[sample_id as u64, mode.stream()])
}

fn analyze_one(
    model: &(impl Classifier + ?Sized),
    id: usize,
    x: &[f32],
    y: usize,
    confidence: f64,
    mode: ModeTag,
    seed_index: usize,
    cfg: &TrajectoryConfig,
) -> SampleTrajectory {
    let mut row = SampleTrajectory {
        sample_id: id,
        mode,
        seed_index,
        label: y,
        confidence,
        eps_star: None,
        crossed: false,
        boundary_repr_distance: None,
        record: None,
        error: None,
    };
    let result = (|| -> Result<()> {
        let dm = DirectionMode {
            tag: mode,
            eps_r: cfg.eps_r,
            seed: sample_seed(cfg.seeds[seed_index], id, mode),
        };
        let dir = make_direction(model, x, y, &dm)?;
        let travel = travel_to_boundary(model, &dir.x0, y, &dir.d, &cfg.travel)?;
        row.eps_star = travel.eps_star;
        row.crossed = travel.crossed;
        if let Some(xp) = &travel.x_prime {
            let batch = stack_images(model.input_shape(), [&dir.x0[..], &xp[..]])?;
            let z = model.features_f64(&batch)?;
            let f = model.feature_dim();
            row.boundary_repr_distance = Some(norm(&z[f..].iter().zip(&z[..f]).map(|(a, b)| a - b).collect::<Vec<_>>()));
        }
        let eps = match cfg.length {
            TravelLength::FixedStep(step) => step * cfg.n_steps as f64,
            TravelLength::ToBoundary => travel.eps_star.unwrap_or(cfg.travel.eps_max),
        };
        row.record = Some(run_trajectory(model, &dir.x0, &dir.d, cfg.n_steps, eps)?);
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

/// Runs every mode (and every seed for random modes) on each correctly
/// classified sample. Rows come back ordered by sample, mode, seed.
pub fn analyze(
    model: &(impl Classifier + ?Sized),
    samples: &[(usize, &[f32], usize)],
    modes: &[ModeTag],
    cfg: &TrajectoryConfig,
) -> Result<TrajectoryRun> {
    if cfg.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    cfg.travel.validate()?;
    let per_sample: Vec<Option<Vec<SampleTrajectory>>> = samples
        .par_iter()
        .map(|&(id, x, y)| -> Result<Option<Vec<SampleTrajectory>>> {
            let (p, _) = forward_one(model, x)?;
            if p.label != y {
                return Ok(None);
            }
            let mut rows = Vec::new();
            for &mode in modes {
                let seeds = if mode.is_random() { cfg.seeds.len() } else { 1 };
                for s in 0..seeds {
                    rows.push(analyze_one(model, id, x, y, p.confidence, mode, s, cfg));
                }
            }
            Ok(Some(rows))
        })
        .collect::<Result<_>>()?;
    let skipped = per_sample.iter().filter(|r| r.is_none()).count();
    let mut rows: Vec<SampleTrajectory> = per_sample.into_iter().flatten().flatten().collect();
    rows.sort_by_key(|r| (r.sample_id, r.mode, r.seed_index));
    Ok(TrajectoryRun { rows, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub mode: ModeTag,
    pub count: usize,
    /// Pearson correlation of `theta1` and `total_turn`; `None` if undefined.
    pub pearson: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EarlyStepRow {
    pub mode: ModeTag,
    /// `"theta"` or `"omega"`.
    pub quantity: &'static str,
    pub step: usize,
    pub count: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    #[serde(skip)]
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedTheta {
    pub sample_id: usize,
    pub mode: ModeTag,
    pub theta1_a: f64,
    pub theta1_b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointRow {
    pub sample_id: usize,
    pub mode: ModeTag,
    pub confidence: f64,
    pub repr_distance: f64,
    pub theta1: Option<f64>,
}

/// Whole-travel profile of one sample: `omega(n) / sum(omega)` and `theta(n)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProfileRow {
    pub sample_id: usize,
    pub mode: ModeTag,
    pub omega_share: Vec<Option<f64>>,
    pub theta: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvednessStats {
    pub correlations: Vec<CorrelationRow>,
    pub early_steps: Vec<EarlyStepRow>,
    pub paired: Vec<PairedTheta>,
    pub paired_pearson: Vec<CorrelationRow>,
    pub joint: Vec<JointRow>,
    pub profiles: Vec<ProfileRow>,
}

pub const EARLY_STEPS: usize = 4;

/// Summary tables over a trajectory run.
pub fn curvedness_stats(rows: &[SampleTrajectory]) -> Result<CurvednessStats> {
    let with_record: Vec<(&SampleTrajectory, &TrajectoryRecord)> =
        rows.iter().filter_map(|r| r.record.as_ref().map(|t| (r, t))).collect();
    if with_record.iter().filter(|(_, t)| t.theta1.is_some()).count() < 2 {
        return Err(Error::Empty("trajectory records with a defined theta(1)"));
    }
    let mut modes: Vec<ModeTag> = with_record.iter().map(|(r, _)| r.mode).collect();
    modes.sort();
    modes.dedup();

    let first_seed = |m: ModeTag| with_record.iter().filter(move |(r, _)| r.mode == m && r.seed_index == 0);

    let correlations = modes
        .iter()
        .map(|&m| {
            let (a, b): (Vec<f64>, Vec<f64>) = first_seed(m).filter_map(|(_, t)| t.theta1.map(|th| (th, t.total_turn))).unzip();
            CorrelationRow {
                mode: m,
                count: a.len(),
                pearson: pearson(&a, &b),
            }
        })
        .collect();

    let mut early_steps = Vec::new();
    for &m in &modes {
        for step in 1..=EARLY_STEPS {
            let thetas: Vec<f64> = first_seed(m).filter_map(|(_, t)| t.theta.get(step - 1).copied().flatten()).collect();
            let omegas: Vec<f64> = first_seed(m).filter_map(|(_, t)| t.omega.get(step - 1).copied()).collect();
            for (quantity, values) in [("theta", thetas), ("omega", omegas)] {
                early_steps.push(EarlyStepRow {
                    mode: m,
                    quantity,
                    step,
                    count: values.len(),
                    mean: mean(&values),
                    median: median(&values),
                    values,
                });
            }
        }
    }

    let mut paired = Vec::new();
    let mut paired_pearson = Vec::new();
    for &m in modes.iter().filter(|m| m.is_random()) {
        let mut pairs = Vec::new();
        for (r, t) in first_seed(m) {
            let other = with_record
                .iter()
                .find(|(o, _)| o.mode == m && o.sample_id == r.sample_id && o.seed_index == 1);
            if let (Some(a), Some((_, ot))) = (t.theta1, other) {
                if let Some(b) = ot.theta1 {
                    pairs.push(PairedTheta {
                        sample_id: r.sample_id,
                        mode: m,
                        theta1_a: a,
                        theta1_b: b,
                    });
                }
            }
        }
        if !pairs.is_empty() {
            let a: Vec<f64> = pairs.iter().map(|p| p.theta1_a).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.theta1_b).collect();
            paired_pearson.push(CorrelationRow {
                mode: m,
                count: pairs.len(),
                pearson: pearson(&a, &b),
            });
            paired.extend(pairs);
        }
    }

    let joint = with_record
        .iter()
        .filter(|(r, _)| r.seed_index == 0)
        .map(|(r, t)| JointRow {
            sample_id: r.sample_id,
            mode: r.mode,
            confidence: r.confidence,
            repr_distance: r.boundary_repr_distance.unwrap_or(t.repr_distance),
            theta1: t.theta1,
        })
        .collect();

    let profiles = with_record
        .iter()
        .filter(|(r, _)| r.seed_index == 0)
        .map(|(r, t)| {
            let total: f64 = t.omega.iter().sum();
            ProfileRow {
                sample_id: r.sample_id,
                mode: r.mode,
                omega_share: t.omega.iter().map(|w| (total > 0.0).then(|| w / total)).collect(),
                theta: t.theta.clone(),
            }
        })
        .collect();

    Ok(CurvednessStats {
        correlations,
        early_steps,
        paired,
        paired_pearson,
        joint,
        profiles,
    })
}

/// Per-sample boundary distances in input and representation space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryDistanceRow {
    pub sample_id: usize,
    pub mode: ModeTag,
    pub confidence: f64,
    pub eps_star: Option<f64>,
    pub repr_distance: Option<f64>,
    pub theta1: Option<f64>,
    pub crossed: bool,
}

/// Boundary distance along FGSM from the original and from the randomly jumped image.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpPair {
    pub sample_id: usize,
    pub eps_fgsm: f64,
    pub eps_rand_jump: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundaryDistanceReport {
    pub rows: Vec<BoundaryDistanceRow>,
    pub jump_pairs: Vec<JumpPair>,
}

/// Representation-space boundary distances from an analyzed run (first seed only).
pub fn boundary_distance_report(rows: &[SampleTrajectory]) -> BoundaryDistanceReport {
    let first: Vec<&SampleTrajectory> = rows.iter().filter(|r| r.seed_index == 0).collect();
    let out: Vec<BoundaryDistanceRow> = first
        .iter()
        .map(|r| BoundaryDistanceRow {
            sample_id: r.sample_id,
            mode: r.mode,
            confidence: r.confidence,
            eps_star: r.eps_star,
            repr_distance: r.boundary_repr_distance,
            theta1: r.record.as_ref().and_then(|t| t.theta1),
            crossed: r.crossed,
        })
        .collect();
    let jump_pairs = first
        .iter()
        .filter(|r| r.mode == ModeTag::Fgsm)
        .filter_map(|f| {
            let j = first
                .iter()
                .find(|r| r.mode == ModeTag::RandJumpFgsm && r.sample_id == f.sample_id)?;
            Some(JumpPair {
                sample_id: f.sample_id,
                eps_fgsm: f.eps_star?,
                eps_rand_jump: j.eps_star?,
            })
        })
        .collect();
    BoundaryDistanceReport { rows: out, jump_pairs }
}
