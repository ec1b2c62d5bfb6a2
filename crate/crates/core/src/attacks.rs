//! Sign-gradient attacks and the random-jump attack.
//!
//! `eps_used` is the root-mean-square pixel perturbation `|x_adv - x|_2 / sqrt(D)`
//! against the original image, so for an unclipped travel along a `+-1`
//! direction it equals the travel length. The random-jump attack includes
//! the jump in its total.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{fgsm_direction, sign_direction, travel_point, travel_to_boundary, TravelParams};
use crate::error::{Error, Result};
use crate::model::{clip01, forward_one, stack_images, Classifier};
use crate::rng::random_direction;
use crate::stats::median;
use crate::trajectory::{sample_seed, ModeTag};

/// PSNR reported for identical images.
pub const PSNR_IDENTICAL_DB: f64 = 99.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Boundary travel along the FGSM direction.
    Fgsm,
    /// Iterated FGSM inside an l-infinity ball.
    Ifgsm,
    /// Random jump, then boundary travel along the FGSM direction of the jumped image.
    RandJumpFgsm,
}

impl AttackKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Ifgsm => "ifgsm",
            AttackKind::RandJumpFgsm => "rand_jump_fgsm",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "ifgsm" => Ok(AttackKind::Ifgsm),
            "rand_jump_fgsm" => Ok(AttackKind::RandJumpFgsm),
            other => Err(Error::Config(format!("unknown attack kind '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// l-infinity budget for `ifgsm`; unused by the travel-based kinds.
    pub eps: f64,
    pub iters: usize,
    pub eps_r: f64,
    pub seed: u64,
    pub travel: TravelParams,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::Ifgsm,
            eps: 0.002,
            iters: 10,
            eps_r: 0.05,
            seed: 0,
            travel: TravelParams::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) || !(self.eps_r >= 0.0 && self.eps_r.is_finite()) {
            return Err(Error::Config("attack budgets must be finite and non-negative".into()));
        }
        if self.kind == AttackKind::Ifgsm && self.iters == 0 {
            return Err(Error::Config("ifgsm needs at least one iteration".into()));
        }
        self.travel.validate()
    }

    /// Budget column of the attack table: `eps` for ifgsm, the travel cap otherwise.
    pub fn budget(&self) -> f64 {
        match self.kind {
            AttackKind::Ifgsm => self.eps,
            _ => self.travel.eps_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackResult {
    #[serde(skip)]
    pub x_adv: Vec<f32>,
    pub success: bool,
    /// `|x_adv - x|_2 / sqrt(D)`.
    pub eps_used: f64,
    /// `max |x_adv - x|`.
    pub linf: f64,
    pub psnr_db: f64,
    pub label_before: usize,
    pub label_after: usize,
    pub iterations: usize,
    /// Why an attack stopped early, if it did.
    pub aborted: Option<String>,
}

/// Peak signal-to-noise ratio of two `[0, 1]` images (peak 1.0).
pub fn psnr(a: &[f32], b: &[f32]) -> f64 {
    let mse = a.iter().zip(b).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>() / a.len().max(1) as f64;
    if mse == 0.0 {
        PSNR_IDENTICAL_DB
    } else {
        -10.0 * mse.log10()
    }
}

fn finish(model: &(impl Classifier + ?Sized), x: &[f32], y: usize, x_adv: Vec<f32>, iterations: usize, aborted: Option<String>) -> Result<AttackResult> {
    let (after, _) = forward_one(model, &x_adv)?;
    let sq: f64 = x_adv.iter().zip(x).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
    let linf = x_adv.iter().zip(x).map(|(a, b)| (*a as f64 - *b as f64).abs()).fold(0.0, f64::max);
    Ok(AttackResult {
        success: after.label != y,
        eps_used: (sq / x.len() as f64).sqrt(),
        linf,
        psnr_db: psnr(x, &x_adv),
        label_before: y,
        label_after: after.label,
        iterations,
        aborted,
        x_adv,
    })
}

/// Single-step FGSM: `clip01(x + eps sign(grad))`.
pub fn fgsm(model: &(impl Classifier + ?Sized), x: &[f32], y: usize, eps: f64) -> Result<AttackResult> {
    let d = fgsm_direction(model, x, y)?;
    finish(model, x, y, travel_point(x, &d, eps), 1, None)
}

/// `T` steps of size `eps / T`, each projected onto the l-infinity ball of
/// radius `eps` around `x` and onto `[0, 1]`. A degenerate gradient stops the
/// attack and returns the image reached so far.
pub fn ifgsm(model: &(impl Classifier + ?Sized), x: &[f32], y: usize, eps: f64, iters: usize) -> Result<AttackResult> {
    if iters == 0 {
        return Err(Error::Config("ifgsm needs at least one iteration".into()));
    }
    let step = eps / iters as f64;
    let mut cur = x.to_vec();
    let mut done = 0;
    let mut aborted = None;
    for _ in 0..iters {
        let batch = stack_images(model.input_shape(), [&cur])?;
        let grad = model.loss_gradient(&batch, &[y])?;
        let d = match sign_direction(grad.data()) {
            Ok(d) => d,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        cur = cur
            .iter()
            .zip(&d)
            .zip(x)
            .map(|((c, s), o)| {
                let o = *o as f64;
                clip01((*c as f64 + step * *s as f64).clamp(o - eps, o + eps))
            })
            .collect();
        done += 1;
    }
    finish(model, x, y, cur, done, aborted)
}

/// Jump to `clip01(x + eps_r r)`, then travel to the boundary along the FGSM
/// direction there. Measured against the original `x`.
pub fn rand_jump_attack(
    model: &(impl Classifier + ?Sized),
    x: &[f32],
    y: usize,
    eps_r: f64,
    seed: u64,
    travel: &TravelParams,
) -> Result<AttackResult> {
    let r = random_direction(x.len(), seed);
    let x0 = travel_point(x, &r, eps_r);
    fgsm_travel_from(model, x, &x0, y, travel)
}

/// Boundary travel along the FGSM direction from `x`.
pub fn fgsm_travel_attack(model: &(impl Classifier + ?Sized), x: &[f32], y: usize, travel: &TravelParams) -> Result<AttackResult> {
    fgsm_travel_from(model, x, x, y, travel)
}

fn fgsm_travel_from(model: &(impl Classifier + ?Sized), x: &[f32], x0: &[f32], y: usize, travel: &TravelParams) -> Result<AttackResult> {
    let (p0, _) = forward_one(model, x0)?;
    if p0.label != y {
        return finish(model, x, y, x0.to_vec(), 0, None);
    }
    let d = fgsm_direction(model, x0, y)?;
    let t = travel_to_boundary(model, x0, y, &d, travel)?;
    let x_adv = t.x_prime.unwrap_or_else(|| x0.to_vec());
    finish(model, x, y, x_adv, t.probes, None)
}

pub fn attack(model: &(impl Classifier + ?Sized), x: &[f32], y: usize, sample_id: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm_travel_attack(model, x, y, &cfg.travel),
        AttackKind::Ifgsm => ifgsm(model, x, y, cfg.eps, cfg.iters),
        AttackKind::RandJumpFgsm => rand_jump_attack(
            model,
            x,
            y,
            cfg.eps_r,
            sample_seed(cfg.seed, sample_id, ModeTag::RandJumpFgsm),
            &cfg.travel,
        ),
    }
}

/// One attacked sample; `result` is `Err` text when the attack itself failed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackRow {
    pub sample_id: usize,
    pub label: usize,
    pub result: std::result::Result<AttackResult, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackRun {
    pub rows: Vec<AttackRow>,
    /// Misclassified samples left out.
    pub skipped: usize,
}

/// Attacks every correctly classified sample.
pub fn run_attacks(model: &(impl Classifier + ?Sized), samples: &[(usize, &[f32], usize)], cfg: &AttackConfig) -> Result<AttackRun> {
    cfg.validate()?;
    let rows: Vec<Option<AttackRow>> = samples
        .par_iter()
        .map(|&(id, x, y)| -> Result<Option<AttackRow>> {
            let (p, _) = forward_one(model, x)?;
            if p.label != y {
                return Ok(None);
            }
            Ok(Some(AttackRow {
                sample_id: id,
                label: y,
                result: attack(model, x, y, id, cfg).map_err(|e| e.to_string()),
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    let mut rows: Vec<AttackRow> = rows.into_iter().flatten().collect();
    rows.sort_by_key(|r| r.sample_id);
    Ok(AttackRun { rows, skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvednessBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Fraction still correctly classified after the attack; `None` for an empty bin.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RobustnessTable {
    pub bins: Vec<CurvednessBin>,
    pub overall_accuracy: Option<f64>,
    /// Attacked samples without a `theta1`.
    pub unbinned: usize,
}

/// Accuracy after attack per `theta1` bin over `[0, pi]`. `outcomes` holds
/// `(theta1, attack succeeded)` per attacked sample.
pub fn robustness_by_curvedness(outcomes: &[(Option<f64>, bool)], bins: usize) -> RobustnessTable {
    let k = bins.max(1);
    let width = std::f64::consts::PI / k as f64;
    let mut count = vec![0usize; k];
    let mut survived = vec![0usize; k];
    let mut unbinned = 0;
    for &(theta, success) in outcomes {
        let Some(t) = theta.filter(|t| t.is_finite()) else {
            unbinned += 1;
            continue;
        };
        let i = ((t / width).floor() as usize).min(k - 1);
        count[i] += 1;
        survived[i] += (!success) as usize;
    }
    let n = outcomes.len();
    let overall_accuracy = (n > 0).then(|| outcomes.iter().filter(|(_, s)| !s).count() as f64 / n as f64);
    RobustnessTable {
        bins: (0..k)
            .map(|i| CurvednessBin {
                lo: i as f64 * width,
                hi: (i + 1) as f64 * width,
                count: count[i],
                accuracy: (count[i] > 0).then(|| survived[i] as f64 / count[i] as f64),
            })
            .collect(),
        overall_accuracy,
        unbinned,
    }
}

/// Default threshold on `theta1` above which a sample counts as curved.
pub const CURVED_THRESHOLD: f64 = std::f64::consts::FRAC_PI_4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpDominance {
    pub threshold: f64,
    pub curved: usize,
    pub median_fgsm: Option<f64>,
    pub median_jump: Option<f64>,
    /// `median_jump <= median_fgsm`; `None` without curved samples.
    pub holds: Option<bool>,
}

/// Compares total perturbation of the random-jump attack and plain FGSM travel
/// over curved samples. Rows are `(theta1, eps_fgsm, eps_jump)`.
pub fn jump_dominance(rows: &[(f64, f64, f64)], threshold: f64) -> JumpDominance {
    let curved: Vec<&(f64, f64, f64)> = rows.iter().filter(|r| r.0 >= threshold).collect();
    let f: Vec<f64> = curved.iter().map(|r| r.1).collect();
    let j: Vec<f64> = curved.iter().map(|r| r.2).collect();
    let (median_fgsm, median_jump) = (median(&f), median(&j));
    JumpDominance {
        threshold,
        curved: curved.len(),
        median_fgsm,
        median_jump,
        holds: median_fgsm.zip(median_jump).map(|(a, b)| b <= a),
    }
}
