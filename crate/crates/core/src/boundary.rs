//! Linear travel from an input to the nearest decision flip along a fixed direction.
//!
//! The search probes `clip01(x + eps * d)`: it doubles `eps` while the
//! prediction stays correct and shrinks it by `eps_decay` once it flips.
//! After the first flip the search keeps a bracket `(lo, hi]` (largest
//! correct probe below the smallest flipping probe) and bisects whenever a
//! shrink would leave it, stopping when `(hi - lo) / hi < eps_tol`.

use rayon::prelude::*;
use serde::Serialize;

use crate::calibration::bin_index;
use crate::error::{Error, Result};
use crate::model::{clip01, forward_one, stack_images, Classifier, Prediction};

/// `clip01(x + eps * d)`, computed in f64 and rounded once.
pub fn travel_point(x: &[f32], d: &[f32], eps: f64) -> Vec<f32> {
    x.iter().zip(d).map(|(a, b)| clip01(*a as f64 + eps * *b as f64)).collect()
}

/// Sign of a gradient with zeros mapped to `+1`.
pub fn sign_direction(grad: &[f32]) -> Result<Vec<f32>> {
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    if grad.iter().all(|g| *g == 0.0) {
        return Err(Error::ZeroGradient);
    }
    Ok(grad.iter().map(|g| if *g < 0.0 { -1.0 } else { 1.0 }).collect())
}

/// `sign(grad_x J(C(x), y))` for cross-entropy `J`; every entry is `+-1`.
pub fn fgsm_direction(model: &(impl Classifier + ?Sized), x: &[f32], y: usize) -> Result<Vec<f32>> {
    let batch = stack_images(model.input_shape(), [x])?;
    let g = model.loss_gradient(&batch, &[y])?;
    sign_direction(g.data())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelVariant {
    /// Grow/shrink with a bisection bracket and a relative-width stopping rule.
    Bracketed,
    /// The plain grow/shrink loop run while `eps < eps_tol`, returning the last probe.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TravelParams {
    pub eps_init: f64,
    pub eps_decay: f64,
    pub eps_tol: f64,
    pub max_probes: usize,
    pub eps_max: f64,
    pub variant: TravelVariant,
}

impl Default for TravelParams {
    fn default() -> Self {
        Self {
            eps_init: 1e-3,
            eps_decay: 0.9,
            eps_tol: 0.01,
            max_probes: 200,
            eps_max: 1.0,
            variant: TravelVariant::Bracketed,
        }
    }
}

impl TravelParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.eps_init > 0.0
            && self.eps_tol > 0.0
            && self.eps_decay > 0.0
            && self.eps_decay < 1.0
            && self.eps_max >= self.eps_init
            && self.max_probes > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "travel parameters need eps_init, eps_tol > 0, 0 < eps_decay < 1, eps_max >= eps_init and a positive probe budget (got {self:?})"
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TravelResult {
    /// Smallest flipping length found; `None` if no probe flipped.
    pub eps_star: Option<f64>,
    #[serde(skip)]
    pub x_prime: Option<Vec<f32>>,
    pub crossed: bool,
    pub probes: usize,
    /// Largest correct probe below `eps_star` (0 is the unperturbed input).
    pub lo: f64,
    pub hi: Option<f64>,
    pub label_after: Option<usize>,
    /// Every probe in order: `(eps, prediction flipped)`.
    #[serde(skip)]
    pub trace: Vec<(f64, bool)>,
}

/// Searches for the smallest `eps` with `C(clip01(x + eps d)) != y`.
pub fn travel_to_boundary(
    model: &(impl Classifier + ?Sized),
    x: &[f32],
    y: usize,
    d: &[f32],
    params: &TravelParams,
) -> Result<TravelResult> {
    params.validate()?;
    if d.len() != x.len() {
        return Err(Error::InputShape {
            found: vec![d.len()],
            expected: vec![x.len()],
        });
    }
    let (p0, _) = forward_one(model, x)?;
    if p0.label != y {
        return Err(Error::Misclassified {
            label: y,
            predicted: p0.label,
        });
    }
    let probe = |eps: f64| -> Result<usize> { Ok(forward_one(model, &travel_point(x, d, eps))?.0.label) };
    match params.variant {
        TravelVariant::Bracketed => bracketed(probe, y, params, |eps| travel_point(x, d, eps)),
        TravelVariant::Literal => literal(probe, y, params, |eps| travel_point(x, d, eps)),
    }
}

fn bracketed(
    probe: impl Fn(f64) -> Result<usize>,
    y: usize,
    p: &TravelParams,
    point: impl Fn(f64) -> Vec<f32>,
) -> Result<TravelResult> {
    let mut lo = 0.0f64;
    let mut hi: Option<(f64, usize)> = None;
    let mut eps = p.eps_init;
    let mut probes = 0;
    let mut trace = Vec::new();
    while probes < p.max_probes {
        eps = eps.min(p.eps_max);
        let label = probe(eps)?;
        probes += 1;
        trace.push((eps, label != y));
        if label != y {
            if hi.is_none_or(|(h, _)| eps < h) {
                hi = Some((eps, label));
            }
        } else if hi.is_none_or(|(h, _)| eps < h) {
            lo = lo.max(eps);
        }
        match hi {
            Some((h, _)) => {
                if (h - lo) / h < p.eps_tol {
                    break;
                }
                let shrunk = eps * p.eps_decay;
                eps = if label != y && shrunk > lo { shrunk } else { 0.5 * (lo + h) };
            }
            None => {
                if eps >= p.eps_max {
                    break;
                }
                eps *= 2.0;
            }
        }
    }
    Ok(match hi {
        Some((h, label)) => TravelResult {
            eps_star: Some(h),
            x_prime: Some(point(h)),
            crossed: true,
            probes,
            lo,
            hi: Some(h),
            label_after: Some(label),
            trace,
        },
        None => TravelResult {
            eps_star: None,
            x_prime: None,
            crossed: false,
            probes,
            lo,
            hi: None,
            label_after: None,
            trace,
        },
    })
}

fn literal(
    probe: impl Fn(f64) -> Result<usize>,
    y: usize,
    p: &TravelParams,
    point: impl Fn(f64) -> Vec<f32>,
) -> Result<TravelResult> {
    let mut eps = p.eps_init;
    let mut probes = 0;
    let mut last: Option<(f64, usize)> = None;
    let mut lo = 0.0f64;
    let mut hi: Option<f64> = None;
    let mut trace = Vec::new();
    while eps < p.eps_tol && probes < p.max_probes {
        let label = probe(eps)?;
        probes += 1;
        trace.push((eps, label != y));
        last = Some((eps, label));
        if label != y {
            hi = Some(hi.map_or(eps, |h| h.min(eps)));
            eps *= p.eps_decay;
        } else {
            if hi.is_none_or(|h| eps < h) {
                lo = lo.max(eps);
            }
            eps += eps;
        }
    }
    let crossed = last.is_some_and(|(_, l)| l != y);
    Ok(TravelResult {
        eps_star: last.filter(|_| crossed).map(|(e, _)| e),
        x_prime: last.map(|(e, _)| point(e)),
        crossed,
        probes,
        lo,
        hi,
        label_after: last.map(|(_, l)| l),
        trace,
    })
}

/// One analyzed sample of a dataset-level travel run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonRow {
    pub sample_id: usize,
    pub label: usize,
    pub confidence: f64,
    pub eps_star: Option<f64>,
    pub crossed: bool,
    pub probes: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfidenceBinMean {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub mean_eps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonReport {
    pub rows: Vec<EpsilonRow>,
    /// Samples skipped because the model misclassifies them.
    pub skipped: usize,
    pub bin_means: Vec<ConfidenceBinMean>,
}

/// Per-sample start point and direction for a travel.
pub struct Start {
    pub x0: Vec<f32>,
    pub d: Vec<f32>,
}

/// Travels every correctly classified sample. `start` builds the travel start
/// and direction from `(sample_id, x, y)`; per-sample failures are recorded in
/// the row rather than aborting the run.
pub fn epsilon_vs_confidence<M, S>(
    model: &M,
    samples: &[(usize, &[f32], usize)],
    params: &TravelParams,
    bins: usize,
    start: S,
) -> Result<EpsilonReport>
where
    M: Classifier + ?Sized,
    S: Fn(usize, &[f32], usize) -> Result<Start> + Sync,
{
    params.validate()?;
    let analyzed: Vec<Option<EpsilonRow>> = samples
        .par_iter()
        .map(|&(id, x, y)| -> Result<Option<EpsilonRow>> {
            let (pred, _): (Prediction, _) = forward_one(model, x)?;
            if pred.label != y {
                return Ok(None);
            }
            let run = start(id, x, y).and_then(|s| travel_to_boundary(model, &s.x0, y, &s.d, params));
            Ok(Some(match run {
                Ok(r) => EpsilonRow {
                    sample_id: id,
                    label: y,
                    confidence: pred.confidence,
                    eps_star: r.eps_star,
                    crossed: r.crossed,
                    probes: r.probes,
                    error: None,
                },
                Err(e) => EpsilonRow {
                    sample_id: id,
                    label: y,
                    confidence: pred.confidence,
                    eps_star: None,
                    crossed: false,
                    probes: 0,
                    error: Some(e.to_string()),
                },
            }))
        })
        .collect::<Result<_>>()?;
    let skipped = analyzed.iter().filter(|r| r.is_none()).count();
    let mut rows: Vec<EpsilonRow> = analyzed.into_iter().flatten().collect();
    rows.sort_by_key(|r| r.sample_id);
    let bin_means = confidence_bin_means(&rows, bins.max(1));
    Ok(EpsilonReport {
        rows,
        skipped,
        bin_means,
    })
}

fn confidence_bin_means(rows: &[EpsilonRow], k: usize) -> Vec<ConfidenceBinMean> {
    let mut sum = vec![0.0; k];
    let mut count = vec![0usize; k];
    for r in rows {
        if let Some(e) = r.eps_star {
            let i = bin_index(r.confidence.clamp(f64::MIN_POSITIVE, 1.0), k);
            sum[i] += e;
            count[i] += 1;
        }
    }
    (0..k)
        .map(|i| ConfidenceBinMean {
            lo: i as f64 / k as f64,
            hi: (i + 1) as f64 / k as f64,
            count: count[i],
            mean_eps: (count[i] > 0).then(|| sum[i] / count[i] as f64),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_maps_zero_to_plus_one() {
        assert_eq!(sign_direction(&[0.3, -0.2, 0.0]).unwrap(), vec![1.0, -1.0, 1.0]);
        assert!(matches!(sign_direction(&[0.0, 0.0]), Err(Error::ZeroGradient)));
        assert!(matches!(sign_direction(&[f32::NAN, 1.0]), Err(Error::NonFiniteGradient)));
    }

    #[test]
    fn travel_point_clips() {
        assert_eq!(travel_point(&[0.9, 0.1], &[1.0, -1.0], 0.5), vec![1.0, 0.0]);
    }

    #[test]
    fn bad_params_rejected() {
        let p = TravelParams {
            eps_decay: 1.0,
            ..TravelParams::default()
        };
        assert!(p.validate().is_err());
    }
}
