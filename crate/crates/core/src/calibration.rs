//! Binned calibration: expected calibration error and its signed variant.
//!
//! Confidences are binned into `K` equal-width bins `(i/K, (i+1)/K]`.
//! With `P(i)` the fraction of predictions in bin `i`, `o_i` its accuracy
//! and `e_i` its mean confidence, `ECE = sum P(i) |o_i - e_i|` and
//! `sECE = sum P(i) (o_i - e_i)`. Negative sECE means overconfident.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Fraction of all predictions in this bin.
    pub fraction: f64,
    /// Accuracy `o_i`; 0 for an empty bin.
    pub accuracy: f64,
    /// Mean confidence `e_i`; 0 for an empty bin.
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    pub total: usize,
    pub ece: f64,
    pub sece: f64,
}

/// Bin of `c` in `(i/K, (i+1)/K]`, consistent with the f64 edges `i as f64 / K as f64`.
pub fn bin_index(c: f64, k: usize) -> usize {
    let kf = k as f64;
    let mut i = ((c * kf).ceil() as usize).clamp(1, k) - 1;
    while i > 0 && c <= i as f64 / kf {
        i -= 1;
    }
    while i + 1 < k && c > (i + 1) as f64 / kf {
        i += 1;
    }
    i
}

/// Bins `(confidence, correct)` pairs into `k` bins.
pub fn calibrate(predictions: &[(f64, bool)], k: usize) -> Result<CalibrationReport> {
    if predictions.is_empty() {
        return Err(Error::Empty("calibration predictions"));
    }
    if k == 0 {
        return Err(Error::Config("calibration needs at least one bin".into()));
    }
    let mut count = vec![0usize; k];
    let mut correct = vec![0usize; k];
    let mut conf_sum = vec![0f64; k];
    for &(c, ok) in predictions {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::ConfidenceRange(c));
        }
        let i = bin_index(c, k);
        count[i] += 1;
        correct[i] += ok as usize;
        conf_sum[i] += c;
    }
    let n = predictions.len() as f64;
    let mut bins = Vec::with_capacity(k);
    let (mut ece, mut sece) = (0.0, 0.0);
    for i in 0..k {
        let (accuracy, confidence, fraction) = if count[i] == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let m = count[i] as f64;
            (correct[i] as f64 / m, conf_sum[i] / m, m / n)
        };
        ece += fraction * (accuracy - confidence).abs();
        sece += fraction * (accuracy - confidence);
        bins.push(CalibrationBin {
            lo: i as f64 / k as f64,
            hi: (i + 1) as f64 / k as f64,
            count: count[i],
            fraction,
            accuracy,
            confidence,
        });
    }
    Ok(CalibrationReport {
        bins,
        total: predictions.len(),
        ece,
        sece,
    })
}

/// Reliability-diagram bar data; the 45-degree reference is `bin_center`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReliabilityRow {
    pub bin_center: f64,
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub count: usize,
}

pub fn reliability_rows(report: &CalibrationReport) -> Vec<ReliabilityRow> {
    report
        .bins
        .iter()
        .map(|b| ReliabilityRow {
            bin_center: 0.5 * (b.lo + b.hi),
            accuracy: b.accuracy,
            mean_confidence: b.confidence,
            count: b.count,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_are_left_open() {
        assert_eq!(bin_index(0.1, 10), 0);
        assert_eq!(bin_index(0.1000001, 10), 1);
        assert_eq!(bin_index(1.0, 10), 9);
        assert_eq!(bin_index(1e-9, 10), 0);
        assert_eq!(bin_index(0.3, 10), 2);
    }

    #[test]
    fn one_overconfident_bin() {
        let mut preds = vec![(0.9, true); 8];
        preds.extend([(0.9, false); 2]);
        let r = calibrate(&preds, 1).unwrap();
        assert!((r.ece - 0.1).abs() < 1e-12);
        assert!((r.sece + 0.1).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_fail() {
        assert!(matches!(calibrate(&[], 10), Err(Error::Empty(_))));
        assert!(matches!(calibrate(&[(0.0, true)], 10), Err(Error::ConfidenceRange(_))));
        assert!(matches!(calibrate(&[(1.5, true)], 10), Err(Error::ConfidenceRange(_))));
    }

    #[test]
    fn all_in_last_bin() {
        let r = calibrate(&[(0.95, true), (0.99, false)], 10).unwrap();
        let rows = reliability_rows(&r);
        assert_eq!(rows.len(), 10);
        assert_eq!(rows.iter().filter(|r| r.count == 0).count(), 9);
        assert_eq!(rows[9].count, 2);
    }
}
