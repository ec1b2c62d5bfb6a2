//! Central finite-difference check of reverse-mode gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of [`check`] for one input.
#[derive(Clone, Debug)]
pub struct InputReport {
    pub analytic: Vec<f32>,
    pub numeric: Vec<f64>,
    /// `|analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)`, zero when both vanish.
    pub rel_error: f64,
}

/// Compares gradients of the scalar function `f` at `inputs` against central
/// differences with step `h`.
pub fn check<F>(inputs: &[Tensor], h: f32, f: F) -> Result<Vec<InputReport>>
where
    F: for<'g> Fn(&'g Graph, &[Var<'g>]) -> Result<Var<'g>>,
{
    let g = Graph::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| g.constant(t.clone())).collect();
        Ok(f(&g, &vars)?.value().data()[0] as f64)
    };

    let mut reports = Vec::with_capacity(inputs.len());
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).into_data();
        let mut numeric = Vec::with_capacity(analytic.len());
        let mut xs = inputs.to_vec();
        for j in 0..inputs[i].numel() {
            let orig = inputs[i].data()[j];
            xs[i].data_mut()[j] = orig + h;
            let up = eval(&xs)?;
            xs[i].data_mut()[j] = orig - h;
            let down = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            // The perturbation actually applied after f32 rounding.
            let span = ((orig + h) as f64) - ((orig - h) as f64);
            numeric.push((up - down) / span);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (*a as f64 - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|n| n.powi(2)).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let rel_error = if denom == 0.0 { 0.0 } else { diff / denom };
        reports.push(InputReport {
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(reports)
}
