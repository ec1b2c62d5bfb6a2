//! The analysis-facing classifier contract.
//!
//! Every analysis in this crate sees a model only through [`Classifier`]:
//! a batch forward pass that yields both logits and the penultimate feature
//! `z` (the input of the final linear head), plus the input gradient of the
//! cross-entropy loss. Images are `[B, C, H, W]` tensors with pixels in
//! `[0, 1]`; any normalization is the model's own business.

use curvprobe_tensor::Tensor;

use crate::error::{Error, Result};

/// Logits `[B, K]` and penultimate features `[B, F]` for a batch.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Tensor,
    pub features: Tensor,
}

pub trait Classifier: Sync {
    /// `[C, H, W]` of a single image.
    fn input_shape(&self) -> [usize; 3];
    fn num_classes(&self) -> usize;
    fn feature_dim(&self) -> usize;

    /// Inference-mode forward pass. Pure in (parameters, input).
    fn forward(&self, images: &Tensor) -> Result<Forward>;

    /// `d/dx` of the mean cross-entropy of `labels` at `images`, same shape as `images`.
    fn loss_gradient(&self, images: &Tensor, labels: &[usize]) -> Result<Tensor>;

    fn input_dim(&self) -> usize {
        self.input_shape().iter().product()
    }

    /// Penultimate features as f64, `[B * F]` row-major. Models that compute
    /// in f64 override this to avoid rounding through f32.
    fn features_f64(&self, images: &Tensor) -> Result<Vec<f64>> {
        Ok(self.forward(images)?.features.data().iter().map(|v| *v as f64).collect())
    }
}

/// Predicted label and max softmax probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub confidence: f64,
}

/// Argmax with ties going to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn prediction_from_logits(logits: &[f32]) -> Prediction {
    let label = argmax(logits);
    let mx = logits[label] as f64;
    let denom: f64 = logits.iter().map(|v| (*v as f64 - mx).exp()).sum();
    Prediction {
        label,
        confidence: 1.0 / denom,
    }
}

/// Stacks flat images into a `[B, C, H, W]` batch.
pub fn stack_images<I, S>(shape: [usize; 3], images: I) -> Result<Tensor>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[f32]>,
{
    let d: usize = shape.iter().product();
    let mut data = Vec::new();
    let mut b = 0;
    for img in images {
        let img = img.as_ref();
        if img.len() != d {
            return Err(Error::InputShape {
                found: vec![img.len()],
                expected: vec![d],
            });
        }
        data.extend_from_slice(img);
        b += 1;
    }
    Ok(Tensor::new(vec![b, shape[0], shape[1], shape[2]], data)?)
}

pub(crate) fn check_batch(model: &(impl Classifier + ?Sized), images: &Tensor) -> Result<usize> {
    let s = images.shape();
    let [c, h, w] = model.input_shape();
    if s.len() != 4 || s[1..] != [c, h, w] {
        return Err(Error::InputShape {
            found: s.to_vec(),
            expected: vec![s.first().copied().unwrap_or(0), c, h, w],
        });
    }
    Ok(s[0])
}

/// Predictions for each image in the batch.
pub fn predict(model: &(impl Classifier + ?Sized), images: &Tensor) -> Result<Vec<Prediction>> {
    let out = model.forward(images)?;
    let k = model.num_classes();
    Ok(out.logits.data().chunks(k).map(prediction_from_logits).collect())
}

/// Features and prediction for a single flat image.
pub fn forward_one(model: &(impl Classifier + ?Sized), image: &[f32]) -> Result<(Prediction, Vec<f32>)> {
    let batch = stack_images(model.input_shape(), [image])?;
    let out = model.forward(&batch)?;
    Ok((
        prediction_from_logits(out.logits.data()),
        out.features.data().to_vec(),
    ))
}

/// Labels predicted for a list of flat images, evaluated in chunks.
pub fn predict_labels(model: &(impl Classifier + ?Sized), images: &[Vec<f32>], chunk: usize) -> Result<Vec<usize>> {
    let mut labels = Vec::with_capacity(images.len());
    for part in images.chunks(chunk.max(1)) {
        let batch = stack_images(model.input_shape(), part)?;
        labels.extend(predict(model, &batch)?.into_iter().map(|p| p.label));
    }
    Ok(labels)
}

/// `clip_{0,1}` applied elementwise.
pub fn clip01(v: f64) -> f32 {
    v.clamp(0.0, 1.0) as f32
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_softmax_confidence() {
        let p = prediction_from_logits(&[3.0, 0.0, 0.0]);
        assert_eq!(p.label, 0);
        let e3 = 3f64.exp();
        assert!((p.confidence - e3 / (e3 + 2.0)).abs() < 1e-12);
        assert!((p.confidence - 0.9094).abs() < 1e-4);
    }

    #[test]
    fn uniform_logits_tie_to_lowest_index() {
        let p = prediction_from_logits(&[0.25; 10]);
        assert_eq!(p.label, 0);
        assert!((p.confidence - 0.1).abs() < 1e-12);
    }

    #[test]
    fn saturated_logits_give_full_confidence() {
        let p = prediction_from_logits(&[50.0, 0.0]);
        assert_eq!(p.label, 0);
        assert!((p.confidence - 1.0).abs() < 1e-12);
    }
}
