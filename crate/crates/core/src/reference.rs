//! Affine reference classifiers with closed-form behavior.
//!
//! These models have straight-line feature trajectories and analytically
//! known decision boundaries, so they serve as oracles for the trajectory,
//! boundary-travel, attack and projection analyses. All arithmetic is f64.

use curvprobe_tensor::Tensor;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{check_batch, Classifier, Forward};
use crate::rng::seeded;

#[derive(Clone, Debug)]
enum FeatureMap {
    Identity,
    /// `z = W x + b`, `W` is `F x D` row-major.
    Dense { w: Vec<f64>, b: Vec<f64>, out: usize },
}

/// `z = A x + b`, `logits = H z + c`.
#[derive(Clone, Debug)]
pub struct AffineClassifier {
    shape: [usize; 3],
    features: FeatureMap,
    head_w: Vec<f64>,
    head_b: Vec<f64>,
    classes: usize,
}

impl AffineClassifier {
    /// Dense feature map. `feat_w` is `F x D`, `head_w` is `K x F`, both row-major.
    pub fn new(shape: [usize; 3], feat_w: Vec<f64>, feat_b: Vec<f64>, head_w: Vec<f64>, head_b: Vec<f64>) -> Result<Self> {
        let d: usize = shape.iter().product();
        let f = feat_b.len();
        let k = head_b.len();
        if f == 0 || k == 0 || feat_w.len() != f * d || head_w.len() != k * f {
            return Err(Error::Config(format!(
                "affine classifier: inconsistent sizes (D={d}, F={f}, K={k}, |A|={}, |H|={})",
                feat_w.len(),
                head_w.len()
            )));
        }
        Ok(Self {
            shape,
            features: FeatureMap::Dense { w: feat_w, b: feat_b, out: f },
            head_w,
            head_b,
            classes: k,
        })
    }

    /// `z = x` (flattened), with the given `K x D` head.
    pub fn identity(shape: [usize; 3], head_w: Vec<f64>, head_b: Vec<f64>) -> Result<Self> {
        let d: usize = shape.iter().product();
        let k = head_b.len();
        if k == 0 || head_w.len() != k * d {
            return Err(Error::Config("identity classifier: head size mismatch".into()));
        }
        Ok(Self {
            shape,
            features: FeatureMap::Identity,
            head_w,
            head_b,
            classes: k,
        })
    }

    /// Two classes with identity features; class 1 wins where `normal . x + offset > 0`.
    pub fn halfspace(shape: [usize; 3], normal: &[f64], offset: f64) -> Result<Self> {
        let d = normal.len();
        let mut head_w = vec![0.0; 2 * d];
        head_w[d..].copy_from_slice(normal);
        Self::identity(shape, head_w, vec![0.0, offset])
    }

    /// Gaussian weights scaled by `1/sqrt(fan_in)`.
    pub fn random(shape: [usize; 3], feature_dim: usize, classes: usize, seed: u64) -> Result<Self> {
        let d: usize = shape.iter().product();
        let mut rng = seeded(seed);
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v * scale
                })
                .collect()
        };
        let a = draw(feature_dim * d, 1.0 / (d as f64).sqrt());
        let b = draw(feature_dim, 0.1);
        let h = draw(classes * feature_dim, 1.0 / (feature_dim as f64).sqrt());
        let c = draw(classes, 0.1);
        Self::new(shape, a, b, h, c)
    }

    fn feature_vector(&self, x: &[f32]) -> Vec<f64> {
        match &self.features {
            FeatureMap::Identity => x.iter().map(|v| *v as f64).collect(),
            FeatureMap::Dense { w, b, out } => {
                let d = x.len();
                (0..*out)
                    .map(|i| {
                        let row = &w[i * d..(i + 1) * d];
                        b[i] + row.iter().zip(x).map(|(a, v)| a * *v as f64).sum::<f64>()
                    })
                    .collect()
            }
        }
    }

    /// Logits for a feature vector (the linear head).
    pub fn head(&self, z: &[f64]) -> Vec<f64> {
        let f = z.len();
        (0..self.classes)
            .map(|k| self.head_b[k] + self.head_w[k * f..(k + 1) * f].iter().zip(z).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

impl Classifier for AffineClassifier {
    fn input_shape(&self) -> [usize; 3] {
        self.shape
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn feature_dim(&self) -> usize {
        match &self.features {
            FeatureMap::Identity => self.input_dim(),
            FeatureMap::Dense { out, .. } => *out,
        }
    }

    fn forward(&self, images: &Tensor) -> Result<Forward> {
        let b = check_batch(self, images)?;
        let d = self.input_dim();
        let f = self.feature_dim();
        let mut feats = Vec::with_capacity(b * f);
        let mut logits = Vec::with_capacity(b * self.classes);
        for x in images.data().chunks(d) {
            let z = self.feature_vector(x);
            logits.extend(self.head(&z).iter().map(|v| *v as f32));
            feats.extend(z.iter().map(|v| *v as f32));
        }
        Ok(Forward {
            logits: Tensor::new(vec![b, self.classes], logits)?,
            features: Tensor::new(vec![b, f], feats)?,
        })
    }

    fn features_f64(&self, images: &Tensor) -> Result<Vec<f64>> {
        check_batch(self, images)?;
        Ok(images.data().chunks(self.input_dim()).flat_map(|x| self.feature_vector(x)).collect())
    }

    fn loss_gradient(&self, images: &Tensor, labels: &[usize]) -> Result<Tensor> {
        let b = check_batch(self, images)?;
        if labels.len() != b {
            return Err(Error::Config(format!("{} labels for a batch of {b}", labels.len())));
        }
        let d = self.input_dim();
        let f = self.feature_dim();
        let mut out = Vec::with_capacity(b * d);
        for (x, &y) in images.data().chunks(d).zip(labels) {
            let logits = self.head(&self.feature_vector(x));
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - mx).exp()).sum();
            let g_logits: Vec<f64> = logits
                .iter()
                .enumerate()
                .map(|(k, v)| ((v - mx).exp() / z - if k == y { 1.0 } else { 0.0 }) / b as f64)
                .collect();
            let mut g_z = vec![0.0f64; f];
            for (k, gk) in g_logits.iter().enumerate() {
                for (j, gz) in g_z.iter_mut().enumerate() {
                    *gz += gk * self.head_w[k * f + j];
                }
            }
            match &self.features {
                FeatureMap::Identity => out.extend(g_z.iter().map(|v| *v as f32)),
                FeatureMap::Dense { w, .. } => {
                    let mut g_x = vec![0.0f64; d];
                    for (i, gz) in g_z.iter().enumerate() {
                        for (gx, a) in g_x.iter_mut().zip(&w[i * d..(i + 1) * d]) {
                            *gx += gz * a;
                        }
                    }
                    out.extend(g_x.iter().map(|v| *v as f32));
                }
            }
        }
        Ok(Tensor::new(images.shape().to_vec(), out)?)
    }
}
