//! Desk-scale classifiers: a residual CNN and a vision transformer.
//!
//! Both expose logits and the penultimate feature `z`, with
//! `logits = head(z)` for a single linear head. Per-channel input
//! normalization is owned by the model and applied after the caller's
//! `[0, 1]` clipping.

mod cnn;
mod vit;

use std::cell::RefCell;
use std::collections::HashMap;

use curvprobe_tensor::{BatchNormStats, Graph, Tensor, Var};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_batch, Classifier, Forward};
use crate::rng::seeded;

pub use cnn::CnnConfig;
pub use vit::VitConfig;

const BN_EPS: f32 = 1e-5;
const BN_MOMENTUM: f32 = 0.1;
const LN_EPS: f32 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchConfig {
    Cnn(CnnConfig),
    Vit(VitConfig),
}

impl ArchConfig {
    pub fn tag(&self) -> &'static str {
        match self {
            ArchConfig::Cnn(_) => "cnn",
            ArchConfig::Vit(_) => "vit",
        }
    }

    pub fn default_cnn() -> Self {
        ArchConfig::Cnn(CnnConfig::default())
    }

    pub fn default_vit() -> Self {
        ArchConfig::Vit(VitConfig::default())
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "cnn" => Ok(Self::default_cnn()),
            "vit" => Ok(Self::default_vit()),
            other => Err(Error::Config(format!("unknown architecture '{other}' (expected cnn or vit)"))),
        }
    }
}

/// Per-channel `(x - mean) / std` applied inside the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub arch: ArchConfig,
    /// `[C, H, W]`
    pub input: [usize; 3],
    pub num_classes: usize,
    pub normalization: Normalization,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let [c, h, w] = self.input;
        if c == 0 || h == 0 || w == 0 || self.num_classes < 2 {
            return Err(Error::Config(format!(
                "input {:?} with {} classes",
                self.input, self.num_classes
            )));
        }
        if self.normalization.mean.len() != c || self.normalization.std.len() != c {
            return Err(Error::Config("normalization must have one entry per channel".into()));
        }
        if self.normalization.std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        match &self.arch {
            ArchConfig::Cnn(c) => c.validate(),
            ArchConfig::Vit(v) => v.validate(self.input),
        }
    }
}

/// A named model tensor. Buffers (running statistics) are not trained.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered parameter and buffer storage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<NamedTensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    fn add(&mut self, name: String, tensor: Tensor, trainable: bool) -> usize {
        let i = self.entries.len();
        self.index.insert(name.clone(), i);
        self.entries.push(NamedTensor { name, tensor, trainable });
        i
    }

    pub fn entries(&self) -> &[NamedTensor] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn tensor_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].tensor
    }

    pub(crate) fn tensor(&self, i: usize) -> &Tensor {
        &self.entries[i].tensor
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.numel()).sum()
    }
}

/// Initializer used while laying out a model.
pub(crate) struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: rand_chacha::ChaCha8Rng,
}

impl Builder<'_> {
    fn normal(&mut self, name: impl Into<String>, shape: &[usize], std: f32) -> usize {
        let dist = Normal::new(0.0f32, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(name.into(), Tensor::new(shape.to_vec(), data).unwrap(), true)
    }

    fn constant(&mut self, name: impl Into<String>, shape: &[usize], v: f32, trainable: bool) -> usize {
        self.store.add(name.into(), Tensor::full(shape, v), trainable)
    }
}

/// Forward-pass state: bound parameters and collected batch-norm updates.
pub(crate) struct Ctx<'g, 's> {
    g: &'g Graph,
    store: &'s ParamStore,
    vars: Vec<Var<'g>>,
    train: bool,
    bn_updates: RefCell<Vec<(usize, usize, BatchNormStats)>>,
}

impl<'g, 's> Ctx<'g, 's> {
    fn new(g: &'g Graph, store: &'s ParamStore, train: bool) -> Self {
        let vars = store
            .entries
            .iter()
            .map(|e| {
                if train && e.trainable {
                    g.param(e.tensor.clone())
                } else {
                    g.constant(e.tensor.clone())
                }
            })
            .collect();
        Self {
            g,
            store,
            vars,
            train,
            bn_updates: RefCell::new(Vec::new()),
        }
    }

    fn p(&self, i: usize) -> Var<'g> {
        self.vars[i]
    }

    fn linear(&self, x: Var<'g>, l: &Linear) -> Result<Var<'g>> {
        Ok(x.matmul(self.p(l.w))?.add_bcast(self.p(l.b))?)
    }

    fn conv(&self, x: Var<'g>, c: &Conv) -> Result<Var<'g>> {
        let s = x.shape();
        let b = s[0];
        let ho = (s[2] + 2 * c.padding - c.kernel) / c.stride + 1;
        let wo = (s[3] + 2 * c.padding - c.kernel) / c.stride + 1;
        let y = x.unfold(c.kernel, c.stride, c.padding)?.matmul(self.p(c.w))?;
        Ok(y.reshape(&[b, ho * wo, c.out])?
            .permute(&[0, 2, 1])?
            .reshape(&[b, c.out, ho, wo])?)
    }

    fn batch_norm(&self, x: Var<'g>, bn: &BatchNorm) -> Result<Var<'g>> {
        if self.train {
            let (y, stats) = x.batch_norm(self.p(bn.gamma), self.p(bn.beta), BN_EPS, None)?;
            if let Some(s) = stats {
                self.bn_updates.borrow_mut().push((bn.mean, bn.var, s));
            }
            Ok(y)
        } else {
            let rm = self.store.tensor(bn.mean).data();
            let rv = self.store.tensor(bn.var).data();
            Ok(x.batch_norm(self.p(bn.gamma), self.p(bn.beta), BN_EPS, Some((rm, rv)))?.0)
        }
    }

    fn layer_norm(&self, x: Var<'g>, ln: &LayerNorm) -> Result<Var<'g>> {
        Ok(x.layer_norm(LN_EPS)?
            .mul_bcast(self.p(ln.gamma))?
            .add_bcast(self.p(ln.beta))?)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    w: usize,
    b: usize,
}

impl Linear {
    fn new(bld: &mut Builder<'_>, name: &str, fan_in: usize, fan_out: usize, std: f32) -> Self {
        Self {
            w: bld.normal(format!("{name}.weight"), &[fan_in, fan_out], std),
            b: bld.constant(format!("{name}.bias"), &[fan_out], 0.0, true),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Conv {
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out: usize,
}

impl Conv {
    fn new(bld: &mut Builder<'_>, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize) -> Self {
        let fan_in = cin * kernel * kernel;
        let std = (2.0 / fan_in as f32).sqrt();
        Self {
            w: bld.normal(format!("{name}.weight"), &[fan_in, cout], std),
            kernel,
            stride,
            padding: kernel / 2,
            out: cout,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct BatchNorm {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

impl BatchNorm {
    fn new(bld: &mut Builder<'_>, name: &str, c: usize) -> Self {
        Self {
            gamma: bld.constant(format!("{name}.weight"), &[c], 1.0, true),
            beta: bld.constant(format!("{name}.bias"), &[c], 0.0, true),
            mean: bld.constant(format!("{name}.running_mean"), &[c], 0.0, false),
            var: bld.constant(format!("{name}.running_var"), &[c], 1.0, false),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    gamma: usize,
    beta: usize,
}

impl LayerNorm {
    fn new(bld: &mut Builder<'_>, name: &str, c: usize) -> Self {
        Self {
            gamma: bld.constant(format!("{name}.weight"), &[c], 1.0, true),
            beta: bld.constant(format!("{name}.bias"), &[c], 0.0, true),
        }
    }
}

#[derive(Clone, Debug)]
enum Layout {
    Cnn(cnn::CnnLayout),
    Vit(vit::VitLayout),
}

/// A zoo classifier: configuration, layout and parameters.
#[derive(Clone, Debug)]
pub struct ZooModel {
    config: ModelConfig,
    layout: Layout,
    store: ParamStore,
    feature_dim: usize,
}

/// Loss and parameter gradients of one training batch.
pub struct BatchGradients {
    pub loss: f32,
    /// Indexed like [`ParamStore::entries`]; `None` for buffers.
    pub grads: Vec<Option<Tensor>>,
    bn_updates: Vec<(usize, usize, BatchNormStats)>,
}

impl ZooModel {
    /// Freshly initialized model; initialization is a function of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::default();
        let mut bld = Builder {
            store: &mut store,
            rng: seeded(seed),
        };
        let (layout, feature_dim) = match &config.arch {
            ArchConfig::Cnn(c) => {
                let l = cnn::build(&mut bld, c, config.input[0], config.num_classes);
                (Layout::Cnn(l), c.feature_dim())
            }
            ArchConfig::Vit(v) => {
                let l = vit::build(&mut bld, v, config.input, config.num_classes);
                (Layout::Vit(l), v.embed_dim)
            }
        };
        Ok(Self {
            config,
            layout,
            store,
            feature_dim,
        })
    }

    /// Rebuilds a model from stored tensors, checking names and shapes.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let mut seen = vec![false; model.store.len()];
        for (name, t) in tensors {
            let i = *model
                .store
                .index
                .get(&name)
                .ok_or_else(|| Error::CheckpointContents(format!("unexpected tensor '{name}'")))?;
            let expected = model.store.entries[i].tensor.shape().to_vec();
            if t.shape() != expected.as_slice() {
                return Err(Error::ParamShape {
                    name,
                    found: t.shape().to_vec(),
                    expected,
                });
            }
            if seen[i] {
                return Err(Error::CheckpointContents(format!("duplicate tensor '{name}'")));
            }
            seen[i] = true;
            *model.store.tensor_mut(i) = t;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::CheckpointContents(format!(
                "missing tensor '{}'",
                model.store.entries[i].name
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// The linear head: `z W + b`.
    pub fn head(&self, z: &[f32]) -> Vec<f32> {
        let (w, b) = match &self.layout {
            Layout::Cnn(l) => (l.head.w, l.head.b),
            Layout::Vit(l) => (l.head.w, l.head.b),
        };
        let w = self.store.tensor(w).data();
        let b = self.store.tensor(b).data();
        let k = b.len();
        (0..k)
            .map(|j| {
                let s: f64 = z.iter().enumerate().map(|(i, zi)| *zi as f64 * w[i * k + j] as f64).sum();
                (s + b[j] as f64) as f32
            })
            .collect()
    }

    fn normalize<'g>(&self, g: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        let [c, h, w] = self.config.input;
        let hw = h * w;
        let mut scale = Vec::with_capacity(c * hw);
        let mut shift = Vec::with_capacity(c * hw);
        for ch in 0..c {
            let (m, s) = (self.config.normalization.mean[ch], self.config.normalization.std[ch]);
            scale.extend(std::iter::repeat_n(1.0 / s, hw));
            shift.extend(std::iter::repeat_n(-m / s, hw));
        }
        let scale = g.constant(Tensor::new(vec![c, h, w], scale)?);
        let shift = g.constant(Tensor::new(vec![c, h, w], shift)?);
        Ok(x.mul_bcast(scale)?.add_bcast(shift)?)
    }

    fn forward_graph<'g>(&self, ctx: &Ctx<'g, '_>, x: Var<'g>) -> Result<(Var<'g>, Var<'g>)> {
        let x = self.normalize(ctx.g, x)?;
        let z = match &self.layout {
            Layout::Cnn(l) => cnn::features(l, ctx, x)?,
            Layout::Vit(l) => vit::features(l, ctx, x)?,
        };
        let head = match &self.layout {
            Layout::Cnn(l) => &l.head,
            Layout::Vit(l) => &l.head,
        };
        let logits = ctx.linear(z, head)?;
        Ok((logits, z))
    }

    /// Training-mode loss and gradients for one batch (batch statistics in BN).
    pub fn batch_gradients(&self, images: &Tensor, labels: &[usize]) -> Result<BatchGradients> {
        check_batch(self, images)?;
        let g = Graph::new();
        let ctx = Ctx::new(&g, &self.store, true);
        let x = g.constant(images.clone());
        let (logits, _) = self.forward_graph(&ctx, x)?;
        let loss = logits.cross_entropy(labels)?;
        let loss_value = loss.value().data()[0];
        let grads = g.backward(loss)?;
        let per_param = self
            .store
            .entries
            .iter()
            .zip(&ctx.vars)
            .map(|(e, v)| e.trainable.then(|| grads.wrt(*v)))
            .collect();
        Ok(BatchGradients {
            loss: loss_value,
            grads: per_param,
            bn_updates: ctx.bn_updates.into_inner(),
        })
    }

    /// Folds the batch statistics of a training step into the running estimates.
    pub fn apply_bn_updates(&mut self, grads: &BatchGradients) {
        for (mi, vi, stats) in &grads.bn_updates {
            for (r, s) in self.store.tensor_mut(*mi).data_mut().iter_mut().zip(&stats.mean) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
            }
            for (r, s) in self.store.tensor_mut(*vi).data_mut().iter_mut().zip(&stats.var) {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * s;
            }
        }
    }

    /// Per-sample inference-mode cross-entropy.
    pub fn per_sample_loss(&self, images: &Tensor, labels: &[usize]) -> Result<Vec<f32>> {
        let out = self.forward(images)?;
        let k = self.config.num_classes;
        Ok(out
            .logits
            .data()
            .chunks(k)
            .zip(labels)
            .map(|(row, &y)| {
                let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
                let lse = mx + row.iter().map(|v| (*v as f64 - mx).exp()).sum::<f64>().ln();
                (lse - row[y] as f64) as f32
            })
            .collect())
    }
}

impl Classifier for ZooModel {
    fn input_shape(&self) -> [usize; 3] {
        self.config.input
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn forward(&self, images: &Tensor) -> Result<Forward> {
        check_batch(self, images)?;
        let g = Graph::new();
        let ctx = Ctx::new(&g, &self.store, false);
        let x = g.constant(images.clone());
        let (logits, z) = self.forward_graph(&ctx, x)?;
        Ok(Forward {
            logits: (*logits.value()).clone(),
            features: (*z.value()).clone(),
        })
    }

    fn loss_gradient(&self, images: &Tensor, labels: &[usize]) -> Result<Tensor> {
        check_batch(self, images)?;
        let g = Graph::new();
        let ctx = Ctx::new(&g, &self.store, false);
        let x = g.param(images.clone());
        let (logits, _) = self.forward_graph(&ctx, x)?;
        let loss = logits.cross_entropy(labels)?;
        Ok(g.backward(loss)?.wrt(x))
    }
}
