use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeometry};
use crate::tensor::Tensor;

/// Recorded operation. Parent references are node ids; the recording order
/// is a valid topological order.
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddBcast(usize, usize),
    MulBcast(usize, usize),
    Scale(usize, f32),
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        /// `b` is shared across the batch (a plain `[k, n]` matrix).
        shared_b: bool,
    },
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Relu(usize),
    Gelu(usize),
    Softmax(usize),
    LayerNorm {
        a: usize,
        rstd: Vec<f32>,
    },
    BatchNorm {
        a: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f32>,
        rstd: Vec<f32>,
        train: bool,
    },
    Unfold(usize, ConvGeometry),
    MeanLast(usize),
    Sum(usize),
    Mean(usize),
    CrossEntropy {
        logits: usize,
        labels: Vec<usize>,
        probs: Vec<f32>,
    },
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Tape of recorded operations.
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

/// Batch statistics observed by a training-mode batch normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormStats {
    pub mean: Vec<f32>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f32>,
}

/// Gradients of a scalar loss with respect to every differentiable node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        match self.get(v) {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.id]),
        }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable leaf.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    fn push(&self, t: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        // Nothing to replay for nodes outside the differentiable region.
        let op = if requires_grad { op } else { Op::Leaf };
        nodes.push(Node {
            value: Rc::new(t),
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.graph, self) {
            return Err(TensorError::ForeignVar);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.requires_grad {
            return Err(TensorError::DetachedLoss);
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut out: Vec<Option<Tensor>> = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|d| Tensor::new(shapes[i].clone(), d).expect("grad shape")))
            .collect();
        out.resize(nodes.len(), None);
        Ok(Gradients { grads: out, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], nodes: &[Node], id: usize, contrib: Vec<f32>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    let needs = |id: usize| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.to_vec());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v).collect());
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            if needs(*a) {
                accumulate(grads, nodes, *a, g.iter().zip(bv).map(|(g, b)| g * b).collect());
            }
            if needs(*b) {
                accumulate(grads, nodes, *b, g.iter().zip(av).map(|(g, a)| g * a).collect());
            }
        }
        Op::AddBcast(a, b) => {
            accumulate(grads, nodes, *a, g.to_vec());
            if needs(*b) {
                let n = val(*b).numel();
                let mut gb = vec![0.0f32; n];
                for chunk in g.chunks(n) {
                    gb.iter_mut().zip(chunk).for_each(|(s, v)| *s += v);
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::MulBcast(a, b) => {
            let bv = val(*b).data();
            let n = bv.len();
            if needs(*a) {
                let ga = g
                    .chunks(n)
                    .flat_map(|chunk| chunk.iter().zip(bv).map(|(g, b)| g * b))
                    .collect();
                accumulate(grads, nodes, *a, ga);
            }
            if needs(*b) {
                let av = val(*a).data();
                let mut gb = vec![0.0f32; n];
                for (gc, ac) in g.chunks(n).zip(av.chunks(n)) {
                    for i in 0..n {
                        gb[i] += gc[i] * ac[i];
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Scale(a, s) => accumulate(grads, nodes, *a, g.iter().map(|v| v * s).collect()),
        Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
            shared_b,
        } => {
            let (m, k, n) = (*m, *k, *n);
            let (av, bv) = (val(*a).data(), val(*b).data());
            let b_stride = if *shared_b { 0 } else { k * n };
            if needs(*a) {
                let mut ga = vec![0.0f32; batch * m * k];
                for i in 0..*batch {
                    kernels::gemm(
                        m,
                        n,
                        k,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &bv[i * b_stride..i * b_stride + k * n],
                        true,
                        &mut ga[i * m * k..(i + 1) * m * k],
                        false,
                    );
                }
                accumulate(grads, nodes, *a, ga);
            }
            if needs(*b) {
                let mut gb = vec![0.0f32; if *shared_b { k * n } else { batch * k * n }];
                for i in 0..*batch {
                    let off = if *shared_b { 0 } else { i * k * n };
                    kernels::gemm(
                        k,
                        m,
                        n,
                        &av[i * m * k..(i + 1) * m * k],
                        true,
                        &g[i * m * n..(i + 1) * m * n],
                        false,
                        &mut gb[off..off + k * n],
                        *shared_b,
                    );
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Permute(a, axes) => {
            let (_, back) = kernels::permute(g, node.value.shape(), &kernels::inverse_axes(axes));
            accumulate(grads, nodes, *a, back);
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::Relu(a) => {
            let av = val(*a).data();
            let ga = g
                .iter()
                .zip(av)
                .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Gelu(a) => {
            let av = val(*a).data();
            let ga = g.iter().zip(av).map(|(g, x)| g * kernels::gelu_grad(*x)).collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Softmax(a) => {
            let y = node.value.data();
            let n = *node.value.shape().last().unwrap_or(&1);
            let mut ga = vec![0.0f32; y.len()];
            for ((yr, gr), out) in y.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)) {
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| (*y as f64) * (*g as f64)).sum();
                for i in 0..n {
                    out[i] = yr[i] * (gr[i] - dot as f32);
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::LayerNorm { a, rstd } => {
            let xhat = node.value.data();
            let n = *node.value.shape().last().unwrap_or(&1);
            let mut ga = vec![0.0f32; xhat.len()];
            for (r, ((xr, gr), out)) in xhat.chunks(n).zip(g.chunks(n)).zip(ga.chunks_mut(n)).enumerate() {
                let sg: f64 = gr.iter().map(|v| *v as f64).sum();
                let sgx: f64 = gr.iter().zip(xr).map(|(g, x)| (*g as f64) * (*x as f64)).sum();
                let s = rstd[r] as f64 / n as f64;
                for i in 0..n {
                    out[i] = (s * (n as f64 * gr[i] as f64 - sg - xr[i] as f64 * sgx)) as f32;
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::BatchNorm {
            a,
            gamma,
            beta,
            xhat,
            rstd,
            train,
        } => {
            let shape = val(*a).shape();
            let (bsz, c) = (shape[0], shape[1]);
            let s: usize = shape[2..].iter().product();
            let gv = val(*gamma).data();
            let mut dgamma = vec![0.0f64; c];
            let mut dbeta = vec![0.0f64; c];
            for b in 0..bsz {
                for ch in 0..c {
                    let off = (b * c + ch) * s;
                    for i in off..off + s {
                        dgamma[ch] += g[i] as f64 * xhat[i] as f64;
                        dbeta[ch] += g[i] as f64;
                    }
                }
            }
            if needs(*a) {
                let mut ga = vec![0.0f32; g.len()];
                let m = (bsz * s) as f64;
                for b in 0..bsz {
                    for ch in 0..c {
                        let off = (b * c + ch) * s;
                        let scale = gv[ch] as f64 * rstd[ch] as f64;
                        for i in off..off + s {
                            ga[i] = if *train {
                                (scale / m * (m * g[i] as f64 - dbeta[ch] - xhat[i] as f64 * dgamma[ch]))
                                    as f32
                            } else {
                                (scale * g[i] as f64) as f32
                            };
                        }
                    }
                }
                accumulate(grads, nodes, *a, ga);
            }
            accumulate(grads, nodes, *gamma, dgamma.iter().map(|v| *v as f32).collect());
            accumulate(grads, nodes, *beta, dbeta.iter().map(|v| *v as f32).collect());
        }
        Op::Unfold(a, geom) => accumulate(grads, nodes, *a, kernels::fold(g, geom)),
        Op::MeanLast(a) => {
            let n = *val(*a).shape().last().unwrap_or(&1);
            let inv = 1.0 / n as f32;
            let ga = g.iter().flat_map(|v| std::iter::repeat_n(v * inv, n)).collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sum(a) => {
            let n = val(*a).numel();
            accumulate(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = val(*a).numel();
            accumulate(grads, nodes, *a, vec![g[0] / n as f32; n]);
        }
        Op::CrossEntropy {
            logits,
            labels,
            probs,
        } => {
            let k = val(*logits).shape()[1];
            let scale = g[0] / labels.len() as f32;
            let mut ga: Vec<f32> = probs.iter().map(|p| p * scale).collect();
            for (i, &y) in labels.iter().enumerate() {
                ga[i * k + y] -= scale;
            }
            accumulate(grads, nodes, *logits, ga);
        }
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::InvalidArgument { op, msg: msg.into() }
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    fn check(&self, other: &Var<'g>) -> Result<()> {
        if std::ptr::eq(self.graph, other.graph) {
            Ok(())
        } else {
            Err(TensorError::ForeignVar)
        }
    }

    fn emit(&self, t: Tensor, op: Op, parents: &[usize]) -> Var<'g> {
        let rg = parents.iter().any(|&p| self.graph.requires_grad(p));
        self.graph.push(t, op, rg)
    }

    fn zip_same(
        self,
        other: Var<'g>,
        name: &'static str,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<Var<'g>> {
        self.check(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(mismatch(name, a.shape(), b.shape()));
        }
        let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Tensor::new(a.shape().to_vec(), data)?;
        Ok(self.emit(t, op, &[self.id, other.id]))
    }

    pub fn add(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_same(other, "add", |a, b| a + b, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_same(other, "sub", |a, b| a - b, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.zip_same(other, "mul", |a, b| a * b, Op::Mul(self.id, other.id))
    }

    fn bcast(self, other: Var<'g>, name: &'static str, f: impl Fn(f32, f32) -> f32, op: Op) -> Result<Var<'g>> {
        self.check(&other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb || b.numel() == 0 {
            return Err(mismatch(name, sa, sb));
        }
        let n = b.numel();
        let data = a
            .data()
            .chunks(n)
            .flat_map(|chunk| chunk.iter().zip(b.data()).map(|(x, y)| f(*x, *y)))
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.emit(t, op, &[self.id, other.id]))
    }

    /// `self + other`, where `other`'s shape is a trailing suffix of `self`'s.
    pub fn add_bcast(self, other: Var<'g>) -> Result<Var<'g>> {
        self.bcast(other, "add_bcast", |a, b| a + b, Op::AddBcast(self.id, other.id))
    }

    /// `self * other`, where `other`'s shape is a trailing suffix of `self`'s.
    pub fn mul_bcast(self, other: Var<'g>) -> Result<Var<'g>> {
        self.bcast(other, "mul_bcast", |a, b| a * b, Op::MulBcast(self.id, other.id))
    }

    pub fn scale(self, s: f32) -> Result<Var<'g>> {
        let t = self.value().map(|v| v * s);
        Ok(self.emit(t, Op::Scale(self.id, s), &[self.id]))
    }

    /// Matrix product over the last two axes.
    ///
    /// `[.., m, k] @ [k, n]` applies one matrix to every leading row;
    /// `[b, m, k] @ [b, k, n]` is a batched product.
    pub fn matmul(self, other: Var<'g>) -> Result<Var<'g>> {
        self.check(&other)?;
        let (a, b) = (self.value(), other.value());
        let (sa, sb) = (a.shape(), b.shape());
        if sa.len() < 2 || !(sb.len() == 2 || (sb.len() == 3 && sa.len() == 3)) {
            return Err(mismatch("matmul", sa, sb));
        }
        let k = sa[sa.len() - 1];
        let (batch, m, n, shared_b) = if sb.len() == 2 {
            (1, a.numel() / k.max(1), sb[1], true)
        } else {
            if sa[0] != sb[0] {
                return Err(mismatch("matmul", sa, sb));
            }
            (sa[0], sa[1], sb[2], false)
        };
        if sb[sb.len() - 2] != k {
            return Err(mismatch("matmul", sa, sb));
        }
        let mut out = vec![0.0f32; batch * m * n];
        for i in 0..batch {
            let boff = if shared_b { 0 } else { i * k * n };
            kernels::gemm(
                m,
                k,
                n,
                &a.data()[i * m * k..(i + 1) * m * k],
                false,
                &b.data()[boff..boff + k * n],
                false,
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let t = Tensor::new(shape, out)?;
        let op = Op::MatMul {
            a: self.id,
            b: other.id,
            batch,
            m,
            k,
            n,
            shared_b,
        };
        Ok(self.emit(t, op, &[self.id, other.id]))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let nd = a.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&x| x >= nd || std::mem::replace(&mut seen[x], true)) {
            return Err(mismatch("permute", a.shape(), axes));
        }
        let (shape, data) = kernels::permute(a.data(), a.shape(), axes);
        let t = Tensor::new(shape, data)?;
        Ok(self.emit(t, Op::Permute(self.id, axes.to_vec()), &[self.id]))
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'g>> {
        let nd = self.value().ndim();
        if nd < 2 {
            return Err(invalid("transpose", "need at least two axes"));
        }
        let mut axes: Vec<usize> = (0..nd).collect();
        axes.swap(nd - 2, nd - 1);
        self.permute(&axes)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let t = (*self.value()).clone().reshape(shape)?;
        Ok(self.emit(t, Op::Reshape(self.id), &[self.id]))
    }

    pub fn relu(self) -> Result<Var<'g>> {
        let t = self.value().map(|v| v.max(0.0));
        Ok(self.emit(t, Op::Relu(self.id), &[self.id]))
    }

    pub fn gelu(self) -> Result<Var<'g>> {
        let t = self.value().map(kernels::gelu);
        Ok(self.emit(t, Op::Gelu(self.id), &[self.id]))
    }

    /// Softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'g>> {
        let a = self.value();
        let n = *a.shape().last().ok_or_else(|| invalid("softmax", "scalar input"))?;
        let mut out = a.data().to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().fold(f32::NEG_INFINITY, |m, v| m.max(*v));
            let mut s = 0.0f64;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v as f64;
            }
            let inv = (1.0 / s) as f32;
            row.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.emit(t, Op::Softmax(self.id), &[self.id]))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance.
    /// Affine scale and shift are separate broadcast ops.
    pub fn layer_norm(self, eps: f32) -> Result<Var<'g>> {
        let a = self.value();
        let n = *a.shape().last().ok_or_else(|| invalid("layer_norm", "scalar input"))?;
        let mut out = vec![0.0f32; a.numel()];
        let mut rstd = Vec::with_capacity(a.numel() / n.max(1));
        for (xr, yr) in a.data().chunks(n).zip(out.chunks_mut(n)) {
            let mean = xr.iter().map(|v| *v as f64).sum::<f64>() / n as f64;
            let var = xr.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            let r = 1.0 / (var + eps as f64).sqrt();
            for (x, y) in xr.iter().zip(yr.iter_mut()) {
                *y = ((*x as f64 - mean) * r) as f32;
            }
            rstd.push(r as f32);
        }
        let t = Tensor::new(a.shape().to_vec(), out)?;
        Ok(self.emit(t, Op::LayerNorm { a: self.id, rstd }, &[self.id]))
    }

    /// Batch normalization over axis 1 of a `[B, C, ..]` input.
    ///
    /// With `running = None` batch statistics are used and returned;
    /// otherwise the given `(mean, var)` estimates are applied.
    pub fn batch_norm(
        self,
        gamma: Var<'g>,
        beta: Var<'g>,
        eps: f32,
        running: Option<(&[f32], &[f32])>,
    ) -> Result<(Var<'g>, Option<BatchNormStats>)> {
        self.check(&gamma)?;
        self.check(&beta)?;
        let a = self.value();
        let shape = a.shape();
        if shape.len() < 2 {
            return Err(invalid("batch_norm", format!("need [B, C, ..], got {shape:?}")));
        }
        let (bsz, c) = (shape[0], shape[1]);
        let s: usize = shape[2..].iter().product();
        let (gv, bv) = (gamma.value(), beta.value());
        if gv.shape() != [c] || bv.shape() != [c] {
            return Err(mismatch("batch_norm", shape, gv.shape()));
        }
        let x = a.data();
        let train = running.is_none();
        let (mean, var, stats) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(invalid("batch_norm", "running statistics length"));
                }
                let mean: Vec<f64> = rm.iter().map(|v| *v as f64).collect();
                let var: Vec<f64> = rv.iter().map(|v| *v as f64).collect();
                (mean, var, None)
            }
            None => {
                let m = (bsz * s) as f64;
                if bsz * s < 2 {
                    return Err(invalid("batch_norm", "training mode needs more than one value per channel"));
                }
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for b in 0..bsz {
                    for ch in 0..c {
                        let off = (b * c + ch) * s;
                        mean[ch] += x[off..off + s].iter().map(|v| *v as f64).sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|v| *v /= m);
                for b in 0..bsz {
                    for ch in 0..c {
                        let off = (b * c + ch) * s;
                        var[ch] += x[off..off + s].iter().map(|v| (*v as f64 - mean[ch]).powi(2)).sum::<f64>();
                    }
                }
                var.iter_mut().for_each(|v| *v /= m);
                let stats = BatchNormStats {
                    mean: mean.iter().map(|v| *v as f32).collect(),
                    var: var.iter().map(|v| (*v * m / (m - 1.0)) as f32).collect(),
                };
                (mean, var, Some(stats))
            }
        };
        let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps as f64).sqrt()).collect();
        let mut xhat = vec![0.0f32; x.len()];
        let mut out = vec![0.0f32; x.len()];
        for b in 0..bsz {
            for ch in 0..c {
                let off = (b * c + ch) * s;
                for i in off..off + s {
                    let h = ((x[i] as f64 - mean[ch]) * rstd[ch]) as f32;
                    xhat[i] = h;
                    out[i] = gv.data()[ch] * h + bv.data()[ch];
                }
            }
        }
        let t = Tensor::new(shape.to_vec(), out)?;
        let op = Op::BatchNorm {
            a: self.id,
            gamma: gamma.id,
            beta: beta.id,
            xhat,
            rstd: rstd.iter().map(|v| *v as f32).collect(),
            train,
        };
        Ok((self.emit(t, op, &[self.id, gamma.id, beta.id]), stats))
    }

    /// Extracts sliding `k x k` patches of a `[B, C, H, W]` input into rows of a
    /// `[B * Ho * Wo, C * k * k]` matrix.
    pub fn unfold(self, kernel: usize, stride: usize, padding: usize) -> Result<Var<'g>> {
        let a = self.value();
        let s = a.shape();
        if s.len() != 4 || kernel == 0 || stride == 0 || s[2] + 2 * padding < kernel || s[3] + 2 * padding < kernel
        {
            return Err(invalid(
                "unfold",
                format!("input {s:?} with kernel {kernel}, stride {stride}, padding {padding}"),
            ));
        }
        let geom = ConvGeometry {
            batch: s[0],
            channels: s[1],
            height: s[2],
            width: s[3],
            kernel,
            stride,
            padding,
        };
        let data = kernels::unfold(a.data(), &geom);
        let t = Tensor::new(vec![geom.patches(), geom.patch_len()], data)?;
        Ok(self.emit(t, Op::Unfold(self.id, geom), &[self.id]))
    }

    /// Mean over the last axis, which is removed.
    pub fn mean_last(self) -> Result<Var<'g>> {
        let a = self.value();
        let n = *a.shape().last().ok_or_else(|| invalid("mean_last", "scalar input"))?;
        if n == 0 {
            return Err(invalid("mean_last", "empty axis"));
        }
        let data = a
            .data()
            .chunks(n)
            .map(|r| (r.iter().map(|v| *v as f64).sum::<f64>() / n as f64) as f32)
            .collect();
        let t = Tensor::new(a.shape()[..a.ndim() - 1].to_vec(), data)?;
        Ok(self.emit(t, Op::MeanLast(self.id), &[self.id]))
    }

    pub fn sum(self) -> Result<Var<'g>> {
        let s: f64 = self.value().data().iter().map(|v| *v as f64).sum();
        Ok(self.emit(Tensor::scalar(s as f32), Op::Sum(self.id), &[self.id]))
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let a = self.value();
        if a.numel() == 0 {
            return Err(invalid("mean", "empty tensor"));
        }
        let s: f64 = a.data().iter().map(|v| *v as f64).sum::<f64>() / a.numel() as f64;
        Ok(self.emit(Tensor::scalar(s as f32), Op::Mean(self.id), &[self.id]))
    }

    /// Mean negative log-likelihood of `labels` under softmax of `[B, K]` logits.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'g>> {
        let a = self.value();
        let s = a.shape();
        if s.len() != 2 || s[0] != labels.len() {
            return Err(mismatch("cross_entropy", s, &[labels.len()]));
        }
        let k = s[1];
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(invalid("cross_entropy", format!("label {bad} out of range for {k} classes")));
        }
        let mut probs = vec![0.0f32; a.numel()];
        let mut total = 0.0f64;
        for ((row, p), &y) in a.data().chunks(k).zip(probs.chunks_mut(k)).zip(labels) {
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
            let z: f64 = row.iter().map(|v| (*v as f64 - mx).exp()).sum();
            let lse = mx + z.ln();
            total += lse - row[y] as f64;
            for (pi, v) in p.iter_mut().zip(row) {
                *pi = ((*v as f64 - lse).exp()) as f32;
            }
        }
        let loss = (total / labels.len().max(1) as f64) as f32;
        let op = Op::CrossEntropy {
            logits: self.id,
            labels: labels.to_vec(),
            probs,
        };
        Ok(self.emit(Tensor::scalar(loss), op, &[self.id]))
    }
}
