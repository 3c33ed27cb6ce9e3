//! Reverse-mode gradient tape.
//!
//! Every differentiable operation appends a node holding its output value and
//! whatever it needs for the backward pass. [`Tape::backward`] walks the nodes
//! once in reverse order, pushes parameter gradients into the owning
//! [`ParamStore`], and clears the tape.

use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom, PoolGeom};
use super::params::{ParamId, ParamStore};
use crate::error::TensorError;
use crate::tensor::{gemm, MatRef, Real, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed)
}

/// Reference to a value recorded on a specific tape generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape: u64,
}

enum Op<T: Real> {
    Constant,
    Param(ParamId),
    Conv2d { input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom, cols: Vec<T> },
    Linear { input: Var, weight: Var, bias: Option<Var> },
    Relu(Var),
    MaxPool { input: Var, argmax: Vec<usize> },
    AvgPool { input: Var, geom: PoolGeom },
    BatchNorm { input: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Reshape(Var),
    SoftmaxCrossEntropy { logits: Var, probs: Vec<T>, labels: Vec<usize> },
}

struct Node<T: Real> {
    value: Tensor<T>,
    needs_grad: bool,
    op: Op<T>,
}

/// Recorded forward computation owned by a single worker.
pub struct Tape<T: Real> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Batch statistics produced by a training-mode batch normalization.
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, as used for running statistics.
    pub var: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { id: fresh_id(), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every recorded node; outstanding `Var`s become invalid.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.id = fresh_id();
    }

    fn check(&self, v: Var) -> Result<&Node<T>, TensorError> {
        if v.tape != self.id {
            return Err(TensorError::NotTaped);
        }
        self.nodes.get(v.index).ok_or(TensorError::NotTaped)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<T>, TensorError> {
        Ok(&self.check(v)?.value)
    }

    /// Whether gradients can flow from `v` back to some parameter.
    pub fn requires_grad(&self, v: Var) -> Result<bool, TensorError> {
        Ok(self.check(v)?.needs_grad)
    }

    fn push(&mut self, value: Tensor<T>, needs_grad: bool, op: Op<T>) -> Var {
        self.nodes.push(Node { value, needs_grad, op });
        Var { index: self.nodes.len() - 1, tape: self.id }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.index].needs_grad)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, false, Op::Constant)
    }

    /// Snapshots a parameter's current value as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), true, Op::Param(id))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var, TensorError> {
        let x = &self.check(input)?.value;
        let w = &self.check(weight)?.value;
        let [n, c, h, wd] = x.dims4()?;
        let [o, wc, k, k2] = w.dims4()?;
        if wc != c || k != k2 {
            return Err(TensorError::ShapeMismatch { op: "conv2d", left: x.shape().to_vec(), right: w.shape().to_vec() });
        }
        if let Some(b) = bias {
            let bt = &self.check(b)?.value;
            if bt.shape() != [o] {
                return Err(TensorError::ShapeMismatch { op: "conv2d bias", left: w.shape().to_vec(), right: bt.shape().to_vec() });
            }
        }
        let out_height = kernels::conv_output_size("conv2d", h, k, stride, padding)?;
        let out_width = kernels::conv_output_size("conv2d", wd, k, stride, padding)?;
        let geom = ConvGeom {
            batch: n,
            in_channels: c,
            height: h,
            width: wd,
            out_channels: o,
            kernel: k,
            stride,
            padding,
            out_height,
            out_width,
        };
        let bias_data = bias.map(|b| self.nodes[b.index].value.data());
        let (out, cols) = kernels::conv2d_forward(x.data(), w.data(), bias_data, &geom);
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let needs = self.any_grad(&deps);
        let value = Tensor::new(vec![n, o, out_height, out_width], out)?;
        Ok(self.push(value, needs, Op::Conv2d { input, weight, bias, geom, cols }))
    }

    /// `input (N×F) · weight (F×C) + bias (C)`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var, TensorError> {
        let x = &self.check(input)?.value;
        let w = &self.check(weight)?.value;
        let [n, f] = x.dims2()?;
        let [wf, c] = w.dims2()?;
        if wf != f {
            return Err(TensorError::ShapeMismatch { op: "linear", left: x.shape().to_vec(), right: w.shape().to_vec() });
        }
        let mut out = vec![T::zero(); n * c];
        gemm(MatRef::new(x.data(), n, f), MatRef::new(w.data(), f, c), &mut out, false);
        if let Some(b) = bias {
            let bt = &self.check(b)?.value;
            if bt.shape() != [c] {
                return Err(TensorError::ShapeMismatch { op: "linear bias", left: w.shape().to_vec(), right: bt.shape().to_vec() });
            }
            for row in out.chunks_mut(c) {
                for (v, &bv) in row.iter_mut().zip(bt.data()) {
                    *v += bv;
                }
            }
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let needs = self.any_grad(&deps);
        Ok(self.push(Tensor::new(vec![n, c], out)?, needs, Op::Linear { input, weight, bias }))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var, TensorError> {
        let node = self.check(input)?;
        let value = node.value.map(|v| if v > T::zero() { v } else { T::zero() });
        let needs = node.needs_grad;
        Ok(self.push(value, needs, Op::Relu(input)))
    }

    fn pool_geom(&self, input: Var, kernel: usize, stride: usize, op: &'static str) -> Result<PoolGeom, TensorError> {
        let [n, c, h, w] = self.check(input)?.value.dims4()?;
        Ok(PoolGeom {
            batch: n,
            channels: c,
            height: h,
            width: w,
            kernel,
            stride,
            out_height: kernels::pool_output_size(op, h, kernel, stride)?,
            out_width: kernels::pool_output_size(op, w, kernel, stride)?,
        })
    }

    pub fn maxpool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var, TensorError> {
        let g = self.pool_geom(input, kernel, stride, "maxpool2d")?;
        let node = &self.nodes[input.index];
        let (out, argmax) = kernels::maxpool_forward(node.value.data(), &g);
        let needs = node.needs_grad;
        let value = Tensor::new(vec![g.batch, g.channels, g.out_height, g.out_width], out)?;
        Ok(self.push(value, needs, Op::MaxPool { input, argmax }))
    }

    pub fn avgpool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var, TensorError> {
        let geom = self.pool_geom(input, kernel, stride, "avgpool2d")?;
        let node = &self.nodes[input.index];
        let out = kernels::avgpool_forward(node.value.data(), &geom);
        let needs = node.needs_grad;
        let value = Tensor::new(vec![geom.batch, geom.channels, geom.out_height, geom.out_width], out)?;
        Ok(self.push(value, needs, Op::AvgPool { input, geom }))
    }

    fn bn_check(&self, input: Var, gamma: Var, beta: Var) -> Result<[usize; 4], TensorError> {
        let dims = self.check(input)?.value.dims4()?;
        for p in [gamma, beta] {
            let t = &self.check(p)?.value;
            if t.shape() != [dims[1]] {
                return Err(TensorError::ShapeMismatch { op: "batchnorm2d", left: vec![dims[1]], right: t.shape().to_vec() });
            }
        }
        Ok(dims)
    }

    fn bn_apply(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        train: bool,
    ) -> Result<Var, TensorError> {
        let [n, c, h, w] = self.nodes[input.index].value.dims4()?;
        let hw = h * w;
        let x = self.nodes[input.index].value.data();
        let gm = self.nodes[gamma.index].value.data();
        let bt = self.nodes[beta.index].value.data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (x[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = xh;
                    out[i] = gm[ch] * xh + bt[ch];
                }
            }
        }
        let needs = self.any_grad(&[input, gamma, beta]);
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push(value, needs, Op::BatchNorm { input, gamma, beta, xhat, inv_std, train }))
    }

    /// Training-mode batch normalization over N, H, W. Returns the batch
    /// statistics so the caller can update its running averages.
    pub fn batchnorm2d_train(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats<T>), TensorError> {
        let [n, c, h, w] = self.bn_check(input, gamma, beta)?;
        let m = n * h * w;
        let (mean, var) = kernels::channel_stats(self.nodes[input.index].value.data(), n, c, h * w);
        let eps_t = T::from_f64(eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        let out = self.bn_apply(input, gamma, beta, &mean, inv_std, true)?;
        let unbias = if m > 1 { T::from_f64(m as f64 / (m - 1) as f64) } else { T::one() };
        let var = var.into_iter().map(|v| v * unbias).collect();
        Ok((out, BatchStats { mean, var }))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batchnorm2d_eval(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: f64,
    ) -> Result<Var, TensorError> {
        let [_, c, _, _] = self.bn_check(input, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(TensorError::ShapeMismatch { op: "batchnorm2d stats", left: vec![c], right: vec![running_mean.len()] });
        }
        let eps_t = T::from_f64(eps);
        let inv_std = running_var.iter().map(|&v| T::one() / (v + eps_t).sqrt()).collect();
        self.bn_apply(input, gamma, beta, running_mean, inv_std, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let (ta, tb) = (&self.check(a)?.value, &self.check(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch { op, left: ta.shape().to_vec(), right: tb.shape().to_vec() });
        }
        Ok(())
    }

    /// Elementwise sum; used for residual connections.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let (ta, tb) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, needs, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let (ta, tb) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        let needs = self.any_grad(&[a, b]);
        Ok(self.push(value, needs, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let node = self.check(a)?;
        let f = T::from_f64(factor);
        let value = node.value.map(|v| v * f);
        let needs = node.needs_grad;
        Ok(self.push(value, needs, Op::Scale(a, f)))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let node = self.check(a)?;
        let value = Tensor::scalar(node.value.sum());
        let needs = node.needs_grad;
        Ok(self.push(value, needs, Op::Sum(a)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let node = self.check(a)?;
        let value = node.value.reshape(shape)?;
        let needs = node.needs_grad;
        Ok(self.push(value, needs, Op::Reshape(a)))
    }

    /// `N×…` to `N×F`.
    pub fn flatten(&mut self, a: Var) -> Result<Var, TensorError> {
        let shape = self.check(a)?.value.shape().to_vec();
        let n = shape[0];
        let f = shape[1..].iter().product::<usize>().max(1);
        self.reshape(a, &[n, f])
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let node = self.check(logits)?;
        let [n, c] = node.value.dims2()?;
        if labels.is_empty() {
            return Err(TensorError::EmptyBatch);
        }
        if labels.len() != n {
            return Err(TensorError::ShapeMismatch { op: "softmax_cross_entropy", left: vec![n, c], right: vec![labels.len()] });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::LabelOutOfRange { label: bad, classes: c });
        }
        let z = node.value.data();
        let mut probs = vec![T::zero(); n * c];
        let mut loss = 0.0f64;
        for i in 0..n {
            let row = &z[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut denom = T::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - mx).exp();
                probs[i * c + j] = e;
                denom += e;
            }
            for p in &mut probs[i * c..(i + 1) * c] {
                *p = *p / denom;
            }
            let log_p = (row[labels[i]] - mx) - denom.ln();
            loss -= log_p.as_f64();
        }
        let needs = node.needs_grad;
        let value = Tensor::scalar(T::from_f64(loss / n as f64));
        Ok(self.push(value, needs, Op::SoftmaxCrossEntropy { logits, probs, labels: labels.to_vec() }))
    }

    /// Accumulates `d loss / d param` into `store` for every parameter the loss
    /// depends on, then clears the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<(), TensorError> {
        let node = self.check(loss)?;
        if node.value.len() != 1 {
            return Err(TensorError::NotScalar { shape: node.value.shape().to_vec() });
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.index + 1, || None);
        grads[loss.index] = Some(vec![T::one()]);

        let nodes = std::mem::take(&mut self.nodes);
        for idx in (0..=loss.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let wants = |v: &Var| nodes[v.index].needs_grad;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::Conv2d { input, weight, bias, geom, cols } => {
                    let (dx, dw, db) = kernels::conv2d_backward(
                        &g,
                        nodes[input.index].value.data(),
                        cols,
                        nodes[weight.index].value.data(),
                        geom,
                        wants(input),
                        wants(weight),
                        bias.as_ref().is_some_and(wants),
                    );
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Linear { input, weight, bias } => {
                    let x = &nodes[input.index].value;
                    let w = &nodes[weight.index].value;
                    let (n, f) = (x.shape()[0], x.shape()[1]);
                    let c = w.shape()[1];
                    if wants(weight) {
                        let mut dw = vec![T::zero(); f * c];
                        gemm(MatRef::new(x.data(), n, f).t(), MatRef::new(&g, n, c), &mut dw, false);
                        accumulate(&mut grads, *weight, Some(dw));
                    }
                    if wants(input) {
                        let mut dx = vec![T::zero(); n * f];
                        gemm(MatRef::new(&g, n, c), MatRef::new(w.data(), f, c).t(), &mut dx, false);
                        accumulate(&mut grads, *input, Some(dx));
                    }
                    if let Some(b) = bias.filter(wants) {
                        let mut db = vec![T::zero(); c];
                        for row in g.chunks(c) {
                            for (a, &v) in db.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        accumulate(&mut grads, b, Some(db));
                    }
                }
                Op::Relu(input) => {
                    let y = node.value.data();
                    let dx = g.iter().zip(y).map(|(&d, &v)| if v > T::zero() { d } else { T::zero() }).collect();
                    accumulate(&mut grads, *input, Some(dx));
                }
                Op::MaxPool { input, argmax } => {
                    let mut dx = vec![T::zero(); nodes[input.index].value.len()];
                    for (&src, &d) in argmax.iter().zip(&g) {
                        dx[src] += d;
                    }
                    accumulate(&mut grads, *input, Some(dx));
                }
                Op::AvgPool { input, geom } => {
                    accumulate(&mut grads, *input, Some(kernels::avgpool_backward(&g, geom)));
                }
                Op::BatchNorm { input, gamma, beta, xhat, inv_std, train } => {
                    let [n, c, h, w] = node.value.dims4()?;
                    let hw = h * w;
                    let gm = nodes[gamma.index].value.data();
                    let mut dgamma = vec![T::zero(); c];
                    let mut dbeta = vec![T::zero(); c];
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * hw;
                            for i in off..off + hw {
                                dgamma[ch] += g[i] * xhat[i];
                                dbeta[ch] += g[i];
                            }
                        }
                    }
                    if wants(input) {
                        let mut dx = vec![T::zero(); g.len()];
                        let m = T::from_f64((n * hw) as f64);
                        for b in 0..n {
                            for ch in 0..c {
                                let off = (b * c + ch) * hw;
                                for i in off..off + hw {
                                    dx[i] = if *train {
                                        // dxhat = g·γ; dx = inv_std/m · (m·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
                                        gm[ch] * inv_std[ch] / m * (m * g[i] - dbeta[ch] - xhat[i] * dgamma[ch])
                                    } else {
                                        g[i] * gm[ch] * inv_std[ch]
                                    };
                                }
                            }
                        }
                        accumulate(&mut grads, *input, Some(dx));
                    }
                    if wants(gamma) {
                        accumulate(&mut grads, *gamma, Some(dgamma));
                    }
                    if wants(beta) {
                        accumulate(&mut grads, *beta, Some(dbeta));
                    }
                }
                Op::Add(a, b) => {
                    if wants(a) {
                        accumulate(&mut grads, *a, Some(g.clone()));
                    }
                    if wants(b) {
                        accumulate(&mut grads, *b, Some(g));
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[a.index].value.data(), nodes[b.index].value.data());
                    if wants(a) {
                        accumulate(&mut grads, *a, Some(g.iter().zip(vb).map(|(&d, &y)| d * y).collect()));
                    }
                    if wants(b) {
                        accumulate(&mut grads, *b, Some(g.iter().zip(va).map(|(&d, &x)| d * x).collect()));
                    }
                }
                Op::Scale(a, f) => {
                    accumulate(&mut grads, *a, Some(g.iter().map(|&d| d * *f).collect()));
                }
                Op::Sum(a) => {
                    let n = nodes[a.index].value.len();
                    accumulate(&mut grads, *a, Some(vec![g[0]; n]));
                }
                Op::Reshape(a) => accumulate(&mut grads, *a, Some(g)),
                Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                    let c = probs.len() / labels.len();
                    let scale = g[0] / T::from_f64(labels.len() as f64);
                    let mut dz: Vec<T> = probs.iter().map(|&p| p * scale).collect();
                    for (i, &l) in labels.iter().enumerate() {
                        dz[i * c + l] -= scale;
                    }
                    accumulate(&mut grads, *logits, Some(dz));
                }
            }
        }
        self.clear();
        Ok(())
    }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], target: Var, g: Option<Vec<T>>) {
    let Some(g) = g else { return };
    match &mut grads[target.index] {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn identity_kernel_conv() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let w = tape.constant(Tensor::full(&[1, 1, 1, 1], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
        let out = tape.value(y).unwrap();
        assert_eq!(out.shape(), [1, 1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn diagonal_kernel_dot_product() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let w = tape.constant(t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), [5.0]);
    }

    #[test]
    fn conv_shape_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
        let err = tape.conv2d(x, w, None, 1, 1).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }), "{err}");
        let w2 = tape.constant(Tensor::zeros(&[1, 2, 5, 5]));
        let err = tape.conv2d(x, w2, None, 1, 0).unwrap_err();
        assert!(matches!(err, TensorError::OutputSize { .. }), "{err}");
    }

    #[test]
    fn linear_hand_product() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = tape.constant(t(&[2, 2], &[1.0, 1.0, 1.0, -1.0]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), [3.0, -1.0]);

        let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = tape.linear(x, eye, Some(b)).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), [1.0, 2.0]);
    }

    #[test]
    fn relu_and_maxpool() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[-1.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), [0.0, 2.0]);
        let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let y = tape.maxpool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).unwrap().data(), [4.0]);
    }

    #[test]
    fn uniform_logits_give_ln_classes() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[3, 10]));
        let loss = tape.softmax_cross_entropy(z, &[0, 4, 9]).unwrap();
        assert!((tape.value(loss).unwrap().data()[0] - 10f64.ln()).abs() < 1e-12);
        assert!(matches!(tape.softmax_cross_entropy(z, &[0, 10, 1]), Err(TensorError::LabelOutOfRange { .. })));
        assert!(matches!(tape.softmax_cross_entropy(z, &[]), Err(TensorError::EmptyBatch)));
    }

    #[test]
    fn sum_of_product_gradient_is_input() {
        let mut store = ParamStore::new();
        let wid = store.add("w", t(&[3], &[0.5, -1.0, 2.0]));
        let other = store.add("unused", t(&[2], &[1.0, 1.0]));
        let mut tape = Tape::new();
        let w = tape.param(&store, wid);
        let x = tape.constant(t(&[3], &[4.0, 5.0, 6.0]));
        let prod = tape.mul(w, x).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(wid).grad.data(), [4.0, 5.0, 6.0]);
        assert_eq!(store.get(other).grad.data(), [0.0, 0.0]);
        assert!(tape.is_empty());
    }

    #[test]
    fn backward_rejects_foreign_or_stale_vars() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::scalar(1.0));
        let mut a = Tape::new();
        let mut b = Tape::new();
        let w = a.param(&store, id);
        let loss = a.sum(w).unwrap();
        assert_eq!(b.backward(loss, &mut store), Err(TensorError::NotTaped));
        a.backward(loss, &mut store).unwrap();
        // tape was cleared; the loss var is stale
        assert_eq!(a.backward(loss, &mut store), Err(TensorError::NotTaped));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::zeros(&[2]));
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        assert!(matches!(tape.backward(w, &mut store), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn constants_carry_no_gradient_path() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let y = tape.relu(x).unwrap();
        assert!(!tape.requires_grad(y).unwrap());
    }
}
