use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }
}

/// Elementwise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(alpha) => {
                if x > T::zero() {
                    x
                } else {
                    T::lit(alpha) * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => kernels::sigmoid(x),
        }
    }

    /// Derivative given input `x` and output `y`. At zero the negative-side
    /// slope is used.
    fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::LeakyRelu(alpha) => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::lit(alpha)
                }
            }
            Activation::Tanh => T::one() - y * y,
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// Which statistics a batch-norm node normalizes with.
#[derive(Clone, Copy, Debug)]
pub enum NormStats<'a, T> {
    /// Statistics of the current batch.
    Batch { eps: T },
    /// Fixed running statistics.
    Running { mean: &'a [T], var: &'a [T], eps: T },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Arith {
    Add,
    Sub,
    Mul,
    Div,
}

enum Op<T> {
    Leaf,
    Binary { kind: Arith, bidx: Option<Vec<usize>> },
    Affine { scale: T },
    Matmul { m: usize, k: usize, n: usize },
    Linear { rows: usize, inputs: usize, outputs: usize },
    Reduce { index: Vec<usize>, divisor: Option<T> },
    Reshape,
    Conv2d { geom: ConvGeom, batch: usize, out_ch: usize },
    ConvTranspose2d { geom: ConvGeom, batch: usize, in_ch: usize },
    BatchNorm { shape: [usize; 4], xhat: Vec<T>, inv_std: Vec<T>, batch_stats: bool },
    Act(Activation),
    MaxPool { argmax: Vec<usize> },
    Log,
    Clamp { lo: T, hi: T },
    LogSoftmax { rows: usize, cols: usize },
    Softmax { rows: usize, cols: usize },
    Nll { labels: Vec<usize>, cols: usize },
}

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in creation order and differentiates them in reverse.
///
/// Node ids increase monotonically, so every node's inputs precede it and a
/// reverse sweep over ids is a valid topological order. Gradients of leaves
/// created with [`Tape::param`] accumulate across calls to
/// [`Tape::backward`] until [`Tape::zero_grad`].
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf that takes no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), Op::Leaf, false)
    }

    /// Records a leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Vec::new(), Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.index(v).expect("var belongs to this tape")].value
    }

    pub fn try_value(&self, v: Var) -> Result<&Tensor<T>> {
        Ok(&self.nodes[self.index(v)?].value)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.index(v).map(|i| self.nodes[i].requires_grad).unwrap_or(false)
    }

    /// Accumulated gradient of a parameter leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let i = self.index(v).ok()?;
        let g = self.leaf_grads.get(i)?.as_ref()?;
        Tensor::new(self.nodes[i].value.shape(), g.clone()).ok()
    }

    pub fn zero_grad(&mut self) {
        for g in self.leaf_grads.iter_mut() {
            *g = None;
        }
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(Error::DetachedTensor);
        }
        Ok(v.id)
    }

    fn push(&mut self, value: Tensor<T>, parents: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        let id = self.nodes.len();
        self.nodes.push(Node { value, parents, op, requires_grad });
        self.leaf_grads.push(None);
        Var { tape: self.id, id }
    }

    fn record(&mut self, shape: &[usize], data: Vec<T>, parents: Vec<usize>, op: Op<T>) -> Result<Var> {
        let requires_grad = parents.iter().any(|&p| self.nodes[p].requires_grad);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, parents, op, requires_grad))
    }

    fn binary(&mut self, kind: Arith, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let bidx = if av.shape() == bv.shape() { None } else { Some(kernels::broadcast_index(av.shape(), bv.shape())?) };
        let (ad, bd) = (av.data(), bv.data());
        let pick = |i: usize| match &bidx {
            Some(idx) => bd[idx[i]],
            None => bd[i],
        };
        let data: Vec<T> = (0..ad.len())
            .map(|i| match kind {
                Arith::Add => ad[i] + pick(i),
                Arith::Sub => ad[i] - pick(i),
                Arith::Mul => ad[i] * pick(i),
                Arith::Div => ad[i] / pick(i),
            })
            .collect();
        let shape = av.shape().to_vec();
        self.record(&shape, data, vec![ia, ib], Op::Binary { kind, bidx })
    }

    /// `a + b`, with `b` broadcast over trailing axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Arith::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Arith::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Arith::Mul, a, b)
    }

    /// IEEE division; zero divisors propagate infinities or NaN.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Arith::Div, a, b)
    }

    /// `scale·x + shift`
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let data = v.data().iter().map(|&e| scale * e + shift).collect();
        let shape = v.shape().to_vec();
        self.record(&shape, data, vec![i], Op::Affine { scale })
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.affine(x, -T::one(), T::zero())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.index(a)?, self.index(b)?);
        let (av, bv) = (&self.nodes[ia].value, &self.nodes[ib].value);
        let (m, k, n) = match (av.shape(), bv.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => return Err(Error::IncompatibleShapes { lhs: av.shape().to_vec(), rhs: bv.shape().to_vec() }),
        };
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(m, k, n, av.data(), bv.data(), &mut out);
        self.record(&[m, n], out, vec![ia, ib], Op::Matmul { m, k, n })
    }

    /// Dense layer `x·wᵀ + b` for `x[N,in]`, `w[out,in]`, `b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (ix, iw) = (self.index(x)?, self.index(w)?);
        let (xv, wv) = (&self.nodes[ix].value, &self.nodes[iw].value);
        let (rows, inputs, outputs) = match (xv.shape(), wv.shape()) {
            (&[r, i], &[o, i2]) if i == i2 => (r, i, o),
            _ => return Err(Error::ShapeMismatch { expected: wv.shape().to_vec(), got: xv.shape().to_vec() }),
        };
        let mut out = vec![T::zero(); rows * outputs];
        let mut parents = vec![ix, iw];
        if let Some(b) = b {
            let ib = self.index(b)?;
            let bv = &self.nodes[ib].value;
            if bv.shape() != [outputs] {
                return Err(Error::ShapeMismatch { expected: vec![outputs], got: bv.shape().to_vec() });
            }
            for row in out.chunks_mut(outputs) {
                row.copy_from_slice(bv.data());
            }
            parents.push(ib);
        }
        kernels::gemm_nt(rows, inputs, outputs, xv.data(), wv.data(), &mut out);
        self.record(&[rows, outputs], out, parents, Op::Linear { rows, inputs, outputs })
    }

    fn reduce(&mut self, x: Var, axes: Option<&[usize]>, mean: bool) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let rank = v.rank();
        let axes: Vec<usize> = match axes {
            Some(a) => {
                if let Some(&bad) = a.iter().find(|&&ax| ax >= rank) {
                    return Err(Error::AxisOutOfRange { axis: bad, rank });
                }
                a.to_vec()
            }
            None => (0..rank).collect(),
        };
        let mut shape: Vec<usize> = (0..rank).filter(|ax| !axes.contains(ax)).map(|ax| v.shape()[ax]).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        let count: usize = axes.iter().map(|&ax| v.shape()[ax]).product();
        let index = kernels::reduce_index(v.shape(), &axes);
        let mut out = vec![T::zero(); shape.iter().product()];
        for (&o, &e) in index.iter().zip(v.data()) {
            out[o] += e;
        }
        let divisor = mean.then(|| T::lit(count as f64));
        if let Some(d) = divisor {
            for o in out.iter_mut() {
                *o /= d;
            }
        }
        self.record(&shape, out, vec![i], Op::Reduce { index, divisor })
    }

    /// Sum over `axes` (all axes when `None`); reduced axes are dropped.
    pub fn sum(&mut self, x: Var, axes: Option<&[usize]>) -> Result<Var> {
        self.reduce(x, axes, false)
    }

    pub fn mean(&mut self, x: Var, axes: Option<&[usize]>) -> Result<Var> {
        self.reduce(x, axes, true)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let i = self.index(x)?;
        let value = self.nodes[i].value.reshape(shape)?;
        let requires_grad = self.nodes[i].requires_grad;
        Ok(self.push(value, vec![i], Op::Reshape, requires_grad))
    }

    /// Flattens `[N, ...]` to `[N, rest]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.try_value(x)?.shape().to_vec();
        let rest: usize = shape[1..].iter().product();
        self.reshape(x, &[shape[0], rest])
    }

    /// 2-D cross-correlation of `x[N,C,H,W]` with `w[OC,C,kh,kw]` and optional bias `[OC]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: [usize; 2], padding: [usize; 2]) -> Result<Var> {
        let (ix, iw) = (self.index(x)?, self.index(w)?);
        let (xv, wv) = (&self.nodes[ix].value, &self.nodes[iw].value);
        let [n, c, h, wd] = kernels::four(xv.shape())?;
        let [oc, ic, kh, kw] = kernels::four(wv.shape())?;
        if c != ic {
            return Err(Error::ChannelMismatch { expected: ic, got: c });
        }
        let geom = ConvGeom { channels: c, height: h, width: wd, kernel: [kh, kw], stride, padding };
        let (oh, ow) = geom.out_size().ok_or_else(|| Error::OutputTooSmall { op: "conv2d", input: xv.shape().to_vec() })?;
        let mut parents = vec![ix, iw];
        let bias = match b {
            Some(b) => {
                let ib = self.index(b)?;
                if self.nodes[ib].value.shape() != [oc] {
                    return Err(Error::ShapeMismatch { expected: vec![oc], got: self.nodes[ib].value.shape().to_vec() });
                }
                parents.push(ib);
                Some(self.nodes[ib].value.data())
            }
            None => None,
        };
        let out = kernels::conv2d_forward(&geom, n, oc, xv.data(), wv.data(), bias);
        self.record(&[n, oc, oh, ow], out, parents, Op::Conv2d { geom, batch: n, out_ch: oc })
    }

    /// Transposed convolution of `x[N,IC,H,W]` with `w[IC,OC,kh,kw]`; output side
    /// is `(H−1)·s − 2p + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: [usize; 2], padding: [usize; 2]) -> Result<Var> {
        let (ix, iw) = (self.index(x)?, self.index(w)?);
        let (xv, wv) = (&self.nodes[ix].value, &self.nodes[iw].value);
        let [n, c, h, wd] = kernels::four(xv.shape())?;
        let [ic, oc, kh, kw] = kernels::four(wv.shape())?;
        if c != ic {
            return Err(Error::ChannelMismatch { expected: ic, got: c });
        }
        let geom = kernels::conv_transpose_geom(oc, h, wd, [kh, kw], stride, padding)
            .filter(|g| g.out_size() == Some((h, wd)))
            .ok_or_else(|| Error::OutputTooSmall { op: "conv_transpose2d", input: xv.shape().to_vec() })?;
        let mut parents = vec![ix, iw];
        let bias = match b {
            Some(b) => {
                let ib = self.index(b)?;
                if self.nodes[ib].value.shape() != [oc] {
                    return Err(Error::ShapeMismatch { expected: vec![oc], got: self.nodes[ib].value.shape().to_vec() });
                }
                parents.push(ib);
                Some(self.nodes[ib].value.data())
            }
            None => None,
        };
        let out = kernels::conv_transpose2d_forward(&geom, n, ic, xv.data(), wv.data(), bias);
        self.record(&[n, oc, geom.height, geom.width], out, parents, Op::ConvTranspose2d { geom, batch: n, in_ch: ic })
    }

    /// Per-channel normalization of `x[N,C,H,W]` followed by `γ·x̂ + β`.
    ///
    /// With batch statistics, also returns the batch mean and the unbiased
    /// batch variance for running-statistics updates.
    #[allow(clippy::type_complexity)]
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: NormStats<'_, T>) -> Result<(Var, Option<(Vec<T>, Vec<T>)>)> {
        let (ix, ig, ib) = (self.index(x)?, self.index(gamma)?, self.index(beta)?);
        let xv = &self.nodes[ix].value;
        let shape = kernels::four(xv.shape())?;
        let c = shape[1];
        for p in [ig, ib] {
            if self.nodes[p].value.shape() != [c] {
                return Err(Error::ChannelMismatch { expected: self.nodes[p].value.numel(), got: c });
            }
        }
        let (mean, var, eps, batch_stats) = match stats {
            NormStats::Batch { eps } => {
                let count = shape[0] * shape[2] * shape[3];
                if count < 2 {
                    return Err(Error::SingleElementBatch);
                }
                let (m, v) = kernels::channel_stats(shape, xv.data());
                (m, v, eps, true)
            }
            NormStats::Running { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::ChannelMismatch { expected: mean.len(), got: c });
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = kernels::batchnorm_apply(
            shape,
            xv.data(),
            &mean,
            &inv_std,
            self.nodes[ig].value.data(),
            self.nodes[ib].value.data(),
        );
        let batch = batch_stats.then(|| {
            let count = T::lit((shape[0] * shape[2] * shape[3]) as f64);
            let unbiased = var.iter().map(|&v| v * count / (count - T::one())).collect();
            (mean, unbiased)
        });
        let out = self.record(&shape, y, vec![ix, ig, ib], Op::BatchNorm { shape, xhat, inv_std, batch_stats })?;
        Ok((out, batch))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let data = v.data().iter().map(|&e| kind.apply(e)).collect();
        let shape = v.shape().to_vec();
        self.record(&shape, data, vec![i], Op::Act(kind))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    /// Max pooling over `kernel×kernel` windows, no padding.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let i = self.index(x)?;
        let (shape, out, argmax) = kernels::maxpool2d_forward(self.nodes[i].value.shape(), kernel, stride, self.nodes[i].value.data())?;
        self.record(&shape, out, vec![i], Op::MaxPool { argmax })
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let data = v.data().iter().map(|&e| e.ln()).collect();
        let shape = v.shape().to_vec();
        self.record(&shape, data, vec![i], Op::Log)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        let i = self.index(x)?;
        let v = &self.nodes[i].value;
        let data = v.data().iter().map(|&e| e.max(lo).min(hi)).collect();
        let shape = v.shape().to_vec();
        self.record(&shape, data, vec![i], Op::Clamp { lo, hi })
    }

    fn rows_cols(&self, i: usize) -> Result<(usize, usize)> {
        match self.nodes[i].value.shape() {
            &[r, c] => Ok((r, c)),
            s => Err(Error::ShapeMismatch { expected: vec![0, 0], got: s.to_vec() }),
        }
    }

    /// Row-wise log-softmax of `x[N,K]`.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        let (rows, cols) = self.rows_cols(i)?;
        let out = kernels::log_softmax_rows(rows, cols, self.nodes[i].value.data());
        self.record(&[rows, cols], out, vec![i], Op::LogSoftmax { rows, cols })
    }

    /// Row-wise softmax of `x[N,K]`.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let i = self.index(x)?;
        let (rows, cols) = self.rows_cols(i)?;
        let out = kernels::softmax_rows(rows, cols, self.nodes[i].value.data());
        self.record(&[rows, cols], out, vec![i], Op::Softmax { rows, cols })
    }

    /// Mean negative log-likelihood of `labels` under row log-probabilities.
    pub fn nll(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let i = self.index(log_probs)?;
        let (rows, cols) = self.rows_cols(i)?;
        if labels.len() != rows {
            return Err(Error::ShapeMismatch { expected: vec![rows], got: vec![labels.len()] });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::LabelOutOfRange { label: bad, classes: cols });
        }
        let lp = self.nodes[i].value.data();
        let mut total = T::zero();
        for (r, &l) in labels.iter().enumerate() {
            total += lp[r * cols + l];
        }
        let loss = -total / T::lit(rows as f64);
        self.record(&[1], vec![loss], vec![i], Op::Nll { labels: labels.to_vec(), cols })
    }

    /// Propagates d`loss`/d(leaf) into the accumulated gradients of every
    /// parameter leaf reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.index(loss)?;
        if self.nodes[root].value.numel() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[root].value.shape().to_vec()));
        }
        if !self.nodes[root].requires_grad {
            return Err(Error::DetachedTensor);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(vec![T::one()]);
        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Op::Leaf = node.op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(g),
                }
                continue;
            }
            let want: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let parent_grads = self.backward_node(i, &g, &want);
            for ((&p, pg), wanted) in node.parents.iter().zip(parent_grads).zip(want) {
                let Some(pg) = pg else { continue };
                if !wanted {
                    continue;
                }
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[T], want: &[bool]) -> Vec<Option<Vec<T>>> {
        let node = &self.nodes[i];
        let input = |k: usize| &self.nodes[node.parents[k]].value;
        let out = &node.value;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Binary { kind, bidx } => {
                let (a, b) = (input(0).data(), input(1).data());
                let bi = |e: usize| match bidx {
                    Some(idx) => idx[e],
                    None => e,
                };
                let da = want[0].then(|| match kind {
                    Arith::Add | Arith::Sub => g.to_vec(),
                    Arith::Mul => (0..g.len()).map(|e| g[e] * b[bi(e)]).collect(),
                    Arith::Div => (0..g.len()).map(|e| g[e] / b[bi(e)]).collect(),
                });
                let db = want[1].then(|| {
                    let mut db = vec![T::zero(); b.len()];
                    for e in 0..g.len() {
                        let bv = b[bi(e)];
                        db[bi(e)] += match kind {
                            Arith::Add => g[e],
                            Arith::Sub => -g[e],
                            Arith::Mul => g[e] * a[e],
                            Arith::Div => -g[e] * a[e] / (bv * bv),
                        };
                    }
                    db
                });
                vec![da, db]
            }
            Op::Affine { scale } => vec![Some(g.iter().map(|&v| v * *scale).collect())],
            Op::Matmul { m, k, n } => {
                let (a, b) = (input(0).data(), input(1).data());
                let da = want[0].then(|| {
                    let mut da = vec![T::zero(); m * k];
                    kernels::gemm_nt(*m, *n, *k, g, b, &mut da);
                    da
                });
                let db = want[1].then(|| {
                    let mut db = vec![T::zero(); k * n];
                    kernels::gemm_tn(*k, *m, *n, a, g, &mut db);
                    db
                });
                vec![da, db]
            }
            Op::Linear { rows, inputs, outputs } => {
                let (x, w) = (input(0).data(), input(1).data());
                let dx = want[0].then(|| {
                    let mut dx = vec![T::zero(); rows * inputs];
                    kernels::gemm_nn(*rows, *outputs, *inputs, g, w, &mut dx);
                    dx
                });
                let dw = want[1].then(|| {
                    let mut dw = vec![T::zero(); outputs * inputs];
                    kernels::gemm_tn(*outputs, *rows, *inputs, g, x, &mut dw);
                    dw
                });
                let mut res = vec![dx, dw];
                if node.parents.len() == 3 {
                    res.push(want[2].then(|| {
                        let mut db = vec![T::zero(); *outputs];
                        for row in g.chunks(*outputs) {
                            db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                        }
                        db
                    }));
                }
                res
            }
            Op::Reduce { index, divisor } => {
                let scale = divisor.map(|d| T::one() / d).unwrap_or_else(T::one);
                vec![Some(index.iter().map(|&o| g[o] * scale).collect())]
            }
            Op::Reshape => vec![Some(g.to_vec())],
            Op::Conv2d { geom, batch, out_ch } => {
                let need = [want[0], want[1], want.get(2).copied().unwrap_or(false)];
                let grads = kernels::conv2d_backward(geom, *batch, *out_ch, input(0).data(), input(1).data(), g, need);
                let mut res = vec![grads.input, grads.weight];
                if node.parents.len() == 3 {
                    res.push(grads.bias);
                }
                res
            }
            Op::ConvTranspose2d { geom, batch, in_ch } => {
                let need = [want[0], want[1], want.get(2).copied().unwrap_or(false)];
                let grads = kernels::conv_transpose2d_backward(geom, *batch, *in_ch, input(0).data(), input(1).data(), g, need);
                let mut res = vec![grads.input, grads.weight];
                if node.parents.len() == 3 {
                    res.push(grads.bias);
                }
                res
            }
            Op::BatchNorm { shape, xhat, inv_std, batch_stats } => {
                let (dx, dgamma, dbeta) = kernels::batchnorm_backward(*shape, xhat, inv_std, input(1).data(), g, *batch_stats);
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }
            Op::Act(kind) => {
                let (x, y) = (input(0).data(), out.data());
                vec![Some((0..g.len()).map(|e| g[e] * kind.derivative(x[e], y[e])).collect())]
            }
            Op::MaxPool { argmax } => {
                let mut dx = vec![T::zero(); input(0).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    dx[src] += gv;
                }
                vec![Some(dx)]
            }
            Op::Log => {
                let x = input(0).data();
                vec![Some(g.iter().zip(x).map(|(&gv, &xv)| gv / xv).collect())]
            }
            Op::Clamp { lo, hi } => {
                let x = input(0).data();
                vec![Some(g.iter().zip(x).map(|(&gv, &xv)| if xv >= *lo && xv <= *hi { gv } else { T::zero() }).collect())]
            }
            Op::LogSoftmax { rows, cols } => {
                let y = out.data();
                let mut dx = vec![T::zero(); rows * cols];
                for r in 0..*rows {
                    let span = r * cols..(r + 1) * cols;
                    let total = g[span.clone()].iter().copied().sum::<T>();
                    for e in span {
                        dx[e] = g[e] - y[e].exp() * total;
                    }
                }
                vec![Some(dx)]
            }
            Op::Softmax { rows, cols } => {
                let y = out.data();
                let mut dx = vec![T::zero(); rows * cols];
                for r in 0..*rows {
                    let span = r * cols..(r + 1) * cols;
                    let dot = span.clone().map(|e| g[e] * y[e]).sum::<T>();
                    for e in span {
                        dx[e] = y[e] * (g[e] - dot);
                    }
                }
                vec![Some(dx)]
            }
            Op::Nll { labels, cols } => {
                let rows = labels.len();
                let mut dx = vec![T::zero(); rows * cols];
                let scale = -g[0] / T::lit(rows as f64);
                for (r, &l) in labels.iter().enumerate() {
                    dx[r * cols + l] = scale;
                }
                vec![Some(dx)]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_and_broadcast() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
        let m = tape.constant(t(&[2, 3], &[1., 2., 3., 4., 5., 6.]));
        let bias = tape.constant(t(&[3], &[10., 20., 30.]));
        let r = tape.add(m, bias).unwrap();
        assert_eq!(tape.value(r).data(), &[11., 22., 33., 14., 25., 36.]);
        let bad = tape.constant(t(&[2], &[1., 1.]));
        assert!(matches!(tape.add(m, bad), Err(Error::IncompatibleShapes { .. })));
    }

    #[test]
    fn mul_by_ones_is_identity() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[1.5, -2.0, 0.25]));
        let ones = tape.constant(Tensor::ones(&[3]).unwrap());
        let y = tape.mul(x, ones).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn div_by_zero_follows_ieee() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 0.0]));
        let b = tape.constant(t(&[2], &[0.0, 0.0]));
        let c = tape.div(a, b).unwrap();
        assert!(tape.value(c).data()[0].is_infinite());
        assert!(tape.value(c).data()[1].is_nan());
    }

    #[test]
    fn matmul_examples() {
        let mut tape = Tape::new();
        let eye = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
        let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
        let p = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1., 2., 3., 4.]);
        let ones = tape.constant(t(&[2, 1], &[1., 1.]));
        let q = tape.matmul(m, ones).unwrap();
        assert_eq!(tape.value(q).shape(), &[2, 1]);
        assert_eq!(tape.value(q).data(), &[3., 7.]);
        assert!(tape.matmul(ones, m).is_err());
    }

    #[test]
    fn reductions() {
        let mut tape = Tape::new();
        let ones = tape.constant(Tensor::ones(&[4]).unwrap());
        let s = tape.sum(ones, None).unwrap();
        assert_eq!(tape.value(s).data(), &[4.0]);
        let x = tape.constant(t(&[2], &[2., 4.]));
        let m = tape.mean(x, None).unwrap();
        assert_eq!(tape.value(m).data(), &[3.0]);
        let batch = tape.constant(Tensor::ones(&[128, 1]).unwrap());
        let bm = tape.mean(batch, Some(&[0])).unwrap();
        assert_eq!(tape.value(bm).shape(), &[1]);
        assert!(matches!(tape.sum(batch, Some(&[2])), Err(Error::AxisOutOfRange { axis: 2, rank: 2 })));
    }

    #[test]
    fn backward_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[1., 2., 3.]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[2., 4., 6.]);
    }

    #[test]
    fn backward_of_mean() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[4], &[1., 2., 3., 4.]));
        let loss = tape.mean(x, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.25; 4]);
    }

    #[test]
    fn backward_twice_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[0.5, -1.5]));
        let y = tape.tanh(x).unwrap();
        let loss = tape.sum(y, None).unwrap();
        tape.backward(loss).unwrap();
        let once = tape.grad(x).unwrap();
        tape.backward(loss).unwrap();
        let twice = tape.grad(x).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(2.0 * a, *b);
        }
        tape.zero_grad();
        assert!(tape.grad(x).is_none());
    }

    #[test]
    fn broadcast_grad_sums_over_stretched_axes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::ones(&[4, 3]).unwrap());
        let b = tape.param(Tensor::zeros(&[1, 3]).unwrap());
        let s = tape.add(a, b).unwrap();
        let loss = tape.sum(s, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[4., 4., 4.]);
    }

    #[test]
    fn backward_errors() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1., 2.]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
        let c = tape.constant(t(&[1], &[1.]));
        assert!(matches!(tape.backward(c), Err(Error::DetachedTensor)));
        let mut other = Tape::<f64>::new();
        let y = other.param(t(&[1], &[1.]));
        assert!(matches!(tape.backward(y), Err(Error::DetachedTensor)));
    }

    #[test]
    fn activations() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1., 0., 2.]));
        let r = tape.relu(x).unwrap();
        assert_eq!(tape.value(r).data(), &[0., 0., 2.]);
        let z = tape.constant(t(&[1], &[0.]));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        let l = tape.activation(x, Activation::LeakyRelu(0.2)).unwrap();
        assert_eq!(tape.value(l).data(), &[-0.2, 0., 2.]);
    }

    #[test]
    fn kink_subgradients_use_negative_side() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1], &[0.]));
        let r = tape.relu(x).unwrap();
        let l = tape.activation(x, Activation::LeakyRelu(0.2)).unwrap();
        let s = tape.add(r, l).unwrap();
        let loss = tape.sum(s, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.2]);
    }

    #[test]
    fn maxpool_routes_to_first_max() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[1, 1, 2, 2], &[1., 2., 3., 4.]));
        let p = tape.max_pool2d(x, 2, 2).unwrap();
        assert_eq!(tape.value(p).data(), &[4.]);
        let c = tape.param(Tensor::full(&[1, 1, 2, 2], 7.0).unwrap());
        let q = tape.max_pool2d(c, 2, 2).unwrap();
        let loss = tape.sum(q, None).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(c).unwrap().data(), &[1., 0., 0., 0.]);
        let tiny = tape.constant(t(&[1, 1, 1, 1], &[1.]));
        assert!(matches!(tape.max_pool2d(tiny, 2, 2), Err(Error::OutputTooSmall { .. })));
    }
}
