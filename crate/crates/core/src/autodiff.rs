//! Define-by-run reverse-mode differentiation over dense tensors.
//!
//! Every op appends one node to the [`Tape`] holding its forward value, its
//! parents and whatever it saved for the backward rule. Nodes are created in
//! topological order, so [`Tape::backward`] walks them in reverse and every
//! node's gradient is complete before its rule fires.
//!
//! Broadcasting is deliberately narrow: equal shapes, scalar-with-tensor, and
//! the explicit per-row forms [`Tape::add_row`] / [`Tape::mul_row`].

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Per-latent-dimension binary mask selecting the partition whose gradient
/// is allowed through [`Tape::gate_gradient`].
#[derive(Clone, Debug, PartialEq)]
pub struct GateMask {
    mask: Vec<bool>,
    active_partition: usize,
}

impl GateMask {
    /// Mask for `active_partition` of the partition layout `boundaries`
    /// (ascending, first 0, last = latent dimensionality).
    pub fn for_partition(boundaries: &[usize], active_partition: usize) -> Result<Self> {
        if boundaries.len() < 2 {
            return Err(Error::Contract("partition boundaries need at least two entries".into()));
        }
        if active_partition + 1 >= boundaries.len() {
            return Err(Error::Contract(format!(
                "partition {active_partition} out of range for {} partitions",
                boundaries.len() - 1
            )));
        }
        let m = *boundaries.last().unwrap();
        let (lo, hi) = (boundaries[active_partition], boundaries[active_partition + 1]);
        Ok(Self {
            mask: (0..m).map(|d| d >= lo && d < hi).collect(),
            active_partition,
        })
    }

    /// Mask letting every dimension through (single partition covering all).
    pub fn all_ones(m: usize) -> Self {
        Self {
            mask: vec![true; m],
            active_partition: 0,
        }
    }

    pub fn from_bits(mask: Vec<bool>, active_partition: usize) -> Self {
        Self {
            mask,
            active_partition,
        }
    }

    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn active_partition(&self) -> usize {
        self.active_partition
    }

    pub fn is_active(&self, dim: usize) -> bool {
        self.mask[dim]
    }

    pub fn count_active(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.mask
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Relu,
    Sigmoid,
    Exp,
    Log,
    Sqrt,
    Square,
    Recip,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// Batch-norm statistics saved for the backward rule.
#[derive(Debug)]
struct NormSaved<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Gradients flow through the batch mean and variance.
    batch_stats: bool,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Unary(Unary, Var),
    Clamp(Var, T, T),
    Sum(Var),
    MeanRows(Var),
    Transpose(Var),
    Gate(Var, Vec<bool>),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        saved: NormSaved<T>,
    },
    Bce {
        pred: Var,
        target: Vec<T>,
        eps: T,
    },
    PairwiseSqDist(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Result of [`Tape::backward`]: one optional gradient per node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Dimension(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable input; gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            false,
            T::zero(),
            &mut out,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    /// Elementwise `add`/`sub`/`mul` on equal shapes, or with one scalar operand.
    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let f = |x: T, y: T| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
        };
        let out = if va.shape() == vb.shape() {
            let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::new(va.shape().to_vec(), data)?
        } else if vb.is_scalar() {
            let y = vb.item();
            va.map(|x| f(x, y))
        } else if va.is_scalar() {
            let x = va.item();
            vb.map(|y| f(x, y))
        } else {
            return Err(shape_err("elementwise", va.shape(), vb.shape()));
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn row_operands(&self, op: &str, x: Var, row: Var) -> Result<(usize, usize)> {
        let (b, f) = self.value(x).dims2()?;
        let rv = self.value(row);
        if rv.numel() != f || rv.shape().iter().filter(|&&d| d != 1).count() > 1 {
            return Err(shape_err(op, self.value(x).shape(), rv.shape()));
        }
        Ok((b, f))
    }

    /// `x[B×F] + row[F]`, the row broadcast over the batch.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, f) = self.row_operands("add_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(f) {
            for (o, &b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::AddRow(x, row), rg))
    }

    /// `x[B×F] ⊙ row[F]`, the row broadcast over the batch.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, f) = self.row_operands("mul_row", x, row)?;
        let r = self.value(row).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(f) {
            for (o, &b) in chunk.iter_mut().zip(&r) {
                *o *= b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(out, Op::MulRow(x, row), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v * c);
        let rg = self.rg(x);
        self.push(out, Op::Scale(x, c), rg)
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).map(|v| v + c);
        let rg = self.rg(x);
        self.push(out, Op::AddScalar(x), rg)
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let v = self.value(x);
        match kind {
            Unary::Log if v.data().iter().any(|&a| a.is_nan() || a <= T::zero()) => {
                return Err(Error::Domain("log of a non-positive value".into()));
            }
            Unary::Sqrt if v.data().iter().any(|&a| a.is_nan() || a <= T::zero()) => {
                return Err(Error::Domain("sqrt of a non-positive value".into()));
            }
            Unary::Recip if v.data().iter().any(|&a| a == T::zero()) => {
                return Err(Error::Domain("reciprocal of zero".into()));
            }
            _ => {}
        }
        let out = v.map(|a| match kind {
            Unary::Relu => a.max(T::zero()),
            Unary::Sigmoid => T::one() / (T::one() + (-a).exp()),
            Unary::Exp => a.exp(),
            Unary::Log => a.ln(),
            Unary::Sqrt => a.sqrt(),
            Unary::Square => a * a,
            Unary::Recip => a.recip(),
        });
        let rg = self.rg(x);
        Ok(self.push(out, Op::Unary(kind, x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x).expect("relu is total")
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x).expect("sigmoid is total")
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(Unary::Exp, x).expect("exp is total")
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(Unary::Square, x).expect("square is total")
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sqrt, x)
    }

    pub fn recip(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Recip, x)
    }

    /// Clamp into `[lo, hi]`; gradient passes only strictly inside the range.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|a| a.max(lo).min(hi));
        let rg = self.rg(x);
        self.push(out, Op::Clamp(x, lo, hi), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Column means of a `B×F` matrix, returned as `1×F`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (b, f) = self.value(x).dims2()?;
        if b == 0 {
            return Err(Error::Contract("mean over an empty batch".into()));
        }
        let mut acc = vec![T::zero(); f];
        for row in self.value(x).data().chunks(f) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let inv = T::one() / T::from_usize(b).unwrap();
        acc.iter_mut().for_each(|a| *a *= inv);
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![1, f], acc)?, Op::MeanRows(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x), rg))
    }

    /// Identity on the forward pass; on the backward pass the incoming
    /// gradient is multiplied by `mask` along the last dimension.
    pub fn gate_gradient(&mut self, z: Var, mask: &GateMask) -> Result<Var> {
        let v = self.value(z);
        let m = *v.shape().last().unwrap_or(&0);
        if v.rank() == 0 || m != mask.len() {
            return Err(Error::Dimension(format!(
                "gate mask of length {} does not match latent width of shape {:?}",
                mask.len(),
                v.shape()
            )));
        }
        let out = v.clone();
        let rg = self.rg(z);
        Ok(self.push(out, Op::Gate(z, mask.bits().to_vec()), rg))
    }

    /// Per-feature normalisation of a `B×F` batch followed by `γ·x̂ + β`.
    ///
    /// With `stats = None` the batch mean and biased variance are used and
    /// the backward rule differentiates through them. With
    /// `stats = Some((mean, var))` those fixed statistics are used instead.
    /// Returns the node and the batch `(mean, biased var)` it computed.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        stats: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Vec<f64>, Vec<f64>)> {
        let (b, f) = self.value(x).dims2()?;
        for p in [gamma, beta] {
            if self.value(p).numel() != f {
                return Err(shape_err("batch_norm", self.value(x).shape(), self.value(p).shape()));
            }
        }
        let xs = self.value(x).data();
        let (mean, var) = match stats {
            Some((m, v)) => {
                if m.len() != f || v.len() != f {
                    return Err(Error::Dimension("running statistics width mismatch".into()));
                }
                (m.to_vec(), v.to_vec())
            }
            None => {
                if b < 2 {
                    return Err(Error::Contract(
                        "batch normalisation in train mode needs at least 2 rows".into(),
                    ));
                }
                let mut mean = vec![0.0f64; f];
                for row in xs.chunks(f) {
                    for (m, v) in mean.iter_mut().zip(row) {
                        *m += v.to_f64().unwrap();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= b as f64);
                let mut var = vec![0.0f64; f];
                for row in xs.chunks(f) {
                    for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                        let d = v.to_f64().unwrap() - m;
                        *s += d * d;
                    }
                }
                var.iter_mut().for_each(|s| *s /= b as f64);
                (mean, var)
            }
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::lit(1.0 / (v + eps).sqrt())).collect();
        let mean_t: Vec<T> = mean.iter().map(|&m| T::lit(m)).collect();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = Vec::with_capacity(b * f);
        let mut out = Vec::with_capacity(b * f);
        for row in xs.chunks(f) {
            for j in 0..f {
                let h = (row[j] - mean_t[j]) * inv_std[j];
                xhat.push(h);
                out.push(h * g[j] + bt[j]);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let node = self.push(
            Tensor::new(vec![b, f], out)?,
            Op::Norm {
                x,
                gamma,
                beta,
                saved: NormSaved {
                    xhat,
                    inv_std,
                    batch_stats: stats.is_none(),
                },
            },
            rg,
        );
        Ok((node, mean, var))
    }

    /// Binary cross-entropy summed over features and averaged over rows:
    /// `−(1/B)·Σ [t·ln p + (1−t)·ln(1−p)]` with `p` clamped to `[eps, 1−eps]`.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>, eps: T) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(shape_err("bce", p.shape(), target.shape()));
        }
        let (b, _) = p.dims2()?;
        let one = T::one();
        let mut total = T::zero();
        for (&x, &t) in p.data().iter().zip(target.data()) {
            let x = x.max(eps).min(one - eps);
            total += t * x.ln() + (one - t) * (one - x).ln();
        }
        let loss = -total / T::from_usize(b.max(1)).unwrap();
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                pred,
                target: target.data().to_vec(),
                eps,
            },
            rg,
        ))
    }

    /// `D[i][j] = ‖a_i − b_j‖²` for `a: N×M`, `b: K×M`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, m) = self.value(a).dims2()?;
        let (k, m2) = self.value(b).dims2()?;
        if m != m2 {
            return Err(shape_err("pairwise_sq_dist", self.value(a).shape(), self.value(b).shape()));
        }
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); n * k];
        for i in 0..n {
            let ai = &va[i * m..(i + 1) * m];
            for j in 0..k {
                let bj = &vb[j * m..(j + 1) * m];
                out[i * k + j] = ai.iter().zip(bj).map(|(&x, &y)| (x - y) * (x - y)).sum();
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, k], out)?, Op::PairwiseSqDist(a, b), rg))
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.apply_rule(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += *d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    /// Reduces a gradient of the broadcast result back onto a scalar operand.
    fn reduce_to(&self, operand: Var, delta: Tensor<T>) -> Tensor<T> {
        let shape = self.value(operand).shape();
        if delta.shape() == shape {
            delta
        } else {
            let total = delta.data().iter().copied().sum();
            Tensor::full(shape, total)
        }
    }

    fn apply_rule(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                if self.rg(*a) {
                    let mut da = vec![T::zero(); m * k];
                    T::gemm(m, n, k, g.data(), false, self.value(*b).data(), true, T::zero(), &mut da);
                    self.accumulate(grads, *a, Tensor::new(vec![m, k], da)?);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * n];
                    T::gemm(k, m, n, self.value(*a).data(), true, g.data(), false, T::zero(), &mut db);
                    self.accumulate(grads, *b, Tensor::new(vec![k, n], db)?);
                }
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let bcast = |t: &Tensor<T>, i: usize| {
                    if t.numel() == 1 {
                        t.item()
                    } else {
                        t.data()[i]
                    }
                };
                if self.rg(*a) {
                    let d: Vec<T> = (0..g.numel())
                        .map(|i| match kind {
                            Binary::Add | Binary::Sub => g.data()[i],
                            Binary::Mul => g.data()[i] * bcast(vb, i),
                        })
                        .collect();
                    let d = self.reduce_to(*a, Tensor::new(g.shape().to_vec(), d)?);
                    self.accumulate(grads, *a, d);
                }
                if self.rg(*b) {
                    let d: Vec<T> = (0..g.numel())
                        .map(|i| match kind {
                            Binary::Add => g.data()[i],
                            Binary::Sub => -g.data()[i],
                            Binary::Mul => g.data()[i] * bcast(va, i),
                        })
                        .collect();
                    let d = self.reduce_to(*b, Tensor::new(g.shape().to_vec(), d)?);
                    self.accumulate(grads, *b, d);
                }
            }
            Op::AddRow(x, row) => {
                let f = self.value(*row).numel();
                if self.rg(*x) {
                    self.accumulate(grads, *x, g.clone());
                }
                if self.rg(*row) {
                    let mut d = vec![T::zero(); f];
                    for chunk in g.data().chunks(f) {
                        for (a, &v) in d.iter_mut().zip(chunk) {
                            *a += v;
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    self.accumulate(grads, *row, Tensor::new(shape, d)?);
                }
            }
            Op::MulRow(x, row) => {
                let f = self.value(*row).numel();
                let r = self.value(*row).data();
                if self.rg(*x) {
                    let mut d = g.clone();
                    for chunk in d.data_mut().chunks_mut(f) {
                        for (a, &v) in chunk.iter_mut().zip(r) {
                            *a *= v;
                        }
                    }
                    self.accumulate(grads, *x, d);
                }
                if self.rg(*row) {
                    let mut d = vec![T::zero(); f];
                    for (gc, xc) in g.data().chunks(f).zip(self.value(*x).data().chunks(f)) {
                        for j in 0..f {
                            d[j] += gc[j] * xc[j];
                        }
                    }
                    let shape = self.value(*row).shape().to_vec();
                    self.accumulate(grads, *row, Tensor::new(shape, d)?);
                }
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Unary(kind, x) => {
                let xv = self.value(*x).data();
                let yv = out.data();
                let two = T::lit(2.0);
                let d: Vec<T> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &gi)| match kind {
                        Unary::Relu => {
                            if xv[i] > T::zero() {
                                gi
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Sigmoid => gi * yv[i] * (T::one() - yv[i]),
                        Unary::Exp => gi * yv[i],
                        Unary::Log => gi / xv[i],
                        Unary::Sqrt => gi / (two * yv[i]),
                        Unary::Square => gi * two * xv[i],
                        Unary::Recip => -gi * yv[i] * yv[i],
                    })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let d: Vec<T> = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &xi)| if xi > *lo && xi < *hi { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(g.shape().to_vec(), d)?);
            }
            Op::Sum(x) => {
                let shape = self.value(*x).shape().to_vec();
                self.accumulate(grads, *x, Tensor::full(&shape, g.item()));
            }
            Op::MeanRows(x) => {
                let (b, f) = self.value(*x).dims2()?;
                let inv = T::one() / T::from_usize(b).unwrap();
                let row: Vec<T> = g.data().iter().map(|&v| v * inv).collect();
                let mut d = Vec::with_capacity(b * f);
                for _ in 0..b {
                    d.extend_from_slice(&row);
                }
                self.accumulate(grads, *x, Tensor::new(vec![b, f], d)?);
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g.data()[j * r + i];
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![r, c], d)?);
            }
            Op::Gate(z, mask) => {
                let m = mask.len();
                let mut d = g.clone();
                for chunk in d.data_mut().chunks_mut(m) {
                    for (v, &keep) in chunk.iter_mut().zip(mask) {
                        if !keep {
                            *v = T::zero();
                        }
                    }
                }
                self.accumulate(grads, *z, d);
            }
            Op::Norm {
                x,
                gamma,
                beta,
                saved,
            } => {
                let (b, f) = self.value(*x).dims2()?;
                let gam = self.value(*gamma).data();
                let mut sum_g = vec![T::zero(); f];
                let mut sum_gx = vec![T::zero(); f];
                for (gc, hc) in g.data().chunks(f).zip(saved.xhat.chunks(f)) {
                    for j in 0..f {
                        sum_g[j] += gc[j];
                        sum_gx[j] += gc[j] * hc[j];
                    }
                }
                if self.rg(*x) {
                    let bn = T::from_usize(b).unwrap();
                    let mut d = Vec::with_capacity(b * f);
                    for (gc, hc) in g.data().chunks(f).zip(saved.xhat.chunks(f)) {
                        for j in 0..f {
                            let k = gam[j] * saved.inv_std[j];
                            let v = if saved.batch_stats {
                                k * (gc[j] - sum_g[j] / bn - hc[j] * sum_gx[j] / bn)
                            } else {
                                k * gc[j]
                            };
                            d.push(v);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![b, f], d)?);
                }
                if self.rg(*gamma) {
                    let shape = self.value(*gamma).shape().to_vec();
                    self.accumulate(grads, *gamma, Tensor::new(shape, sum_gx)?);
                }
                if self.rg(*beta) {
                    let shape = self.value(*beta).shape().to_vec();
                    self.accumulate(grads, *beta, Tensor::new(shape, sum_g)?);
                }
            }
            Op::Bce { pred, target, eps } => {
                let p = self.value(*pred);
                let (b, _) = p.dims2()?;
                let scale = g.item() / T::from_usize(b.max(1)).unwrap();
                let one = T::one();
                let lo = *eps;
                let hi = one - *eps;
                let d: Vec<T> = p
                    .data()
                    .iter()
                    .zip(target)
                    .map(|(&x, &t)| {
                        if x > lo && x < hi {
                            scale * ((one - t) / (one - x) - t / x)
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(grads, *pred, Tensor::new(p.shape().to_vec(), d)?);
            }
            Op::PairwiseSqDist(a, b) => {
                let (n, m) = self.value(*a).dims2()?;
                let (k, _) = self.value(*b).dims2()?;
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let two = T::lit(2.0);
                let mut da = vec![T::zero(); n * m];
                let mut db = vec![T::zero(); k * m];
                for i in 0..n {
                    for j in 0..k {
                        let gij = g.data()[i * k + j] * two;
                        if gij == T::zero() {
                            continue;
                        }
                        for c in 0..m {
                            let diff = gij * (va[i * m + c] - vb[j * m + c]);
                            da[i * m + c] += diff;
                            db[j * m + c] -= diff;
                        }
                    }
                }
                // a and b may be the same node; accumulate handles both contributions.
                self.accumulate(grads, *a, Tensor::new(vec![n, m], da)?);
                self.accumulate(grads, *b, Tensor::new(vec![k, m], db)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{max_rel_err, random_tensor};

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    /// `Σ w ⊙ y` with a fixed random projection, so every output element matters.
    fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
        let shape = tape.value(y).shape().to_vec();
        let w = tape.constant(random_tensor(&shape, seed, -1.0, 1.0));
        let p = tape.mul(y, w)?;
        Ok(tape.sum(p))
    }

    fn project32(tape: &mut Tape<f32>, y: Var, seed: u64) -> Result<Var> {
        let shape = tape.value(y).shape().to_vec();
        let w = tape.constant(random_tensor(&shape, seed, -1.0, 1.0));
        let p = tape.mul(y, w)?;
        Ok(tape.sum(p))
    }

    #[test]
    fn matmul_hand_cases() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = tape.constant(t(&[2, 1], &[2.0, 3.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[2.0, 3.0]);

        let a = tape.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2, 1], &[3.0, 4.0]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_gradients_f32() {
        let inputs = vec![
            random_tensor::<f32>(&[3, 4], 1, -1.0, 1.0),
            random_tensor::<f32>(&[4, 2], 2, -1.0, 1.0),
        ];
        // bilinear in each operand, so a large step has no truncation error
        let err = max_rel_err(
            &inputs,
            |tp, v| {
                let y = tp.matmul(v[0], v[1])?;
                project32(tp, y, 3)
            },
            0.5,
        );
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn elementwise_forward_values() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        assert_eq!(tape.value(s).item(), 0.5);

        let x = tape.param(Tensor::scalar(-3.0));
        let r = tape.relu(x);
        assert_eq!(tape.value(r).item(), 0.0);
        let g = tape.backward(r).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn log_and_sqrt_reject_non_positive() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t(&[2], &[1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(Error::Domain(_))));
        assert!(matches!(tape.sqrt(x), Err(Error::Domain(_))));
        let y = tape.constant(t(&[1], &[-2.0]));
        assert!(matches!(tape.log(y), Err(Error::Domain(_))));
    }

    #[test]
    fn exp_gradient_f32() {
        let inputs = vec![random_tensor::<f32>(&[6], 4, -1.0, 1.0)];
        let err = max_rel_err(
            &inputs,
            |tp, v| {
                let y = tp.exp(v[0]);
                project32(tp, y, 5)
            },
            1e-2,
        );
        assert!(err < 1e-4, "rel err {err}");
    }

    #[test]
    fn every_op_matches_finite_differences_f64() {
        type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>>;
        let cases: Vec<(&str, Vec<Tensor<f64>>, Build)> = vec![
            (
                "add/sub/mul",
                vec![random_tensor(&[3, 4], 10, -1.0, 1.0), random_tensor(&[3, 4], 11, -1.0, 1.0)],
                Box::new(|tp, v| {
                    let a = tp.add(v[0], v[1])?;
                    let b = tp.sub(a, v[1])?;
                    let c = tp.mul(b, v[1])?;
                    project(tp, c, 1)
                }),
            ),
            (
                "scalar broadcast",
                vec![random_tensor(&[3, 2], 12, -1.0, 1.0), random_tensor(&[], 13, 0.5, 1.5)],
                Box::new(|tp, v| {
                    let a = tp.mul(v[0], v[1])?;
                    let b = tp.sub(v[1], a)?;
                    project(tp, b, 2)
                }),
            ),
            (
                "row broadcast",
                vec![random_tensor(&[4, 3], 14, -1.0, 1.0), random_tensor(&[3], 15, -1.0, 1.0)],
                Box::new(|tp, v| {
                    let a = tp.add_row(v[0], v[1])?;
                    let b = tp.mul_row(a, v[1])?;
                    project(tp, b, 3)
                }),
            ),
            (
                "unary",
                vec![random_tensor(&[2, 5], 16, 0.2, 2.0)],
                Box::new(|tp, v| {
                    let a = tp.sigmoid(v[0]);
                    let b = tp.log(v[0])?;
                    let c = tp.sqrt(v[0])?;
                    let d = tp.recip(v[0])?;
                    let e = tp.square(v[0]);
                    let f = tp.exp(v[0]);
                    let mut acc = tp.add(a, b)?;
                    for x in [c, d, e, f] {
                        acc = tp.add(acc, x)?;
                    }
                    project(tp, acc, 4)
                }),
            ),
            (
                "relu away from kink",
                vec![t(&[4], &[-1.0, -0.3, 0.4, 2.0])],
                Box::new(|tp, v| {
                    let a = tp.relu(v[0]);
                    project(tp, a, 5)
                }),
            ),
            (
                "scale/add_scalar/clamp",
                vec![t(&[4], &[-2.0, -0.3, 0.4, 2.0])],
                Box::new(|tp, v| {
                    let a = tp.scale(v[0], 1.7);
                    let b = tp.add_scalar(a, 0.1);
                    let c = tp.clamp(b, -1.0, 1.0);
                    project(tp, c, 6)
                }),
            ),
            (
                "mean_rows/transpose",
                vec![random_tensor(&[3, 4], 17, -1.0, 1.0)],
                Box::new(|tp, v| {
                    let m = tp.mean_rows(v[0])?;
                    let c = tp.transpose(v[0])?;
                    let s = tp.matmul(m, c)?;
                    project(tp, s, 7)
                }),
            ),
            (
                "batch norm train",
                vec![
                    random_tensor(&[4, 3], 18, -1.0, 1.0),
                    random_tensor(&[3], 19, 0.5, 1.5),
                    random_tensor(&[3], 20, -0.5, 0.5),
                ],
                Box::new(|tp, v| {
                    let (y, _, _) = tp.batch_norm(v[0], v[1], v[2], 1e-5, None)?;
                    project(tp, y, 8)
                }),
            ),
            (
                "batch norm fixed stats",
                vec![
                    random_tensor(&[4, 3], 21, -1.0, 1.0),
                    random_tensor(&[3], 22, 0.5, 1.5),
                    random_tensor(&[3], 23, -0.5, 0.5),
                ],
                Box::new(|tp, v| {
                    let (y, _, _) =
                        tp.batch_norm(v[0], v[1], v[2], 1e-5, Some((&[0.1, 0.0, -0.2], &[1.0, 2.0, 0.5])))?;
                    project(tp, y, 9)
                }),
            ),
            (
                "bce",
                vec![random_tensor(&[3, 4], 24, 0.05, 0.95)],
                Box::new(|tp, v| {
                    let target = random_tensor(&[3, 4], 25, 0.0, 1.0);
                    tp.bce(v[0], &target, 1e-7)
                }),
            ),
            (
                "pairwise distances incl. self pairs",
                vec![random_tensor(&[4, 3], 26, -1.0, 1.0), random_tensor(&[5, 3], 27, -1.0, 1.0)],
                Box::new(|tp, v| {
                    let d = tp.pairwise_sq_dist(v[0], v[1])?;
                    let s = tp.pairwise_sq_dist(v[0], v[0])?;
                    let a = project(tp, d, 10)?;
                    let b = project(tp, s, 11)?;
                    tp.add(a, b)
                }),
            ),
        ];
        for (name, inputs, build) in cases {
            let err = max_rel_err(&inputs, build, 1e-5);
            assert!(err < 1e-6, "{name}: rel err {err}");
        }
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::<f64>::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]));
        let ww = tape.mul(w, w).unwrap();
        let loss = tape.sum(ww);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn fan_out_accumulates_each_use() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(3.0));
        let y = tape.add(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 2.0);

        // k = 4 consumers
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.5));
        let uses: Vec<Var> = (0..4).map(|i| tape.scale(x, (i + 1) as f64)).collect();
        let mut acc = uses[0];
        for &u in &uses[1..] {
            acc = tape.add(acc, u).unwrap();
        }
        let g = tape.backward(acc).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 10.0);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unreachable_inputs_get_no_gradient() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(1.0));
        let unused = tape.param(Tensor::scalar(2.0));
        let y = tape.square(x);
        let g = tape.backward(y).unwrap();
        assert!(g.get(unused).is_none());
    }

    #[test]
    fn gate_mask_layout() {
        let mask = GateMask::for_partition(&[0, 2, 4, 6, 8], 2).unwrap();
        assert_eq!(mask.bits(), &[false, false, false, false, true, true, false, false]);
        assert_eq!(mask.count_active(), 2);
        assert!(matches!(
            GateMask::for_partition(&[0, 2, 4, 6, 8], 4),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn gate_forward_is_bitwise_identity() {
        let mut tape = Tape::<f32>::new();
        let z = tape.param(random_tensor(&[3, 8], 30, -2.0, 2.0));
        let mask = GateMask::for_partition(&[0, 2, 4, 6, 8], 1).unwrap();
        let g = tape.gate_gradient(z, &mask).unwrap();
        let bits = |v: Var, tp: &Tape<f32>| tp.value(v).data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(z, &tape), bits(g, &tape));
    }

    #[test]
    fn gate_rejects_wrong_length() {
        let mut tape = Tape::<f32>::new();
        let z = tape.param(Tensor::zeros(&[2, 8]));
        assert!(matches!(
            tape.gate_gradient(z, &GateMask::all_ones(4)),
            Err(Error::Dimension(_))
        ));
    }

    /// Gradient of a small two-layer graph w.r.t. its input `x`, optionally gated at `z`.
    fn encoder_like_grad(mask: Option<&GateMask>) -> (Vec<f64>, Vec<f64>) {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(random_tensor(&[3, 5], 40, -1.0, 1.0));
        let w = tape.param(random_tensor(&[5, 8], 41, -1.0, 1.0));
        let z = tape.matmul(x, w).unwrap();
        let zg = match mask {
            Some(m) => tape.gate_gradient(z, m).unwrap(),
            None => z,
        };
        let loss = project(&mut tape, zg, 42).unwrap();
        let g = tape.backward(loss).unwrap();
        (
            g.get(z).unwrap().data().to_vec(),
            g.get(w).unwrap().data().to_vec(),
        )
    }

    #[test]
    fn gate_all_ones_and_all_zeros() {
        let (_, w_plain) = encoder_like_grad(None);
        let (_, w_ones) = encoder_like_grad(Some(&GateMask::all_ones(8)));
        assert_eq!(w_plain, w_ones);

        let zeros = GateMask::from_bits(vec![false; 8], 0);
        let (z_grad, w_zero) = encoder_like_grad(Some(&zeros));
        assert!(w_zero.iter().all(|&g| g == 0.0));
        assert!(z_grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn gate_passes_only_active_partition() {
        let (z_plain, _) = encoder_like_grad(None);
        let mask = GateMask::for_partition(&[0, 2, 4, 6, 8], 2).unwrap();
        let (z_gated, _) = encoder_like_grad(Some(&mask));
        for (i, (&p, &g)) in z_plain.iter().zip(&z_gated).enumerate() {
            let d = i % 8;
            if d == 4 || d == 5 {
                assert_eq!(p, g);
                assert_ne!(g, 0.0);
            } else {
                assert_eq!(g, 0.0);
            }
        }
    }
}
