//! Dynamically recorded operation tape with reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value; node order is a
//! topological order, so the backward pass is a single reverse sweep.

use std::cell::{Ref, RefCell};

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{dim_err, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
}

impl Activation {
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => x.max(S::zero()),
            Activation::Silu => x * sigmoid(x),
        }
    }

    fn derivative<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Relu => {
                if x > S::zero() {
                    S::one()
                } else {
                    S::zero()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (S::one() + x * (S::one() - s))
            }
        }
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[derive(Debug)]
enum Op<S> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, S),
    MatMul(usize, usize),
    Conv2d {
        input: usize,
        kernel: usize,
        geom: ConvGeom,
    },
    ChannelBias {
        x: usize,
        bias: usize,
    },
    Upsample2x(usize),
    AvgPool2x(usize),
    Act(usize, Activation),
    GroupNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        groups: usize,
        means: Vec<S>,
        rstds: Vec<S>,
    },
    Concat(Vec<usize>),
    Reshape(usize),
    Sum(usize),
}

#[derive(Debug)]
struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<S> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'t, S> {
    tape: &'t Tape<S>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` did not influence it.
    pub fn wrt(&self, v: Var<'_, S>) -> Tensor<S> {
        let shape = &self.shapes[v.id];
        match &self.grads[v.id] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl<S: Scalar> Tape<S> {
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

    /// Records a leaf; gradients are tracked when the tensor requires them.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        let rg = value.requires_grad();
        self.push(value, Op::Leaf, rg)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push(value.with_grad(false), Op::Leaf, false)
    }

    fn push(&self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return dim_err(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            ));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![S::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let want = |i: usize| nodes[i].requires_grad;
            let val = |i: usize| nodes[i].value.data();
            let mut acc = |i: usize, d: Vec<S>| accumulate(&mut grads[i], d);
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if want(*a) {
                        acc(*a, g.clone());
                    }
                    if want(*b) {
                        acc(*b, g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if want(*a) {
                        acc(*a, g.clone());
                    }
                    if want(*b) {
                        acc(*b, g.iter().map(|&v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    if want(*a) {
                        acc(*a, g.iter().zip(val(*b)).map(|(&d, &y)| d * y).collect());
                    }
                    if want(*b) {
                        acc(*b, g.iter().zip(val(*a)).map(|(&d, &x)| d * x).collect());
                    }
                }
                Op::Scale(a, s) => {
                    if want(*a) {
                        acc(*a, g.iter().map(|&d| d * *s).collect());
                    }
                }
                Op::MatMul(a, b) => {
                    let (m, k) = dims2(nodes[*a].value.shape());
                    let n = nodes[*b].value.shape()[1];
                    if want(*a) {
                        let mut da = vec![S::zero(); m * k];
                        S::gemm(
                            m,
                            n,
                            k,
                            &g,
                            (n as isize, 1),
                            val(*b),
                            (1, n as isize),
                            &mut da,
                            (k as isize, 1),
                            false,
                        );
                        acc(*a, da);
                    }
                    if want(*b) {
                        let mut db = vec![S::zero(); k * n];
                        S::gemm(
                            k,
                            m,
                            n,
                            val(*a),
                            (1, k as isize),
                            &g,
                            (n as isize, 1),
                            &mut db,
                            (n as isize, 1),
                            false,
                        );
                        acc(*b, db);
                    }
                }
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                } => {
                    let (di, dk) = kernels::conv2d_backward(
                        val(*input),
                        val(*kernel),
                        &g,
                        geom,
                        want(*input),
                        want(*kernel),
                    );
                    if let Some(di) = di {
                        acc(*input, di);
                    }
                    if let Some(dk) = dk {
                        acc(*kernel, dk);
                    }
                }
                Op::ChannelBias { x, bias } => {
                    if want(*bias) {
                        let c = nodes[*bias].value.len();
                        let per = g.len() / c;
                        let db = g.chunks(per).map(|ch| ch.iter().copied().sum()).collect();
                        acc(*bias, db);
                    }
                    if want(*x) {
                        acc(*x, g.clone());
                    }
                }
                Op::Upsample2x(a) => {
                    let (c, h, w) = dims3(nodes[*a].value.shape());
                    acc(*a, kernels::upsample2x_backward(&g, c, h, w));
                }
                Op::AvgPool2x(a) => {
                    let (c, h, w) = dims3(nodes[*a].value.shape());
                    acc(*a, kernels::avgpool2x_backward(&g, c, h, w));
                }
                Op::Act(a, kind) => {
                    let d = g
                        .iter()
                        .zip(val(*a))
                        .map(|(&d, &x)| d * kind.derivative(x))
                        .collect();
                    acc(*a, d);
                }
                Op::GroupNorm {
                    x,
                    gamma,
                    beta,
                    groups,
                    means,
                    rstds,
                } => {
                    let shape = nodes[*x].value.shape();
                    let c = shape[0];
                    let spatial = nodes[*x].value.len() / c;
                    let (dx, dgamma, dbeta) = kernels::group_norm_backward(
                        val(*x),
                        &g,
                        c,
                        spatial,
                        *groups,
                        val(*gamma),
                        means,
                        rstds,
                    );
                    if want(*x) {
                        acc(*x, dx);
                    }
                    if want(*gamma) {
                        acc(*gamma, dgamma);
                    }
                    if want(*beta) {
                        acc(*beta, dbeta);
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = nodes[p].value.len();
                        if want(p) {
                            acc(p, g[off..off + n].to_vec());
                        }
                        off += n;
                    }
                }
                Op::Reshape(a) => acc(*a, g),
                Op::Sum(a) => {
                    let n = nodes[*a].value.len();
                    acc(*a, vec![g[0]; n]);
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, d: Vec<S>) {
    match slot {
        Some(existing) => existing.iter_mut().zip(d).for_each(|(e, v)| *e += v),
        None => *slot = Some(d),
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

fn dims3(shape: &[usize]) -> (usize, usize, usize) {
    (shape[0], shape[1], shape[2])
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn id(&self) -> usize {
        self.id
    }

    /// Borrow of the recorded value.
    pub fn value(&self) -> Ref<'t, Tensor<S>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        self.value().clone().with_grad(false)
    }

    fn same_shape(&self, other: &Var<'t, S>, what: &str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return dim_err(format!("{what}: shapes {a:?} and {b:?} differ"));
        }
        Ok(())
    }

    fn zip_with(&self, other: &Var<'t, S>, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (a, b) = (self.value(), other.value());
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(a.shape(), data).expect("same shape")
    }

    pub fn add(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_shape(other, "add")?;
        let out = self.zip_with(other, |x, y| x + y);
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::Add(self.id, other.id), rg))
    }

    pub fn sub(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_shape(other, "sub")?;
        let out = self.zip_with(other, |x, y| x - y);
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::Sub(self.id, other.id), rg))
    }

    pub fn mul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        self.same_shape(other, "mul")?;
        let out = self.zip_with(other, |x, y| x * y);
        let rg = self.tape.rg(&[self.id, other.id]);
        Ok(self.tape.push(out, Op::Mul(self.id, other.id), rg))
    }

    pub fn scale(&self, s: S) -> Var<'t, S> {
        let out = self.value().map(|x| x * s);
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(out, Op::Scale(self.id, s), rg)
    }

    pub fn square(&self) -> Var<'t, S> {
        self.mul(self).expect("same shape")
    }

    pub fn sum(&self) -> Var<'t, S> {
        let total: S = self.value().data().iter().copied().sum();
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(Tensor::scalar(total), Op::Sum(self.id), rg)
    }

    pub fn mean(&self) -> Var<'t, S> {
        let n = S::lit(self.value().len() as f64);
        self.sum().scale(n.recip())
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(&self, other: &Var<'t, S>) -> Result<Var<'t, S>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul: incompatible shapes {sa:?} × {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        {
            let (a, b) = (self.value(), other.value());
            S::gemm(
                m,
                k,
                n,
                a.data(),
                (k as isize, 1),
                b.data(),
                (n as isize, 1),
                &mut out,
                (n as isize, 1),
                false,
            );
        }
        let rg = self.tape.rg(&[self.id, other.id]);
        let out = Tensor::new(&[m, n], out)?;
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    /// Cross-correlation of `[c_in, h, w]` with `[c_out, c_in, k, k]`, zero padded.
    pub fn conv2d(&self, kernel: &Var<'t, S>, stride: usize, padding: usize) -> Result<Var<'t, S>> {
        let (si, sk) = (self.shape(), kernel.shape());
        if si.len() != 3 || sk.len() != 4 || sk[1] != si[0] || sk[2] != sk[3] {
            return dim_err(format!(
                "conv2d: input {si:?} incompatible with kernel {sk:?}"
            ));
        }
        let k = sk[2];
        if k % 2 == 0 {
            return dim_err(format!("conv2d: kernel size {k} must be odd"));
        }
        if stride == 0 {
            return dim_err("conv2d: stride must be positive");
        }
        let (h, w) = (si[1], si[2]);
        let span_h = (h + 2 * padding).checked_sub(k);
        let span_w = (w + 2 * padding).checked_sub(k);
        let (Some(span_h), Some(span_w)) = (span_h, span_w) else {
            return dim_err(format!(
                "conv2d: kernel {k} larger than padded input {h}x{w}"
            ));
        };
        if span_h % stride != 0 || span_w % stride != 0 {
            return dim_err(format!(
                "conv2d: output size not integral for {h}x{w}, k={k}, stride={stride}, padding={padding}"
            ));
        }
        let geom = ConvGeom {
            c_in: si[0],
            h,
            w,
            c_out: sk[0],
            k,
            stride,
            padding,
            oh: span_h / stride + 1,
            ow: span_w / stride + 1,
        };
        let out = kernels::conv2d_forward(self.value().data(), kernel.value().data(), &geom);
        let out = Tensor::new(&[geom.c_out, geom.oh, geom.ow], out)?;
        let rg = self.tape.rg(&[self.id, kernel.id]);
        Ok(self.tape.push(
            out,
            Op::Conv2d {
                input: self.id,
                kernel: kernel.id,
                geom,
            },
            rg,
        ))
    }

    /// Adds `bias[c]` to every element of channel `c` (axis 0).
    pub fn add_channel_bias(&self, bias: &Var<'t, S>) -> Result<Var<'t, S>> {
        let (sx, sb) = (self.shape(), bias.shape());
        let c = sx[0];
        if bias.value().len() != c {
            return dim_err(format!(
                "channel bias {sb:?} does not match leading axis of {sx:?}"
            ));
        }
        let out = {
            let (x, b) = (self.value(), bias.value());
            let per = x.len() / c;
            let mut data = x.data().to_vec();
            for (ch, chunk) in data.chunks_mut(per).enumerate() {
                let bv = b.data()[ch];
                chunk.iter_mut().for_each(|v| *v += bv);
            }
            Tensor::new(&sx, data)?
        };
        let rg = self.tape.rg(&[self.id, bias.id]);
        Ok(self.tape.push(
            out,
            Op::ChannelBias {
                x: self.id,
                bias: bias.id,
            },
            rg,
        ))
    }

    /// Nearest-neighbour `[c, h, w] → [c, 2h, 2w]`.
    pub fn upsample2x(&self) -> Result<Var<'t, S>> {
        let s = self.shape();
        if s.len() != 3 {
            return dim_err(format!("upsample2x expects [c,h,w], got {s:?}"));
        }
        let out = kernels::upsample2x(self.value().data(), s[0], s[1], s[2]);
        let out = Tensor::new(&[s[0], 2 * s[1], 2 * s[2]], out)?;
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(out, Op::Upsample2x(self.id), rg))
    }

    /// 2×2 mean pooling `[c, h, w] → [c, h/2, w/2]`.
    pub fn avgpool2x(&self) -> Result<Var<'t, S>> {
        let s = self.shape();
        if s.len() != 3 || !s[1].is_multiple_of(2) || !s[2].is_multiple_of(2) {
            return dim_err(format!("avgpool2x needs [c,h,w] with even h,w, got {s:?}"));
        }
        let out = kernels::avgpool2x(self.value().data(), s[0], s[1], s[2]);
        let out = Tensor::new(&[s[0], s[1] / 2, s[2] / 2], out)?;
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(out, Op::AvgPool2x(self.id), rg))
    }

    pub fn activation(&self, kind: Activation) -> Var<'t, S> {
        let out = self.value().map(|x| kind.apply(x));
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(out, Op::Act(self.id, kind), rg)
    }

    pub fn relu(&self) -> Var<'t, S> {
        self.activation(Activation::Relu)
    }

    pub fn silu(&self) -> Var<'t, S> {
        self.activation(Activation::Silu)
    }

    /// Group normalization over `[c, ...]` with per-channel affine.
    pub fn group_norm(
        &self,
        groups: usize,
        gamma: &Var<'t, S>,
        beta: &Var<'t, S>,
    ) -> Result<Var<'t, S>> {
        let s = self.shape();
        let c = s[0];
        if groups == 0 || !c.is_multiple_of(groups) {
            return dim_err(format!(
                "group_norm: {c} channels not divisible into {groups} groups"
            ));
        }
        if gamma.value().len() != c || beta.value().len() != c {
            return dim_err("group_norm: affine parameters must have one entry per channel");
        }
        let (out, means, rstds) = {
            let x = self.value();
            kernels::group_norm(
                x.data(),
                c,
                x.len() / c,
                groups,
                gamma.value().data(),
                beta.value().data(),
            )
        };
        let out = Tensor::new(&s, out)?;
        let rg = self.tape.rg(&[self.id, gamma.id, beta.id]);
        Ok(self.tape.push(
            out,
            Op::GroupNorm {
                x: self.id,
                gamma: gamma.id,
                beta: beta.id,
                groups,
                means,
                rstds,
            },
            rg,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, S>> {
        let out = self.value().clone().reshape(shape)?;
        let rg = self.tape.rg(&[self.id]);
        Ok(self.tape.push(out, Op::Reshape(self.id), rg))
    }
}

/// Concatenates along axis 0; trailing axes must agree.
pub fn concat<'t, S: Scalar>(parts: &[Var<'t, S>]) -> Result<Var<'t, S>> {
    let Some(first) = parts.first() else {
        return dim_err("concat of zero tensors");
    };
    let tape = first.tape;
    let tail = first.shape()[1..].to_vec();
    let mut lead = 0;
    let mut data = Vec::new();
    for p in parts {
        let v = p.value();
        if v.shape()[1..] != tail[..] {
            return dim_err(format!(
                "concat: trailing shape {:?} vs {tail:?}",
                &v.shape()[1..]
            ));
        }
        lead += v.shape()[0];
        data.extend_from_slice(v.data());
    }
    let mut shape = vec![lead];
    shape.extend_from_slice(&tail);
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let rg = tape.rg(&ids);
    Ok(tape.push(Tensor::new(&shape, data)?, Op::Concat(ids), rg))
}
