//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation of one forward evaluation together
//! with its value. [`Graph::backward`] walks the tape in reverse and returns
//! the gradient of a scalar node with respect to every node that depends on
//! a trainable leaf.

use super::kernels;
use crate::loss::similarity::{self, Similarity};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        groups: usize,
    },
    Relu(Var),
    AvgPool(Var),
    Upsample(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    Square(Var),
    ConcatChannels(Vec<Var>),
    ConcatOuter(Vec<Var>),
    SliceChannels {
        x: Var,
        start: usize,
    },
    SliceOuter {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        shift: Var,
        stats: Vec<(T, T)>,
    },
    Gelu {
        x: Var,
        cdf: Tensor<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        attn: Tensor<T>,
    },
    Similarity {
        a: Var,
        b: Var,
        kind: Similarity,
    },
    SobelL1(Var),
    MseConst {
        x: Var,
        target: Tensor<T>,
    },
    Sum(Var),
    AddN(Vec<Var>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    similarity_calls: usize,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            similarity_calls: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of feature-similarity evaluations recorded on this tape.
    pub fn similarity_calls(&self) -> usize {
        self.similarity_calls
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Attention weights `[heads, K, K]` of an attention node.
    pub fn attention_weights(&self, v: Var) -> Option<&Tensor<T>> {
        match &self.nodes[v.0].op {
            Op::Attention { attn, .. } => Some(attn),
            _ => None,
        }
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, groups: usize) -> Var {
        let y = kernels::conv2d(self.value(x), self.value(w), self.value(b), groups);
        self.push(y, Op::Conv { x, w, b, groups }, &[x, w, b])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = kernels::relu(self.value(x));
        self.push(y, Op::Relu(x), &[x])
    }

    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let y = kernels::avg_pool2(self.value(x));
        self.push(y, Op::AvgPool(x), &[x])
    }

    pub fn upsample2(&mut self, x: Var) -> Var {
        let y = kernels::upsample_bilinear2(self.value(x));
        self.push(y, Op::Upsample(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |p, q| p + q);
        self.push(y, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |p, q| p - q);
        self.push(y, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).zip_map(self.value(b), |p, q| p * q);
        self.push(y, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let y = self.value(x).map(|v| v * s);
        self.push(y, Op::Scale(x, s), &[x])
    }

    pub fn add_const(&mut self, x: Var, c: T) -> Var {
        let y = self.value(x).map(|v| v + c);
        self.push(y, Op::AddConst(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        self.push(y, Op::Square(x), &[x])
    }

    /// Concatenate 4-D nodes along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Var {
        let (b, _, h, w) = self.value(parts[0]).dims4();
        let total: usize = parts.iter().map(|&p| self.value(p).dims4().1).sum();
        let mut out = Tensor::zeros(&[b, total, h, w]);
        let plane = h * w;
        let mut c0 = 0;
        for &p in parts {
            let v = self.value(p);
            let (pb, pc, ph, pw) = v.dims4();
            assert_eq!((pb, ph, pw), (b, h, w), "concat_channels shape mismatch");
            for bi in 0..b {
                let src = &v.data()[bi * pc * plane..(bi + 1) * pc * plane];
                let dst_off = (bi * total + c0) * plane;
                out.data_mut()[dst_off..dst_off + pc * plane].copy_from_slice(src);
            }
            c0 += pc;
        }
        self.push(out, Op::ConcatChannels(parts.to_vec()), parts)
    }

    /// Concatenate nodes along axis 0.
    pub fn concat_outer(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let out = crate::tensor::concat_outer(&refs).expect("concat_outer shape mismatch");
        self.push(out, Op::ConcatOuter(parts.to_vec()), parts)
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x);
        let (b, c, h, w) = v.dims4();
        assert!(start + len <= c);
        let plane = h * w;
        let mut out = Tensor::zeros(&[b, len, h, w]);
        for bi in 0..b {
            let src = &v.data()[(bi * c + start) * plane..(bi * c + start + len) * plane];
            out.data_mut()[bi * len * plane..(bi + 1) * len * plane].copy_from_slice(src);
        }
        self.push(out, Op::SliceChannels { x, start }, &[x])
    }

    pub fn slice_outer(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).slice_outer(start, len);
        self.push(out, Op::SliceOuter { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let out = self.value(x).clone().reshape(shape).expect("reshape size mismatch");
        self.push(out, Op::Reshape(x), &[x])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var) -> Var {
        let (y, stats) = kernels::channel_layer_norm(self.value(x), self.value(gain), self.value(shift));
        self.push(y, Op::LayerNorm { x, gain, shift, stats }, &[x, gain, shift])
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let (y, cdf) = kernels::gelu(self.value(x));
        self.push(y, Op::Gelu { x, cdf }, &[x])
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (y, attn) = kernels::state_attention(self.value(q), self.value(k), self.value(v), heads);
        self.push(y, Op::Attention { q, k, v, attn }, &[q, k, v])
    }

    /// Channel-averaged similarity of two feature maps; scalar node.
    pub fn similarity(&mut self, a: Var, b: Var, kind: Similarity) -> Var {
        self.similarity_calls += 1;
        let s = similarity::feature_similarity(kind, self.value(a), self.value(b));
        self.push(Tensor::scalar(s), Op::Similarity { a, b, kind }, &[a, b])
    }

    pub fn sobel_l1(&mut self, x: Var) -> Var {
        let y = kernels::sobel_l1(self.value(x));
        self.push(y, Op::SobelL1(x), &[x])
    }

    /// Mean squared difference to a fixed target; scalar node.
    pub fn mse_const(&mut self, x: Var, target: Tensor<T>) -> Var {
        let v = self.value(x);
        assert_eq!(v.shape(), target.shape(), "mse_const target shape");
        let n = T::from_usize_lossy(v.numel());
        let s: T = v
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        self.push(Tensor::scalar(s / n), Op::MseConst { x, target }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn add_n(&mut self, parts: &[Var]) -> Var {
        let mut acc = self.value(parts[0]).clone();
        for &p in &parts[1..] {
            acc.add_assign(self.value(p));
        }
        self.push(acc, Op::AddN(parts.to_vec()), parts)
    }

    /// Gradients of the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::one()));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::Conv { x, w, b, groups } => {
                let (dx, dw, db) = kernels::conv2d_backward(self.value(x), self.value(w), groups, g, self.wants(x));
                if let Some(dx) = dx {
                    accumulate(&mut grads[x.0], dx);
                }
                if self.wants(w) {
                    accumulate(&mut grads[w.0], dw);
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            &Op::Relu(x) => accumulate(&mut grads[x.0], kernels::relu_backward(&node.value, g)),
            &Op::AvgPool(x) => accumulate(&mut grads[x.0], kernels::avg_pool2_backward(g)),
            &Op::Upsample(x) => accumulate(&mut grads[x.0], kernels::upsample_bilinear2_backward(g)),
            &Op::Add(a, b) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    accumulate(&mut grads[a.0], g.zip_map(self.value(b), |p, q| p * q));
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], g.zip_map(self.value(a), |p, q| p * q));
                }
            }
            &Op::Scale(x, s) => accumulate(&mut grads[x.0], g.map(|v| v * s)),
            &Op::AddConst(x) => accumulate(&mut grads[x.0], g.clone()),
            &Op::Square(x) => {
                let two = T::from_f64_lossy(2.0);
                accumulate(&mut grads[x.0], g.zip_map(self.value(x), |p, q| two * p * q));
            }
            Op::ConcatChannels(parts) => {
                let (b, total, h, w) = g.dims4();
                let plane = h * w;
                let mut c0 = 0;
                for &p in parts {
                    let pc = self.value(p).dims4().1;
                    if self.wants(p) {
                        let mut d = Tensor::zeros(&[b, pc, h, w]);
                        for bi in 0..b {
                            let src = &g.data()[(bi * total + c0) * plane..(bi * total + c0 + pc) * plane];
                            d.data_mut()[bi * pc * plane..(bi + 1) * pc * plane].copy_from_slice(src);
                        }
                        accumulate(&mut grads[p.0], d);
                    }
                    c0 += pc;
                }
            }
            Op::ConcatOuter(parts) => {
                let mut start = 0;
                for &p in parts {
                    let n = self.value(p).shape()[0];
                    if self.wants(p) {
                        accumulate(&mut grads[p.0], g.slice_outer(start, n));
                    }
                    start += n;
                }
            }
            &Op::SliceChannels { x, start } => {
                let (b, c, h, w) = self.value(x).dims4();
                let len = g.dims4().1;
                let plane = h * w;
                let mut d = Tensor::zeros(&[b, c, h, w]);
                for bi in 0..b {
                    let dst = (bi * c + start) * plane;
                    d.data_mut()[dst..dst + len * plane]
                        .copy_from_slice(&g.data()[bi * len * plane..(bi + 1) * len * plane]);
                }
                accumulate(&mut grads[x.0], d);
            }
            &Op::SliceOuter { x, start } => {
                let xv = self.value(x);
                let stride = xv.numel() / xv.shape()[0];
                let slot = grads[x.0].get_or_insert_with(|| Tensor::zeros(xv.shape()));
                let dst = &mut slot.data_mut()[start * stride..start * stride + g.numel()];
                for (d, &v) in dst.iter_mut().zip(g.data()) {
                    *d += v;
                }
            }
            &Op::Reshape(x) => {
                let d = g.clone().reshape(self.value(x).shape()).expect("reshape grad");
                accumulate(&mut grads[x.0], d);
            }
            Op::LayerNorm { x, gain, shift, stats } => {
                let (dx, dg, ds) = kernels::channel_layer_norm_backward(self.value(*x), self.value(*gain), stats, g);
                if self.wants(*x) {
                    accumulate(&mut grads[x.0], dx);
                }
                if self.wants(*gain) {
                    accumulate(&mut grads[gain.0], dg);
                }
                if self.wants(*shift) {
                    accumulate(&mut grads[shift.0], ds);
                }
            }
            Op::Gelu { x, cdf } => accumulate(&mut grads[x.0], kernels::gelu_backward(self.value(*x), cdf, g)),
            Op::Attention { q, k, v, attn } => {
                let (dq, dk, dv) =
                    kernels::state_attention_backward(self.value(*q), self.value(*k), self.value(*v), attn, g);
                for (var, d) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if self.wants(var) {
                        accumulate(&mut grads[var.0], d);
                    }
                }
            }
            &Op::Similarity { a, b, kind } => {
                let (da, db) = similarity::feature_similarity_backward(kind, self.value(a), self.value(b), g.item());
                if self.wants(a) {
                    accumulate(&mut grads[a.0], da);
                }
                if self.wants(b) {
                    accumulate(&mut grads[b.0], db);
                }
            }
            &Op::SobelL1(x) => accumulate(&mut grads[x.0], kernels::sobel_l1_backward(self.value(x), g)),
            Op::MseConst { x, target } => {
                let v = self.value(*x);
                let scale = T::from_f64_lossy(2.0) * g.item() / T::from_usize_lossy(v.numel());
                accumulate(&mut grads[x.0], v.zip_map(target, |a, b| scale * (a - b)));
            }
            &Op::Sum(x) => {
                let s = g.item();
                accumulate(&mut grads[x.0], Tensor::full(self.value(x).shape(), s));
            }
            Op::AddN(parts) => {
                for &p in parts {
                    if self.wants(p) {
                        accumulate(&mut grads[p.0], g.clone());
                    }
                }
            }
        }
    }
}
