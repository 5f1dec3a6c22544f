//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Shape errors inside the tape are programmer errors and panic; networks
//! validate their inputs before recording.

use super::conv::{col2im_add, im2col, ConvGeom};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulConst(Var, Vec<T>),
    LeakyRelu(Var, T),
    Relu(Var),
    Sigmoid(Var),
    Logit(Var, T),
    Square(Var),
    PowConst(Var, T),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    MeanHw(Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Upsample2(Var),
    AvgPool2(Var),
    ConcatChannels(Var, Var),
    MulChannel(Var, Var),
    ChannelConv1d {
        d: Var,
        w: Var,
        b: Var,
    },
    GaussValid(Var, Vec<T>),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient of the differentiated output with respect to `v`, or `None`
    /// when `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor shaped like `v`; zeros when `v` has no influence.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = &self.shapes[v.0];
        match self.get(v) {
            Some(g) => Tensor::new(shape.clone(), g.to_vec()).expect("grad shape"),
            None => Tensor::zeros(shape),
        }
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

fn dims4(shape: &[usize]) -> (usize, usize, usize, usize) {
    assert_eq!(shape.len(), 4, "expected NCHW tensor, got {shape:?}");
    (shape[0], shape[1], shape[2], shape[3])
}

fn acc<T: Scalar>(slot: &mut Option<Vec<T>>, len: usize) -> &mut Vec<T> {
    slot.get_or_insert_with(|| vec![T::zero(); len])
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

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf (parameter or input under test).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> T {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "item() on tensor of shape {:?}", t.shape());
        t.data()[0]
    }

    fn same_shape(&self, a: Var, b: Var) {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shape mismatch");
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Var {
        self.same_shape(a, b);
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(out, op, &[a, b])
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(a).map(f);
        self.push(out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x + s, Op::AddScalar(a))
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn mul_const(&mut self, a: Var, c: Vec<T>) -> Var {
        assert_eq!(c.len(), self.value(a).len(), "mul_const length mismatch");
        let va = self.value(a);
        let data = va.data().iter().zip(&c).map(|(&x, &y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data).unwrap();
        self.push(out, Op::MulConst(a, c), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(
            a,
            |x| if x > T::zero() { x } else { x * slope },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(T::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| T::one() / (T::one() + (-x).exp()), Op::Sigmoid(a))
    }

    /// `ln(x / (1 - x))` of `x` clamped to `[eps, 1 - eps]`; zero derivative
    /// where the clamp is active.
    pub fn logit(&mut self, a: Var, eps: T) -> Var {
        let hi = T::one() - eps;
        self.unary(
            a,
            |x| {
                let x = x.max(eps).min(hi);
                (x / (T::one() - x)).ln()
            },
            Op::Logit(a, eps),
        )
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    /// `x^p` for nonnegative `x`; the derivative at `x = 0` is taken as 0.
    pub fn pow_const(&mut self, a: Var, p: T) -> Var {
        self.unary(a, |x| x.powf(p), Op::PowConst(a, p))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.sum() / T::of(v.len() as f64);
        self.push(Tensor::scalar(s), Op::MeanAll(a), &[a])
    }

    /// Mean over every axis but the first: `[N, ...] -> [N]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.rows();
        let m = T::of(v.row_len() as f64);
        let data = (0..n).map(|i| v.row(i).iter().copied().sum::<T>() / m).collect();
        self.push(Tensor::new(vec![n], data).unwrap(), Op::MeanRows(a), &[a])
    }

    /// Spatial mean: `[N, C, H, W] -> [N, C]`.
    pub fn mean_hw(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (n, c, h, w) = dims4(v.shape());
        let hw = h * w;
        let inv = T::one() / T::of(hw as f64);
        let data = v
            .data()
            .chunks(hw)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        self.push(Tensor::new(vec![n, c], data).unwrap(), Op::MeanHw(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let out = self.value(a).clone().reshaped(shape).expect("reshape");
        self.push(out, Op::Reshape(a), &[a])
    }

    /// `y = x w^T + b` with `x: [N, D]`, `w: [O, D]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let vx = self.value(x);
        let vw = self.value(w);
        assert_eq!(vx.shape().len(), 2, "linear input must be [N, D]");
        let (n, d) = (vx.shape()[0], vx.shape()[1]);
        let (o, d2) = (vw.shape()[0], vw.shape()[1]);
        assert_eq!(d, d2, "linear weight shape mismatch");
        let mut out = vec![T::zero(); n * o];
        T::gemm(
            n,
            d,
            o,
            T::one(),
            vx.data(),
            d as isize,
            1,
            vw.data(),
            1,
            d as isize,
            T::zero(),
            &mut out,
            o as isize,
            1,
        );
        if let Some(b) = b {
            let vb = self.value(b);
            assert_eq!(vb.len(), o, "linear bias shape mismatch");
            for row in out.chunks_mut(o) {
                for (y, &bb) in row.iter_mut().zip(vb.data()) {
                    *y += bb;
                }
            }
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            Tensor::new(vec![n, o], out).unwrap(),
            Op::Linear { x, w, b },
            &parents,
        )
    }

    /// Square-kernel 2-D convolution, `x: [N, C, H, W]`, `w: [O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Var {
        let (n, c, h, wd) = dims4(self.shape(x));
        let (o, c2, k, k2) = dims4(self.shape(w));
        assert_eq!(c, c2, "conv2d channel mismatch");
        assert_eq!(k, k2, "conv2d kernel must be square");
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d input smaller than kernel");
        let geom = ConvGeom {
            in_channels: c,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
        };
        let (ho, wo) = (geom.out_height(), geom.out_width());
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![T::zero(); rows * cols_n];
        let mut out = vec![T::zero(); n * o * ho * wo];
        let vx = self.value(x);
        let vw = self.value(w);
        let sample = c * h * wd;
        for i in 0..n {
            im2col(&geom, &vx.data()[i * sample..(i + 1) * sample], &mut cols);
            let dst = &mut out[i * o * cols_n..(i + 1) * o * cols_n];
            T::gemm(
                o,
                rows,
                cols_n,
                T::one(),
                vw.data(),
                rows as isize,
                1,
                &cols,
                cols_n as isize,
                1,
                T::zero(),
                dst,
                cols_n as isize,
                1,
            );
        }
        if let Some(b) = b {
            let vb = self.value(b);
            assert_eq!(vb.len(), o, "conv2d bias shape mismatch");
            for (j, plane) in out.chunks_mut(ho * wo).enumerate() {
                let bb = vb.data()[j % o];
                plane.iter_mut().for_each(|y| *y += bb);
            }
        }
        let parents: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(
            Tensor::new(vec![n, o, ho, wo], out).unwrap(),
            Op::Conv2d { x, w, b, geom },
            &parents,
        )
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (n, c, h, w) = dims4(v.shape());
        let mut out = vec![T::zero(); n * c * 4 * h * w];
        for (p, plane) in v.data().chunks(h * w).enumerate() {
            let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for x in 0..2 * w {
                    dst[y * 2 * w + x] = plane[(y / 2) * w + x / 2];
                }
            }
        }
        let t = Tensor::new(vec![n, c, 2 * h, 2 * w], out).unwrap();
        self.push(t, Op::Upsample2(a), &[a])
    }

    /// 2x2 mean pooling; odd trailing rows/columns are dropped.
    pub fn avg_pool2(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let (n, c, h, w) = dims4(v.shape());
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (p, plane) in v.data().chunks(h * w).enumerate() {
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    let s = plane[2 * y * w + 2 * x]
                        + plane[2 * y * w + 2 * x + 1]
                        + plane[(2 * y + 1) * w + 2 * x]
                        + plane[(2 * y + 1) * w + 2 * x + 1];
                    dst[y * wo + x] = s * quarter;
                }
            }
        }
        let t = Tensor::new(vec![n, c, ho, wo], out).unwrap();
        self.push(t, Op::AvgPool2(a), &[a])
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let (n, ca, h, w) = dims4(self.shape(a));
        let (n2, cb, h2, w2) = dims4(self.shape(b));
        assert!(n == n2 && h == h2 && w == w2, "concat_channels shape mismatch");
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            out.extend_from_slice(va.row(i));
            out.extend_from_slice(vb.row(i));
        }
        let t = Tensor::new(vec![n, ca + cb, h, w], out).unwrap();
        self.push(t, Op::ConcatChannels(a, b), &[a, b])
    }

    /// Per-channel gating: `x: [N, C, H, W]` times `g: [N, C]`.
    pub fn mul_channel(&mut self, x: Var, g: Var) -> Var {
        let (n, c, h, w) = dims4(self.shape(x));
        assert_eq!(self.shape(g), &[n, c], "mul_channel gate shape mismatch");
        let (vx, vg) = (self.value(x), self.value(g));
        let mut out = vx.data().to_vec();
        for (p, plane) in out.chunks_mut(h * w).enumerate() {
            let s = vg.data()[p];
            plane.iter_mut().for_each(|v| *v *= s);
        }
        let t = Tensor::new(vec![n, c, h, w], out).unwrap();
        self.push(t, Op::MulChannel(x, g), &[x, g])
    }

    /// Zero-padded 1-D convolution along the channel axis of `d: [N, C]`
    /// with an odd kernel `w: [k]` and scalar bias `b: [1]`.
    pub fn channel_conv1d(&mut self, d: Var, w: Var, b: Var) -> Var {
        let vd = self.value(d);
        assert_eq!(vd.shape().len(), 2, "channel_conv1d input must be [N, C]");
        let (n, c) = (vd.shape()[0], vd.shape()[1]);
        let vw = self.value(w);
        let k = vw.len();
        assert!(k % 2 == 1, "channel_conv1d kernel must be odd");
        let r = (k / 2) as isize;
        let bias = self.value(b).data()[0];
        let mut out = vec![bias; n * c];
        for i in 0..n {
            for ch in 0..c {
                let mut s = T::zero();
                for j in 0..k {
                    let src = ch as isize + j as isize - r;
                    if src >= 0 && (src as usize) < c {
                        s += vw.data()[j] * vd.data()[i * c + src as usize];
                    }
                }
                out[i * c + ch] += s;
            }
        }
        let t = Tensor::new(vec![n, c], out).unwrap();
        self.push(t, Op::ChannelConv1d { d, w, b }, &[d, w, b])
    }

    /// Separable filtering with a fixed 1-D kernel, valid region only:
    /// `[N, C, H, W] -> [N, C, H-k+1, W-k+1]`.
    pub fn gauss_valid(&mut self, a: Var, kernel: Vec<T>) -> Var {
        let v = self.value(a);
        let (n, c, h, w) = dims4(v.shape());
        let k = kernel.len();
        assert!(h >= k && w >= k, "gauss_valid input smaller than kernel");
        let (ho, wo) = (h - k + 1, w - k + 1);
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut tmp = vec![T::zero(); h * wo];
        for (p, plane) in v.data().chunks(h * w).enumerate() {
            for y in 0..h {
                let line = &plane[y * w..(y + 1) * w];
                for x in 0..wo {
                    let mut s = T::zero();
                    for (j, &kv) in kernel.iter().enumerate() {
                        s += kv * line[x + j];
                    }
                    tmp[y * wo + x] = s;
                }
            }
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for y in 0..ho {
                for (i, &kv) in kernel.iter().enumerate() {
                    let src = &tmp[(y + i) * wo..(y + i + 1) * wo];
                    for x in 0..wo {
                        dst[y * wo + x] += kv * src[x];
                    }
                }
            }
        }
        let t = Tensor::new(vec![n, c, ho, wo], out).unwrap();
        self.push(t, Op::GaussValid(a, kernel), &[a])
    }

    /// Mean softmax cross-entropy of `logits: [N, K]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let v = self.value(logits);
        assert_eq!(v.shape().len(), 2, "cross_entropy logits must be [N, K]");
        let (n, k) = (v.shape()[0], v.shape()[1]);
        assert_eq!(labels.len(), n, "one label per row");
        let mut probs = vec![T::zero(); n * k];
        let mut loss = T::zero();
        for i in 0..n {
            let row = v.row(i);
            assert!(labels[i] < k, "label out of range");
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = row.iter().map(|&x| (x - m).exp()).sum();
            for j in 0..k {
                probs[i * k + j] = (row[j] - m).exp() / z;
            }
            loss += z.ln() + m - row[labels[i]];
        }
        loss /= T::of(n as f64);
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Back-propagates from a single-element node.
    pub fn backward(&self, out: Var) -> Grads<T> {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        self.backward_with(out, vec![T::one()])
    }

    /// Back-propagates an explicit output cotangent.
    pub fn backward_with(&self, out: Var, seed: Vec<T>) -> Grads<T> {
        assert_eq!(seed.len(), self.value(out).len(), "seed shape mismatch");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.wants(v) {
                        let d = acc(&mut grads[v.0], g.len());
                        d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    let d = acc(&mut grads[a.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
                }
                if self.wants(*b) {
                    let d = acc(&mut grads[b.0], g.len());
                    d.iter_mut().zip(g).for_each(|(d, &g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let d = acc(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * vb[i];
                    }
                }
                if self.wants(*b) {
                    let d = acc(&mut grads[b.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] * va[i];
                    }
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    let d = acc(&mut grads[a.0], g.len());
                    for i in 0..g.len() {
                        d[i] += g[i] / vb[i];
                    }
                }
                if self.wants(*b) {
                    let d = acc(&mut grads[b.0], g.len());
                    for i in 0..g.len() {
                        d[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                }
            }
            Op::Scale(a, s) => {
                let d = acc(&mut grads[a.0], g.len());
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g * *s);
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                let d = acc(&mut grads[a.0], g.len());
                d.iter_mut().zip(g).for_each(|(d, &g)| *d += g);
            }
            Op::MulConst(a, c) => {
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * c[i];
                }
            }
            Op::LeakyRelu(a, slope) => {
                let va = self.value(*a).data();
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    d[i] += if va[i] > T::zero() { g[i] } else { g[i] * *slope };
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    if va[i] > T::zero() {
                        d[i] += g[i];
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = out.data();
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            }
            Op::Logit(a, eps) => {
                let va = self.value(*a).data();
                let hi = T::one() - *eps;
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    let x = va[i];
                    if x > *eps && x < hi {
                        d[i] += g[i] / (x * (T::one() - x));
                    }
                }
            }
            Op::Square(a) => {
                let va = self.value(*a).data();
                let two = T::of(2.0);
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    d[i] += g[i] * two * va[i];
                }
            }
            Op::PowConst(a, p) => {
                let va = self.value(*a).data();
                let d = acc(&mut grads[a.0], g.len());
                for i in 0..g.len() {
                    if va[i] != T::zero() {
                        d[i] += g[i] * *p * va[i].powf(*p - T::one());
                    }
                }
            }
            Op::SumAll(a) => {
                let n = self.value(*a).len();
                let d = acc(&mut grads[a.0], n);
                d.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len();
                let s = g[0] / T::of(n as f64);
                let d = acc(&mut grads[a.0], n);
                d.iter_mut().for_each(|d| *d += s);
            }
            Op::MeanRows(a) => {
                let va = self.value(*a);
                let m = va.row_len();
                let inv = T::one() / T::of(m as f64);
                let d = acc(&mut grads[a.0], va.len());
                for (row, &gi) in d.chunks_mut(m).zip(g) {
                    row.iter_mut().for_each(|d| *d += gi * inv);
                }
            }
            Op::MeanHw(a) => {
                let va = self.value(*a);
                let (_, _, h, w) = dims4(va.shape());
                let inv = T::one() / T::of((h * w) as f64);
                let d = acc(&mut grads[a.0], va.len());
                for (plane, &gi) in d.chunks_mut(h * w).zip(g) {
                    plane.iter_mut().for_each(|d| *d += gi * inv);
                }
            }
            Op::Linear { x, w, b } => self.back_linear(*x, *w, *b, g, grads),
            Op::Conv2d { x, w, b, geom } => self.back_conv(*x, *w, *b, geom, g, grads),
            Op::Upsample2(a) => {
                let va = self.value(*a);
                let (_, _, h, w) = dims4(va.shape());
                let d = acc(&mut grads[a.0], va.len());
                for (p, plane) in d.chunks_mut(h * w).enumerate() {
                    let src = &g[p * 4 * h * w..(p + 1) * 4 * h * w];
                    for y in 0..2 * h {
                        for x in 0..2 * w {
                            plane[(y / 2) * w + x / 2] += src[y * 2 * w + x];
                        }
                    }
                }
            }
            Op::AvgPool2(a) => {
                let va = self.value(*a);
                let (_, _, h, w) = dims4(va.shape());
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::of(0.25);
                let d = acc(&mut grads[a.0], va.len());
                for (p, plane) in d.chunks_mut(h * w).enumerate() {
                    let src = &g[p * ho * wo..(p + 1) * ho * wo];
                    for y in 0..ho {
                        for x in 0..wo {
                            let s = src[y * wo + x] * quarter;
                            plane[2 * y * w + 2 * x] += s;
                            plane[2 * y * w + 2 * x + 1] += s;
                            plane[(2 * y + 1) * w + 2 * x] += s;
                            plane[(2 * y + 1) * w + 2 * x + 1] += s;
                        }
                    }
                }
            }
            Op::ConcatChannels(a, b) => {
                let (la, lb) = (self.value(*a).row_len(), self.value(*b).row_len());
                let n = self.value(*a).rows();
                if self.wants(*a) {
                    let d = acc(&mut grads[a.0], n * la);
                    for i in 0..n {
                        let src = &g[i * (la + lb)..i * (la + lb) + la];
                        d[i * la..(i + 1) * la].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                }
                if self.wants(*b) {
                    let d = acc(&mut grads[b.0], n * lb);
                    for i in 0..n {
                        let src = &g[i * (la + lb) + la..(i + 1) * (la + lb)];
                        d[i * lb..(i + 1) * lb].iter_mut().zip(src).for_each(|(d, &s)| *d += s);
                    }
                }
            }
            Op::MulChannel(x, gate) => {
                let vx = self.value(*x);
                let vg = self.value(*gate);
                let (_, _, h, w) = dims4(vx.shape());
                if self.wants(*x) {
                    let d = acc(&mut grads[x.0], vx.len());
                    for (p, plane) in d.chunks_mut(h * w).enumerate() {
                        let s = vg.data()[p];
                        let src = &g[p * h * w..(p + 1) * h * w];
                        plane.iter_mut().zip(src).for_each(|(d, &gv)| *d += gv * s);
                    }
                }
                if self.wants(*gate) {
                    let d = acc(&mut grads[gate.0], vg.len());
                    for (p, dp) in d.iter_mut().enumerate() {
                        let xs = &vx.data()[p * h * w..(p + 1) * h * w];
                        let gs = &g[p * h * w..(p + 1) * h * w];
                        *dp += xs.iter().zip(gs).map(|(&a, &b)| a * b).sum::<T>();
                    }
                }
            }
            Op::ChannelConv1d { d, w, b } => {
                let vd = self.value(*d);
                let vw = self.value(*w);
                let (n, c) = (vd.shape()[0], vd.shape()[1]);
                let k = vw.len();
                let r = (k / 2) as isize;
                if self.wants(*d) {
                    let dd = acc(&mut grads[d.0], n * c);
                    for i in 0..n {
                        for ch in 0..c {
                            for j in 0..k {
                                let src = ch as isize + j as isize - r;
                                if src >= 0 && (src as usize) < c {
                                    dd[i * c + src as usize] += vw.data()[j] * g[i * c + ch];
                                }
                            }
                        }
                    }
                }
                if self.wants(*w) {
                    let dw = acc(&mut grads[w.0], k);
                    for i in 0..n {
                        for ch in 0..c {
                            for j in 0..k {
                                let src = ch as isize + j as isize - r;
                                if src >= 0 && (src as usize) < c {
                                    dw[j] += g[i * c + ch] * vd.data()[i * c + src as usize];
                                }
                            }
                        }
                    }
                }
                if self.wants(*b) {
                    let db = acc(&mut grads[b.0], 1);
                    db[0] += g.iter().copied().sum::<T>();
                }
            }
            Op::GaussValid(a, kernel) => {
                let va = self.value(*a);
                let (_, _, h, w) = dims4(va.shape());
                let k = kernel.len();
                let (ho, wo) = (h - k + 1, w - k + 1);
                let mut tmp = vec![T::zero(); h * wo];
                let d = acc(&mut grads[a.0], va.len());
                for (p, plane) in d.chunks_mut(h * w).enumerate() {
                    tmp.fill(T::zero());
                    let src = &g[p * ho * wo..(p + 1) * ho * wo];
                    for y in 0..ho {
                        for (i, &kv) in kernel.iter().enumerate() {
                            let row = &mut tmp[(y + i) * wo..(y + i + 1) * wo];
                            for x in 0..wo {
                                row[x] += kv * src[y * wo + x];
                            }
                        }
                    }
                    for y in 0..h {
                        let line = &mut plane[y * w..(y + 1) * w];
                        for x in 0..wo {
                            let t = tmp[y * wo + x];
                            for (j, &kv) in kernel.iter().enumerate() {
                                line[x + j] += kv * t;
                            }
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len();
                let k = probs.len() / n;
                let s = g[0] / T::of(n as f64);
                let d = acc(&mut grads[logits.0], n * k);
                for i in 0..n {
                    for j in 0..k {
                        let onehot = if labels[i] == j { T::one() } else { T::zero() };
                        d[i * k + j] += s * (probs[i * k + j] - onehot);
                    }
                }
            }
        }
    }

    fn back_linear(&self, x: Var, w: Var, b: Option<Var>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let vx = self.value(x);
        let vw = self.value(w);
        let (n, d) = (vx.shape()[0], vx.shape()[1]);
        let o = vw.shape()[0];
        if self.wants(x) {
            let dx = acc(&mut grads[x.0], n * d);
            T::gemm(n, o, d, T::one(), g, o as isize, 1, vw.data(), d as isize, 1, T::one(), dx, d as isize, 1);
        }
        if self.wants(w) {
            let dw = acc(&mut grads[w.0], o * d);
            T::gemm(o, n, d, T::one(), g, 1, o as isize, vx.data(), d as isize, 1, T::one(), dw, d as isize, 1);
        }
        if let Some(b) = b {
            if self.wants(b) {
                let db = acc(&mut grads[b.0], o);
                for row in g.chunks(o) {
                    db.iter_mut().zip(row).for_each(|(d, &gv)| *d += gv);
                }
            }
        }
    }

    fn back_conv(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: &ConvGeom,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let vx = self.value(x);
        let vw = self.value(w);
        let n = vx.rows();
        let o = vw.rows();
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let sample = vx.row_len();
        let want_x = self.wants(x);
        let want_w = self.wants(w);
        let mut cols = vec![T::zero(); rows * cols_n];
        let mut dw_acc = want_w.then(|| {
            grads[w.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); o * rows])
        });
        let mut dx_acc = want_x.then(|| {
            grads[x.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); n * sample])
        });
        for i in 0..n {
            let gi = &g[i * o * cols_n..(i + 1) * o * cols_n];
            if let Some(dw) = dw_acc.as_mut() {
                im2col(geom, &vx.data()[i * sample..(i + 1) * sample], &mut cols);
                T::gemm(
                    o,
                    cols_n,
                    rows,
                    T::one(),
                    gi,
                    cols_n as isize,
                    1,
                    &cols,
                    1,
                    cols_n as isize,
                    T::one(),
                    dw,
                    rows as isize,
                    1,
                );
            }
            if let Some(dx) = dx_acc.as_mut() {
                T::gemm(
                    rows,
                    o,
                    cols_n,
                    T::one(),
                    vw.data(),
                    1,
                    rows as isize,
                    gi,
                    cols_n as isize,
                    1,
                    T::zero(),
                    &mut cols,
                    cols_n as isize,
                    1,
                );
                col2im_add(geom, &cols, &mut dx[i * sample..(i + 1) * sample]);
            }
        }
        if let Some(dw) = dw_acc {
            grads[w.0] = Some(dw);
        }
        if let Some(dx) = dx_acc {
            grads[x.0] = Some(dx);
        }
        if let Some(b) = b {
            if self.wants(b) {
                let db = acc(&mut grads[b.0], o);
                for (j, plane) in g.chunks(cols_n).enumerate() {
                    db[j % o] += plane.iter().copied().sum::<T>();
                }
            }
        }
    }
}
