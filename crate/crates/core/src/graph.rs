//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] is a tape: every op appends one node holding its output value
//! and whatever the backward rule needs. Nodes only reference earlier nodes,
//! so the tape is topologically ordered by construction and `backward`
//! replays it once, in reverse. A graph supports a single `backward` call;
//! a second call is an error rather than silent accumulation.
//!
//! Gradients are kept for leaf nodes only.

use std::sync::atomic::{AtomicU32, Ordering};

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::tensor::{dims4, numel, Tensor};

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a node on a specific graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    index: u32,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    Scale(Var, f64),
    Exp(Var),
    Expm1(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    Square(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Mean(Var),
    SumAxis {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Reshape(Var),
    Narrow {
        x: Var,
        outer: usize,
        total: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    BroadcastTo(Var),
    Concat {
        inputs: Vec<Var>,
        axis_lens: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    IndexSelect {
        x: Var,
        indices: Vec<usize>,
    },
    Bmm {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
        dims: (usize, usize, usize, usize),
    },
    Softmax {
        x: Var,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    PixelUnshuffle {
        x: Var,
        r: usize,
    },
    AvgPool {
        x: Var,
        k: usize,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    LocalAttention {
        q: Var,
        k: Var,
        v: Var,
        window: usize,
        weights: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    requires_grad: bool,
    grad: Option<Tensor>,
    op: Op,
}

/// Summary of one backward pass.
#[derive(Clone, Debug, Default)]
pub struct BackwardReport {
    /// Node indices in the order their backward rules ran.
    pub visited: Vec<usize>,
}

/// Per-channel statistics of a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
    /// Elements reduced per channel.
    pub count: usize,
}

#[derive(Debug)]
pub struct Graph {
    id: u32,
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For each element of a tensor of `out_shape`, the flat index of the source
/// element it was broadcast from.
fn broadcast_index(in_shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let offset = out_shape.len() - in_shape.len();
    let in_strides = strides(in_shape);
    let mut eff = vec![0usize; out_shape.len()];
    for (i, &d) in in_shape.iter().enumerate() {
        eff[offset + i] = if d == 1 { 0 } else { in_strides[i] };
    }
    let total = numel(out_shape);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; out_shape.len()];
    let mut cur = 0usize;
    for _ in 0..total {
        idx.push(cur);
        for d in (0..out_shape.len()).rev() {
            counter[d] += 1;
            cur += eff[d];
            if counter[d] < out_shape[d] {
                break;
            }
            cur -= eff[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index() >= self.nodes.len() {
            return Err(Error::Graph(format!("variable {v:?} is not on this tape")));
        }
        Ok(v.index())
    }

    fn node(&self, v: Var) -> Result<&Node> {
        let i = self.check(v)?;
        Ok(&self.nodes[i])
    }

    /// The forward value of `v`.
    ///
    /// Panics if `v` belongs to another graph.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.node(v).expect("foreign variable").value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).map(|n| n.requires_grad).unwrap_or(false)
    }

    /// Gradient of the last backward pass, for leaves that require it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.node(v).ok().and_then(|n| n.grad.as_ref())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node {
            value,
            requires_grad,
            grad: None,
            op,
        });
        Var { tape: self.id, index }
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.index()].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A constant copy of `v`'s value; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.node(v)?.value.clone();
        Ok(self.constant(t))
    }

    fn binary(&mut self, a: Var, b: Var, op_name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (&self.node(a)?.value, &self.node(b)?.value);
        if va.shape() != vb.shape() {
            return Err(Error::shape(op_name, format!("{:?} vs {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.node(x)?.value.map(f);
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, op, rg))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// `exp(x) - 1`, accurate near zero.
    pub fn expm1(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::exp_m1, Op::Expm1(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    /// Absolute value; its subgradient at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// `max(x, slope·x)` for `slope` in (0, 1).
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.node(x)?.value.data().iter().sum();
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = &self.node(x)?.value;
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        let rg = self.any_grad(&[x]);
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), rg))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = &self.node(x)?.value;
        if axis >= t.rank() {
            return Err(Error::shape("sum_axis", format!("axis {axis} of {:?}", t.shape())));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let mut out = vec![0.0; outer * inner];
        let d = t.data();
        for o in 0..outer {
            for a in 0..len {
                let row = &d[(o * len + a) * inner..][..inner];
                for (dst, &v) in out[o * inner..][..inner].iter_mut().zip(row) {
                    *dst += v;
                }
            }
        }
        let mut shape = t.shape().to_vec();
        shape.remove(axis);
        let out = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::SumAxis { x, outer, len, inner }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = self
            .node(x)?
            .value
            .shape()
            .get(axis)
            .copied()
            .ok_or_else(|| Error::shape("mean_axis", format!("axis {axis}")))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len as f64)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.node(x)?.value.clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// The slice `start..start+len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let t = &self.node(x)?.value;
        if axis >= t.rank() || len == 0 || start + len > t.shape()[axis] {
            return Err(Error::shape(
                "narrow",
                format!("{start}..{} of axis {axis} in {:?}", start + len, t.shape()),
            ));
        }
        let (outer, total, inner) = split_axis(t.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            data.extend_from_slice(&t.data()[(o * total + start) * inner..][..len * inner]);
        }
        let mut shape = t.shape().to_vec();
        shape[axis] = len;
        let out = Tensor::new(shape, data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            out,
            Op::Narrow {
                x,
                outer,
                total,
                start,
                len,
                inner,
            },
            rg,
        ))
    }

    /// Broadcasts with trailing-axis alignment; size-1 axes expand.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = &self.node(x)?.value;
        let ok = t.rank() <= shape.len()
            && t
                .shape()
                .iter()
                .zip(&shape[shape.len() - t.rank()..])
                .all(|(&a, &b)| a == b || a == 1);
        if !ok {
            return Err(Error::shape("broadcast_to", format!("{:?} -> {shape:?}", t.shape())));
        }
        let idx = broadcast_index(t.shape(), shape);
        let data = idx.iter().map(|&i| t.data()[i]).collect();
        let out = Tensor::new(shape.to_vec(), data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::BroadcastTo(x), rg))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = self.node(*inputs.first().ok_or_else(|| Error::shape("concat", "no inputs"))?)?;
        let ref_shape = first.value.shape().to_vec();
        if axis >= ref_shape.len() {
            return Err(Error::shape("concat", format!("axis {axis} of {ref_shape:?}")));
        }
        let (outer, _, inner) = split_axis(&ref_shape, axis);
        let mut axis_lens = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.node(v)?.value.shape();
            let compatible = s.len() == ref_shape.len()
                && s.iter().zip(&ref_shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", format!("{s:?} vs {ref_shape:?}")));
            }
            axis_lens.push(s[axis]);
        }
        let total: usize = axis_lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &len) in inputs.iter().zip(&axis_lens) {
                let d = self.nodes[v.index()].value.data();
                data.extend_from_slice(&d[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = ref_shape;
        shape[axis] = total;
        let out = Tensor::new(shape, data)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis_lens,
                outer,
                inner,
            },
            rg,
        ))
    }

    /// Gathers rows along the leading axis.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = &self.node(x)?.value;
        let n = *t.shape().first().ok_or_else(|| Error::shape("index_select", "rank 0"))?;
        if indices.is_empty() || indices.iter().any(|&i| i >= n) {
            return Err(Error::shape("index_select", format!("indices out of range 0..{n}")));
        }
        let row = t.numel() / n;
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        let out = Tensor::new(shape, data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            out,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Batched matrix product of `[B, M, K]·[B, K, N]`, either side optionally
    /// transposed in its last two axes.
    pub fn bmm(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.node(a)?.value.shape(), self.node(b)?.value.shape());
        let (&[ba, a0, a1], &[bb, b0, b1]) = (sa, sb) else {
            return Err(Error::shape("bmm", format!("expected rank 3, got {sa:?} and {sb:?}")));
        };
        let (m, ka) = if trans_a { (a1, a0) } else { (a0, a1) };
        let (kb, n) = if trans_b { (b1, b0) } else { (b0, b1) };
        if ba != bb || ka != kb {
            return Err(Error::shape("bmm", format!("{sa:?} x {sb:?} (trans {trans_a}, {trans_b})")));
        }
        let (batch, k) = (ba, ka);
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.nodes[a.index()].value.data(), self.nodes[b.index()].value.data());
        for i in 0..batch {
            kernels::gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                trans_a,
                &db[i * k * n..(i + 1) * k * n],
                trans_b,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
            );
        }
        let out = Tensor::new(vec![batch, m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(
            out,
            Op::Bmm {
                a,
                b,
                trans_a,
                trans_b,
                dims: (batch, m, k, n),
            },
            rg,
        ))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = &self.node(x)?.value;
        if axis >= t.rank() {
            return Err(Error::shape("softmax", format!("axis {axis} of {:?}", t.shape())));
        }
        let (outer, len, inner) = split_axis(t.shape(), axis);
        let out = Tensor::new(t.shape().to_vec(), kernels::softmax(t.data(), outer, len, inner))?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::Softmax { x, outer, len, inner }, rg))
    }

    /// 2-D cross-correlation: `x [N,C,H,W]`, `w [F,C,k,k]`, `b [F]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, c, h, wd) = dims4(self.node(x)?.value.shape(), "conv2d")?;
        let (f, wc, kh, kw) = dims4(self.node(w)?.value.shape(), "conv2d")?;
        if wc != c || kh != kw {
            return Err(Error::shape(
                "conv2d",
                format!("input channels {c} vs weight {:?}", [f, wc, kh, kw]),
            ));
        }
        if let Some(b) = b {
            if self.node(b)?.value.shape() != [f] {
                return Err(Error::shape("conv2d", format!("bias must be [{f}]")));
            }
        }
        let geom = ConvGeom::new(c, h, wd, kh, stride, pad).ok_or_else(|| {
            Error::shape(
                "conv2d",
                format!("kernel {kh} stride {stride} pad {pad} does not fit {h}x{wd}"),
            )
        })?;
        let out = kernels::conv2d_forward(
            self.nodes[x.index()].value.data(),
            n,
            &geom,
            self.nodes[w.index()].value.data(),
            f,
            b.map(|b| self.nodes[b.index()].value.data()),
        );
        let out = Tensor::new(vec![n, f, geom.out_h, geom.out_w], out)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.any_grad(&ins);
        Ok(self.push(out, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`]:
    /// `x [N,Cin,H,W]`, `w [Cin,Cout,k,k]`, `b [Cout]`; output extent
    /// `(H-1)·stride - 2·pad + k`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = dims4(self.node(x)?.value.shape(), "conv_transpose2d")?;
        let (wi, cout, kh, kw) = dims4(self.node(w)?.value.shape(), "conv_transpose2d")?;
        if wi != cin || kh != kw {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("input channels {cin} vs weight {:?}", [wi, cout, kh, kw]),
            ));
        }
        if let Some(b) = b {
            if self.node(b)?.value.shape() != [cout] {
                return Err(Error::shape("conv_transpose2d", format!("bias must be [{cout}]")));
            }
        }
        let oh = ((h - 1) * stride + kh).checked_sub(2 * pad);
        let ow = ((wd - 1) * stride + kh).checked_sub(2 * pad);
        let geom = match (oh, ow) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 && stride > 0 => ConvGeom::new(cout, oh, ow, kh, stride, pad),
            _ => None,
        }
        .filter(|g| g.out_h == h && g.out_w == wd)
        .ok_or_else(|| Error::shape("conv_transpose2d", format!("kernel {kh} stride {stride} pad {pad} on {h}x{wd}")))?;
        let out = kernels::conv_transpose2d_forward(
            self.nodes[x.index()].value.data(),
            n,
            cin,
            &geom,
            self.nodes[w.index()].value.data(),
            b.map(|b| self.nodes[b.index()].value.data()),
        );
        let out = Tensor::new(vec![n, cout, geom.height, geom.width], out)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.any_grad(&ins);
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, geom }, rg))
    }

    /// Affine map `x [N,D] · w [D,M] + b [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (sx, sw) = (self.node(x)?.value.shape(), self.node(w)?.value.shape());
        let (&[n, d], &[wd, m]) = (sx, sw) else {
            return Err(Error::shape("fully_connected", format!("{sx:?} x {sw:?}")));
        };
        if d != wd {
            return Err(Error::shape("fully_connected", format!("{sx:?} x {sw:?}")));
        }
        let mut out = vec![0.0; n * m];
        if let Some(b) = b {
            let bias = self.node(b)?.value.data();
            if bias.len() != m {
                return Err(Error::shape("fully_connected", format!("bias must be [{m}]")));
            }
            for row in out.chunks_mut(m) {
                row.copy_from_slice(bias);
            }
        }
        kernels::gemm(
            n,
            d,
            m,
            self.nodes[x.index()].value.data(),
            false,
            self.nodes[w.index()].value.data(),
            false,
            1.0,
            &mut out,
        );
        let out = Tensor::new(vec![n, m], out)?;
        let mut ins = vec![x, w];
        ins.extend(b);
        let rg = self.any_grad(&ins);
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// `[N, C·r², H, W] -> [N, C, rH, rW]`.
    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.node(x)?.value.shape(), "pixel_shuffle")?;
        if r == 0 || c % (r * r) != 0 {
            return Err(Error::shape("pixel_shuffle", format!("{c} channels not divisible by {r}^2")));
        }
        let c_out = c / (r * r);
        let data = kernels::pixel_shuffle(self.nodes[x.index()].value.data(), n, c_out, h, w, r);
        let out = Tensor::new(vec![n, c_out, h * r, w * r], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::PixelShuffle { x, r }, rg))
    }

    /// `[N, C, rH, rW] -> [N, C·r², H, W]`, inverse of [`Graph::pixel_shuffle`].
    pub fn pixel_unshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.node(x)?.value.shape(), "pixel_unshuffle")?;
        if r == 0 || h % r != 0 || w % r != 0 {
            return Err(Error::shape("pixel_unshuffle", format!("{h}x{w} not divisible by {r}")));
        }
        let data = kernels::pixel_unshuffle(self.nodes[x.index()].value.data(), n, c, h, w, r);
        let out = Tensor::new(vec![n, c * r * r, h / r, w / r], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::PixelUnshuffle { x, r }, rg))
    }

    /// Non-overlapping `k×k` average pooling; extents must divide by `k`.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.node(x)?.value.shape(), "avg_pool2d")?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::shape("avg_pool2d", format!("{h}x{w} not divisible by {k}")));
        }
        let data = kernels::avg_pool(self.nodes[x.index()].value.data(), n * c, h, w, k);
        let out = Tensor::new(vec![n, c, h / k, w / k], data)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(out, Op::AvgPool { x, k }, rg))
    }

    /// Batch normalization with the batch's own statistics. Returns the
    /// output and the statistics so the caller can update running averages.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<(Var, BatchStats)> {
        let (n, c, h, w) = dims4(self.node(x)?.value.shape(), "batch_norm")?;
        if n * h * w < 2 {
            return Err(Error::shape("batch_norm", "training mode needs N·H·W >= 2"));
        }
        let (mean, var) = kernels::channel_stats(self.node(x)?.value.data(), n, c, h * w);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let v = self.batch_norm_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((
            v,
            BatchStats {
                mean,
                var,
                count: n * h * w,
            },
        ))
    }

    /// Batch normalization with fixed (running) statistics.
    pub fn batch_norm_eval(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], var: &[f64], eps: f64) -> Result<Var> {
        let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.batch_norm_apply(x, gamma, beta, mean, inv_std, false)
    }

    fn batch_norm_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: &[f64], inv_std: Vec<f64>, batch_stats: bool) -> Result<Var> {
        let (n, c, h, w) = dims4(self.node(x)?.value.shape(), "batch_norm")?;
        let (g, b) = (&self.node(gamma)?.value, &self.node(beta)?.value);
        if g.shape() != [c] || b.shape() != [c] || mean.len() != c {
            return Err(Error::shape("batch_norm", format!("affine parameters must be [{c}]")));
        }
        let sp = h * w;
        let xd = self.nodes[x.index()].value.data();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..n {
            for ch in 0..c {
                let off = (bi * c + ch) * sp;
                for i in off..off + sp {
                    xhat[i] = (xd[i] - mean[ch]) * inv_std[ch];
                    out[i] = g.data()[ch] * xhat[i] + b.data()[ch];
                }
            }
        }
        let out = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.any_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Relational local attention (see [`kernels::local_attention_forward`]).
    /// `q`, `k`, `v` are `[N, C, H, W]`; `window` is odd and at least 3.
    pub fn local_attention(&mut self, q: Var, k: Var, v: Var, window: usize) -> Result<Var> {
        let shape = self.node(q)?.value.shape().to_vec();
        let (n, c, h, w) = dims4(&shape, "local_attention")?;
        if self.node(k)?.value.shape() != shape.as_slice() || self.node(v)?.value.shape() != shape.as_slice() {
            return Err(Error::shape("local_attention", "q, k, v shapes differ"));
        }
        if window < 3 || window % 2 == 0 {
            return Err(Error::shape("local_attention", format!("window {window} must be odd and >= 3")));
        }
        let (out, weights) = kernels::local_attention_forward(
            self.nodes[q.index()].value.data(),
            self.nodes[k.index()].value.data(),
            self.nodes[v.index()].value.data(),
            n * c,
            h,
            w,
            window,
        );
        let out = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[q, k, v]);
        Ok(self.push(out, Op::LocalAttention { q, k, v, window, weights }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`. Leaf gradients are then
    /// available through [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<BackwardReport> {
        let li = self.check(loss)?;
        if self.backward_done {
            return Err(Error::Graph("backward already ran on this tape".into()));
        }
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::Graph(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);
        let mut report = BackwardReport::default();
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            report.visited.push(i);
            if let Op::Leaf = self.nodes[i].op {
                let shape = self.nodes[i].value.shape().to_vec();
                self.nodes[i].grad = Some(Tensor::new(shape, g)?);
                continue;
            }
            self.backward_node(i, &g, &mut grads);
        }
        Ok(report)
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| nodes[v.index()].value.data();
        let wants = |v: Var| nodes[v.index()].requires_grad;
        let mut acc = |v: Var, contrib: Vec<f64>| {
            if !nodes[v.index()].requires_grad {
                return;
            }
            match &mut grads[v.index()] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        let out = nodes[i].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
                }
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, g.iter().zip(vb).map(|(g, y)| g / y).collect());
                }
                if wants(*b) {
                    acc(
                        *b,
                        g.iter()
                            .zip(va.iter().zip(vb))
                            .map(|(g, (x, y))| -g * x / (y * y))
                            .collect(),
                    );
                }
            }
            Op::AddScalar(x) => acc(*x, g.to_vec()),
            Op::Scale(x, c) => acc(*x, g.iter().map(|v| v * c).collect()),
            Op::Exp(x) => acc(*x, g.iter().zip(out).map(|(g, y)| g * y).collect()),
            Op::Expm1(x) => acc(*x, g.iter().zip(out).map(|(g, y)| g * (y + 1.0)).collect()),
            Op::Log(x) => acc(*x, g.iter().zip(val(*x)).map(|(g, x)| g / x).collect()),
            Op::Sqrt(x) => acc(*x, g.iter().zip(out).map(|(g, y)| g / (2.0 * y)).collect()),
            Op::Abs(x) => acc(
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(g, &x)| if x > 0.0 { *g } else if x < 0.0 { -g } else { 0.0 })
                    .collect(),
            ),
            Op::Square(x) => acc(*x, g.iter().zip(val(*x)).map(|(g, x)| 2.0 * g * x).collect()),
            Op::LeakyRelu(x, slope) => acc(
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(g, &x)| if x > 0.0 { *g } else { g * slope })
                    .collect(),
            ),
            Op::Sum(x) => acc(*x, vec![g[0]; val(*x).len()]),
            Op::Mean(x) => {
                let n = val(*x).len();
                acc(*x, vec![g[0] / n as f64; n]);
            }
            Op::SumAxis { x, outer, len, inner } => {
                let mut dx = vec![0.0; outer * len * inner];
                for o in 0..*outer {
                    for a in 0..*len {
                        dx[(o * len + a) * inner..][..*inner].copy_from_slice(&g[o * inner..][..*inner]);
                    }
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, g.to_vec()),
            Op::Narrow {
                x,
                outer,
                total,
                start,
                len,
                inner,
            } => {
                let mut dx = vec![0.0; outer * total * inner];
                for o in 0..*outer {
                    dx[(o * total + start) * inner..][..len * inner].copy_from_slice(&g[o * len * inner..][..len * inner]);
                }
                acc(*x, dx);
            }
            Op::BroadcastTo(x) => {
                let in_shape = nodes[x.index()].value.shape();
                let idx = broadcast_index(in_shape, nodes[i].value.shape());
                let mut dx = vec![0.0; numel(in_shape)];
                for (gv, &j) in g.iter().zip(&idx) {
                    dx[j] += gv;
                }
                acc(*x, dx);
            }
            Op::Concat {
                inputs,
                axis_lens,
                outer,
                inner,
            } => {
                let total: usize = axis_lens.iter().sum();
                let mut start = 0;
                for (&v, &len) in inputs.iter().zip(axis_lens) {
                    if wants(v) {
                        let mut dx = Vec::with_capacity(outer * len * inner);
                        for o in 0..*outer {
                            dx.extend_from_slice(&g[(o * total + start) * inner..][..len * inner]);
                        }
                        acc(v, dx);
                    }
                    start += len;
                }
            }
            Op::IndexSelect { x, indices } => {
                let n_in = nodes[x.index()].value.shape()[0];
                let row = val(*x).len() / n_in;
                let mut dx = vec![0.0; val(*x).len()];
                for (k, &src) in indices.iter().enumerate() {
                    for (d, gv) in dx[src * row..(src + 1) * row].iter_mut().zip(&g[k * row..(k + 1) * row]) {
                        *d += gv;
                    }
                }
                acc(*x, dx);
            }
            Op::Bmm {
                a,
                b,
                trans_a,
                trans_b,
                dims: (batch, m, k, n),
            } => {
                let (batch, m, k, n) = (*batch, *m, *k, *n);
                let (da, db) = (val(*a), val(*b));
                if wants(*a) {
                    let mut ga = vec![0.0; batch * m * k];
                    for t in 0..batch {
                        let gc = &g[t * m * n..][..m * n];
                        let bb = &db[t * k * n..][..k * n];
                        let dst = &mut ga[t * m * k..][..m * k];
                        if *trans_a {
                            kernels::gemm(k, n, m, bb, *trans_b, gc, true, 0.0, dst);
                        } else {
                            kernels::gemm(m, n, k, gc, false, bb, !*trans_b, 0.0, dst);
                        }
                    }
                    acc(*a, ga);
                }
                if wants(*b) {
                    let mut gb = vec![0.0; batch * k * n];
                    for t in 0..batch {
                        let gc = &g[t * m * n..][..m * n];
                        let aa = &da[t * m * k..][..m * k];
                        let dst = &mut gb[t * k * n..][..k * n];
                        if *trans_b {
                            kernels::gemm(n, m, k, gc, true, aa, *trans_a, 0.0, dst);
                        } else {
                            kernels::gemm(k, m, n, aa, !*trans_a, gc, false, 0.0, dst);
                        }
                    }
                    acc(*b, gb);
                }
            }
            Op::Softmax { x, outer, len, inner } => {
                acc(*x, kernels::softmax_backward(out, g, *outer, *len, *inner));
            }
            Op::Conv2d { x, w, b, geom } => {
                let n = nodes[x.index()].value.shape()[0];
                let f = nodes[w.index()].value.shape()[0];
                let grads_c = kernels::conv2d_backward(
                    val(*x),
                    n,
                    geom,
                    val(*w),
                    f,
                    g,
                    wants(*x),
                    wants(*w),
                    b.is_some_and(|b| wants(b)),
                );
                if let Some(dx) = grads_c.input {
                    acc(*x, dx);
                }
                if let Some(dw) = grads_c.weight {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, grads_c.bias) {
                    acc(*b, db);
                }
            }
            Op::ConvTranspose2d { x, w, b, geom } => {
                let s = nodes[x.index()].value.shape();
                let grads_c = kernels::conv_transpose2d_backward(
                    val(*x),
                    s[0],
                    s[1],
                    geom,
                    val(*w),
                    g,
                    wants(*x),
                    wants(*w),
                    b.is_some_and(|b| wants(b)),
                );
                if let Some(dx) = grads_c.input {
                    acc(*x, dx);
                }
                if let Some(dw) = grads_c.weight {
                    acc(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, grads_c.bias) {
                    acc(*b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let (n, d) = (nodes[x.index()].value.shape()[0], nodes[x.index()].value.shape()[1]);
                let m = nodes[w.index()].value.shape()[1];
                if wants(*x) {
                    let mut dx = vec![0.0; n * d];
                    kernels::gemm(n, m, d, g, false, val(*w), true, 0.0, &mut dx);
                    acc(*x, dx);
                }
                if wants(*w) {
                    let mut dw = vec![0.0; d * m];
                    kernels::gemm(d, n, m, val(*x), true, g, false, 0.0, &mut dw);
                    acc(*w, dw);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let mut db = vec![0.0; m];
                        for row in g.chunks(m) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        acc(*b, db);
                    }
                }
            }
            Op::PixelShuffle { x, r } => {
                let (n, c, h, w) = dims4(nodes[x.index()].value.shape(), "pixel_shuffle").expect("rank 4");
                let c_out = c / (r * r);
                acc(*x, kernels::pixel_unshuffle(g, n, c_out, h * r, w * r, *r));
            }
            Op::PixelUnshuffle { x, r } => {
                let (n, c, h, w) = dims4(nodes[x.index()].value.shape(), "pixel_unshuffle").expect("rank 4");
                acc(*x, kernels::pixel_shuffle(g, n, c, h / r, w / r, *r));
            }
            Op::AvgPool { x, k } => {
                let (n, c, h, w) = dims4(nodes[x.index()].value.shape(), "avg_pool2d").expect("rank 4");
                acc(*x, kernels::avg_pool_backward(g, n * c, h, w, *k));
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = dims4(nodes[x.index()].value.shape(), "batch_norm").expect("rank 4");
                let sp = h * w;
                let gam = val(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for bi in 0..n {
                    for ch in 0..c {
                        let off = (bi * c + ch) * sp;
                        for j in off..off + sp {
                            dgamma[ch] += g[j] * xhat[j];
                            dbeta[ch] += g[j];
                        }
                    }
                }
                if wants(*x) {
                    let mut dx = vec![0.0; n * c * sp];
                    let m = (n * sp) as f64;
                    for ch in 0..c {
                        // Σ dxhat = γ·Σg and Σ dxhat·xhat = γ·Σ g·xhat.
                        let (sum_d, sum_dx) = (gam[ch] * dbeta[ch], gam[ch] * dgamma[ch]);
                        for bi in 0..n {
                            let off = (bi * c + ch) * sp;
                            for j in off..off + sp {
                                let dxhat = g[j] * gam[ch];
                                dx[j] = if *batch_stats {
                                    inv_std[ch] / m * (m * dxhat - sum_d - xhat[j] * sum_dx)
                                } else {
                                    dxhat * inv_std[ch]
                                };
                            }
                        }
                    }
                    acc(*x, dx);
                }
                acc(*gamma, dgamma);
                acc(*beta, dbeta);
            }
            Op::LocalAttention { q, k, v, window, weights } => {
                let (n, c, h, w) = dims4(nodes[q.index()].value.shape(), "local_attention").expect("rank 4");
                let lg = kernels::local_attention_backward(val(*q), val(*k), val(*v), weights, g, n * c, h, w, *window);
                acc(*q, lg.q);
                acc(*k, lg.k);
                acc(*v, lg.v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 5.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn second_backward_errors() {
        let mut g = Graph::new();
        let x = g.param(t(&[1], &[3.0]));
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Graph(_))));
    }

    #[test]
    fn foreign_loss_rejected() {
        let mut g1 = Graph::new();
        let mut g2 = Graph::new();
        let x = g1.param(t(&[1], &[3.0]));
        let s = g1.sum(x).unwrap();
        let y = g2.param(t(&[1], &[3.0]));
        g2.sum(y).unwrap();
        assert!(matches!(g2.backward(s), Err(Error::Graph(_))));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn backward_visits_in_reverse_once() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let y = g.exp(x).unwrap();
        let z = g.mul(y, x).unwrap();
        let s = g.sum(z).unwrap();
        let report = g.backward(s).unwrap();
        assert_eq!(report.visited, vec![3, 2, 1, 0]);
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        let c = g.constant(t(&[2], &[3.0, 4.0]));
        let m = g.mul(x, c).unwrap();
        let s = g.sum(m).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn leaky_relu_values_and_slope() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.leaky_relu(x, 0.2).unwrap();
        assert_eq!(g.value(y).data(), &[-0.2, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data()[0], 0.2);
        assert_eq!(g.grad(x).unwrap().data()[2], 1.0);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let u = g.constant(Tensor::full(&[1, 5], 0.7));
        let s = g.softmax(u, 1).unwrap();
        for &v in g.value(s).data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let x = g.constant(t(&[2], &[0.0, 3f64.ln()]));
        let s = g.softmax(x, 0).unwrap();
        let d = g.value(s).data();
        assert!((d[0] - 0.25).abs() < 1e-15 && (d[1] - 0.75).abs() < 1e-15);
        let y = g.constant(t(&[2], &[1000.0, 1000.0 + 3f64.ln()]));
        let s2 = g.softmax(y, 0).unwrap();
        assert!(g.value(s2).max_abs_diff(g.value(s)) < 1e-12);
    }

    #[test]
    fn broadcast_and_reduce() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 1], &[1.0, 2.0]));
        let b = g.broadcast_to(x, &[3, 2, 4]).unwrap();
        assert_eq!(g.value(b).numel(), 24);
        assert_eq!(g.value(b).data()[4], 2.0);
        let s = g.sum(b).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[12.0, 12.0]);
    }

    #[test]
    fn concat_and_index_select_route_gradients() {
        let mut g = Graph::new();
        let a = g.param(Tensor::randn(&[2, 1, 3], Rng::new(1)));
        let b = g.param(Tensor::randn(&[2, 2, 3], Rng::new(2)));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.shape(c), &[2, 3, 3]);
        let p = g.index_select(c, &[1, 0]).unwrap();
        let w = g.constant(Tensor::randn(&[2, 3, 3], Rng::new(3)));
        let m = g.mul(p, w).unwrap();
        let s = g.sum(m).unwrap();
        g.backward(s).unwrap();
        let wv = g.value(w).data().to_vec();
        // a row 0 lands in output row 1, channel 0
        assert_eq!(g.grad(a).unwrap().data()[0], wv[9]);
        assert_eq!(g.grad(b).unwrap().data()[0], wv[12]);
    }

    #[test]
    fn fully_connected_examples() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let w = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let y = g.linear(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 6.0]);
        let bad = g.constant(t(&[3, 2], &[0.0; 6]));
        assert!(matches!(g.linear(x, bad, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_shape_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[3, 1, 3, 3]));
        assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::Shape { .. })));
        let w = g.constant(Tensor::zeros(&[3, 2, 7, 7]));
        assert!(matches!(g.conv2d(x, w, None, 1, 1), Err(Error::Shape { .. })));
    }

    #[test]
    fn pixel_shuffle_rejects_indivisible() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 6, 2, 2]));
        assert!(g.pixel_shuffle(x, 2).is_err());
    }
}
