//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! A [`Graph`] owns every tensor produced during one forward pass. Ops
//! append nodes in execution order, so the node vector is already a
//! topological order; [`Graph::backward`] walks it in reverse once.
//! Gradients are *added* into each node's `grad`, which makes repeated
//! backward calls (and gradient accumulation across micro-batches)
//! additive until [`Graph::zero_grad`].

mod kernels;

use rand::Rng as _;

pub(crate) use kernels::sigmoid;
use kernels::{dot, gemm_nn, gemm_nt, gemm_tn, Conv2dGeom};

use crate::error::{dim_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::{strides, Real, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Swish,
    Sigmoid,
}

/// How the right operand maps onto the left one.
#[derive(Debug, Clone)]
enum Broadcast {
    Same,
    /// `b` repeats every `len(b)` elements.
    Suffix,
    /// Precomputed `b` offset per output element.
    Index(Vec<usize>),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Binary {
        kind: BinaryKind,
        a: Var,
        b: Var,
        bcast: Broadcast,
    },
    Scale {
        a: Var,
        factor: T,
    },
    MatMul {
        a: Var,
        w: Var,
    },
    Bmm {
        a: Var,
        b: Var,
        transpose_b: bool,
    },
    Reshape {
        a: Var,
    },
    Permute {
        a: Var,
        axes: Vec<usize>,
    },
    IndexSelect {
        a: Var,
        index: Vec<usize>,
    },
    LogSoftmax {
        a: Var,
    },
    Softmax {
        a: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Var,
        geom: Conv2dGeom,
    },
    DepthwiseConv1d {
        x: Var,
        w: Var,
        bias: Var,
        pad: usize,
    },
    Act {
        kind: Activation,
        a: Var,
    },
    Glu {
        a: Var,
    },
    Dropout {
        a: Var,
        mask: Vec<T>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    SumAll {
        a: Var,
    },
    /// Scalar whose gradient with respect to `a` was computed during the
    /// forward pass (dynamic-programming losses).
    Precomputed {
        a: Var,
        grad: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

#[derive(Debug, Default)]
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
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
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without gradient tracking (inputs, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---------------------------------------------------------------- ops

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    /// Elementwise op where `b` may broadcast into `a`: `b` is aligned to
    /// the trailing axes of `a`, and each of its axes either matches or has
    /// extent 1.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let bcast = broadcast_plan(&sa, &sb)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
        };
        let out: Vec<T> = match &bcast {
            Broadcast::Same => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Broadcast::Suffix => {
                let n = bv.len();
                av.iter().enumerate().map(|(i, &x)| f(x, bv[i % n])).collect()
            }
            Broadcast::Index(idx) => av.iter().zip(idx).map(|(&x, &j)| f(x, bv[j])).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(&sa, out)?,
            Op::Binary { kind, a, b, bcast },
            rg,
        ))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale { a, factor }, rg)
    }

    /// `a[..., k] · w[k, n] → [..., n]`. With rank-2 `a` this is the plain
    /// matrix product.
    pub fn matmul(&mut self, a: Var, w: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sw = self.shape(w).to_vec();
        if sa.is_empty() || sw.len() != 2 || sa[sa.len() - 1] != sw[0] {
            return Err(dim_err!("matmul of {sa:?} with {sw:?}: inner extents disagree"));
        }
        let k = sw[0];
        let n = sw[1];
        let m = self.value(a).len() / k.max(1);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(self.value(a).data(), self.value(w).data(), &mut out, m, k, n);
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = n;
        let rg = self.rg(a) || self.rg(w);
        Ok(self.push(Tensor::new(&shape, out)?, Op::MatMul { a, w }, rg))
    }

    /// Batched product of rank-3 tensors: `a[B,m,k] · b[B,k,n]`, or
    /// `a[B,m,k] · b[B,n,k]ᵀ` when `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(dim_err!("bmm of {sa:?} with {sb:?}"));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(dim_err!("bmm of {sa:?} with {sb:?}: inner extents disagree"));
        }
        let mut out = vec![T::zero(); batch * m * n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            for i in 0..batch {
                let a_i = &av[i * m * k..(i + 1) * m * k];
                let b_i = &bv[i * k * n..(i + 1) * k * n];
                let c_i = &mut out[i * m * n..(i + 1) * m * n];
                if transpose_b {
                    gemm_nt(a_i, b_i, c_i, m, k, n);
                } else {
                    gemm_nn(a_i, b_i, c_i, m, k, n);
                }
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(&[batch, m, n], out)?,
            Op::Bmm { a, b, transpose_b },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape { a }, rg))
    }

    /// Reorder axes; output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let mut seen = vec![false; sa.len()];
        if axes.len() != sa.len() || axes.iter().any(|&x| x >= sa.len() || std::mem::replace(&mut seen[x], true)) {
            return Err(dim_err!("invalid permutation {axes:?} for shape {sa:?}"));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&i| sa[i]).collect();
        let src = permute_sources(&sa, axes);
        let av = self.value(a).data();
        let out: Vec<T> = src.iter().map(|&j| av[j]).collect();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&out_shape, out)?,
            Op::Permute {
                a,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Rows of `a` along axis 0 in the order given by `index`.
    pub fn index_select(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let n0 = *sa.first().ok_or_else(|| dim_err!("index_select on a scalar"))?;
        if let Some(&bad) = index.iter().find(|&&i| i >= n0) {
            return Err(dim_err!("index {bad} out of range for axis of extent {n0}"));
        }
        let w: usize = sa[1..].iter().product();
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(index.len() * w);
        for &i in index {
            out.extend_from_slice(&av[i * w..(i + 1) * w]);
        }
        let mut shape = sa;
        shape[0] = index.len();
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::new(&shape, out)?,
            Op::IndexSelect {
                a,
                index: index.to_vec(),
            },
            rg,
        ))
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if !x.all_finite() {
            return Err(Error::Numeric("log_softmax input contains NaN or Inf".into()));
        }
        let v = *x.shape().last().ok_or_else(|| dim_err!("log_softmax on a scalar"))?;
        if v == 0 {
            return Err(dim_err!("log_softmax over an empty axis"));
        }
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(v) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&z| (z - max).exp()).sum::<T>().ln() + max;
            for z in row.iter_mut() {
                *z -= lse;
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::LogSoftmax { a }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = *x.shape().last().ok_or_else(|| dim_err!("softmax on a scalar"))?;
        let mut out = x.data().to_vec();
        for row in out.chunks_mut(v.max(1)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for z in row.iter_mut() {
                *z = (*z - max).exp();
                s += *z;
            }
            for z in row.iter_mut() {
                *z /= s;
            }
        }
        let out = Tensor::new(x.shape(), out)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Softmax { a }, rg))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let d = *sx.last().ok_or_else(|| dim_err!("layer_norm on a scalar"))?;
        if d == 0 || self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(dim_err!(
                "layer_norm of {sx:?} with gamma {:?} and beta {:?}",
                self.shape(gamma),
                self.shape(beta)
            ));
        }
        let eps = T::c(eps);
        let dt = T::c(d as f64);
        let xv = self.value(x).data();
        let g = self.value(gamma).data();
        let bta = self.value(beta).data();
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dt;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<T>() / dt;
            let inv = T::one() / (var + eps).sqrt();
            inv_std[r] = inv;
            for j in 0..d {
                let h = (row[j] - mean) * inv;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + bta[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(&sx, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Strided 2-D cross-correlation: `x[B,Cin,H,W]`, `w[Cout,Cin,kh,kw]`,
    /// `bias[Cout]` → `[B,Cout,Ho,Wo]` with `Ho = ⌊(H + 2p − kh)/s⌋ + 1`.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Var, stride: usize, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || self.shape(bias) != [sw[0]] || stride == 0 {
            return Err(dim_err!(
                "conv2d of input {sx:?} with kernel {sw:?} and bias {:?}",
                self.shape(bias)
            ));
        }
        let (h, wd) = (sx[2] + 2 * pad, sx[3] + 2 * pad);
        if sw[2] > h || sw[3] > wd {
            return Err(dim_err!(
                "conv2d kernel {}×{} larger than padded input {h}×{wd}",
                sw[2],
                sw[3]
            ));
        }
        let geom = Conv2dGeom {
            batch: sx[0],
            cin: sx[1],
            h: sx[2],
            w: sx[3],
            cout: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad,
            ho: (h - sw[2]) / stride + 1,
            wo: (wd - sw[3]) / stride + 1,
        };
        let npos = geom.ho * geom.wo;
        let patch = geom.patch();
        let mut cols = vec![T::zero(); npos * patch];
        let mut out = vec![T::zero(); geom.batch * geom.cout * npos];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let bv = self.value(bias).data();
            for b in 0..geom.batch {
                geom.im2col(xv, b, &mut cols);
                let ob = &mut out[b * geom.cout * npos..(b + 1) * geom.cout * npos];
                for co in 0..geom.cout {
                    let wrow = &wv[co * patch..(co + 1) * patch];
                    for q in 0..npos {
                        ob[co * npos + q] = bv[co] + dot(wrow, &cols[q * patch..(q + 1) * patch]);
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(bias);
        Ok(self.push(
            Tensor::new(&[geom.batch, geom.cout, geom.ho, geom.wo], out)?,
            Op::Conv2d { x, w, bias, geom },
            rg,
        ))
    }

    /// Depthwise 1-D cross-correlation over time for `x[B,T,C]` with
    /// `w[C,k]`, `bias[C]`, stride 1 and `pad` zeros on both ends.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, bias: Var, pad: usize) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        let sw = self.shape(w).to_vec();
        if sx.len() != 3 || sw.len() != 2 || sw[0] != sx[2] || self.shape(bias) != [sx[2]] {
            return Err(dim_err!(
                "depthwise conv of input {sx:?} with kernel {sw:?} and bias {:?}",
                self.shape(bias)
            ));
        }
        let (batch, t, c) = (sx[0], sx[1], sx[2]);
        let k = sw[1];
        if k > t + 2 * pad {
            return Err(dim_err!("depthwise kernel {k} larger than padded input {}", t + 2 * pad));
        }
        let to = t + 2 * pad - k + 1;
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let bv = self.value(bias).data();
        let mut out = vec![T::zero(); batch * to * c];
        for b in 0..batch {
            for o in 0..to {
                let orow = &mut out[(b * to + o) * c..(b * to + o + 1) * c];
                orow.copy_from_slice(bv);
                for j in 0..k {
                    let ti = o as isize + j as isize - pad as isize;
                    if ti < 0 || ti as usize >= t {
                        continue;
                    }
                    let xrow = &xv[(b * t + ti as usize) * c..(b * t + ti as usize + 1) * c];
                    for ch in 0..c {
                        orow[ch] += wv[ch * k + j] * xrow[ch];
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(bias);
        Ok(self.push(
            Tensor::new(&[batch, to, c], out)?,
            Op::DepthwiseConv1d { x, w, bias, pad },
            rg,
        ))
    }

    pub fn activation(&mut self, kind: Activation, a: Var) -> Var {
        let out = self.value(a).map(|x| match kind {
            Activation::Relu => x.max(T::zero()),
            Activation::Swish => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
        });
        let rg = self.rg(a);
        self.push(out, Op::Act { kind, a }, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(Activation::Relu, a)
    }

    pub fn swish(&mut self, a: Var) -> Var {
        self.activation(Activation::Swish, a)
    }

    /// Gated linear unit over the last axis: first half · σ(second half).
    pub fn glu(&mut self, a: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let d2 = *sa.last().ok_or_else(|| dim_err!("glu on a scalar"))?;
        if d2 % 2 != 0 {
            return Err(dim_err!("glu needs an even last axis, got {sa:?}"));
        }
        let d = d2 / 2;
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(av.len() / 2);
        for row in av.chunks(d2) {
            for j in 0..d {
                out.push(row[j] * sigmoid(row[d + j]));
            }
        }
        let mut shape = sa;
        *shape.last_mut().unwrap() = d;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Glu { a }, rg))
    }

    /// Inverted dropout. Identity when `p == 0` or outside training.
    pub fn dropout(&mut self, a: Var, p: f64, training: bool, rng: &mut Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = T::c(1.0 / (1.0 - p));
        let n = self.value(a).len();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        let av = self.value(a);
        let out = Tensor::new(
            av.shape(),
            av.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
        )?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout { a, mask }, rg))
    }

    /// Rows of `table[V,d]` for each id; output shape is `shape ++ [d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], shape: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || shape.iter().product::<usize>() != ids.len() {
            return Err(dim_err!("embedding of table {st:?} with {} ids as {shape:?}", ids.len()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= st[0]) {
            return Err(dim_err!("token id {bad} outside embedding table of {} rows", st[0]));
        }
        let d = st[1];
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let mut oshape = shape.to_vec();
        oshape.push(d);
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(&oshape, out)?,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::SumAll { a }, rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, T::c(1.0 / n as f64))
    }

    /// Scalar node with a gradient worked out by the caller.
    pub(crate) fn precomputed_scalar(&mut self, a: Var, value: T, grad: Vec<T>) -> Var {
        debug_assert_eq!(grad.len(), self.value(a).len());
        let rg = self.rg(a);
        self.push(Tensor::scalar(value), Op::Precomputed { a, grad }, rg)
    }

    // ----------------------------------------------------------- backward

    /// Accumulate d(root)/d(node) into the `grad` of every tracked node
    /// that `root` depends on.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        if !self.rg(root) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut adj);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, &d) in acc.data_mut().iter_mut().zip(&g) {
                        *a += d;
                    }
                }
                None => {
                    node.grad = Some(Tensor::new(node.value.shape(), g).expect("grad shape"));
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let nodes = &self.nodes;
        let tracked = |v: Var| nodes[v.0].requires_grad;
        let mut send = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = adj[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b, bcast } => {
                let (a, b) = (*a, *b);
                let av = val(a);
                let bv = val(b);
                let bidx = |j: usize| match bcast {
                    Broadcast::Same => j,
                    Broadcast::Suffix => j % bv.len(),
                    Broadcast::Index(idx) => idx[j],
                };
                send(a, &mut |da| match kind {
                    BinaryKind::Add | BinaryKind::Sub => {
                        for (d, &x) in da.iter_mut().zip(g) {
                            *d += x;
                        }
                    }
                    BinaryKind::Mul => {
                        for (j, d) in da.iter_mut().enumerate() {
                            *d += g[j] * bv[bidx(j)];
                        }
                    }
                });
                send(b, &mut |db| {
                    for j in 0..g.len() {
                        let contrib = match kind {
                            BinaryKind::Add => g[j],
                            BinaryKind::Sub => -g[j],
                            BinaryKind::Mul => g[j] * av[j],
                        };
                        db[bidx(j)] += contrib;
                    }
                });
            }
            Op::Scale { a, factor } => send(*a, &mut |da| {
                for (d, &x) in da.iter_mut().zip(g) {
                    *d += x * *factor;
                }
            }),
            Op::MatMul { a, w } => {
                let (a, w) = (*a, *w);
                let sw = nodes[w.0].value.shape();
                let (k, n) = (sw[0], sw[1]);
                let m = g.len() / n.max(1);
                let wv = val(w);
                let av = val(a);
                send(a, &mut |da| gemm_nt(g, wv, da, m, n, k));
                send(w, &mut |dw| gemm_tn(av, g, dw, m, k, n));
            }
            Op::Bmm { a, b, transpose_b } => {
                let (a, b) = (*a, *b);
                let sa = nodes[a.0].value.shape();
                let (batch, m, k) = (sa[0], sa[1], sa[2]);
                let n = node.value.shape()[2];
                let av = val(a);
                let bv = val(b);
                send(a, &mut |da| {
                    for i in 0..batch {
                        let g_i = &g[i * m * n..(i + 1) * m * n];
                        let b_i = &bv[i * k * n..(i + 1) * k * n];
                        let da_i = &mut da[i * m * k..(i + 1) * m * k];
                        if *transpose_b {
                            gemm_nn(g_i, b_i, da_i, m, n, k);
                        } else {
                            gemm_nt(g_i, b_i, da_i, m, n, k);
                        }
                    }
                });
                send(b, &mut |db| {
                    for i in 0..batch {
                        let g_i = &g[i * m * n..(i + 1) * m * n];
                        let a_i = &av[i * m * k..(i + 1) * m * k];
                        let db_i = &mut db[i * k * n..(i + 1) * k * n];
                        if *transpose_b {
                            // db[n×k] += gᵀ[n×m] · a[m×k]
                            gemm_tn(g_i, a_i, db_i, m, n, k);
                        } else {
                            gemm_tn(a_i, g_i, db_i, m, k, n);
                        }
                    }
                });
            }
            Op::Reshape { a } => send(*a, &mut |da| {
                for (d, &x) in da.iter_mut().zip(g) {
                    *d += x;
                }
            }),
            Op::Permute { a, axes } => {
                let src = permute_sources(nodes[a.0].value.shape(), axes);
                send(*a, &mut |da| {
                    for (o, &j) in src.iter().enumerate() {
                        da[j] += g[o];
                    }
                });
            }
            Op::IndexSelect { a, index } => {
                let w = g.len() / index.len().max(1);
                send(*a, &mut |da| {
                    for (o, &i) in index.iter().enumerate() {
                        for j in 0..w {
                            da[i * w + j] += g[o * w + j];
                        }
                    }
                });
            }
            Op::LogSoftmax { a } => {
                let y = node.value.data();
                let v = *node.value.shape().last().unwrap();
                send(*a, &mut |da| {
                    for ((dr, gr), yr) in da.chunks_mut(v).zip(g.chunks(v)).zip(y.chunks(v)) {
                        let s: T = gr.iter().copied().sum();
                        for j in 0..v {
                            dr[j] += gr[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let v = *node.value.shape().last().unwrap();
                send(*a, &mut |da| {
                    for ((dr, gr), yr) in da.chunks_mut(v).zip(g.chunks(v)).zip(y.chunks(v)) {
                        let s = dot(gr, yr);
                        for j in 0..v {
                            dr[j] += yr[j] * (gr[j] - s);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = *node.value.shape().last().unwrap();
                let gv = val(*gamma);
                let dt = T::c(d as f64);
                send(*x, &mut |dx| {
                    for (r, &inv) in inv_std.iter().enumerate() {
                        let gr = &g[r * d..(r + 1) * d];
                        let hr = &xhat[r * d..(r + 1) * d];
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            dx[r * d + j] += inv / dt * (dt * dh - s1 - hr[j] * s2);
                        }
                    }
                });
                send(*gamma, &mut |dg| {
                    for (j, (&gj, &hj)) in g.iter().zip(xhat).enumerate() {
                        dg[j % d] += gj * hj;
                    }
                });
                send(*beta, &mut |db| {
                    for (j, &gj) in g.iter().enumerate() {
                        db[j % d] += gj;
                    }
                });
            }
            Op::Conv2d { x, w, bias, geom } => {
                let geom = *geom;
                let npos = geom.ho * geom.wo;
                let patch = geom.patch();
                let xv = val(*x);
                let wv = val(*w);
                send(*bias, &mut |db| {
                    for b in 0..geom.batch {
                        for co in 0..geom.cout {
                            let base = (b * geom.cout + co) * npos;
                            db[co] += g[base..base + npos].iter().copied().sum::<T>();
                        }
                    }
                });
                let mut cols = vec![T::zero(); npos * patch];
                if tracked(*w) {
                    send(*w, &mut |dw| {
                        for b in 0..geom.batch {
                            geom.im2col(xv, b, &mut cols);
                            for co in 0..geom.cout {
                                let gr = &g[(b * geom.cout + co) * npos..(b * geom.cout + co + 1) * npos];
                                let dwr = &mut dw[co * patch..(co + 1) * patch];
                                for (q, &gq) in gr.iter().enumerate() {
                                    if gq == T::zero() {
                                        continue;
                                    }
                                    for (d, &c) in dwr.iter_mut().zip(&cols[q * patch..(q + 1) * patch]) {
                                        *d += gq * c;
                                    }
                                }
                            }
                        }
                    });
                }
                send(*x, &mut |dx| {
                    for b in 0..geom.batch {
                        cols.iter_mut().for_each(|c| *c = T::zero());
                        for co in 0..geom.cout {
                            let gr = &g[(b * geom.cout + co) * npos..(b * geom.cout + co + 1) * npos];
                            let wr = &wv[co * patch..(co + 1) * patch];
                            for (q, &gq) in gr.iter().enumerate() {
                                if gq == T::zero() {
                                    continue;
                                }
                                for (c, &wk) in cols[q * patch..(q + 1) * patch].iter_mut().zip(wr) {
                                    *c += gq * wk;
                                }
                            }
                        }
                        geom.col2im(&cols, b, dx);
                    }
                });
            }
            Op::DepthwiseConv1d { x, w, bias, pad } => {
                let sx = nodes[x.0].value.shape();
                let (batch, t, c) = (sx[0], sx[1], sx[2]);
                let k = nodes[w.0].value.shape()[1];
                let to = node.value.shape()[1];
                let xv = val(*x);
                let wv = val(*w);
                let pad = *pad;
                let taps = |mut f: Box<dyn FnMut(usize, usize, usize, usize) + '_>| {
                    for b in 0..batch {
                        for o in 0..to {
                            for j in 0..k {
                                let ti = o as isize + j as isize - pad as isize;
                                if ti >= 0 && (ti as usize) < t {
                                    f(b, o, j, ti as usize);
                                }
                            }
                        }
                    }
                };
                send(*bias, &mut |db| {
                    for (j, &gj) in g.iter().enumerate() {
                        db[j % c] += gj;
                    }
                });
                send(*w, &mut |dw| {
                    taps(Box::new(|b, o, j, ti| {
                        let gr = &g[(b * to + o) * c..(b * to + o + 1) * c];
                        let xr = &xv[(b * t + ti) * c..(b * t + ti + 1) * c];
                        for ch in 0..c {
                            dw[ch * k + j] += gr[ch] * xr[ch];
                        }
                    }))
                });
                send(*x, &mut |dx| {
                    taps(Box::new(|b, o, j, ti| {
                        for ch in 0..c {
                            dx[(b * t + ti) * c + ch] += g[(b * to + o) * c + ch] * wv[ch * k + j];
                        }
                    }))
                });
            }
            Op::Act { kind, a } => {
                let av = val(*a);
                let y = node.value.data();
                send(*a, &mut |da| {
                    for j in 0..g.len() {
                        let dydx = match kind {
                            Activation::Relu => {
                                if av[j] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                            Activation::Swish => {
                                let s = sigmoid(av[j]);
                                s + av[j] * s * (T::one() - s)
                            }
                            Activation::Sigmoid => y[j] * (T::one() - y[j]),
                        };
                        da[j] += g[j] * dydx;
                    }
                });
            }
            Op::Glu { a } => {
                let av = val(*a);
                let d = *node.value.shape().last().unwrap();
                send(*a, &mut |da| {
                    for (r, row) in av.chunks(2 * d).enumerate() {
                        for j in 0..d {
                            let s = sigmoid(row[d + j]);
                            let gj = g[r * d + j];
                            da[r * 2 * d + j] += gj * s;
                            da[r * 2 * d + d + j] += gj * row[j] * s * (T::one() - s);
                        }
                    }
                });
            }
            Op::Dropout { a, mask } => send(*a, &mut |da| {
                for ((d, &x), &m) in da.iter_mut().zip(g).zip(mask) {
                    *d += x * m;
                }
            }),
            Op::Embedding { table, ids } => {
                let d = nodes[table.0].value.shape()[1];
                send(*table, &mut |dt| {
                    for (o, &i) in ids.iter().enumerate() {
                        for j in 0..d {
                            dt[i * d + j] += g[o * d + j];
                        }
                    }
                });
            }
            Op::SumAll { a } => send(*a, &mut |da| {
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }),
            Op::Precomputed { a, grad } => send(*a, &mut |da| {
                for (d, &x) in da.iter_mut().zip(grad) {
                    *d += x * g[0];
                }
            }),
        }
    }
}

fn broadcast_plan(sa: &[usize], sb: &[usize]) -> Result<Broadcast> {
    if sa == sb {
        return Ok(Broadcast::Same);
    }
    let err = || dim_err!("cannot broadcast {sb:?} into {sa:?}");
    if sb.len() > sa.len() {
        return Err(err());
    }
    let off = sa.len() - sb.len();
    for (i, &e) in sb.iter().enumerate() {
        if e != sa[off + i] && e != 1 {
            return Err(err());
        }
    }
    if sb.iter().zip(&sa[off..]).all(|(x, y)| x == y) {
        return Ok(Broadcast::Suffix);
    }
    let bstr = strides(sb);
    let total: usize = sa.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut coord = vec![0usize; sa.len()];
    for _ in 0..total {
        let mut j = 0;
        for (i, &e) in sb.iter().enumerate() {
            if e != 1 {
                j += coord[off + i] * bstr[i];
            }
        }
        idx.push(j);
        for ax in (0..sa.len()).rev() {
            coord[ax] += 1;
            if coord[ax] < sa[ax] {
                break;
            }
            coord[ax] = 0;
        }
    }
    Ok(Broadcast::Index(idx))
}

/// Flat source offset in the input for each output element of a permute.
fn permute_sources(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let in_str = strides(shape);
    let out_shape: Vec<usize> = axes.iter().map(|&i| shape[i]).collect();
    let total: usize = shape.iter().product();
    let mut src = Vec::with_capacity(total);
    let mut coord = vec![0usize; axes.len()];
    for _ in 0..total {
        src.push(coord.iter().zip(axes).map(|(&c, &ax)| c * in_str[ax]).sum());
        for ax in (0..axes.len()).rev() {
            coord[ax] += 1;
            if coord[ax] < out_shape[ax] {
                break;
            }
            coord[ax] = 0;
        }
    }
    src
}
