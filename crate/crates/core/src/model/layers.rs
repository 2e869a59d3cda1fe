//! Building blocks shared by the encoder and decoder.

use super::{Init, ParamId, Session};
use crate::autodiff::{Activation, Var};
use crate::error::Result;
use crate::tensor::Real;

/// Affine map over the last axis.
#[derive(Debug, Clone)]
pub(super) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, inp: usize, out: usize) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        Self {
            w: init.uniform(format!("{name}.weight"), &[inp, out], bound),
            b: init.full(format!("{name}.bias"), &[out], 0.0),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let w = s.p(self.w);
        let b = s.p(self.b);
        let y = s.graph.matmul(x, w)?;
        s.graph.add(y, b)
    }
}

#[derive(Debug, Clone)]
pub(super) struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

pub(super) const LN_EPS: f64 = 1e-12;

impl Norm {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, d: usize) -> Self {
        Self {
            gamma: init.full(format!("{name}.gamma"), &[d], 1.0),
            beta: init.full(format!("{name}.beta"), &[d], 0.0),
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let g = s.p(self.gamma);
        let b = s.p(self.beta);
        s.graph.layer_norm(x, g, b, LN_EPS)
    }
}

/// Position-wise `linear → activation → dropout → linear`.
#[derive(Debug, Clone)]
pub(super) struct FeedForward {
    up: Linear,
    down: Linear,
    act: Activation,
}

impl FeedForward {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, d: usize, hidden: usize, act: Activation) -> Self {
        Self {
            up: Linear::new(init, &format!("{name}.up"), d, hidden),
            down: Linear::new(init, &format!("{name}.down"), hidden, d),
            act,
        }
    }

    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let h = self.up.forward(s, x)?;
        let h = s.graph.activation(self.act, h);
        let h = s.dropout(h)?;
        self.down.forward(s, h)
    }
}

#[derive(Debug, Clone)]
pub(super) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
}

impl Attention {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, d: usize, heads: usize) -> Self {
        Self {
            q: Linear::new(init, &format!("{name}.q"), d, d),
            k: Linear::new(init, &format!("{name}.k"), d, d),
            v: Linear::new(init, &format!("{name}.v"), d, d),
            out: Linear::new(init, &format!("{name}.out"), d, d),
            heads,
        }
    }

    /// `[B, T, d]` → `[B·H, T, d/H]`
    fn split<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let [b, t, d] = super::var_dims(&s.graph, x);
        let h = self.heads;
        let x = s.graph.reshape(x, &[b, t, h, d / h])?;
        let x = s.graph.permute(x, &[0, 2, 1, 3])?;
        s.graph.reshape(x, &[b * h, t, d / h])
    }

    /// Scaled dot-product attention of `query[B,T,d]` over `memory[B,S,d]`.
    /// `mask` is added to the `[B, H, T, S]` scores and must broadcast
    /// into them.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, query: Var, memory: Var, mask: Var) -> Result<Var> {
        let [b, t, d] = super::var_dims(&s.graph, query);
        let src = s.graph.shape(memory)[1];
        let h = self.heads;
        let q = self.q.forward(s, query)?;
        let k = self.k.forward(s, memory)?;
        let v = self.v.forward(s, memory)?;
        let q = self.split(s, q)?;
        let q = s.graph.scale(q, T::c(1.0 / ((d / h) as f64).sqrt()));
        let k = self.split(s, k)?;
        let v = self.split(s, v)?;
        let scores = s.graph.bmm(q, k, true)?;
        let scores = s.graph.reshape(scores, &[b, h, t, src])?;
        let scores = s.graph.add(scores, mask)?;
        let weights = s.graph.softmax(scores)?;
        let weights = s.dropout(weights)?;
        let weights = s.graph.reshape(weights, &[b * h, t, src])?;
        let ctx = s.graph.bmm(weights, v, false)?;
        let ctx = s.graph.reshape(ctx, &[b, h, t, d / h])?;
        let ctx = s.graph.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = s.graph.reshape(ctx, &[b, t, d])?;
        self.out.forward(s, ctx)
    }
}

/// Conformer convolution module: pointwise expansion with GLU, depthwise
/// convolution over time, normalization, swish, pointwise projection.
/// Layer normalization stands in for batch normalization so that rows of a
/// batch never influence each other.
#[derive(Debug, Clone)]
pub(super) struct ConvModule {
    expand: Linear,
    depthwise_w: ParamId,
    depthwise_b: ParamId,
    norm: Norm,
    project: Linear,
    kernel: usize,
}

impl ConvModule {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, d: usize, kernel: usize) -> Self {
        Self {
            expand: Linear::new(init, &format!("{name}.expand"), d, 2 * d),
            depthwise_w: init.uniform(format!("{name}.depthwise.weight"), &[d, kernel], 1.0 / (kernel as f64).sqrt()),
            depthwise_b: init.full(format!("{name}.depthwise.bias"), &[d], 0.0),
            norm: Norm::new(init, &format!("{name}.norm"), d),
            project: Linear::new(init, &format!("{name}.project"), d, d),
            kernel,
        }
    }

    /// `frames` is the `[B, T, 1]` validity mask; padded frames are zeroed
    /// before the depthwise convolution so they never leak into valid ones.
    pub fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var, frames: Var) -> Result<Var> {
        let h = self.expand.forward(s, x)?;
        let h = s.graph.glu(h)?;
        let h = s.graph.mul(h, frames)?;
        let w = s.p(self.depthwise_w);
        let b = s.p(self.depthwise_b);
        let h = s.graph.depthwise_conv1d(h, w, b, self.kernel / 2)?;
        let h = self.norm.forward(s, h)?;
        let h = s.graph.swish(h);
        self.project.forward(s, h)
    }
}
