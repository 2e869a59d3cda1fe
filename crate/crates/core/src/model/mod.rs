//! Conformer-style encoder with mixup injection points, CTC head, and a
//! small Transformer decoder.
//!
//! Parameters live in a flat [`Params`] store addressed by [`ParamId`]. A
//! forward pass runs inside a [`Session`], which copies the parameters it
//! touches into a fresh [`Graph`] and hands their gradients back after
//! backward.

mod checkpoint;
mod decoder;
mod encoder;
mod layers;

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};

pub use checkpoint::{checkpoint_width, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use decoder::{ctc_collapse, greedy_decode, DecodeMode};
pub(crate) use decoder::teacher_forcing;
pub use encoder::{subsampled_len, ForwardTrace, MIN_FRAMES};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};
use decoder::Decoder;
use encoder::{ConformerBlock, Subsampling};
use layers::Linear;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub feature_dim: usize,
    pub model_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub conv_kernel: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    /// Channels of both subsampling convolutions.
    pub subsample_channels: usize,
    /// Longest decoder prefix, including the leading sos.
    pub max_target_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            model_dim: 64,
            encoder_layers: 4,
            decoder_layers: 2,
            heads: 2,
            ffn_dim: 128,
            conv_kernel: 7,
            dropout: 0.1,
            vocab_size: 12,
            subsample_channels: 32,
            max_target_len: 64,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.encoder_layers == 0 {
            return bad("the encoder needs at least one layer".into());
        }
        if self.model_dim == 0 || self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "model dim {} is not divisible by {} heads",
                self.model_dim, self.heads
            ));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return bad(format!("conv kernel {} must be odd", self.conv_kernel));
        }
        if self.feature_dim < MIN_FRAMES {
            return bad(format!(
                "feature dim {} is below the subsampling minimum of {MIN_FRAMES}",
                self.feature_dim
            ));
        }
        if self.vocab_size < 3 {
            return bad(format!("vocabulary of {} cannot hold blank, a token and sos/eos", self.vocab_size));
        }
        if self.ffn_dim == 0 || self.subsample_channels == 0 || self.max_target_len < 2 {
            return bad("ffn dim, subsample channels and max target length must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn blank(&self) -> usize {
        0
    }

    pub fn sos_eos(&self) -> usize {
        self.vocab_size - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Real> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
}

impl<T: Real> Params<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    fn add(&mut self, name: String, value: Tensor<T>) -> ParamId {
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.values[id.0]
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }
}

/// Draws initial values while the model registers its parameters.
struct Init<'a, T: Real> {
    params: Params<T>,
    rng: &'a mut Rng,
}

impl<T: Real> Init<'_, T> {
    fn uniform(&mut self, name: String, shape: &[usize], bound: f64) -> ParamId {
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::c(self.rng.random_range(-bound..bound))).collect();
        self.params.add(name, Tensor::new(shape, data).expect("shape"))
    }

    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::c(dist.sample(self.rng))).collect();
        self.params.add(name, Tensor::new(shape, data).expect("shape"))
    }

    fn full(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        self.params.add(name, Tensor::full(shape, T::c(value)))
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    cfg: ModelConfig,
    params: Params<T>,
    subsample: Subsampling,
    blocks: Vec<ConformerBlock>,
    ctc_head: Linear,
    decoder: Decoder,
}

impl<T: Real> Model<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let mut init = Init {
            params: Params::new(),
            rng,
        };
        let subsample = Subsampling::new(&mut init, cfg);
        let blocks = (0..cfg.encoder_layers)
            .map(|i| ConformerBlock::new(&mut init, &format!("encoder.{i}"), cfg))
            .collect();
        let ctc_head = Linear::new(&mut init, "ctc", cfg.model_dim, cfg.vocab_size);
        let decoder = Decoder::new(&mut init, cfg);
        Ok(Self {
            cfg: cfg.clone(),
            params: init.params,
            subsample,
            blocks,
            ctc_head,
            decoder,
        })
    }

    /// Rebuild a model from named tensors; every parameter of `cfg` must be
    /// present with its expected shape.
    pub fn from_named(cfg: &ModelConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        let mut model = Self::new(cfg, &mut Rng::seed_from_u64(0))?;
        if named.len() != model.params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                named.len()
            )));
        }
        for (name, value) in named {
            let i = model
                .params
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::Config(format!("unexpected parameter {name}")))?;
            if model.params.values[i].shape() != value.shape() {
                return Err(Error::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    model.params.values[i].shape()
                )));
            }
            model.params.values[i] = value;
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Same architecture and values at another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            cfg: self.cfg.clone(),
            params: Params {
                names: self.params.names.clone(),
                values: self.params.values.iter().map(Tensor::cast).collect(),
            },
            subsample: self.subsample.clone(),
            blocks: self.blocks.clone(),
            ctc_head: self.ctc_head.clone(),
            decoder: self.decoder.clone(),
        }
    }
}

/// One forward (and optionally backward) pass over a model.
///
/// In training mode parameters enter the graph as tracked leaves and dropout
/// is active; otherwise they are constants and dropout is the identity.
pub struct Session<'m, T: Real> {
    pub graph: Graph<T>,
    model: &'m Model<T>,
    leaves: Vec<Option<Var>>,
    training: bool,
    dropout: Rng,
}

impl<'m, T: Real> Session<'m, T> {
    pub fn new(model: &'m Model<T>, training: bool, dropout: Rng) -> Self {
        Self {
            graph: Graph::new(),
            model,
            leaves: vec![None; model.params.len()],
            training,
            dropout,
        }
    }

    /// Inference session with no dropout randomness.
    pub fn eval(model: &'m Model<T>) -> Self {
        Self::new(model, false, Rng::seed_from_u64(0))
    }

    pub fn model(&self) -> &'m Model<T> {
        self.model
    }

    pub fn training(&self) -> bool {
        self.training
    }

    fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let value = self.model.params.values[id.0].clone();
        let v = if self.training {
            self.graph.param(value)
        } else {
            self.graph.constant(value)
        };
        self.leaves[id.0] = Some(v);
        v
    }

    fn dropout(&mut self, x: Var) -> Result<Var> {
        let p = self.model.cfg.dropout;
        self.graph.dropout(x, p, self.training, &mut self.dropout)
    }

    pub(crate) fn dropout_state(&self) -> Rng {
        self.dropout.clone()
    }

    pub(crate) fn set_dropout_state(&mut self, rng: Rng) {
        self.dropout = rng;
    }

    /// Gradients of every parameter touched by the pass, indexed like
    /// [`Params`]. Untouched parameters yield `None`.
    pub fn take_gradients(&mut self) -> Vec<Option<Tensor<T>>> {
        let leaves = std::mem::take(&mut self.leaves);
        leaves
            .iter()
            .map(|v| v.and_then(|v| self.graph.take_grad(v)))
            .collect()
    }
}

/// Sinusoidal position table `[len, d]`.
pub fn positional_encoding<T: Real>(len: usize, d: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            data[pos * d + i] = T::c(angle.sin());
            if i + 1 < d {
                data[pos * d + i + 1] = T::c(angle.cos());
            }
        }
    }
    Tensor::new(&[len, d], data).expect("shape")
}

/// Additive key mask `[B, 1, 1, S]`: 0 on valid keys, a large negative value
/// on padding.
fn key_mask<T: Real>(lengths: &[usize], s: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); lengths.len() * s];
    for (b, &len) in lengths.iter().enumerate() {
        for v in &mut data[b * s + len.min(s)..(b + 1) * s] {
            *v = T::c(-1e9);
        }
    }
    Tensor::new(&[lengths.len(), 1, 1, s], data).expect("shape")
}

/// Multiplicative frame mask `[B, T, 1]`.
fn frame_mask<T: Real>(lengths: &[usize], t: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); lengths.len() * t];
    for (b, &len) in lengths.iter().enumerate() {
        for v in &mut data[b * t..b * t + len.min(t)] {
            *v = T::one();
        }
    }
    Tensor::new(&[lengths.len(), t, 1], data).expect("shape")
}

fn var_dims<T: Real>(g: &Graph<T>, v: Var) -> [usize; 3] {
    let s = g.shape(v);
    [s[0], s[1], s[2]]
}
