//! Convolutional subsampling and Conformer blocks, with the mixup hook.

use super::layers::{Attention, ConvModule, FeedForward, Linear, Norm};
use super::{frame_mask, key_mask, positional_encoding, Init, ModelConfig, ParamId, Session};
use crate::augment::{mix_lengths, mix_rows, spec_augment_batch, AugmentOutcome, MixPlan, SpecAugmentConfig};
use crate::autodiff::{Activation, Var};
use crate::dataio::Batch;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

/// Shortest input the two stride-2 convolutions accept.
pub const MIN_FRAMES: usize = 7;

/// Frames left after subsampling `frames` input frames by four.
pub fn subsampled_len(frames: usize) -> usize {
    (frames.saturating_sub(1) / 2).saturating_sub(1) / 2
}

/// Record of one encoder pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T: Real> {
    pub mix_applied: bool,
    pub layer: Option<usize>,
    pub lambda: Option<f64>,
    pub permutation: Vec<usize>,
    /// `[B, T', d]`
    pub encoder_output: Var,
    /// Valid subsampled lengths, after any mixing.
    pub lengths: Vec<usize>,
    /// Subsampled input (index 0) and each block's output before mixing.
    pub hidden: Vec<Var>,
    /// Input features right after input-level mixing, when it happened.
    pub mixed_input: Option<Tensor<T>>,
    /// Input features as fed to subsampling.
    pub encoder_input: Tensor<T>,
    pub augment: Vec<AugmentOutcome>,
}

#[derive(Debug, Clone)]
pub(super) struct Subsampling {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    project: Linear,
}

impl Subsampling {
    pub fn new<T: Real>(init: &mut Init<'_, T>, cfg: &ModelConfig) -> Self {
        let c = cfg.subsample_channels;
        let f2 = subsampled_len(cfg.feature_dim);
        Self {
            conv1_w: init.uniform("subsample.conv1.weight".into(), &[c, 1, 3, 3], 1.0 / 3.0),
            conv1_b: init.full("subsample.conv1.bias".into(), &[c], 0.0),
            conv2_w: init.uniform("subsample.conv2.weight".into(), &[c, c, 3, 3], 1.0 / (9.0 * c as f64).sqrt()),
            conv2_b: init.full("subsample.conv2.bias".into(), &[c], 0.0),
            project: Linear::new(init, "subsample.project", c * f2, cfg.model_dim),
        }
    }

    /// `[B, T, F]` → `[B, T', d]` scaled by √d, plus positional encoding.
    pub(super) fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var) -> Result<Var> {
        let [b, t, f] = super::var_dims(&s.graph, x);
        let d = s.model.cfg.model_dim;
        let x = s.graph.reshape(x, &[b, 1, t, f])?;
        let (w1, b1) = (s.p(self.conv1_w), s.p(self.conv1_b));
        let h = s.graph.conv2d(x, w1, b1, 2, 0)?;
        let h = s.graph.relu(h);
        let (w2, b2) = (s.p(self.conv2_w), s.p(self.conv2_b));
        let h = s.graph.conv2d(h, w2, b2, 2, 0)?;
        let h = s.graph.relu(h);
        let &[_, c, t2, f2] = s.graph.shape(h) else { unreachable!() };
        let h = s.graph.permute(h, &[0, 2, 1, 3])?;
        let h = s.graph.reshape(h, &[b, t2, c * f2])?;
        let h = self.project.forward(s, h)?;
        let h = s.graph.scale(h, T::c((d as f64).sqrt()));
        let pe = s.graph.constant(positional_encoding(t2, d));
        let h = s.graph.add(h, pe)?;
        s.dropout(h)
    }
}

#[derive(Debug, Clone)]
pub(super) struct ConformerBlock {
    ff1_norm: Norm,
    ff1: FeedForward,
    att_norm: Norm,
    att: Attention,
    conv_norm: Norm,
    conv: ConvModule,
    ff2_norm: Norm,
    ff2: FeedForward,
    out_norm: Norm,
}

impl ConformerBlock {
    pub fn new<T: Real>(init: &mut Init<'_, T>, name: &str, cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        Self {
            ff1_norm: Norm::new(init, &format!("{name}.ff1_norm"), d),
            ff1: FeedForward::new(init, &format!("{name}.ff1"), d, cfg.ffn_dim, Activation::Swish),
            att_norm: Norm::new(init, &format!("{name}.att_norm"), d),
            att: Attention::new(init, &format!("{name}.att"), d, cfg.heads),
            conv_norm: Norm::new(init, &format!("{name}.conv_norm"), d),
            conv: ConvModule::new(init, &format!("{name}.conv"), d, cfg.conv_kernel),
            ff2_norm: Norm::new(init, &format!("{name}.ff2_norm"), d),
            ff2: FeedForward::new(init, &format!("{name}.ff2"), d, cfg.ffn_dim, Activation::Swish),
            out_norm: Norm::new(init, &format!("{name}.out_norm"), d),
        }
    }

    /// Macaron block ending in its own layer norm; padded frames of the
    /// result are zero.
    fn forward<T: Real>(&self, s: &mut Session<'_, T>, x: Var, keys: Var, frames: Var) -> Result<Var> {
        let h = self.ff1_norm.forward(s, x)?;
        let h = self.ff1.forward(s, h)?;
        let h = s.dropout(h)?;
        let h = s.graph.scale(h, T::c(0.5));
        let x = s.graph.add(x, h)?;

        let h = self.att_norm.forward(s, x)?;
        let h = self.att.forward(s, h, h, keys)?;
        let h = s.dropout(h)?;
        let x = s.graph.add(x, h)?;

        let h = self.conv_norm.forward(s, x)?;
        let h = self.conv.forward(s, h, frames)?;
        let h = s.dropout(h)?;
        let x = s.graph.add(x, h)?;

        let h = self.ff2_norm.forward(s, x)?;
        let h = self.ff2.forward(s, h)?;
        let h = s.dropout(h)?;
        let h = s.graph.scale(h, T::c(0.5));
        let x = s.graph.add(x, h)?;

        let x = self.out_norm.forward(s, x)?;
        s.graph.mul(x, frames)
    }
}

impl<T: Real> Session<'_, T> {
    /// Run the encoder over a batch.
    ///
    /// Index 0 mixes the raw padded features (when the plan says so), then
    /// applies SpecAugment in training mode, then subsamples. Index `i ≥ 1`
    /// runs block `i` and mixes its normalized output when `k = i`. λ = 1
    /// leaves rows untouched.
    pub fn encode(
        &mut self,
        batch: &Batch,
        plan: &MixPlan,
        spec: &SpecAugmentConfig,
        augment_rng: &mut Rng,
    ) -> Result<ForwardTrace<T>> {
        let model = self.model;
        let cfg = &model.cfg;
        let b = batch.size();
        plan.validate(b, cfg.encoder_layers)?;
        let f = batch.features.shape()[2];
        if f != cfg.feature_dim {
            return Err(Error::Input(format!(
                "batch has feature dim {f}, model expects {}",
                cfg.feature_dim
            )));
        }
        if let Some((i, &len)) = batch.feat_lengths.iter().enumerate().find(|(_, &l)| l < MIN_FRAMES) {
            return Err(Error::Input(format!(
                "utterance {} has {len} frames; subsampling needs at least {MIN_FRAMES}",
                batch.ids[i]
            )));
        }
        let mixes_at = |k: usize| plan.apply && plan.layer == k && plan.lambda != 1.0;

        let mut x: Tensor<T> = batch.features.cast();
        let mut lengths = batch.feat_lengths.clone();
        let mut mixed_input = None;
        if mixes_at(0) {
            x = mix_rows(&x, plan.lambda, &plan.permutation)?;
            lengths = mix_lengths(&lengths, plan.lambda, &plan.permutation);
            mixed_input = Some(x.clone());
        }
        let augment = if self.training && !spec.is_identity() {
            spec_augment_batch(&mut x, &lengths, spec, augment_rng)
        } else {
            Vec::new()
        };
        let input = self.graph.constant(x.clone());
        let mut h = model.subsample.forward(self, input)?;
        let mut lengths: Vec<usize> = lengths.into_iter().map(subsampled_len).collect();
        let t = self.graph.shape(h)[1];
        let frames = self.graph.constant(frame_mask(&lengths, t));
        h = self.graph.mul(h, frames)?;
        let mut hidden = vec![h];

        let mut keys = self.graph.constant(key_mask(&lengths, t));
        let mut frames = frames;
        for (i, block) in model.blocks.iter().enumerate() {
            h = block.forward(self, h, keys, frames)?;
            hidden.push(h);
            if mixes_at(i + 1) {
                let partner = self.graph.index_select(h, &plan.permutation)?;
                let own = self.graph.scale(h, T::c(plan.lambda));
                let partner = self.graph.scale(partner, T::c(1.0 - plan.lambda));
                h = self.graph.add(own, partner)?;
                lengths = mix_lengths(&lengths, plan.lambda, &plan.permutation);
                keys = self.graph.constant(key_mask(&lengths, t));
                frames = self.graph.constant(frame_mask(&lengths, t));
            }
        }
        Ok(ForwardTrace {
            mix_applied: plan.apply,
            layer: plan.apply.then_some(plan.layer),
            lambda: plan.apply.then_some(plan.lambda),
            permutation: plan.permutation.clone(),
            encoder_output: h,
            lengths,
            hidden,
            mixed_input,
            encoder_input: x,
            augment,
        })
    }

    /// Frame-level log-probabilities `[B, T', V]` from the CTC head.
    pub fn ctc_log_probs(&mut self, encoder_output: Var) -> Result<Var> {
        let model = self.model;
        let logits = model.ctc_head.forward(self, encoder_output)?;
        self.graph.log_softmax(logits)
    }
}
