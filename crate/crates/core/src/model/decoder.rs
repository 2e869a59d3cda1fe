//! Transformer decoder, teacher forcing, and greedy decoding.

use rand::SeedableRng;

use super::layers::{Attention, FeedForward, Linear, Norm};
use super::{key_mask, positional_encoding, Init, Model, ModelConfig, ParamId, Session};
use crate::augment::{MixPlan, SpecAugmentConfig};
use crate::autodiff::{Activation, Var};
use crate::dataio::Batch;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Ctc,
    Attention,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_norm: Norm,
    self_att: Attention,
    src_norm: Norm,
    src_att: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
pub(super) struct Decoder {
    embed: ParamId,
    layers: Vec<DecoderLayer>,
    norm: Norm,
    out: Linear,
}

impl Decoder {
    pub fn new<T: Real>(init: &mut Init<'_, T>, cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        let layers = (0..cfg.decoder_layers)
            .map(|i| {
                let name = format!("decoder.{i}");
                DecoderLayer {
                    self_norm: Norm::new(init, &format!("{name}.self_norm"), d),
                    self_att: Attention::new(init, &format!("{name}.self_att"), d, cfg.heads),
                    src_norm: Norm::new(init, &format!("{name}.src_norm"), d),
                    src_att: Attention::new(init, &format!("{name}.src_att"), d, cfg.heads),
                    ff_norm: Norm::new(init, &format!("{name}.ff_norm"), d),
                    ff: FeedForward::new(init, &format!("{name}.ff"), d, cfg.ffn_dim, Activation::Relu),
                }
            })
            .collect();
        Self {
            embed: init.normal("decoder.embed".into(), &[cfg.vocab_size, d], 1.0 / (d as f64).sqrt()),
            layers,
            norm: Norm::new(init, "decoder.norm", d),
            out: Linear::new(init, "decoder.out", d, cfg.vocab_size),
        }
    }
}

/// Additive causal mask `[L, L]`.
fn causal_mask<T: Real>(len: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); len * len];
    for i in 0..len {
        for v in &mut data[i * len + i + 1..(i + 1) * len] {
            *v = T::c(-1e9);
        }
    }
    Tensor::new(&[len, len], data).expect("shape")
}

/// Decoder prefixes `[sos, y…]` and targets `[y…, eos]` for teacher
/// forcing. Targets are padded with `pad` to a common length.
pub(crate) fn teacher_forcing(labels: &[Vec<usize>], sos_eos: usize, pad: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let len = labels.iter().map(|y| y.len() + 1).max().unwrap_or(1);
    let prefixes = labels
        .iter()
        .map(|y| std::iter::once(sos_eos).chain(y.iter().copied()).collect())
        .collect();
    let mut targets = Vec::with_capacity(labels.len() * len);
    for y in labels {
        targets.extend(y);
        targets.push(sos_eos);
        targets.extend(std::iter::repeat_n(pad, len - y.len() - 1));
    }
    (prefixes, targets)
}

impl<T: Real> Session<'_, T> {
    /// Next-token logits `[B, L, V]` for prefixes that each start with sos.
    /// Shorter prefixes are right-padded with eos; causal masking keeps the
    /// padding invisible to earlier positions.
    pub fn decode_logits(&mut self, encoder_output: Var, lengths: &[usize], prefixes: &[Vec<usize>]) -> Result<Var> {
        let model = self.model;
        let cfg = &model.cfg;
        let sos = cfg.sos_eos();
        let b = prefixes.len();
        let len = prefixes.iter().map(Vec::len).max().unwrap_or(0);
        if len > cfg.max_target_len {
            return Err(Error::Input(format!(
                "decoder prefix of {len} tokens exceeds the limit of {}",
                cfg.max_target_len
            )));
        }
        if b != lengths.len() || prefixes.iter().any(|p| p.first() != Some(&sos)) {
            return Err(Error::Input("every decoder prefix must start with sos".into()));
        }
        if let Some(&bad) = prefixes.iter().flatten().find(|&&t| t >= cfg.vocab_size) {
            return Err(Error::Input(format!("token {bad} outside vocabulary of {}", cfg.vocab_size)));
        }
        let mut ids = Vec::with_capacity(b * len);
        for p in prefixes {
            ids.extend(p);
            ids.extend(std::iter::repeat_n(sos, len - p.len()));
        }
        let d = cfg.model_dim;
        let dec = &model.decoder;
        let table = self.p(dec.embed);
        let x = self.graph.embedding(table, &ids, &[b, len])?;
        let x = self.graph.scale(x, T::c((d as f64).sqrt()));
        let pe = self.graph.constant(positional_encoding(len, d));
        let x = self.graph.add(x, pe)?;
        let mut x = self.dropout(x)?;
        let causal = self.graph.constant(causal_mask(len));
        let src = self.graph.shape(encoder_output)[1];
        let memory_mask = self.graph.constant(key_mask(lengths, src));
        for layer in &dec.layers {
            let h = layer.self_norm.forward(self, x)?;
            let h = layer.self_att.forward(self, h, h, causal)?;
            let h = self.dropout(h)?;
            x = self.graph.add(x, h)?;
            let h = layer.src_norm.forward(self, x)?;
            let h = layer.src_att.forward(self, h, encoder_output, memory_mask)?;
            let h = self.dropout(h)?;
            x = self.graph.add(x, h)?;
            let h = layer.ff_norm.forward(self, x)?;
            let h = layer.ff.forward(self, h)?;
            let h = self.dropout(h)?;
            x = self.graph.add(x, h)?;
        }
        let x = dec.norm.forward(self, x)?;
        dec.out.forward(self, x)
    }
}

fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Merge repeated frame labels, then drop blanks.
pub fn ctc_collapse(frames: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in frames {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Greedy transcription of encoder output `[B, T', d]`.
///
/// CTC mode takes the best label per valid frame and collapses the path.
/// Attention mode extends each hypothesis with its most likely next token
/// until eos, `2·T'` tokens, or the decoder's prefix limit.
pub fn greedy_decode<T: Real>(
    model: &Model<T>,
    encoder_output: &Tensor<T>,
    lengths: &[usize],
    mode: DecodeMode,
) -> Result<Vec<Vec<usize>>> {
    let cfg = model.config();
    let &[b, t, _] = encoder_output.shape() else {
        return Err(Error::Dimension(format!("encoder output of shape {:?}", encoder_output.shape())));
    };
    if lengths.len() != b {
        return Err(Error::Dimension(format!("{} lengths for a batch of {b}", lengths.len())));
    }
    match mode {
        DecodeMode::Ctc => {
            let mut s = Session::eval(model);
            let enc = s.graph.constant(encoder_output.clone());
            let lp = s.ctc_log_probs(enc)?;
            let v = cfg.vocab_size;
            let data = s.graph.value(lp).data();
            Ok((0..b)
                .map(|i| {
                    let path: Vec<usize> = (0..lengths[i].min(t))
                        .map(|f| argmax(&data[(i * t + f) * v..(i * t + f + 1) * v]))
                        .collect();
                    ctc_collapse(&path, cfg.blank())
                })
                .collect())
        }
        DecodeMode::Attention => {
            let eos = cfg.sos_eos();
            let limits: Vec<usize> = lengths
                .iter()
                .map(|&l| (2 * l).min(cfg.max_target_len - 1))
                .collect();
            let mut prefixes: Vec<Vec<usize>> = vec![vec![eos]; b];
            let mut done: Vec<bool> = limits.iter().map(|&l| l == 0).collect();
            while done.iter().any(|d| !d) {
                let mut s = Session::eval(model);
                let enc = s.graph.constant(encoder_output.clone());
                let logits = s.decode_logits(enc, lengths, &prefixes)?;
                let len = s.graph.shape(logits)[1];
                let v = cfg.vocab_size;
                let data = s.graph.value(logits).data();
                for i in 0..b {
                    if done[i] {
                        continue;
                    }
                    let pos = prefixes[i].len() - 1;
                    let next = argmax(&data[(i * len + pos) * v..(i * len + pos + 1) * v]);
                    if next == eos {
                        done[i] = true;
                    } else {
                        prefixes[i].push(next);
                        done[i] = prefixes[i].len() > limits[i];
                    }
                }
            }
            Ok(prefixes.into_iter().map(|p| p[1..].to_vec()).collect())
        }
    }
}

impl<T: Real> Model<T> {
    /// Encode a batch without augmentation or dropout and decode it greedily.
    pub fn transcribe(&self, batch: &Batch, mode: DecodeMode) -> Result<Vec<Vec<usize>>> {
        let mut s = Session::eval(self);
        let trace = s.encode(
            batch,
            &MixPlan::off(batch.size()),
            &SpecAugmentConfig::off(),
            &mut Rng::from_seed([0; 32]),
        )?;
        let enc = s.graph.value(trace.encoder_output).clone();
        greedy_decode(self, &enc, &trace.lengths, mode)
    }

    /// Attention and CTC transcriptions from a single encoder pass.
    pub fn transcribe_both(&self, batch: &Batch) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
        let mut s = Session::eval(self);
        let trace = s.encode(
            batch,
            &MixPlan::off(batch.size()),
            &SpecAugmentConfig::off(),
            &mut Rng::from_seed([0; 32]),
        )?;
        let enc = s.graph.value(trace.encoder_output).clone();
        Ok((
            greedy_decode(self, &enc, &trace.lengths, DecodeMode::Attention)?,
            greedy_decode(self, &enc, &trace.lengths, DecodeMode::Ctc)?,
        ))
    }
}
