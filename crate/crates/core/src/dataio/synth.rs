//! Synthetic stand-in corpus.
//!
//! Each token owns a prototype frame: unit energy spread over a narrow band
//! of contiguous feature bins, plus a small ramp shared by every token. An
//! utterance holds each of its tokens for a random number of frames and adds
//! white noise. Because the bands barely overlap, frequency content alone
//! identifies a token.

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};

use super::Utterance;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const RAMP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Includes the blank (id 0) and sos/eos (last id); only the ids in
    /// between are spoken.
    pub vocab_size: usize,
    pub num_utterances: usize,
    pub tokens_min: usize,
    pub tokens_max: usize,
    pub frames_per_token_min: usize,
    pub frames_per_token_max: usize,
    pub feature_dim: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            num_utterances: 400,
            tokens_min: 3,
            tokens_max: 7,
            frames_per_token_min: 8,
            frames_per_token_max: 12,
            feature_dim: 16,
            noise_std: 0.1,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 3 {
            return fail(format!(
                "vocab_size {} leaves no spoken tokens (blank and sos/eos are reserved)",
                self.vocab_size
            ));
        }
        if self.vocab_size > self.feature_dim {
            return fail(format!(
                "vocab_size {} exceeds feature_dim {}: token bands would be empty",
                self.vocab_size, self.feature_dim
            ));
        }
        if self.tokens_min == 0 || self.tokens_min > self.tokens_max {
            return fail(format!("bad token range [{}, {}]", self.tokens_min, self.tokens_max));
        }
        if self.frames_per_token_min == 0 || self.frames_per_token_min > self.frames_per_token_max {
            return fail(format!(
                "bad frames-per-token range [{}, {}]",
                self.frames_per_token_min, self.frames_per_token_max
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std {} must be finite and non-negative", self.noise_std));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Synthesizer {
    cfg: SynthConfig,
    prototypes: Vec<Vec<f32>>,
    noise: Normal<f64>,
}

impl Synthesizer {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let (v, f) = (cfg.vocab_size, cfg.feature_dim);
        let width = f.div_ceil(v);
        let prototypes = (0..v)
            .map(|tok| {
                let start = tok * f / v;
                let end = (start + width).min(f);
                let amp = 1.0 / ((end - start) as f64).sqrt();
                (0..f)
                    .map(|d| {
                        let band = if (start..end).contains(&d) { amp } else { 0.0 };
                        (band + RAMP * d as f64 / f as f64) as f32
                    })
                    .collect()
            })
            .collect();
        let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            cfg: cfg.clone(),
            prototypes,
            noise,
        })
    }

    pub fn prototype(&self, token: usize) -> &[f32] {
        &self.prototypes[token]
    }

    pub fn prototypes(&self) -> &[Vec<f32>] {
        &self.prototypes
    }

    /// Spoken token ids: everything but blank and sos/eos.
    pub fn spoken_tokens(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.cfg.vocab_size - 2
    }

    /// Features for a token sequence, drawing durations and noise from `rng`.
    pub fn render(&self, tokens: &[usize], rng: &mut Rng) -> Tensor<f32> {
        let f = self.cfg.feature_dim;
        let mut data = Vec::new();
        for &tok in tokens {
            let dur = rng.random_range(self.cfg.frames_per_token_min..=self.cfg.frames_per_token_max);
            for _ in 0..dur {
                for &p in &self.prototypes[tok] {
                    let n = if self.cfg.noise_std > 0.0 { self.noise.sample(rng) } else { 0.0 };
                    data.push((p as f64 + n) as f32);
                }
            }
        }
        let frames = data.len() / f;
        Tensor::new(&[frames, f], data).expect("rendered frames")
    }

    pub fn utterance(&self, index: usize, rng: &mut Rng) -> Utterance {
        let len = rng.random_range(self.cfg.tokens_min..=self.cfg.tokens_max);
        let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(self.spoken_tokens())).collect();
        let features = self.render(&tokens, rng);
        Utterance {
            id: format!("utt{index:05}"),
            features,
            tokens,
        }
    }
}

/// Generate `cfg.num_utterances` utterances; a pure function of `cfg`.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Vec<Utterance>> {
    let synth = Synthesizer::new(cfg)?;
    let mut rng = Rng::seed_from_u64(cfg.seed);
    Ok((0..cfg.num_utterances).map(|i| synth.utterance(i, &mut rng)).collect())
}
