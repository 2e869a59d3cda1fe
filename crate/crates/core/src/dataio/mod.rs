//! Utterances, vocabularies, on-disk formats and batching.

mod batch;
mod features;
mod manifest;
mod synth;

pub use batch::{make_batches, plan_batches, Batch};
pub use features::{decode_features, encode_features, read_features, write_features, FEATURE_MAGIC};
pub use manifest::{load_manifest, write_dataset, Vocabulary};
pub use synth::{gen_synthetic, SynthConfig, Synthesizer};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `[frames, feature_dim]`
    pub features: Tensor<f32>,
    pub tokens: Vec<usize>,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Frames a CTC alignment of `tokens` needs: one per label plus one blank
/// between each pair of equal neighbours.
pub fn ctc_min_frames(tokens: &[usize]) -> usize {
    tokens.len() + tokens.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Fail if any utterance has more labels than its (subsampled) frame count
/// can align.
pub fn check_alignable(dataset: &[Utterance], input_len: impl Fn(usize) -> usize) -> Result<()> {
    for (index, utt) in dataset.iter().enumerate() {
        let frames = input_len(utt.frames());
        if ctc_min_frames(&utt.tokens) > frames {
            return Err(Error::ImpossibleAlignment {
                index,
                target_len: utt.tokens.len(),
                repeats: ctc_min_frames(&utt.tokens) - utt.tokens.len(),
                input_len: frames,
            });
        }
    }
    Ok(())
}
