//! Hidden-representation mixup ("MixRep") for end-to-end sequence
//! recognition, at desk scale.
//!
//! The crate bundles everything needed to study representation mixup on a
//! joint CTC/attention encoder-decoder without external corpora:
//!
//! * [`autodiff`]: dense tensors with reverse-mode differentiation,
//! * [`dataio`]: a synthetic corpus generator, feature/manifest files and
//!   length-bucketed batching,
//! * [`augment`]: SpecAugment and the mixup sampling/interpolation steps,
//! * [`model`]: a Conformer-style encoder that can mix any layer's output,
//!   plus a Transformer decoder,
//! * [`losses`]: CTC, label-smoothed cross-entropy and the mixed joint loss,
//! * [`trainer`]: warmup-scheduled Adam with gradient accumulation and
//!   token-error evaluation,
//! * [`harness`]: experiment configs, the layer sweep and the CLI commands.

pub mod augment;
pub mod autodiff;
pub mod dataio;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod losses;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
