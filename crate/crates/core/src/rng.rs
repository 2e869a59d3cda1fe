//! Named random streams derived from one master seed.
//!
//! Every consumer of randomness (initialization, dropout, augmentation,
//! mixup sampling, data order) draws from its own ChaCha stream, so turning
//! one of them on or off never shifts the numbers seen by the others.
//! Per-batch streams are addressed by `(kind, ordinal)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StreamKind {
    Init = 1,
    Dropout = 2,
    Augment = 3,
    Mixup = 4,
    DataOrder = 5,
    Synth = 6,
    Preview = 7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn stream(&self, kind: StreamKind) -> Rng {
        self.indexed(kind, 0)
    }

    /// Stream for one batch ordinal (or epoch, or utterance) of a kind.
    pub fn indexed(&self, kind: StreamKind, index: u64) -> Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        debug_assert!(index < 1 << 56);
        rng.set_stream(((kind as u64) << 56) | index);
        rng
    }
}
