//! SpecAugment on `[frames, features]` matrices.
//!
//! Time warping here is a 1-D piecewise-linear resampling of the time axis
//! (anchor frame `a` moves to `a + w`, both ends stay put), not the 2-D
//! sparse image warp of the original recipe. Masked cells are set to zero.

use rand::Rng as _;

use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecAugmentConfig {
    /// Time-warp window `W`; 0 disables warping.
    pub time_warp: usize,
    pub freq_masks: usize,
    pub freq_width: usize,
    pub time_masks: usize,
    pub time_width: usize,
    pub time_enabled: bool,
    pub freq_enabled: bool,
}

impl Default for SpecAugmentConfig {
    /// Desk-scale widths for 16-bin features and utterances of a few dozen
    /// frames. Frequency masking starts disabled.
    fn default() -> Self {
        Self {
            time_warp: 2,
            freq_masks: 2,
            freq_width: 2,
            time_masks: 2,
            time_width: 5,
            time_enabled: true,
            freq_enabled: false,
        }
    }
}

impl SpecAugmentConfig {
    /// Widths used with 80-bin filterbanks: warp window 5, two frequency
    /// masks up to 30 bins, two time masks up to 40 frames.
    pub fn paper_scale() -> Self {
        Self {
            time_warp: 5,
            freq_masks: 2,
            freq_width: 30,
            time_masks: 2,
            time_width: 40,
            time_enabled: true,
            freq_enabled: true,
        }
    }

    /// Neither axis enabled.
    pub fn off() -> Self {
        Self {
            time_enabled: false,
            freq_enabled: false,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        let time = self.time_enabled && (self.time_warp > 0 || (self.time_masks > 0 && self.time_width > 0));
        let freq = self.freq_enabled && self.freq_masks > 0 && self.freq_width > 0;
        !time && !freq
    }
}

/// What one call actually did: masks as `(start, width)`, warp as
/// `(anchor, shift)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AugmentOutcome {
    pub warp: Option<(usize, isize)>,
    pub time_masks: Vec<(usize, usize)>,
    pub freq_masks: Vec<(usize, usize)>,
}

impl AugmentOutcome {
    /// Upper bound on cells zeroed within `len` valid frames of `f` bins.
    pub fn masked_cell_bound(&self, f: usize, len: usize) -> usize {
        self.time_masks.iter().map(|m| m.1 * f).sum::<usize>() + self.freq_masks.iter().map(|m| m.1 * len).sum::<usize>()
    }
}

/// Augment the first `len` frames of `x[T, F]` in place.
pub fn spec_augment<T: Real>(x: &mut Tensor<T>, len: usize, cfg: &SpecAugmentConfig, rng: &mut Rng) -> AugmentOutcome {
    let f = x.shape()[1];
    let len = len.min(x.shape()[0]);
    augment_rows(&mut x.data_mut()[..len * f], len, f, cfg, rng)
}

/// Augment every row of a padded batch `x[B, T, F]` within its valid length.
pub fn spec_augment_batch<T: Real>(
    x: &mut Tensor<T>,
    lengths: &[usize],
    cfg: &SpecAugmentConfig,
    rng: &mut Rng,
) -> Vec<AugmentOutcome> {
    let (t, f) = (x.shape()[1], x.shape()[2]);
    x.data_mut()
        .chunks_mut(t * f)
        .zip(lengths)
        .map(|(item, &len)| {
            let len = len.min(t);
            augment_rows(&mut item[..len * f], len, f, cfg, rng)
        })
        .collect()
}

fn augment_rows<T: Real>(x: &mut [T], len: usize, f: usize, cfg: &SpecAugmentConfig, rng: &mut Rng) -> AugmentOutcome {
    let mut out = AugmentOutcome::default();
    if len == 0 {
        return out;
    }
    if cfg.time_enabled {
        out.warp = time_warp(x, len, f, cfg.time_warp, rng);
        for _ in 0..cfg.time_masks {
            let width = rng.random_range(0..=cfg.time_width).min(len);
            let start = rng.random_range(0..=len - width);
            x[start * f..(start + width) * f].iter_mut().for_each(|v| *v = T::zero());
            out.time_masks.push((start, width));
        }
    }
    if cfg.freq_enabled {
        for _ in 0..cfg.freq_masks {
            let width = rng.random_range(0..=cfg.freq_width).min(f);
            let start = rng.random_range(0..=f - width);
            for row in x.chunks_mut(f) {
                row[start..start + width].iter_mut().for_each(|v| *v = T::zero());
            }
            out.freq_masks.push((start, width));
        }
    }
    out
}

/// Sample an anchor in `[W, len−W)` and a shift in `[−W, W]`, then warp.
/// Returns `None` (input untouched) when `len ≤ 2W` or `W = 0`.
pub fn time_warp<T: Real>(x: &mut [T], len: usize, f: usize, window: usize, rng: &mut Rng) -> Option<(usize, isize)> {
    if window == 0 || len <= 2 * window {
        return None;
    }
    let anchor = rng.random_range(window..len - window);
    let w = window as i64;
    let shift = rng.random_range(-w..=w) as isize;
    apply_time_warp(x, len, f, anchor, shift);
    Some((anchor, shift))
}

/// Resample the time axis so that frame `anchor` lands on `anchor + shift`
/// with frames 0 and `len−1` fixed, interpolating linearly between frames.
/// Anchor and destination are clamped to interior frames.
pub fn apply_time_warp<T: Real>(x: &mut [T], len: usize, f: usize, anchor: usize, shift: isize) {
    if len < 3 {
        return;
    }
    let last = (len - 1) as f64;
    let anchor = anchor.clamp(1, len - 2);
    let a = anchor as f64;
    let dst = (anchor as isize + shift).clamp(1, len as isize - 2) as f64;
    let src = x[..len * f].to_vec();
    for t in 0..len {
        let tf = t as f64;
        let pos = if tf <= dst {
            tf * a / dst
        } else {
            a + (tf - dst) * (last - a) / (last - dst)
        };
        let i0 = (pos.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        let frac = T::c(pos - i0 as f64);
        let keep = T::one() - frac;
        for j in 0..f {
            x[t * f + j] = keep * src[i0 * f + j] + frac * src[i1 * f + j];
        }
    }
}
