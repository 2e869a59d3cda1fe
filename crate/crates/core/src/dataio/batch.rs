//! Length-bucketed, budget-limited batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use super::Utterance;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Zero-padded mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    /// `[B, T_max, F]`
    pub features: Tensor<f32>,
    pub feat_lengths: Vec<usize>,
    pub labels: Vec<Vec<usize>>,
}

impl Batch {
    pub fn collate(items: &[&Utterance]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Input("cannot collate an empty batch".into()))?;
        let f = first.feature_dim();
        let t_max = items.iter().map(|u| u.frames()).max().unwrap_or(0);
        let mut data = vec![0f32; items.len() * t_max * f];
        for (b, u) in items.iter().enumerate() {
            if u.feature_dim() != f {
                return Err(Error::Input(format!(
                    "utterance {} has feature dim {}, batch uses {f}",
                    u.id,
                    u.feature_dim()
                )));
            }
            data[b * t_max * f..b * t_max * f + u.features.len()].copy_from_slice(u.features.data());
        }
        Ok(Self {
            ids: items.iter().map(|u| u.id.clone()).collect(),
            features: Tensor::new(&[items.len(), t_max, f], data)?,
            feat_lengths: items.iter().map(|u| u.frames()).collect(),
            labels: items.iter().map(|u| u.tokens.clone()).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.feat_lengths.len()
    }

    pub fn max_frames(&self) -> usize {
        self.features.shape()[1]
    }

    /// Rows `index` in order, keeping the padded width.
    pub fn select(&self, index: &[usize]) -> Result<Self> {
        let per = self.features.len() / self.size().max(1);
        let mut data = Vec::with_capacity(per * index.len());
        for &i in index {
            data.extend_from_slice(&self.features.data()[i * per..(i + 1) * per]);
        }
        let mut shape = self.features.shape().to_vec();
        shape[0] = index.len();
        Ok(Self {
            ids: index.iter().map(|&i| self.ids[i].clone()).collect(),
            features: Tensor::new(&shape, data)?,
            feat_lengths: index.iter().map(|&i| self.feat_lengths[i]).collect(),
            labels: index.iter().map(|&i| self.labels[i].clone()).collect(),
        })
    }
}

/// Group utterance indices so that `B · T_max · F ≤ max_elements` for every
/// group. Utterances are sorted by length and packed greedily; the order of
/// groups is then shuffled with `shuffle_seed`.
pub fn plan_batches(dataset: &[Utterance], max_elements: usize, shuffle_seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.sort_by_key(|&i| dataset[i].frames());
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for i in order {
        let u = &dataset[i];
        let cost = u.frames() * u.feature_dim();
        if cost > max_elements {
            return Err(Error::Config(format!(
                "utterance {} needs {cost} elements, above the batch budget of {max_elements}",
                u.id
            )));
        }
        // sorted ascending, so the newcomer sets T_max
        if !current.is_empty() && (current.len() + 1) * cost > max_elements {
            groups.push(std::mem::take(&mut current));
        }
        current.push(i);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups.shuffle(&mut Rng::seed_from_u64(shuffle_seed));
    Ok(groups)
}

pub fn make_batches(dataset: &[Utterance], max_elements: usize, shuffle_seed: u64) -> Result<Vec<Batch>> {
    plan_batches(dataset, max_elements, shuffle_seed)?
        .iter()
        .map(|g| Batch::collate(&g.iter().map(|&i| &dataset[i]).collect::<Vec<_>>()))
        .collect()
}
