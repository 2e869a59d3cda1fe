//! Edit distance and token error rates.

use crate::dataio::{plan_batches, Batch, Utterance};
use crate::error::{Error, Result};
use crate::model::{DecodeMode, Model};
use crate::tensor::Real;

/// Levenshtein distance with unit costs.
pub fn edit_distance<A: PartialEq>(reference: &[A], hypothesis: &[A]) -> usize {
    let mut prev: Vec<usize> = (0..=hypothesis.len()).collect();
    let mut cur = vec![0; hypothesis.len() + 1];
    for (i, r) in reference.iter().enumerate() {
        cur[0] = i + 1;
        for (j, h) in hypothesis.iter().enumerate() {
            let sub = prev[j] + usize::from(r != h);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[hypothesis.len()]
}

/// Token error of a set of hypotheses against references.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenErrors {
    pub utterances: usize,
    pub edits: usize,
    pub reference_tokens: usize,
    /// Mean over utterances of `edits / len(ref)`, in percent.
    pub utterance_mean: f64,
    /// Total edits over total reference tokens, in percent.
    pub corpus: f64,
}

impl TokenErrors {
    /// An empty reference scores 0% against an empty hypothesis and 100%
    /// otherwise.
    pub fn score(pairs: &[(Vec<usize>, Vec<usize>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::UndefinedMetric("token error over an empty dataset".into()));
        }
        let mut edits = 0;
        let mut reference_tokens = 0;
        let mut rate_sum = 0.0;
        for (r, h) in pairs {
            let e = edit_distance(r, h);
            edits += e;
            reference_tokens += r.len();
            rate_sum += match r.len() {
                0 => f64::from(u8::from(!h.is_empty())),
                n => e as f64 / n as f64,
            };
        }
        Ok(Self {
            utterances: pairs.len(),
            edits,
            reference_tokens,
            utterance_mean: 100.0 * rate_sum / pairs.len() as f64,
            corpus: if reference_tokens == 0 {
                0.0
            } else {
                100.0 * edits as f64 / reference_tokens as f64
            },
        })
    }
}

/// Greedy-decoding token errors under both decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub attention: TokenErrors,
    pub ctc: TokenErrors,
    /// `(id, reference, attention hypothesis, ctc hypothesis)` in dataset order.
    pub hypotheses: Vec<(String, Vec<usize>, Vec<usize>, Vec<usize>)>,
}

/// Decode `dataset` in length-bucketed batches of at most `max_elements`
/// padded feature values and score both decoders.
pub fn evaluate<T: Real>(model: &Model<T>, dataset: &[Utterance], max_elements: usize) -> Result<EvalReport> {
    if dataset.is_empty() {
        return Err(Error::UndefinedMetric("evaluation over an empty dataset".into()));
    }
    let mut att = vec![Vec::new(); dataset.len()];
    let mut ctc = vec![Vec::new(); dataset.len()];
    for group in plan_batches(dataset, max_elements, 0)? {
        let items: Vec<&Utterance> = group.iter().map(|&i| &dataset[i]).collect();
        let batch = Batch::collate(&items)?;
        let (a, c) = model.transcribe_both(&batch)?;
        for ((i, a), c) in group.into_iter().zip(a).zip(c) {
            att[i] = a;
            ctc[i] = c;
        }
    }
    let pairs = |hyps: &[Vec<usize>]| -> Vec<(Vec<usize>, Vec<usize>)> {
        dataset.iter().zip(hyps).map(|(u, h)| (u.tokens.clone(), h.clone())).collect()
    };
    Ok(EvalReport {
        attention: TokenErrors::score(&pairs(&att))?,
        ctc: TokenErrors::score(&pairs(&ctc))?,
        hypotheses: dataset
            .iter()
            .zip(att)
            .zip(ctc)
            .map(|((u, a), c)| (u.id.clone(), u.tokens.clone(), a, c))
            .collect(),
    })
}

/// Token errors of one decoder.
pub fn token_error<T: Real>(model: &Model<T>, dataset: &[Utterance], mode: DecodeMode, max_elements: usize) -> Result<TokenErrors> {
    let report = evaluate(model, dataset, max_elements)?;
    Ok(match mode {
        DecodeMode::Attention => report.attention,
        DecodeMode::Ctc => report.ctc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recursive(a: &[u8], b: &[u8]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = recursive(ra, rb) + usize::from(x != y);
                sub.min(recursive(ra, b) + 1).min(recursive(a, rb) + 1)
            }
        }
    }

    fn all_sequences(max_len: usize) -> Vec<Vec<u8>> {
        let mut out = vec![vec![]];
        let mut frontier = vec![vec![]];
        for _ in 0..max_len {
            frontier = frontier
                .iter()
                .flat_map(|s: &Vec<u8>| (0..2u8).map(move |c| [s.clone(), vec![c]].concat()))
                .collect();
            out.extend(frontier.clone());
        }
        out
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &[] as &[i32]), 3);
        assert_eq!(edit_distance(&["a", "b"], &["b", "a"]), 2);
    }

    #[test]
    fn edit_distance_matches_recursion() {
        let seqs = all_sequences(3);
        assert_eq!(seqs.len(), 15);
        for a in &seqs {
            for b in &seqs {
                assert_eq!(edit_distance(a, b), recursive(a, b), "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn scoring() {
        let perfect = TokenErrors::score(&[(vec![1, 2], vec![1, 2])]).unwrap();
        assert_eq!(perfect.utterance_mean, 0.0);
        let one = TokenErrors::score(&[(vec![1, 2, 3], vec![1, 9, 3])]).unwrap();
        assert!((one.utterance_mean - 100.0 / 3.0).abs() < 1e-12);
        let mixed = TokenErrors::score(&[(vec![1], vec![2]), (vec![1, 2, 3], vec![1, 2, 3])]).unwrap();
        assert!((mixed.utterance_mean - 50.0).abs() < 1e-12);
        assert!((mixed.corpus - 25.0).abs() < 1e-12);
        assert!(matches!(TokenErrors::score(&[]), Err(Error::UndefinedMetric(_))));
    }
}
