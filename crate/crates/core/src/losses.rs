//! Sequence losses: CTC, label-smoothed cross-entropy, and their joint and
//! λ-mixed combinations.
//!
//! CTC and cross-entropy compute their gradients during the forward pass
//! and hand them to the graph as a single scalar node.

use crate::autodiff::{Graph, Var};
use crate::dataio::ctc_min_frames;
use crate::error::{Error, Result};
use crate::model::{teacher_forcing, ForwardTrace, Session};
use crate::tensor::Real;

pub const BLANK: usize = 0;

/// Weights of the joint objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// `α` in `α·ctc + (1−α)·ce`.
    pub ctc_weight: f64,
    pub label_smoothing: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            ctc_weight: 0.3,
            label_smoothing: 0.1,
        }
    }
}

/// Per-batch loss values, for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub ctc: f64,
    pub ce: f64,
    pub joint: f64,
    /// λ-weighted joint loss of a mixed batch.
    pub mixed_joint: Option<f64>,
    pub lambda: Option<f64>,
}

fn logaddexp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Negative log-likelihood of one target under `log_probs[t·V + v]` for the
/// first `frames` frames, and its gradient with respect to those entries.
fn ctc_single(log_probs: &[f64], v: usize, frames: usize, target: &[usize], blank: usize) -> Option<(f64, Vec<f64>)> {
    let ninf = f64::NEG_INFINITY;
    let states = 2 * target.len() + 1;
    let label = |s: usize| if s.is_multiple_of(2) { blank } else { target[s / 2] };
    // a skip from s−2 is allowed onto a non-blank label that differs from it
    let can_skip = |s: usize| s >= 2 && label(s) != blank && label(s) != label(s - 2);
    let lp = |t: usize, s: usize| log_probs[t * v + label(s)];

    let mut alpha = vec![ninf; frames * states];
    alpha[0] = lp(0, 0);
    if states > 1 {
        alpha[1] = lp(0, 1);
    }
    for t in 1..frames {
        for s in 0..states {
            let prev = &alpha[(t - 1) * states..t * states];
            let mut acc = prev[s];
            if s >= 1 {
                acc = logaddexp(acc, prev[s - 1]);
            }
            if can_skip(s) {
                acc = logaddexp(acc, prev[s - 2]);
            }
            if acc != ninf {
                alpha[t * states + s] = acc + lp(t, s);
            }
        }
    }
    let end = (frames - 1) * states;
    let mut loglik = alpha[end + states - 1];
    if states > 1 {
        loglik = logaddexp(loglik, alpha[end + states - 2]);
    }
    if loglik == ninf {
        return None;
    }

    // beta excludes the emission at its own frame
    let mut beta = vec![ninf; frames * states];
    beta[end + states - 1] = 0.0;
    if states > 1 {
        beta[end + states - 2] = 0.0;
    }
    for t in (0..frames - 1).rev() {
        for s in 0..states {
            let next = |s2: usize| beta[(t + 1) * states + s2] + lp(t + 1, s2);
            let mut acc = next(s);
            if s + 1 < states {
                acc = logaddexp(acc, next(s + 1));
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = logaddexp(acc, next(s + 2));
            }
            beta[t * states + s] = acc;
        }
    }

    let mut grad = vec![0.0; frames * v];
    for t in 0..frames {
        for s in 0..states {
            let w = alpha[t * states + s] + beta[t * states + s];
            if w != ninf {
                grad[t * v + label(s)] -= (w - loglik).exp();
            }
        }
    }
    Some((-loglik, grad))
}

/// Mean over the batch of −log p(target | log_probs).
///
/// `log_probs` is `[B, T, V]`; item `b` uses its first `input_lengths[b]`
/// frames. A target that cannot be aligned in its frames is an error, not
/// an infinite loss.
pub fn ctc_loss<T: Real>(
    g: &mut Graph<T>,
    log_probs: Var,
    targets: &[Vec<usize>],
    input_lengths: &[usize],
    blank: usize,
) -> Result<Var> {
    let shape = g.shape(log_probs).to_vec();
    let [b, t_max, v] = shape[..] else {
        return Err(Error::Dimension(format!("ctc_loss expects [B, T, V] log-probs, got {shape:?}")));
    };
    if targets.len() != b || input_lengths.len() != b || b == 0 {
        return Err(Error::Dimension(format!(
            "ctc_loss batch of {b} with {} targets and {} lengths",
            targets.len(),
            input_lengths.len()
        )));
    }
    let lp: Vec<f64> = g.value(log_probs).data().iter().map(|x| x.f64()).collect();
    let mut grad = vec![T::zero(); lp.len()];
    let mut total = 0.0;
    let scale = 1.0 / b as f64;
    for (i, (target, &frames)) in targets.iter().zip(input_lengths).enumerate() {
        if frames == 0 || frames > t_max {
            return Err(Error::Input(format!("input length {frames} outside [1, {t_max}]")));
        }
        if let Some(&bad) = target.iter().find(|&&x| x >= v || x == blank) {
            return Err(Error::Input(format!("target label {bad} invalid for {v} classes with blank {blank}")));
        }
        let impossible = || Error::ImpossibleAlignment {
            index: i,
            target_len: target.len(),
            repeats: ctc_min_frames(target) - target.len(),
            input_len: frames,
        };
        if ctc_min_frames(target) > frames {
            return Err(impossible());
        }
        let item = &lp[i * t_max * v..(i * t_max + frames) * v];
        let (nll, g_item) = ctc_single(item, v, frames, target, blank).ok_or_else(impossible)?;
        total += nll;
        for (dst, src) in grad[i * t_max * v..].iter_mut().zip(g_item) {
            *dst = T::c(src * scale);
        }
    }
    Ok(g.precomputed_scalar(log_probs, T::c(total * scale), grad))
}

/// Label-smoothed cross-entropy over `logits[B, L, V]`.
///
/// Each position with a target other than `pad_id` contributes
/// `(1−ε)·(−log p[target]) + ε·mean_v(−log p[v])`; the loss is the mean over
/// those positions.
pub fn label_smoothed_ce<T: Real>(
    g: &mut Graph<T>,
    logits: Var,
    targets: &[usize],
    pad_id: usize,
    eps: f64,
) -> Result<Var> {
    let log_probs = g.log_softmax(logits)?;
    let shape = g.shape(log_probs).to_vec();
    let v = *shape.last().unwrap();
    let positions = g.value(log_probs).len() / v.max(1);
    if targets.len() != positions {
        return Err(Error::Dimension(format!(
            "{} targets for logits of shape {shape:?}",
            targets.len()
        )));
    }
    let counted = targets.iter().filter(|&&t| t != pad_id).count();
    if counted == 0 {
        return Err(Error::UndefinedMetric("every target position is padding".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t != pad_id && t >= v) {
        return Err(Error::Input(format!("target {bad} outside vocabulary of {v}")));
    }
    let lp = g.value(log_probs).data();
    let inv_n = 1.0 / counted as f64;
    let uniform = eps / v as f64;
    let mut total = 0.0;
    let mut grad = vec![T::zero(); lp.len()];
    for (p, &tgt) in targets.iter().enumerate() {
        if tgt == pad_id {
            continue;
        }
        let row = &lp[p * v..(p + 1) * v];
        let mean_nll = -row.iter().map(|x| x.f64()).sum::<f64>() / v as f64;
        total += (1.0 - eps) * -row[tgt].f64() + eps * mean_nll;
        for (j, d) in grad[p * v..(p + 1) * v].iter_mut().enumerate() {
            let w = uniform + if j == tgt { 1.0 - eps } else { 0.0 };
            *d = T::c(-w * inv_n);
        }
    }
    Ok(g.precomputed_scalar(log_probs, T::c(total * inv_n), grad))
}

/// `α·ctc + (1−α)·ce`.
pub fn joint_loss<T: Real>(g: &mut Graph<T>, ctc: Var, ce: Var, ctc_weight: f64) -> Result<Var> {
    let a = g.scale(ctc, T::c(ctc_weight));
    let b = g.scale(ce, T::c(1.0 - ctc_weight));
    g.add(a, b)
}

/// `λ·L_i + (1−λ)·L_j`.
pub fn mix_losses<T: Real>(g: &mut Graph<T>, lambda: f64, own: Var, partner: Var) -> Result<Var> {
    let a = g.scale(own, T::c(lambda));
    let b = g.scale(partner, T::c(1.0 - lambda));
    g.add(a, b)
}

/// Joint loss of `labels` against an encoder pass: CTC on `ctc_log_probs`
/// plus decoder cross-entropy with teacher forcing. Returns the loss and its
/// CTC and CE parts.
pub fn sequence_loss<T: Real>(
    s: &mut Session<'_, T>,
    trace: &ForwardTrace<T>,
    ctc_log_probs: Var,
    labels: &[Vec<usize>],
    cfg: &LossConfig,
) -> Result<(Var, f64, f64)> {
    let ctc = ctc_loss(&mut s.graph, ctc_log_probs, labels, &trace.lengths, BLANK)?;
    let sos_eos = s.model().config().sos_eos();
    let (prefixes, targets) = teacher_forcing(labels, sos_eos, BLANK);
    let logits = s.decode_logits(trace.encoder_output, &trace.lengths, &prefixes)?;
    let ce = label_smoothed_ce(&mut s.graph, logits, &targets, BLANK, cfg.label_smoothing)?;
    let joint = joint_loss(&mut s.graph, ctc, ce, cfg.ctc_weight)?;
    Ok((joint, s.graph.value(ctc).item().f64(), s.graph.value(ce).item().f64()))
}

/// Training loss of an encoder pass.
///
/// Unmixed traces give the joint loss on `labels`. Mixed traces give
/// `λ·L(Y_i) + (1−λ)·L(Y_j)` with `Y_j = Y_i[perm]`, both terms computed on
/// the same encoder output and mixed lengths, and both decoder passes seeing
/// the same dropout draws. A term whose weight is exactly zero is skipped.
pub fn mixed_loss<T: Real>(
    s: &mut Session<'_, T>,
    trace: &ForwardTrace<T>,
    labels: &[Vec<usize>],
    cfg: &LossConfig,
) -> Result<(Var, LossBreakdown)> {
    let ctc_lp = s.ctc_log_probs(trace.encoder_output)?;
    let lambda = trace.lambda.filter(|_| trace.mix_applied);
    let breakdown = |ctc: f64, ce: f64, total: Option<f64>| LossBreakdown {
        ctc,
        ce,
        joint: cfg.ctc_weight * ctc + (1.0 - cfg.ctc_weight) * ce,
        mixed_joint: total,
        lambda,
    };
    let Some(lam) = lambda else {
        let (loss, ctc, ce) = sequence_loss(s, trace, ctc_lp, labels, cfg)?;
        return Ok((loss, breakdown(ctc, ce, None)));
    };
    if trace.permutation.len() != labels.len() {
        return Err(Error::Plan(format!(
            "permutation covers {} rows, batch has {}",
            trace.permutation.len(),
            labels.len()
        )));
    }
    let partner: Vec<Vec<usize>> = trace.permutation.iter().map(|&j| labels[j].clone()).collect();
    if lam == 1.0 || lam == 0.0 {
        let chosen = if lam == 1.0 { labels } else { &partner[..] };
        let (loss, ctc, ce) = sequence_loss(s, trace, ctc_lp, chosen, cfg)?;
        let total = s.graph.value(loss).item().f64();
        return Ok((loss, breakdown(ctc, ce, Some(total))));
    }
    let dropout = s.dropout_state();
    let (own, ctc_i, ce_i) = sequence_loss(s, trace, ctc_lp, labels, cfg)?;
    s.set_dropout_state(dropout);
    let (other, ctc_j, ce_j) = sequence_loss(s, trace, ctc_lp, &partner, cfg)?;
    let loss = mix_losses(&mut s.graph, lam, own, other)?;
    let total = s.graph.value(loss).item().f64();
    let mix = |a: f64, b: f64| lam * a + (1.0 - lam) * b;
    Ok((loss, breakdown(mix(ctc_i, ctc_j), mix(ce_i, ce_j), Some(total))))
}
