//! Line-oriented training record.
//!
//! ```text
//! step=<n> loss=<f> ctc=<f> ce=<f> lambda=<f|-> layer=<k|-> lr=<f>
//! epoch=<n> ter_att=<f> ter_ctc=<f>
//! mix batches=<n> mixed=<n> time_masks=<n> layers=<c0,c1,…> lambda_hist=<h0,…,h9>
//! ```
//!
//! Floats are written in shortest round-trip form, so parsing a log and
//! writing it again reproduces it byte for byte.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const LAMBDA_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub ctc: f64,
    pub ce: f64,
    pub lambda: Option<f64>,
    pub layer: Option<usize>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub epoch: usize,
    pub ter_att: f64,
    pub ter_ctc: f64,
}

/// Applied-mixup statistics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixStats {
    pub batches: usize,
    pub mixed: usize,
    /// Time masks of nonzero width applied by SpecAugment.
    pub time_masks: usize,
    /// Mixed batches per layer index `0..=K`.
    pub per_layer: Vec<usize>,
    /// λ counts over ten equal-width bins of `[0, 1]`.
    pub lambda_hist: [usize; LAMBDA_BINS],
}

impl MixStats {
    pub fn new(encoder_layers: usize) -> Self {
        Self {
            per_layer: vec![0; encoder_layers + 1],
            ..Self::default()
        }
    }

    pub fn record(&mut self, layer: Option<usize>, lambda: Option<f64>, time_masks: usize) {
        self.batches += 1;
        self.time_masks += time_masks;
        if let (Some(k), Some(l)) = (layer, lambda) {
            self.mixed += 1;
            if k >= self.per_layer.len() {
                self.per_layer.resize(k + 1, 0);
            }
            self.per_layer[k] += 1;
            self.lambda_hist[((l * LAMBDA_BINS as f64) as usize).min(LAMBDA_BINS - 1)] += 1;
        }
    }

    pub fn mixed_fraction(&self) -> f64 {
        self.mixed as f64 / self.batches.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub stats: MixStats,
}

impl RunLog {
    /// Lowest attention-decoder token error and its epoch; the first
    /// occurrence wins ties.
    pub fn best_eval(&self) -> Option<&EvalRecord> {
        self.evals
            .iter()
            .fold(None, |best: Option<&EvalRecord>, e| match best {
                Some(b) if b.ter_att <= e.ter_att => Some(b),
                _ => Some(e),
            })
    }

    pub fn last_eval(&self) -> Option<&EvalRecord> {
        self.evals.last()
    }

    /// λ of every mixed step, in order.
    pub fn lambdas(&self) -> Vec<f64> {
        self.steps.iter().filter_map(|s| s.lambda).collect()
    }
}

fn opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "step={} loss={} ctc={} ce={} lambda={} layer={} lr={}",
            self.step,
            self.loss,
            self.ctc,
            self.ce,
            opt(self.lambda),
            opt(self.layer),
            self.lr
        )
    }
}

impl fmt::Display for EvalRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "epoch={} ter_att={} ter_ctc={}", self.epoch, self.ter_att, self.ter_ctc)
    }
}

impl fmt::Display for MixStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "mix batches={} mixed={} time_masks={} layers={} lambda_hist={}",
            self.batches,
            self.mixed,
            self.time_masks,
            list(&self.per_layer),
            list(&self.lambda_hist)
        )
    }
}

impl fmt::Display for RunLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for s in &self.steps {
            writeln!(out, "{s}")?;
        }
        for e in &self.evals {
            writeln!(out, "{e}")?;
        }
        writeln!(out, "{}", self.stats)?;
        f.write_str(&out)
    }
}

struct Fields<'a> {
    line: usize,
    items: Vec<(&'a str, &'a str)>,
}

impl<'a> Fields<'a> {
    fn parse(line: usize, text: &'a str) -> Result<Self> {
        let items = text
            .split_whitespace()
            .map(|kv| {
                kv.split_once('=').ok_or_else(|| Error::Parse {
                    line,
                    message: format!("expected key=value, found {kv:?}"),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { line, items })
    }

    fn raw(&self, key: &str) -> Result<&'a str> {
        self.items
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Parse {
                line: self.line,
                message: format!("missing field {key}"),
            })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key)?;
        v.parse().map_err(|_| Error::Parse {
            line: self.line,
            message: format!("bad value {v:?} for {key}"),
        })
    }

    fn opt<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.raw(key)? == "-" {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn list(&self, key: &str) -> Result<Vec<usize>> {
        let v = self.raw(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| {
                x.parse().map_err(|_| Error::Parse {
                    line: self.line,
                    message: format!("bad list entry {x:?} in {key}"),
                })
            })
            .collect()
    }
}

impl FromStr for RunLog {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut log = RunLog::default();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("mix ") {
                let f = Fields::parse(n, rest)?;
                let hist = f.list("lambda_hist")?;
                log.stats = MixStats {
                    batches: f.get("batches")?,
                    mixed: f.get("mixed")?,
                    time_masks: f.get("time_masks")?,
                    per_layer: f.list("layers")?,
                    lambda_hist: hist.try_into().map_err(|_| Error::Parse {
                        line: n,
                        message: format!("lambda_hist needs {LAMBDA_BINS} bins"),
                    })?,
                };
                continue;
            }
            let f = Fields::parse(n, line)?;
            match f.items.first().map(|kv| kv.0) {
                Some("step") => log.steps.push(StepRecord {
                    step: f.get("step")?,
                    loss: f.get("loss")?,
                    ctc: f.get("ctc")?,
                    ce: f.get("ce")?,
                    lambda: f.opt("lambda")?,
                    layer: f.opt("layer")?,
                    lr: f.get("lr")?,
                }),
                Some("epoch") => log.evals.push(EvalRecord {
                    epoch: f.get("epoch")?,
                    ter_att: f.get("ter_att")?,
                    ter_ctc: f.get("ter_ctc")?,
                }),
                _ => {
                    return Err(Error::Parse {
                        line: n,
                        message: format!("unrecognized record {line:?}"),
                    })
                }
            }
        }
        Ok(log)
    }
}
