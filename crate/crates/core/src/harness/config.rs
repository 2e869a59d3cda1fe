//! Experiment configuration files.
//!
//! One `key = value` pair per line, `#` starts a comment, dotted keys group
//! settings by module:
//!
//! ```text
//! mode = mixrep-time-enhanced
//! seed = 1
//! mixup.layers = 0,2
//! mixup.tau = 0.45
//! train.epochs = 25
//! ```
//!
//! Unknown or repeated keys are errors. Writing a config with `Display` and
//! parsing it back gives the same value.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::augment::{MixupConfig, SpecAugmentConfig};
use crate::dataio::SynthConfig;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::trainer::{OptimConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// SpecAugment only.
    Baseline,
    /// Mixup with SpecAugment restricted to the frequency axis.
    MixrepBasic,
    /// Mixup with time warping and time masks as well.
    MixrepTimeEnhanced,
}

impl Mode {
    pub fn mixes(self) -> bool {
        self != Mode::Baseline
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Baseline => "baseline",
            Mode::MixrepBasic => "mixrep-basic",
            Mode::MixrepTimeEnhanced => "mixrep-time-enhanced",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "mixrep-basic" => Ok(Mode::MixrepBasic),
            "mixrep-time-enhanced" => Ok(Mode::MixrepTimeEnhanced),
            _ => Err(format!(
                "unknown mode {s:?} (expected baseline, mixrep-basic or mixrep-time-enhanced)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("unknown precision {s:?} (expected f32 or f64)")),
        }
    }
}

/// Everything one experiment needs.
///
/// `data` describes the training split; the evaluation split uses the same
/// generator settings with `eval_utterances` utterances and its own seed.
/// The model's feature dimension and vocabulary size follow `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// Master seed for initialization, data order, dropout, and augmentation.
    pub seed: u64,
    pub precision: Precision,
    pub out: PathBuf,
    /// Dataset directory; `<out>/data` when unset.
    pub data_dir: Option<PathBuf>,
    pub data: SynthConfig,
    pub eval_utterances: usize,
    pub model: ModelConfig,
    pub epochs: usize,
    pub optim: OptimConfig,
    pub max_elements: usize,
    pub eval_every: usize,
    pub loss: LossConfig,
    pub mixup: MixupConfig,
    pub spec_augment: SpecAugmentConfig,
}

impl Default for ExperimentConfig {
    /// The toy setup: 400/100 utterances over 10 spoken tokens, a 4-block
    /// encoder of width 64.
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            seed: 1,
            precision: Precision::F32,
            out: PathBuf::from("runs/toy"),
            data_dir: None,
            data: SynthConfig::default(),
            eval_utterances: 100,
            model: ModelConfig::default(),
            epochs: 25,
            optim: OptimConfig {
                peak_lr: 1e-3,
                warmup_steps: 300,
                accum_steps: 1,
                ..OptimConfig::default()
            },
            max_elements: 4096,
            eval_every: 1,
            loss: LossConfig::default(),
            mixup: MixupConfig {
                layers: Vec::new(),
                ..MixupConfig::default()
            },
            spec_augment: SpecAugmentConfig::default(),
        }
    }
}

fn value<N: FromStr>(key: &str, v: &str) -> std::result::Result<N, String> {
    v.parse()
        .map_err(|_| format!("{key}: cannot parse {v:?} as {}", std::any::type_name::<N>()))
}

fn layer_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| value("mixup.layers", s.trim())).collect()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Parse config text over the defaults, then validate.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse { line: i + 1, message };
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, v) = (key.trim(), v.trim());
            if seen.contains(&key) {
                return Err(err(format!("{key} is set twice")));
            }
            seen.push(key);
            cfg.set(key, v).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = value(key, v)?,
            "precision" => self.precision = v.parse()?,
            "out" => self.out = PathBuf::from(v),
            "data.dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.vocab_size" => self.data.vocab_size = value(key, v)?,
            "data.train_utterances" => self.data.num_utterances = value(key, v)?,
            "data.eval_utterances" => self.eval_utterances = value(key, v)?,
            "data.tokens_min" => self.data.tokens_min = value(key, v)?,
            "data.tokens_max" => self.data.tokens_max = value(key, v)?,
            "data.frames_per_token_min" => self.data.frames_per_token_min = value(key, v)?,
            "data.frames_per_token_max" => self.data.frames_per_token_max = value(key, v)?,
            "data.feature_dim" => self.data.feature_dim = value(key, v)?,
            "data.noise_std" => self.data.noise_std = value(key, v)?,
            "data.seed" => self.data.seed = value(key, v)?,
            "model.dim" => self.model.model_dim = value(key, v)?,
            "model.encoder_layers" => self.model.encoder_layers = value(key, v)?,
            "model.decoder_layers" => self.model.decoder_layers = value(key, v)?,
            "model.heads" => self.model.heads = value(key, v)?,
            "model.ffn_dim" => self.model.ffn_dim = value(key, v)?,
            "model.conv_kernel" => self.model.conv_kernel = value(key, v)?,
            "model.dropout" => self.model.dropout = value(key, v)?,
            "model.subsample_channels" => self.model.subsample_channels = value(key, v)?,
            "model.max_target_len" => self.model.max_target_len = value(key, v)?,
            "train.epochs" => self.epochs = value(key, v)?,
            "train.peak_lr" => self.optim.peak_lr = value(key, v)?,
            "train.warmup_steps" => self.optim.warmup_steps = value(key, v)?,
            "train.accum_steps" => self.optim.accum_steps = value(key, v)?,
            "train.grad_clip" => {
                self.optim.grad_clip = if v == "none" { None } else { Some(value(key, v)?) }
            }
            "train.max_elements" => self.max_elements = value(key, v)?,
            "train.eval_every" => self.eval_every = value(key, v)?,
            "train.ctc_weight" => self.loss.ctc_weight = value(key, v)?,
            "train.label_smoothing" => self.loss.label_smoothing = value(key, v)?,
            "mixup.alpha" => self.mixup.alpha = value(key, v)?,
            "mixup.tau" => self.mixup.tau = value(key, v)?,
            "mixup.layers" => self.mixup.layers = layer_list(v)?,
            "specaug.time_warp" => self.spec_augment.time_warp = value(key, v)?,
            "specaug.time_masks" => self.spec_augment.time_masks = value(key, v)?,
            "specaug.time_width" => self.spec_augment.time_width = value(key, v)?,
            "specaug.freq_masks" => self.spec_augment.freq_masks = value(key, v)?,
            "specaug.freq_width" => self.spec_augment.freq_width = value(key, v)?,
            "specaug.time_enabled" => self.spec_augment.time_enabled = value(key, v)?,
            "specaug.freq_enabled" => self.spec_augment.freq_enabled = value(key, v)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Command-line overrides: seed, output directory, and 64-bit mode.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>, deterministic: bool) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.out = o;
        }
        if deterministic {
            self.precision = Precision::F64;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model_config().validate()?;
        if self.mode.mixes() {
            if self.mixup.layers.is_empty() {
                return Err(Error::Config(format!("mode {} needs mixup.layers", self.mode)));
            }
            if self.mixup.tau == 0.0 {
                return Err(Error::Config(format!("mode {} with mixup.tau = 0 never mixes", self.mode)));
            }
        }
        // Layer indices are checked even when the mode ignores them.
        if let Some(&k) = self.mixup.layers.iter().find(|&&k| k > self.model.encoder_layers) {
            return Err(Error::Config(format!(
                "mixup layer {k} exceeds the encoder depth {}",
                self.model.encoder_layers
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        self.train_config().validate(self.model.encoder_layers)
    }

    /// Non-fatal problems, such as a layer set that the mode ignores.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.mode.mixes() && !self.mixup.layers.is_empty() {
            out.push(format!(
                "mode baseline ignores mixup.layers = {}",
                list(&self.mixup.layers)
            ));
        }
        out
    }

    pub fn data_dir(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out.join("data"))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            feature_dim: self.data.feature_dim,
            vocab_size: self.data.vocab_size,
            ..self.model.clone()
        }
    }

    /// SpecAugment as the mode dictates: the basic mixup mode turns the
    /// time axis off, the time-enhanced mode turns it on, and the baseline
    /// keeps the configured value.
    pub fn spec_for_mode(&self) -> SpecAugmentConfig {
        let mut s = self.spec_augment.clone();
        match self.mode {
            Mode::Baseline => {}
            Mode::MixrepBasic => s.time_enabled = false,
            Mode::MixrepTimeEnhanced => s.time_enabled = true,
        }
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            optim: self.optim,
            seed: self.seed,
            max_elements: self.max_elements,
            mixup: self.mode.mixes().then(|| self.mixup.clone()),
            spec_augment: self.spec_for_mode(),
            eval_every: self.eval_every,
            loss: self.loss,
            checkpoint_dir: Some(self.out.clone()),
        }
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let m = &self.model;
        let s = &self.spec_augment;
        vec![
            ("mode", self.mode.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("out", self.out.display().to_string()),
            (
                "data.dir",
                self.data_dir.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("data.vocab_size", d.vocab_size.to_string()),
            ("data.train_utterances", d.num_utterances.to_string()),
            ("data.eval_utterances", self.eval_utterances.to_string()),
            ("data.tokens_min", d.tokens_min.to_string()),
            ("data.tokens_max", d.tokens_max.to_string()),
            ("data.frames_per_token_min", d.frames_per_token_min.to_string()),
            ("data.frames_per_token_max", d.frames_per_token_max.to_string()),
            ("data.feature_dim", d.feature_dim.to_string()),
            ("data.noise_std", d.noise_std.to_string()),
            ("data.seed", d.seed.to_string()),
            ("model.dim", m.model_dim.to_string()),
            ("model.encoder_layers", m.encoder_layers.to_string()),
            ("model.decoder_layers", m.decoder_layers.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.ffn_dim", m.ffn_dim.to_string()),
            ("model.conv_kernel", m.conv_kernel.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("model.subsample_channels", m.subsample_channels.to_string()),
            ("model.max_target_len", m.max_target_len.to_string()),
            ("train.epochs", self.epochs.to_string()),
            ("train.peak_lr", self.optim.peak_lr.to_string()),
            ("train.warmup_steps", self.optim.warmup_steps.to_string()),
            ("train.accum_steps", self.optim.accum_steps.to_string()),
            (
                "train.grad_clip",
                self.optim.grad_clip.map_or_else(|| "none".into(), |c| c.to_string()),
            ),
            ("train.max_elements", self.max_elements.to_string()),
            ("train.eval_every", self.eval_every.to_string()),
            ("train.ctc_weight", self.loss.ctc_weight.to_string()),
            ("train.label_smoothing", self.loss.label_smoothing.to_string()),
            ("mixup.alpha", self.mixup.alpha.to_string()),
            ("mixup.tau", self.mixup.tau.to_string()),
            ("mixup.layers", list(&self.mixup.layers)),
            ("specaug.time_warp", s.time_warp.to_string()),
            ("specaug.time_masks", s.time_masks.to_string()),
            ("specaug.time_width", s.time_width.to_string()),
            ("specaug.freq_masks", s.freq_masks.to_string()),
            ("specaug.freq_width", s.freq_width.to_string()),
            ("specaug.time_enabled", s.time_enabled.to_string()),
            ("specaug.freq_enabled", s.freq_enabled.to_string()),
        ]
    }
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
