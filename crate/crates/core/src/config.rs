//! Run configuration: model dimensions, search settings, optimizer
//! hyperparameters, and the plain-text `key = value` config file format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::rir::CombineStrategy;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Beam-search tree encoder nested in the balanced k-ary outer recursion.
    RirEbt,
    /// Balanced binary tree over the full sequence.
    Bbt,
    /// Left-to-right chain recurrence.
    Chain,
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rir_ebt" | "rir-ebt" => Ok(ModelKind::RirEbt),
            "bbt" => Ok(ModelKind::Bbt),
            "chain" => Ok(ModelKind::Chain),
            other => Err(format!("unknown model kind {other:?}")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Keep the outer chunked recursion at evaluation time.
    Rir,
    /// Run the inner beam encoder over the whole sequence at evaluation time.
    NonRir,
}

impl std::str::FromStr for InferenceMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rir" => Ok(InferenceMode::Rir),
            "non-rir" | "non_rir" | "nonrir" => Ok(InferenceMode::NonRir),
            other => Err(format!("unknown inference mode {other:?}")),
        }
    }
}

mod combine_serde {
    use super::CombineStrategy;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &CombineStrategy, s: S) -> Result<S::Ok, S::Error> {
        let name = match v {
            CombineStrategy::BeamAlign => "align",
            CombineStrategy::StringIt => "string",
            CombineStrategy::RandomAlign => "random",
        };
        name.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CombineStrategy, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Everything a run needs; see the README for the config file schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub model: ModelKind,
    /// Hidden width of node vectors.
    pub d: usize,
    /// Scorer slice width; the scorer reads coordinates `[0, d_s)`.
    pub d_s: usize,
    /// Cell hidden width, `4*d` unless overridden.
    pub d_cell: usize,
    /// Outer-recursion chunk size.
    pub k: usize,
    /// Beam width.
    pub beam: usize,
    #[serde(with = "combine_serde")]
    pub combine: CombineStrategy,
    pub inference: InferenceMode,
    /// Whether the bidirectional pre-chunk layer runs before encoding.
    pub prechunk: bool,
    /// Expand each chunk beam on its own instead of pooling candidates.
    pub independent_beams: bool,
    /// Scale on the Gumbel perturbation used during training-time search.
    pub gumbel_temperature: f64,
    pub vocab: usize,
    pub classes: usize,
    pub seed: u64,
    // optimizer and schedule
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Length-bucket size used to group samples before batching.
    pub bucket: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model: ModelKind::RirEbt,
            d: 64,
            d_s: 64,
            d_cell: 256,
            k: 30,
            beam: 7,
            combine: CombineStrategy::BeamAlign,
            inference: InferenceMode::NonRir,
            prechunk: true,
            independent_beams: false,
            gumbel_temperature: 1.0,
            vocab: crate::listops::VOCAB_SIZE,
            classes: crate::listops::CLASSES,
            seed: 0,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            epochs: 20,
            batch: 32,
            bucket: 256,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.d == 0 || self.d_s == 0 || self.d_cell == 0 {
            return Err(ConfigError::Invalid("widths must be positive".into()));
        }
        if self.d_s > self.d {
            return Err(ConfigError::Invalid(format!(
                "d_s ({}) must not exceed d ({})",
                self.d_s, self.d
            )));
        }
        if self.k < 2 {
            return Err(ConfigError::Invalid(format!("k must be >= 2, got {}", self.k)));
        }
        if self.beam == 0 {
            return Err(ConfigError::Invalid("beam must be >= 1".into()));
        }
        if self.vocab == 0 || self.classes < 2 {
            return Err(ConfigError::Invalid("need vocab >= 1 and classes >= 2".into()));
        }
        if self.batch == 0 || self.epochs == 0 || self.bucket == 0 {
            return Err(ConfigError::Invalid(
                "epochs, batch, and bucket must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Deferred field assignments parsed from a config file and/or CLI flags.
/// Derived defaults (`d_s = min(64, d)`, `d_cell = 4*d`) resolve only after
/// every override is known.
#[derive(Clone, Debug, Default)]
pub struct ConfigOverlay {
    entries: Vec<(String, String)>,
}

impl ConfigOverlay {
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.push((key.to_string(), value.into()));
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut overlay = ConfigOverlay::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: lineno + 1,
                    msg: format!("expected `key = value`, got {raw:?}"),
                });
            };
            overlay.set(key.trim(), value.trim().to_string());
        }
        Ok(overlay)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text)
    }

    /// Applies the overlay on top of defaults and resolves derived fields.
    pub fn finalize(&self) -> Result<ModelConfig, ConfigError> {
        let mut cfg = ModelConfig::default();
        let mut saw_ds = false;
        let mut saw_dcell = false;

        for (key, value) in &self.entries {
            let bad = || ConfigError::BadValue {
                key: key.clone(),
                value: value.clone(),
            };
            match key.as_str() {
                "model" => cfg.model = value.parse().map_err(|_| bad())?,
                "d" => cfg.d = value.parse().map_err(|_| bad())?,
                "d_s" => {
                    cfg.d_s = value.parse().map_err(|_| bad())?;
                    saw_ds = true;
                }
                "d_cell" => {
                    cfg.d_cell = value.parse().map_err(|_| bad())?;
                    saw_dcell = true;
                }
                "k" => cfg.k = value.parse().map_err(|_| bad())?,
                "beam" => cfg.beam = value.parse().map_err(|_| bad())?,
                "combine" => cfg.combine = value.parse().map_err(|_| bad())?,
                "inference" => cfg.inference = value.parse().map_err(|_| bad())?,
                "prechunk" => cfg.prechunk = value.parse().map_err(|_| bad())?,
                "independent_beams" => cfg.independent_beams = value.parse().map_err(|_| bad())?,
                "gumbel_temperature" => {
                    cfg.gumbel_temperature = value.parse().map_err(|_| bad())?
                }
                "vocab" => cfg.vocab = value.parse().map_err(|_| bad())?,
                "classes" => cfg.classes = value.parse().map_err(|_| bad())?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad())?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad())?,
                "beta1" => cfg.beta1 = value.parse().map_err(|_| bad())?,
                "beta2" => cfg.beta2 = value.parse().map_err(|_| bad())?,
                "adam_eps" => cfg.adam_eps = value.parse().map_err(|_| bad())?,
                "clip_norm" => cfg.clip_norm = value.parse().map_err(|_| bad())?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad())?,
                "batch" => cfg.batch = value.parse().map_err(|_| bad())?,
                "bucket" => cfg.bucket = value.parse().map_err(|_| bad())?,
                other => return Err(ConfigError::UnknownKey(other.to_string())),
            }
        }

        if !saw_ds {
            cfg.d_s = cfg.d.min(64);
        }
        if !saw_dcell {
            cfg.d_cell = 4 * cfg.d;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
