//! Model dimensions and the `key = value` configuration format.
//!
//! A config file is a list of `key = value` lines; `#` starts a comment and
//! blank lines are ignored. Every key must be known: unknown keys are
//! rejected rather than silently ignored.
//!
//! ```
//! use uem::config::RunConfig;
//!
//! let cfg = RunConfig::parse("d = 32\nheads = 2\nlearning_rate = 0.001\n").unwrap();
//! assert_eq!(cfg.model.d, 32);
//! assert_eq!(cfg.training.learning_rate, 0.001);
//! assert!(RunConfig::parse("bogus = 1").is_err());
//! ```

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matching::{NceForm, TrainingConfig};

/// Dimensions and numeric constants of the retrieval model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Width of the incoming word features.
    pub text_dim: usize,
    /// Width of the incoming frame features.
    pub video_dim: usize,
    /// Shared embedding width.
    pub d: usize,
    /// Cross-attention projection width.
    pub d_p: usize,
    pub heads: usize,
    /// Transformer layers per tower.
    pub layers: usize,
    pub max_len: usize,
    pub ln_eps: f64,
    /// Similarity threshold for progressive grouping.
    pub epsilon: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            text_dim: 512,
            video_dim: 512,
            d: 256,
            d_p: 256,
            heads: 4,
            layers: 1,
            max_len: 512,
            ln_eps: 1e-5,
            epsilon: 0.90,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.text_dim == 0 || self.video_dim == 0 || self.d == 0 || self.d_p == 0 {
            return bad("feature and model dimensions must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!("heads ({}) must divide d ({})", self.heads, self.d));
        }
        if self.max_len == 0 {
            return bad("max_len must be positive".into());
        }
        if !(self.ln_eps > 0.0) {
            return bad(format!("ln_eps must be positive, got {}", self.ln_eps));
        }
        if !self.epsilon.is_finite() {
            return bad("epsilon must be finite".into());
        }
        Ok(())
    }
}

/// Model and training settings read from one config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
}

/// Every key accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "text_dim",
    "video_dim",
    "d",
    "d_p",
    "heads",
    "layers",
    "max_len",
    "ln_eps",
    "epsilon",
    "margin",
    "lambda",
    "hard_negative_start_epoch",
    "learning_rate",
    "batch_size",
    "epochs",
    "temperature",
    "nce_form",
    "lr_decay_factor",
    "lr_decay_patience",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for key {key}")))
}

impl RunConfig {
    /// Parses a config file body on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.training);
        match key {
            "text_dim" => m.text_dim = parse_value(key, value)?,
            "video_dim" => m.video_dim = parse_value(key, value)?,
            "d" => m.d = parse_value(key, value)?,
            "d_p" => m.d_p = parse_value(key, value)?,
            "heads" => m.heads = parse_value(key, value)?,
            "layers" => m.layers = parse_value(key, value)?,
            "max_len" => m.max_len = parse_value(key, value)?,
            "ln_eps" => m.ln_eps = parse_value(key, value)?,
            "epsilon" => m.epsilon = parse_value(key, value)?,
            "margin" => t.margin = parse_value(key, value)?,
            "lambda" => t.lambda = parse_value(key, value)?,
            "hard_negative_start_epoch" => t.hard_negative_start_epoch = parse_value(key, value)?,
            "learning_rate" => t.learning_rate = parse_value(key, value)?,
            "batch_size" => t.batch_size = parse_value(key, value)?,
            "epochs" => t.epochs = parse_value(key, value)?,
            "temperature" => t.temperature = parse_value(key, value)?,
            "nce_form" => t.nce_form = value.parse::<NceForm>()?,
            "lr_decay_factor" => t.lr_decay_factor = parse_value(key, value)?,
            "lr_decay_patience" => t.lr_decay_patience = parse_value(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()
    }

    /// Serializes every key; `parse(to_text())` reproduces `self` exactly.
    pub fn to_text(&self) -> String {
        let (m, t) = (&self.model, &self.training);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("text_dim", m.text_dim.to_string());
        kv("video_dim", m.video_dim.to_string());
        kv("d", m.d.to_string());
        kv("d_p", m.d_p.to_string());
        kv("heads", m.heads.to_string());
        kv("layers", m.layers.to_string());
        kv("max_len", m.max_len.to_string());
        kv("ln_eps", format!("{:?}", m.ln_eps));
        kv("epsilon", format!("{:?}", m.epsilon));
        kv("margin", format!("{:?}", t.margin));
        kv("lambda", format!("{:?}", t.lambda));
        kv("hard_negative_start_epoch", t.hard_negative_start_epoch.to_string());
        kv("learning_rate", format!("{:?}", t.learning_rate));
        kv("batch_size", t.batch_size.to_string());
        kv("epochs", t.epochs.to_string());
        kv("temperature", format!("{:?}", t.temperature));
        kv("nce_form", t.nce_form.to_string());
        kv("lr_decay_factor", format!("{:?}", t.lr_decay_factor));
        kv("lr_decay_patience", t.lr_decay_patience.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_text() {
        let mut cfg = RunConfig::default();
        cfg.model.d = 48;
        cfg.model.heads = 3;
        cfg.model.epsilon = 0.92;
        cfg.training.learning_rate = 1.5e-3;
        cfg.training.nce_form = NceForm::Verbatim;
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_documented_key_is_emitted() {
        let text = RunConfig::default().to_text();
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        assert_eq!(keys, CONFIG_KEYS);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::parse("d = 10\nheads = 4").is_err());
        assert!(RunConfig::parse("margin = abc").is_err());
        assert!(RunConfig::parse("just words").is_err());
        assert!(RunConfig::parse("margin = -1").is_err());
        let ok = RunConfig::parse("# comment\n\nepochs = 3 # trailing\n").unwrap();
        assert_eq!(ok.training.epochs, 3);
    }
}
