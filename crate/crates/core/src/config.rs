//! Flat `key = value` configuration shared by the model and the trainer.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config value: {0}")]
    Invalid(String),
}

/// Every tunable of the model and the optimiser.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    // encoder
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub vocab_min_count: usize,
    // constituency
    pub tree_state_dim: usize,
    pub attention_heads: usize,
    pub bilinear_dim: usize,
    /// Block size of the grouped bilinear form; 0 means one full block.
    pub bilinear_block: usize,
    // dependency graph
    pub gcn_layers: usize,
    pub gcn_dim: usize,
    pub fusion_hidden: usize,
    pub pair_dim: usize,
    pub dep_hidden: usize,
    /// Replace per-pair attention on the document node with uniform weights,
    /// so one GCN pass serves every pair of a document.
    pub shared_graph: bool,
    // training
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub warmup_ratio: f64,
    pub epochs: usize,
    pub grad_accum: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            embedding_dim: 32,
            hidden_dim: 32,
            vocab_min_count: 1,
            tree_state_dim: 256,
            attention_heads: 2,
            bilinear_dim: 64,
            bilinear_block: 0,
            gcn_layers: 3,
            gcn_dim: 128,
            fusion_hidden: 128,
            pair_dim: 64,
            dep_hidden: 128,
            shared_graph: false,
            learning_rate: 5e-5,
            weight_decay: 1e-4,
            margin: 1.0,
            warmup_ratio: 0.06,
            epochs: 30,
            grad_accum: 1,
            patience: 10,
            seed: 42,
        }
    }
}

impl Config {
    /// Smallest dimensions that still exercise every code path; used by the
    /// finite-difference checks.
    pub fn tiny() -> Self {
        Config {
            embedding_dim: 3,
            hidden_dim: 2,
            tree_state_dim: 4,
            attention_heads: 2,
            bilinear_dim: 3,
            gcn_layers: 3,
            gcn_dim: 3,
            fusion_hidden: 3,
            pair_dim: 2,
            dep_hidden: 4,
            ..Config::default()
        }
    }

    /// Small model that trains in seconds on synthetic corpora.
    pub fn desk() -> Self {
        Config {
            embedding_dim: 16,
            hidden_dim: 16,
            tree_state_dim: 16,
            attention_heads: 2,
            bilinear_dim: 8,
            gcn_layers: 3,
            gcn_dim: 16,
            fusion_hidden: 16,
            pair_dim: 16,
            dep_hidden: 32,
            learning_rate: 1e-2,
            weight_decay: 0.0,
            epochs: 200,
            patience: 0,
            ..Config::default()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny()),
            "desk" => Some(Self::desk()),
            "full" | "default" => Some(Self::default()),
            _ => None,
        }
    }

    pub fn encoder_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Canonical text: one `key = value` line per field, sorted by key.
    pub fn to_text(&self) -> String {
        let v = toml::Value::try_from(self).expect("config serialises");
        let mut out = String::new();
        if let toml::Value::Table(t) = v {
            for (k, val) in t {
                let _ = writeln!(out, "{k} = {val}");
            }
        }
        out
    }

    /// First 8 bytes of the SHA-256 of [`Config::to_text`].
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.warmup_ratio > 0.0 && self.warmup_ratio < 1.0) {
            return bad(format!(
                "warmup_ratio must lie in (0, 1), got {}",
                self.warmup_ratio
            ));
        }
        if !(self.margin > 0.0) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate must be positive and weight_decay nonnegative".into());
        }
        for (name, v) in [
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("vocab_min_count", self.vocab_min_count),
            ("tree_state_dim", self.tree_state_dim),
            ("attention_heads", self.attention_heads),
            ("bilinear_dim", self.bilinear_dim),
            ("gcn_layers", self.gcn_layers),
            ("gcn_dim", self.gcn_dim),
            ("fusion_hidden", self.fusion_hidden),
            ("pair_dim", self.pair_dim),
            ("dep_hidden", self.dep_hidden),
            ("grad_accum", self.grad_accum),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !self.tree_state_dim.is_multiple_of(self.attention_heads) {
            return bad(format!(
                "tree_state_dim {} is not divisible by attention_heads {}",
                self.tree_state_dim, self.attention_heads
            ));
        }
        if self.bilinear_block != 0 && !self.bilinear_dim.is_multiple_of(self.bilinear_block) {
            return bad(format!(
                "bilinear_dim {} is not divisible by bilinear_block {}",
                self.bilinear_dim, self.bilinear_block
            ));
        }
        Ok(())
    }
}
