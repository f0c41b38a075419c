//! Run configuration and its flat `key = value` file format.
//!
//! Blank lines and lines starting with `#` are ignored. Every other line must
//! be `key = value` with a known key; repeated keys take the last value.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    Mlp,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub tau_visual: f64,
    pub tau_text: f64,
    pub tau_poi: f64,
    pub margin: f64,
    pub alpha: f64,
    pub eta: f64,
    pub lambda: f64,
    pub gcn_layers: usize,
    pub top_k: usize,
    pub dropout: f64,
    pub aug_dropout: f64,
    pub embed_dim: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub encoder_epochs: usize,
    pub lr_visual: f64,
    pub lr_text: f64,
    pub lr_poi: f64,
    pub lr_gcn: f64,
    pub weight_decay: f64,
    pub circle_radius_km: f64,
    pub train_heads: bool,
    pub folds: usize,
    pub regressor: RegressorKind,
    pub regressor_hidden: usize,
    pub regressor_epochs: usize,
    pub regressor_lr: f64,
    pub regressor_weight_decay: f64,
    pub ridge_lambda: f64,
    pub clusters: usize,
    pub rng_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau_visual: 0.05,
            tau_text: 1.0,
            tau_poi: 0.005,
            margin: 1.0,
            alpha: 0.2,
            eta: 0.5,
            lambda: 0.1,
            gcn_layers: 3,
            top_k: 20,
            dropout: 0.3,
            aug_dropout: 0.1,
            embed_dim: 128,
            batch_size: 32,
            epochs: 60,
            encoder_epochs: 60,
            lr_visual: 5e-3,
            lr_text: 1e-5,
            lr_poi: 1e-5,
            lr_gcn: 5e-4,
            weight_decay: 3e-3,
            circle_radius_km: 1.0,
            train_heads: true,
            folds: 5,
            regressor: RegressorKind::Mlp,
            regressor_hidden: 64,
            regressor_epochs: 300,
            regressor_lr: 1e-2,
            regressor_weight_decay: 1e-2,
            ridge_lambda: 1.0,
            clusters: 3,
            rng_seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub const KEYS: [&'static str; 31] = [
        "tau_visual",
        "tau_text",
        "tau_poi",
        "margin",
        "alpha",
        "eta",
        "lambda",
        "gcn_layers",
        "top_k",
        "dropout",
        "aug_dropout",
        "embed_dim",
        "batch_size",
        "epochs",
        "encoder_epochs",
        "lr_visual",
        "lr_text",
        "lr_poi",
        "lr_gcn",
        "weight_decay",
        "circle_radius_km",
        "train_heads",
        "folds",
        "regressor",
        "regressor_hidden",
        "regressor_epochs",
        "regressor_lr",
        "regressor_weight_decay",
        "ridge_lambda",
        "clusters",
        "rng_seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "tau_visual" => self.tau_visual = parse_num(key, v)?,
            "tau_text" => self.tau_text = parse_num(key, v)?,
            "tau_poi" => self.tau_poi = parse_num(key, v)?,
            "margin" => self.margin = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "eta" => self.eta = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "gcn_layers" => self.gcn_layers = parse_num(key, v)?,
            "top_k" => self.top_k = parse_num(key, v)?,
            "dropout" => self.dropout = parse_num(key, v)?,
            "aug_dropout" => self.aug_dropout = parse_num(key, v)?,
            "embed_dim" => self.embed_dim = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "encoder_epochs" => self.encoder_epochs = parse_num(key, v)?,
            "lr_visual" => self.lr_visual = parse_num(key, v)?,
            "lr_text" => self.lr_text = parse_num(key, v)?,
            "lr_poi" => self.lr_poi = parse_num(key, v)?,
            "lr_gcn" => self.lr_gcn = parse_num(key, v)?,
            "weight_decay" => self.weight_decay = parse_num(key, v)?,
            "circle_radius_km" => self.circle_radius_km = parse_num(key, v)?,
            "train_heads" => self.train_heads = parse_num(key, v)?,
            "folds" => self.folds = parse_num(key, v)?,
            "regressor" => {
                self.regressor = match v {
                    "mlp" => RegressorKind::Mlp,
                    "ridge" => RegressorKind::Ridge,
                    other => {
                        return Err(Error::Config(format!(
                            "`regressor` must be `mlp` or `ridge`, got `{other}`"
                        )))
                    }
                }
            }
            "regressor_hidden" => self.regressor_hidden = parse_num(key, v)?,
            "regressor_epochs" => self.regressor_epochs = parse_num(key, v)?,
            "regressor_lr" => self.regressor_lr = parse_num(key, v)?,
            "regressor_weight_decay" => self.regressor_weight_decay = parse_num(key, v)?,
            "ridge_lambda" => self.ridge_lambda = parse_num(key, v)?,
            "clusters" => self.clusters = parse_num(key, v)?,
            "rng_seed" => self.rng_seed = parse_num(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Canonical `(key, value)` pairs in declaration order. Floats use the
    /// shortest representation that round-trips.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let f = |x: f64| format!("{x:?}");
        let values = [
            f(self.tau_visual),
            f(self.tau_text),
            f(self.tau_poi),
            f(self.margin),
            f(self.alpha),
            f(self.eta),
            f(self.lambda),
            self.gcn_layers.to_string(),
            self.top_k.to_string(),
            f(self.dropout),
            f(self.aug_dropout),
            self.embed_dim.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.encoder_epochs.to_string(),
            f(self.lr_visual),
            f(self.lr_text),
            f(self.lr_poi),
            f(self.lr_gcn),
            f(self.weight_decay),
            f(self.circle_radius_km),
            self.train_heads.to_string(),
            self.folds.to_string(),
            match self.regressor {
                RegressorKind::Mlp => "mlp".to_string(),
                RegressorKind::Ridge => "ridge".to_string(),
            },
            self.regressor_hidden.to_string(),
            self.regressor_epochs.to_string(),
            f(self.regressor_lr),
            f(self.regressor_weight_decay),
            f(self.ridge_lambda),
            self.clusters.to_string(),
            self.rng_seed.to_string(),
        ];
        Self::KEYS.iter().copied().zip(values).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            cfg.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// SHA-256 over the canonical text; identical on every platform.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_visual", self.tau_visual),
            ("tau_text", self.tau_text),
            ("tau_poi", self.tau_poi),
            ("margin", self.margin),
            ("circle_radius_km", self.circle_radius_km),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive, got {v}")));
            }
        }
        for (k, v) in [("dropout", self.dropout), ("aug_dropout", self.aug_dropout)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("`{k}` must lie in [0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("`alpha` must lie in [0, 1], got {}", self.alpha)));
        }
        if self.eta < 0.0 {
            return Err(Error::Config("`eta` must be non-negative".into()));
        }
        if self.gcn_layers == 0 || self.embed_dim == 0 || self.batch_size < 2 || self.top_k == 0 {
            return Err(Error::Config(
                "`gcn_layers`, `embed_dim`, `top_k` must be >= 1 and `batch_size` >= 2".into(),
            ));
        }
        if self.folds < 2 {
            return Err(Error::Config("`folds` must be >= 2".into()));
        }
        Ok(())
    }
}
