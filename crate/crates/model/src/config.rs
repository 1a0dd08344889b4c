use std::path::PathBuf;

use goct_core::error::ParseError;
use goct_core::features::N_MELS;
use goct_core::tokens::VOCAB_SIZE;

use crate::error::ModelError;

/// Difficulty values are bucketed into `floor(d / 0.5)`, clamped to this many buckets.
pub const DIFFICULTY_BUCKETS: usize = 21;
pub const DIFFICULTY_STEP: f64 = 0.5;

pub fn difficulty_bucket(difficulty: f64) -> usize {
    let b = (difficulty / DIFFICULTY_STEP).floor();
    if b.is_nan() || b < 0.0 {
        0
    } else {
        (b as usize).min(DIFFICULTY_BUCKETS - 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub token_embed_dim: usize,
    pub difficulty_embed_dim: usize,
    pub n_mels: usize,
    pub vocab: usize,
    pub max_target_tokens: usize,
    pub dropout: f64,
    pub time_only: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 3,
            d_model: 256,
            n_heads: 4,
            d_ff: 1024,
            token_embed_dim: 208,
            difficulty_embed_dim: 48,
            n_mels: N_MELS,
            vocab: VOCAB_SIZE,
            max_target_tokens: 200,
            dropout: 0.1,
            time_only: false,
        }
    }
}

impl ModelConfig {
    /// Smallest sensible model; used by the gradient check.
    pub fn tiny() -> Self {
        Self {
            n_layers: 1,
            d_model: 8,
            n_heads: 1,
            d_ff: 16,
            token_embed_dim: 6,
            difficulty_embed_dim: 2,
            dropout: 0.0,
            ..Self::default()
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::Config(msg));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("layer count and sizes must be positive".into());
        }
        if self.token_embed_dim + self.difficulty_embed_dim != self.d_model {
            return bad(format!(
                "token_embed_dim ({}) + difficulty_embed_dim ({}) must equal d_model ({})",
                self.token_embed_dim, self.difficulty_embed_dim, self.d_model
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.vocab != VOCAB_SIZE {
            return bad(format!("vocab must be {VOCAB_SIZE}"));
        }
        if self.max_target_tokens < 2 {
            return bad("max_target_tokens must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("n_layers", self.n_layers.to_string()),
            ("d_model", self.d_model.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("d_ff", self.d_ff.to_string()),
            ("token_embed_dim", self.token_embed_dim.to_string()),
            ("difficulty_embed_dim", self.difficulty_embed_dim.to_string()),
            ("n_mels", self.n_mels.to_string()),
            ("vocab", self.vocab.to_string()),
            ("max_target_tokens", self.max_target_tokens.to_string()),
            ("dropout", self.dropout.to_string()),
            ("time_only", self.time_only.to_string()),
        ]
    }

    /// Sets one field by name. Returns false for unknown keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}`"))
        }
        match key {
            "n_layers" => self.n_layers = num(value)?,
            "d_model" => self.d_model = num(value)?,
            "n_heads" => self.n_heads = num(value)?,
            "d_ff" => self.d_ff = num(value)?,
            "token_embed_dim" => self.token_embed_dim = num(value)?,
            "difficulty_embed_dim" => self.difficulty_embed_dim = num(value)?,
            "n_mels" => self.n_mels = num(value)?,
            "vocab" => self.vocab = num(value)?,
            "max_target_tokens" => self.max_target_tokens = num(value)?,
            "dropout" => self.dropout = num(value)?,
            "time_only" => self.time_only = parse_bool(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("bad boolean `{v}`")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub label_smoothing: f64,
    /// Worker threads for batch gradients. Only `1` gives the serial,
    /// bit-reproducible reduction.
    pub jobs: usize,
    pub normalization: Option<PathBuf>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            batch: 32,
            epochs: 10,
            seed: 0,
            clip_norm: 1.0,
            label_smoothing: 0.02,
            jobs: 1,
            normalization: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn finetune() -> Self {
        Self { lr: 2e-5, epochs: 4, ..Self::default() }
    }

    /// `key=value` lines; `#` comments and blank lines are ignored. Model
    /// hyperparameters may appear alongside the optimizer settings.
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut cfg = Self::default();
        cfg.update_from(text)?;
        Ok(cfg)
    }

    /// Like [`TrainConfig::parse`], but starting from `self`.
    pub fn update_from(&mut self, text: &str) -> Result<(), ParseError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ParseError::new(i + 1, 1, "expected key=value"));
            };
            let (key, value) = (key.trim(), value.trim());
            let col = raw.find('=').map_or(1, |p| p + 2);
            self.set(key, value)
                .map_err(|m| ParseError::new(i + 1, col, m))?
                .then_some(())
                .ok_or_else(|| ParseError::new(i + 1, 1, format!("unknown key `{key}`")))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("bad value `{v}`"))
        }
        match key {
            "lr" => self.lr = num(value)?,
            "batch" => self.batch = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "seed" => self.seed = num(value)?,
            "clip_norm" => self.clip_norm = num(value)?,
            "label_smoothing" => self.label_smoothing = num(value)?,
            "jobs" => self.jobs = num(value)?,
            "normalization" => self.normalization = Some(PathBuf::from(value)),
            _ => return self.model.set(key, value),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(ModelError::Config(format!("lr {} must be finite and >= 0", self.lr)));
        }
        if self.batch == 0 {
            return Err(ModelError::Config("batch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(ModelError::Config("label_smoothing must lie in [0, 1)".into()));
        }
        self.model.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn buckets() {
        assert_eq!(difficulty_bucket(0.0), 0);
        assert_eq!(difficulty_bucket(0.49), 0);
        assert_eq!(difficulty_bucket(0.5), 1);
        assert_eq!(difficulty_bucket(3.7), 7);
        assert_eq!(difficulty_bucket(10.0), 20);
        assert_eq!(difficulty_bucket(1e9), 20);
        assert_eq!(difficulty_bucket(-1.0), 0);
    }

    #[test]
    fn default_and_tiny_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        let bad = ModelConfig { token_embed_dim: 200, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { n_heads: 3, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn train_config_file() {
        let cfg = TrainConfig::parse("# run\nlr = 1e-3\nbatch=8\nepochs=2\nseed=5\ntime_only=true\nd_model=64\n").unwrap();
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!((cfg.batch, cfg.epochs, cfg.seed), (8, 2, 5));
        assert!(cfg.model.time_only);
        assert_eq!(cfg.model.d_model, 64);
        let err = TrainConfig::parse("lr=1\nbogus=2\n").unwrap_err();
        assert_eq!((err.line, err.message.as_str()), (2, "unknown key `bogus`"));
        assert_eq!(TrainConfig::parse("batch=x").unwrap_err().column, 7);
        assert!(TrainConfig::parse("justtext").is_err());
        let mut ft = TrainConfig::finetune();
        ft.update_from("epochs=2").unwrap();
        assert_eq!((ft.lr, ft.epochs), (2e-5, 2));
    }

    #[test]
    fn model_config_pairs_round_trip() {
        let cfg = ModelConfig { dropout: 0.25, time_only: true, ..ModelConfig::tiny() };
        let mut back = ModelConfig::default();
        for (k, v) in cfg.to_pairs() {
            assert!(back.set(k, &v).unwrap());
        }
        assert_eq!(back, cfg);
    }
}
