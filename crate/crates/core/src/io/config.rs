//! Flat `key = value` run configuration. `#` starts a comment; unknown keys
//! are errors. Keys not given keep their desk defaults.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::encoder::TowerConfig;
use crate::error::{Error, Result};
use crate::miner::DocMatchConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainingConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub training: TrainingConfig,
    /// Both towers share `input_dim`, `hidden_dims` and `residual_skip`.
    pub model: ModelConfig,
    pub doc_match: DocMatchConfig,
    /// Steps trained before mining hard negatives, when they are requested.
    pub warmup_steps: u64,
    /// Progress is reported every this many steps (0 disables it).
    pub log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            training: TrainingConfig::desk(),
            // head dropout keeps confidences too soft at desk scale
            model: ModelConfig {
                dropout_rate: 0.0,
                ..ModelConfig::default()
            },
            doc_match: DocMatchConfig::default(),
            warmup_steps: 1000,
            log_every: 100,
        }
    }
}

fn parse_value<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

fn parse_dims(v: &str) -> std::result::Result<Vec<usize>, String> {
    v.split(',').map(|d| parse_value(d.trim())).collect()
}

fn dims_text(dims: &[usize]) -> String {
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected key = value".into()))?;
            cfg.set(key.trim(), value.trim()).map_err(err)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.training;
        let m = &mut self.model;
        let d = &mut self.doc_match;
        match key {
            "batch_size" => t.batch_size = parse_value(v)?,
            "learning_rate" => t.learning_rate = parse_value(v)?,
            "decay_factor" => t.decay_factor = parse_value(v)?,
            "decay_every_steps" => t.decay_every_steps = parse_value(v)?,
            "total_steps" => t.total_steps = parse_value(v)?,
            "hard_negatives_per_example" => t.hard_negatives_per_example = parse_value(v)?,
            "hard_fraction" => t.hard_fraction = parse_value(v)?,
            "confidence_task_fraction" => t.confidence_task_fraction = parse_value(v)?,
            "seed" => t.seed = parse_value(v)?,
            "embedding_lr_scale" => t.embedding_lr_scale = parse_value(v)?,
            "clip_norm" => t.clip_norm = parse_value(v)?,
            "head_lr_scale" => t.head_lr_scale = parse_value(v)?,
            "calibration_steps" => t.calibration_steps = parse_value(v)?,
            "hash_buckets" => m.featurizer.hash_buckets = parse_value(v)?,
            "hash_seed" => m.featurizer.hash_seed = parse_value(v)?,
            "lowercase" => m.featurizer.lowercase = parse_value(v)?,
            "unicode_normalize" => m.featurizer.unicode_normalize = parse_value(v)?,
            "input_dim" => {
                let x = parse_value(v)?;
                m.source.input_dim = x;
                m.target.input_dim = x;
            }
            "hidden_dims" => {
                let x = parse_dims(v)?;
                m.source.hidden_dims = x.clone();
                m.target.hidden_dims = x;
            }
            "residual_skip" => {
                let x = parse_value(v)?;
                m.source.residual_skip = x;
                m.target.residual_skip = x;
            }
            "dropout_rate" => m.dropout_rate = parse_value(v)?,
            "retrieval_depth" => d.retrieval_depth = parse_value(v)?,
            "w1" => d.w1 = parse_value(v)?,
            "w2" => d.w2 = parse_value(v)?,
            "normalized_positions" => d.normalized_positions = parse_value(v)?,
            "warmup_steps" => self.warmup_steps = parse_value(v)?,
            "log_every" => self.log_every = parse_value(v)?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.training.validate()?;
        self.model.validate()?;
        self.doc_match.validate()
    }

    /// Every effective setting, in a form [`RunConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let t = &self.training;
        let m = &self.model;
        let d = &self.doc_match;
        let tower: &TowerConfig = &m.source;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("batch_size", t.batch_size.to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("decay_factor", t.decay_factor.to_string());
        kv("decay_every_steps", t.decay_every_steps.to_string());
        kv("total_steps", t.total_steps.to_string());
        kv("hard_negatives_per_example", t.hard_negatives_per_example.to_string());
        kv("hard_fraction", t.hard_fraction.to_string());
        kv("confidence_task_fraction", t.confidence_task_fraction.to_string());
        kv("seed", t.seed.to_string());
        kv("embedding_lr_scale", t.embedding_lr_scale.to_string());
        kv("clip_norm", t.clip_norm.to_string());
        kv("head_lr_scale", t.head_lr_scale.to_string());
        kv("calibration_steps", t.calibration_steps.to_string());
        kv("hash_buckets", m.featurizer.hash_buckets.to_string());
        kv("hash_seed", m.featurizer.hash_seed.to_string());
        kv("lowercase", m.featurizer.lowercase.to_string());
        kv("unicode_normalize", m.featurizer.unicode_normalize.to_string());
        kv("input_dim", tower.input_dim.to_string());
        kv("hidden_dims", dims_text(&tower.hidden_dims));
        kv("residual_skip", tower.residual_skip.to_string());
        kv("dropout_rate", m.dropout_rate.to_string());
        kv("retrieval_depth", d.retrieval_depth.to_string());
        kv("w1", d.w1.to_string());
        kv("w2", d.w2.to_string());
        kv("normalized_positions", d.normalized_positions.to_string());
        kv("warmup_steps", self.warmup_steps.to_string());
        kv("log_every", self.log_every.to_string());
        s
    }
}
