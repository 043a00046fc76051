use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::confidence::ConfidenceHead;
use crate::encoder::{self, ForwardTrace, SentenceEmbedding, TowerConfig, TowerParams};
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::textpipe::{self, FeatureIds, FeaturizerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Source,
    Target,
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" | "src" => Ok(Side::Source),
            "target" | "tgt" => Ok(Side::Target),
            other => Err(Error::ConfigInvalid(format!(
                "side must be source or target, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for Side {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Side::Source => "source",
            Side::Target => "target",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tower<T> {
    pub config: TowerConfig,
    pub params: TowerParams<T>,
}

impl<T: Real> Tower<T> {
    pub fn embed(&self, f: &FeatureIds) -> Result<SentenceEmbedding<T>> {
        let psi = encoder::input_embedding(f, &self.params)?;
        encoder::forward(psi, &self.params, &self.config)
    }

    pub fn trace(&self, f: &FeatureIds) -> Result<ForwardTrace<T>> {
        let psi = encoder::input_embedding(f, &self.params)?;
        encoder::forward_trace(psi, &self.params, &self.config)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub featurizer: FeaturizerConfig,
    pub source: TowerConfig,
    pub target: TowerConfig,
    pub dropout_rate: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            featurizer: FeaturizerConfig::default(),
            source: TowerConfig::desk(),
            target: TowerConfig::desk(),
            dropout_rate: 0.4,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.featurizer.validate()?;
        self.source.validate()?;
        self.target.validate()?;
        if self.source.output_dim() != self.target.output_dim() {
            return Err(Error::ConfigInvalid(format!(
                "source and target embedding sizes differ ({} vs {})",
                self.source.output_dim(),
                self.target.output_dim()
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::ConfigInvalid(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Two independent encoder towers plus the confidence head.
#[derive(Clone, Debug, PartialEq)]
pub struct DualEncoder<T> {
    pub featurizer: FeaturizerConfig,
    pub source: Tower<T>,
    pub target: Tower<T>,
    pub head: ConfidenceHead<T>,
}

impl<T: Real> DualEncoder<T> {
    /// Seeded initialization. Tower parameters are drawn in a fixed order,
    /// source then target; the head starts at zero.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let buckets = cfg.featurizer.hash_buckets as usize;
        let source = Tower {
            config: cfg.source.clone(),
            params: TowerParams::init(&cfg.source, buckets, &mut rng),
        };
        let target = Tower {
            config: cfg.target.clone(),
            params: TowerParams::init(&cfg.target, buckets, &mut rng),
        };
        let head = ConfidenceHead::init(cfg.source.output_dim(), cfg.dropout_rate);
        Ok(Self {
            featurizer: cfg.featurizer.clone(),
            source,
            target,
            head,
        })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            featurizer: self.featurizer.clone(),
            source: self.source.config.clone(),
            target: self.target.config.clone(),
            dropout_rate: self.head.dropout_rate,
        }
    }

    pub fn tower(&self, side: Side) -> &Tower<T> {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }

    pub fn tower_mut(&mut self, side: Side) -> &mut Tower<T> {
        match side {
            Side::Source => &mut self.source,
            Side::Target => &mut self.target,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.source.config.output_dim()
    }

    pub fn encode(&self, text: &str, side: Side) -> Result<SentenceEmbedding<T>> {
        let f = textpipe::featurize_text(text, &self.featurizer)?;
        self.tower(side).embed(&f)
    }

    /// Calibrated confidence of a pair given the source embedding and the
    /// pair's dot score.
    pub fn confidence(&self, u: &SentenceEmbedding<T>, dot_score: f64) -> Result<f64> {
        self.head.calibrate(u, dot_score)
    }

    pub fn check_shapes(&self) -> Result<()> {
        self.config().validate()?;
        self.source.params.check_shapes(&self.source.config)?;
        self.target.params.check_shapes(&self.target.config)?;
        self.head.check_shapes(self.embedding_dim())
    }

    pub fn cast<U: Real>(&self) -> DualEncoder<U> {
        DualEncoder {
            featurizer: self.featurizer.clone(),
            source: Tower {
                config: self.source.config.clone(),
                params: self.source.params.cast(),
            },
            target: Tower {
                config: self.target.config.clone(),
                params: self.target.params.cast(),
            },
            head: self.head.cast(),
        }
    }
}
