//! Ranking training with in-batch and appended hard negatives.
//!
//! Each step draws the next `K` pairs of a per-epoch shuffle (a trailing
//! partial batch is dropped) and, with probability
//! `confidence_task_fraction`, trains the confidence head on that batch;
//! otherwise it takes an SGD step on the ranking loss. Every row of a ranking
//! batch contributes `M` extra target columns: its mined hard negatives when
//! the hard-negative table lists it, random corpus targets otherwise. All
//! `K·M` extra columns are negatives for every row.
//!
//! After `total_steps` mixed steps, `calibration_steps` further steps train
//! only the head on the final embeddings.
//!
//! All randomness (shuffles, task choice, random negatives, dropout) comes
//! from one seeded stream, so a run is a pure function of its inputs.

mod grad;
mod hard;
mod loss;

pub use grad::{
    backprop_tower, backward, learning_rate, ranking_batch_loss, ranking_batch_scores, sgd_step,
    Gradients, RankingBatch, TowerGrads,
};
pub use hard::{mine_hard_negatives, HardNegativeTable};
pub use loss::{batch_scores, ranking_loss, ranking_loss_grad, ScoreMatrix};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::confidence::{self, ConfidenceBatch, HeadGrads};
use crate::encoder;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};
use crate::model::{DualEncoder, ModelConfig, Side};
use crate::textpipe::{self, FeatureIds};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            target: target.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_every_steps: u64,
    pub total_steps: u64,
    pub hard_negatives_per_example: usize,
    pub hard_fraction: f64,
    pub confidence_task_fraction: f64,
    pub seed: u64,
    /// Multiplies the learning rate for embedding-table rows.
    pub embedding_lr_scale: f64,
    /// Ranking gradients with a larger global norm are rescaled to this
    /// norm; `0` disables clipping.
    pub clip_norm: f64,
    /// Multiplies the learning rate to give the confidence head's AdaGrad
    /// step size.
    pub head_lr_scale: f64,
    /// Confidence-only steps run after the `total_steps` mixed steps.
    pub calibration_steps: u64,
}

impl TrainingConfig {
    /// Large-scale hyperparameters (batch 128, lr 0.01 decayed by 0.96
    /// every 5M steps, 50M steps).
    pub fn full_scale() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.01,
            decay_factor: 0.96,
            decay_every_steps: 5_000_000,
            total_steps: 50_000_000,
            hard_negatives_per_example: 5,
            hard_fraction: 0.2,
            confidence_task_fraction: 0.1,
            seed: 0,
            embedding_lr_scale: 1.0,
            clip_norm: 0.0,
            head_lr_scale: 1.0,
            calibration_steps: 0,
        }
    }

    /// Small-corpus defaults used by the CLI and tests.
    pub fn desk() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.1,
            decay_factor: 0.96,
            decay_every_steps: 1_000,
            total_steps: 2_000,
            hard_negatives_per_example: 0,
            hard_fraction: 0.2,
            confidence_task_fraction: 0.1,
            seed: 0,
            embedding_lr_scale: 20.0,
            clip_norm: 2.0,
            head_lr_scale: 10.0,
            calibration_steps: 6_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigInvalid(msg));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad(format!("decay_factor must be in (0, 1], got {}", self.decay_factor));
        }
        if self.decay_every_steps == 0 {
            return bad("decay_every_steps must be positive".into());
        }
        if !(self.embedding_lr_scale > 0.0 && self.embedding_lr_scale.is_finite()) {
            return bad(format!("embedding_lr_scale must be > 0, got {}", self.embedding_lr_scale));
        }
        if !(self.head_lr_scale > 0.0 && self.head_lr_scale.is_finite()) {
            return bad(format!("head_lr_scale must be > 0, got {}", self.head_lr_scale));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return bad(format!("clip_norm must be >= 0, got {}", self.clip_norm));
        }
        for (name, v) in [
            ("hard_fraction", self.hard_fraction),
            ("confidence_task_fraction", self.confidence_task_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

/// Step counter, the training random stream and the head's AdaGrad
/// accumulator (empty until the first confidence step).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub rng: ChaCha8Rng,
    pub head_sq_grads: Vec<f32>,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // stream 0 of the same seed initializes parameters
        rng.set_stream(1);
        Self {
            step: 0,
            rng,
            head_sq_grads: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T = f32> {
    pub model: DualEncoder<T>,
    pub state: TrainState,
}

impl<T: Real> Checkpoint<T> {
    /// Fresh parameters and training state derived from one seed.
    pub fn init(model_cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            model: DualEncoder::init(model_cfg, seed)?,
            state: TrainState::new(seed),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Rank,
    Confidence,
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Rank => "rank",
            Task::Confidence => "conf",
        })
    }
}

/// One progress line: `step<TAB>task<TAB>loss<TAB>lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProgressRecord {
    pub step: u64,
    pub task: Task,
    pub loss: f64,
    pub lr: f64,
}

impl std::fmt::Display for ProgressRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}\t{}\t{:.6}\t{:.6e}", self.step, self.task, self.loss, self.lr)
    }
}

pub struct Trainer<'a, T> {
    cfg: TrainingConfig,
    features: Vec<(FeatureIds, FeatureIds)>,
    hard: Option<&'a HardNegativeTable>,
    model: DualEncoder<T>,
    state: TrainState,
    order: Vec<usize>,
    cursor: usize,
}

impl<'a, T: Real> Trainer<'a, T> {
    pub fn new(
        cfg: TrainingConfig,
        corpus: &[SentencePair],
        checkpoint: Checkpoint<T>,
        hard: Option<&'a HardNegativeTable>,
    ) -> Result<Self> {
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if corpus.len() < cfg.batch_size {
            return Err(Error::ConfigInvalid(format!(
                "batch_size {} exceeds corpus size {}",
                cfg.batch_size,
                corpus.len()
            )));
        }
        let fc = &checkpoint.model.featurizer;
        let features = corpus
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let s = textpipe::featurize_text(&p.source, fc);
                let t = textpipe::featurize_text(&p.target, fc);
                s.and_then(|s| t.map(|t| (s, t))).map_err(|e| e.at_sentence(i))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(table) = hard {
            if let Some((src, _)) = table.iter().find(|&(s, negs)| s >= corpus.len() || negs.iter().any(|&n| n >= corpus.len())) {
                return Err(Error::ConfigInvalid(format!(
                    "hard-negative table entry {src} refers outside the corpus"
                )));
            }
        }
        Ok(Self {
            cfg,
            features,
            hard,
            model: checkpoint.model,
            state: checkpoint.state,
            order: Vec::new(),
            cursor: 0,
        })
    }

    pub fn model(&self) -> &DualEncoder<T> {
        &self.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let k = self.cfg.batch_size;
        if self.order.is_empty() || self.cursor + k > self.order.len() {
            self.order = (0..self.features.len()).collect();
            self.order.shuffle(&mut self.state.rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + k].to_vec();
        self.cursor += k;
        batch
    }

    fn extra_negatives(&mut self, batch: &[usize]) -> Vec<usize> {
        let m = self.cfg.hard_negatives_per_example;
        let n = self.features.len();
        let mut out = Vec::with_capacity(batch.len() * m);
        for &p in batch {
            let mined = self.hard.and_then(|t| t.get(p)).unwrap_or(&[]);
            out.extend(mined.iter().take(m).copied());
            for _ in mined.len().min(m)..m {
                // uniform over every pair except p
                let r = self.state.rng.gen_range(0..n - 1);
                out.push(if r >= p { r + 1 } else { r });
            }
        }
        out
    }

    /// Runs one training step.
    pub fn step(&mut self) -> Result<ProgressRecord> {
        let step = self.state.step;
        let lr = learning_rate(&self.cfg, step);
        let task = if step >= self.cfg.total_steps || self.state.rng.gen_bool(self.cfg.confidence_task_fraction) {
            Task::Confidence
        } else {
            Task::Rank
        };
        let batch = self.next_batch();
        let loss = match task {
            Task::Rank => self.rank_step(&batch, step)?,
            Task::Confidence => self.confidence_step(&batch, lr)?,
        };
        self.state.step += 1;
        Ok(ProgressRecord { step, task, loss, lr })
    }

    fn rank_step(&mut self, batch: &[usize], step: u64) -> Result<f64> {
        let extra = self.extra_negatives(batch);
        let rb = RankingBatch {
            sources: batch.iter().map(|&i| &self.features[i].0).collect(),
            targets: batch.iter().map(|&i| &self.features[i].1).collect(),
            hard_targets: extra.iter().map(|&i| &self.features[i].1).collect(),
        };
        let (loss, mut grads) = backward(&self.model, &rb)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step });
        }
        let norm = grads.norm();
        if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            grads.scale(self.cfg.clip_norm / norm);
        }
        sgd_step(&mut self.model, &grads, step, &self.cfg);
        Ok(loss)
    }

    fn confidence_step(&mut self, batch: &[usize], lr: f64) -> Result<f64> {
        let src: Vec<&FeatureIds> = batch.iter().map(|&i| &self.features[i].0).collect();
        let tgt: Vec<&FeatureIds> = batch.iter().map(|&i| &self.features[i].1).collect();
        let u = encoder::encode_features(&src, Side::Source, &self.model)?;
        let v = encoder::encode_features(&tgt, Side::Target, &self.model)?;
        let scores = batch_scores(&u, &v, &Matrix::zeros(0, u.cols()))?;
        let mask = confidence::sample_dropout_mask(
            u.rows(),
            self.model.head.feature_dim(),
            self.model.head.dropout_rate,
            &mut self.state.rng,
        );
        let batch = ConfidenceBatch {
            sources: &u,
            scores: &scores.values,
        };
        let (loss, grads): (f64, HeadGrads<T>) = confidence::confidence_loss(&batch, &self.model.head, Some(&mask))?;
        // towers are untouched: the head is the only parameter set updated
        self.model
            .head
            .apply_adagrad(&grads, &mut self.state.head_sq_grads, lr * self.cfg.head_lr_scale);
        Ok(loss)
    }

    /// Steps through the mixed and calibration phases, reporting every step
    /// to `observer`.
    pub fn run(mut self, mut observer: impl FnMut(&ProgressRecord)) -> Result<Checkpoint<T>> {
        while self.state.step < self.cfg.total_steps + self.cfg.calibration_steps {
            let record = self.step()?;
            observer(&record);
        }
        Ok(Checkpoint {
            model: self.model,
            state: self.state,
        })
    }
}

/// Trains a freshly initialized model; parameters and the training stream
/// both derive from `cfg.seed`.
pub fn train(
    cfg: &TrainingConfig,
    model_cfg: &ModelConfig,
    corpus: &[SentencePair],
    hard: Option<&HardNegativeTable>,
) -> Result<Checkpoint<f32>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let init = Checkpoint::init(model_cfg, cfg.seed)?;
    Trainer::new(cfg.clone(), corpus, init, hard)?.run(|_| {})
}

/// Trains from scratch; when hard negatives are requested, the first
/// `warmup_steps` use random extra negatives, then hard negatives are mined
/// with the warmed-up model and training continues with them.
pub fn train_with_mining(
    cfg: &TrainingConfig,
    model_cfg: &ModelConfig,
    corpus: &[SentencePair],
    warmup_steps: u64,
    mut observer: impl FnMut(&ProgressRecord),
) -> Result<Checkpoint<f32>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let init = Checkpoint::init(model_cfg, cfg.seed)?;
    let m = cfg.hard_negatives_per_example;
    if m == 0 || cfg.hard_fraction == 0.0 || warmup_steps >= cfg.total_steps {
        return Trainer::new(cfg.clone(), corpus, init, None)?.run(observer);
    }
    let warm_cfg = TrainingConfig {
        total_steps: warmup_steps,
        calibration_steps: 0,
        ..cfg.clone()
    };
    let warm = Trainer::new(warm_cfg, corpus, init, None)?.run(&mut observer)?;
    let table = mine_hard_negatives(&warm.model, corpus, m, cfg.hard_fraction, cfg.seed, None)?;
    Trainer::new(cfg.clone(), corpus, warm, Some(&table))?.run(observer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TowerConfig;
    use crate::textpipe::FeaturizerConfig;

    fn toy_corpus(n: usize) -> Vec<SentencePair> {
        (0..n)
            .map(|i| SentencePair::new(format!("s{} s{} s{}", i, i % 7, i % 5), format!("t{} t{} t{}", i, i % 7, i % 5)))
            .collect()
    }

    fn small_model_cfg() -> ModelConfig {
        let tower = TowerConfig {
            input_dim: 16,
            hidden_dims: vec![16, 16, 16, 16],
            residual_skip: 1,
        };
        ModelConfig {
            featurizer: FeaturizerConfig {
                hash_buckets: 1 << 10,
                ..Default::default()
            },
            source: tower.clone(),
            target: tower,
            dropout_rate: 0.4,
        }
    }

    fn small_cfg(steps: u64) -> TrainingConfig {
        TrainingConfig {
            batch_size: 8,
            total_steps: steps,
            seed: 3,
            calibration_steps: 0,
            ..TrainingConfig::desk()
        }
    }

    #[test]
    fn calibration_phase_only_moves_the_head() {
        let cfg = TrainingConfig {
            calibration_steps: 6,
            ..small_cfg(4)
        };
        let corpus = toy_corpus(32);
        let init: Checkpoint<f32> = Checkpoint::init(&small_model_cfg(), cfg.seed).unwrap();
        let mut trainer = Trainer::new(cfg, &corpus, init, None).unwrap();
        for _ in 0..4 {
            trainer.step().unwrap();
        }
        let towers = (trainer.model().source.clone(), trainer.model().target.clone());
        let mut tasks = Vec::new();
        let ck = trainer.run(|r| tasks.push(r.task)).unwrap();
        assert_eq!(tasks, vec![Task::Confidence; 6]);
        assert_eq!((ck.model.source, ck.model.target), towers);
        assert_eq!(ck.state.step, 10);
        assert_eq!(ck.state.head_sq_grads.len(), 2 * ck.model.head.feature_dim() + 2);
    }

    #[test]
    fn config_validation() {
        assert!(TrainingConfig::full_scale().validate().is_ok());
        assert!(TrainingConfig::desk().validate().is_ok());
        for broken in [
            TrainingConfig { batch_size: 1, ..TrainingConfig::desk() },
            TrainingConfig { learning_rate: 0.0, ..TrainingConfig::desk() },
            TrainingConfig { decay_factor: 0.0, ..TrainingConfig::desk() },
            TrainingConfig { decay_factor: 1.5, ..TrainingConfig::desk() },
            TrainingConfig { hard_fraction: 1.1, ..TrainingConfig::desk() },
            TrainingConfig { embedding_lr_scale: 0.0, ..TrainingConfig::desk() },
            TrainingConfig { clip_norm: -1.0, ..TrainingConfig::desk() },
        ] {
            assert!(matches!(broken.validate(), Err(Error::ConfigInvalid(_))));
        }
    }

    #[test]
    fn runaway_learning_rate_reports_divergence() {
        let cfg = TrainingConfig {
            learning_rate: 1e12,
            clip_norm: 0.0,
            confidence_task_fraction: 0.0,
            ..small_cfg(200)
        };
        assert!(matches!(
            train(&cfg, &small_model_cfg(), &toy_corpus(32), None),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn clipping_bounds_the_update() {
        let cfg = TrainingConfig {
            learning_rate: 1.0,
            decay_factor: 1.0,
            embedding_lr_scale: 1.0,
            clip_norm: 1e-3,
            confidence_task_fraction: 0.0,
            ..small_cfg(1)
        };
        let corpus = toy_corpus(32);
        let init: Checkpoint<f64> = Checkpoint::init(&small_model_cfg(), cfg.seed).unwrap();
        let mut t = Trainer::new(cfg, &corpus, init.clone(), None).unwrap();
        t.step().unwrap();
        let mut sq = 0.0;
        for (a, b) in [(&init.model.source, &t.model().source), (&init.model.target, &t.model().target)] {
            let (a, b) = (&a.params, &b.params);
            let mut pairs: Vec<(&[f64], &[f64])> = vec![
                (a.unigram_table.as_slice(), b.unigram_table.as_slice()),
                (a.bigram_table.as_slice(), b.bigram_table.as_slice()),
            ];
            for (la, lb) in a.layers.iter().zip(&b.layers) {
                pairs.push((la.weights.as_slice(), lb.weights.as_slice()));
                pairs.push((&la.bias, &lb.bias));
            }
            sq += pairs
                .iter()
                .flat_map(|(x, y)| x.iter().zip(y.iter()))
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        }
        let moved = sq.sqrt();
        assert!(moved > 0.0 && moved <= 1e-3 * (1.0 + 1e-9), "{moved}");
    }

    #[test]
    fn staged_training_is_deterministic_and_uses_the_table() {
        let cfg = TrainingConfig {
            hard_negatives_per_example: 2,
            hard_fraction: 1.0,
            ..small_cfg(20)
        };
        let corpus = toy_corpus(40);
        let mut steps = Vec::new();
        let a = train_with_mining(&cfg, &small_model_cfg(), &corpus, 8, |r| steps.push(r.step)).unwrap();
        assert_eq!(steps, (0..20).collect::<Vec<_>>());
        assert_eq!(a, train_with_mining(&cfg, &small_model_cfg(), &corpus, 8, |_| {}).unwrap());
        let plain = TrainingConfig {
            hard_fraction: 0.0,
            ..cfg.clone()
        };
        assert_ne!(a, train_with_mining(&plain, &small_model_cfg(), &corpus, 8, |_| {}).unwrap());
        assert_eq!(
            train_with_mining(&plain, &small_model_cfg(), &corpus, 8, |_| {}).unwrap(),
            train(&plain, &small_model_cfg(), &corpus, None).unwrap()
        );
    }

    #[test]
    fn zero_steps_returns_initialization() {
        let cfg = small_cfg(0);
        let ckpt = train(&cfg, &small_model_cfg(), &toy_corpus(32), None).unwrap();
        assert_eq!(ckpt, Checkpoint::init(&small_model_cfg(), cfg.seed).unwrap());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = TrainingConfig {
            hard_negatives_per_example: 2,
            ..small_cfg(30)
        };
        let a = train(&cfg, &small_model_cfg(), &toy_corpus(40), None).unwrap();
        let b = train(&cfg, &small_model_cfg(), &toy_corpus(40), None).unwrap();
        assert_eq!(a, b);
        let c = train(&TrainingConfig { seed: 4, ..cfg }, &small_model_cfg(), &toy_corpus(40), None).unwrap();
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn empty_corpus_and_oversized_batch_rejected() {
        assert!(matches!(
            train(&small_cfg(1), &small_model_cfg(), &[], None),
            Err(Error::EmptyCorpus)
        ));
        assert!(matches!(
            train(&small_cfg(1), &small_model_cfg(), &toy_corpus(4), None),
            Err(Error::ConfigInvalid(_))
        ));
    }

    #[test]
    fn confidence_steps_leave_towers_untouched() {
        let cfg = TrainingConfig {
            confidence_task_fraction: 1.0,
            ..small_cfg(5)
        };
        let corpus = toy_corpus(32);
        let init: Checkpoint<f32> = Checkpoint::init(&small_model_cfg(), cfg.seed).unwrap();
        let mut trainer = Trainer::new(cfg, &corpus, init.clone(), None).unwrap();
        for _ in 0..5 {
            assert_eq!(trainer.step().unwrap().task, Task::Confidence);
        }
        assert_eq!(trainer.model().source, init.model.source);
        assert_eq!(trainer.model().target, init.model.target);
        assert_ne!(trainer.model().head, init.model.head);
    }

    #[test]
    fn task_mix_follows_fraction() {
        let cfg = TrainingConfig {
            confidence_task_fraction: 0.1,
            ..small_cfg(400)
        };
        let corpus = toy_corpus(32);
        let mut conf = 0;
        Trainer::new(cfg, &corpus, Checkpoint::<f32>::init(&small_model_cfg(), 3).unwrap(), None)
            .unwrap()
            .run(|r| conf += usize::from(r.task == Task::Confidence))
            .unwrap();
        assert!((20..=60).contains(&conf), "{conf}");
    }

    #[test]
    fn extra_negatives_never_pick_the_row_itself() {
        let cfg = TrainingConfig {
            hard_negatives_per_example: 3,
            ..small_cfg(1)
        };
        let corpus = toy_corpus(16);
        let mut table = HardNegativeTable::new();
        table.insert(0, vec![5, 6, 7]);
        let mut t = Trainer::new(cfg, &corpus, Checkpoint::<f32>::init(&small_model_cfg(), 1).unwrap(), Some(&table)).unwrap();
        for _ in 0..20 {
            let batch = t.next_batch();
            let extra = t.extra_negatives(&batch);
            assert_eq!(extra.len(), batch.len() * 3);
            for (row, chunk) in batch.iter().zip(extra.chunks(3)) {
                assert!(!chunk.contains(row));
                if *row == 0 {
                    assert_eq!(chunk, &[5, 6, 7]);
                }
            }
        }
    }

    #[test]
    fn epochs_cover_pairs_without_repeats() {
        let corpus = toy_corpus(20);
        let mut t = Trainer::new(small_cfg(1), &corpus, Checkpoint::<f32>::init(&small_model_cfg(), 1).unwrap(), None).unwrap();
        let a = t.next_batch();
        let b = t.next_batch();
        let mut seen: Vec<usize> = a.iter().chain(&b).copied().collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 16);
        // the 4 leftovers are dropped and a fresh shuffle starts
        let c = t.next_batch();
        assert_eq!(c.len(), 8);
        assert_eq!(t.cursor, 8);
    }

    #[test]
    fn mining_contract() {
        let corpus = toy_corpus(10);
        let model = DualEncoder::<f32>::init(&small_model_cfg(), 2).unwrap();
        let table = mine_hard_negatives(&model, &corpus, 3, 1.0, 7, None).unwrap();
        assert_eq!(table.len(), 10);
        for (src, negs) in table.iter() {
            assert_eq!(negs.len(), 3);
            assert!(!negs.contains(&src));
        }
        let empty = mine_hard_negatives(&model, &corpus, 0, 1.0, 7, None).unwrap();
        assert!(empty.iter().all(|(_, n)| n.is_empty()));
        let part = mine_hard_negatives(&model, &corpus, 2, 0.25, 7, None).unwrap();
        assert_eq!(part.len(), 3);
        assert!(matches!(
            mine_hard_negatives(&model, &corpus[..3], 3, 1.0, 7, None),
            Err(Error::InsufficientTargets { .. })
        ));
    }
}
