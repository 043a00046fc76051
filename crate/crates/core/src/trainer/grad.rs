//! Backpropagation through the ranking loss, both towers and the lookups.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::confidence::HeadGrads;
use crate::encoder::{DenseLayer, ForwardTrace};
use crate::error::Result;
use crate::linalg::{self, Matrix, Real};
use crate::model::{DualEncoder, Tower};
use crate::textpipe::FeatureIds;

use super::loss::{self, ScoreMatrix};
use super::TrainingConfig;

/// Gradients of one tower. Embedding-table gradients are sparse: only rows
/// looked up in the batch are present.
#[derive(Clone, Debug, PartialEq)]
pub struct TowerGrads<T> {
    pub unigram: BTreeMap<u32, Vec<T>>,
    pub bigram: BTreeMap<u32, Vec<T>>,
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Real> TowerGrads<T> {
    pub fn zeros(tower: &Tower<T>) -> Self {
        Self {
            unigram: BTreeMap::new(),
            bigram: BTreeMap::new(),
            layers: tower
                .params
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
                    bias: vec![T::zero(); l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn squared_norm(&self) -> f64 {
        let rows = self.unigram.values().chain(self.bigram.values()).flatten();
        let dense = self
            .layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias));
        rows.chain(dense).map(|v| v.as_f64() * v.as_f64()).sum()
    }

    pub fn scale(&mut self, factor: f64) {
        let f = T::from_f64_lossy(factor);
        let rows = self.unigram.values_mut().chain(self.bigram.values_mut()).flatten();
        let dense = self
            .layers
            .iter_mut()
            .flat_map(|l| l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()));
        for v in rows.chain(dense) {
            *v *= f;
        }
    }

    pub fn max_abs(&self) -> f64 {
        let rows = self.unigram.values().chain(self.bigram.values()).flatten();
        let dense = self
            .layers
            .iter()
            .flat_map(|l| l.weights.as_slice().iter().chain(&l.bias));
        rows.chain(dense).fold(0.0, |m, v| m.max(v.as_f64().abs()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub source: TowerGrads<T>,
    pub target: TowerGrads<T>,
    pub head: HeadGrads<T>,
}

impl<T: Real> Gradients<T> {
    /// Euclidean norm over every tower parameter gradient.
    pub fn norm(&self) -> f64 {
        (self.source.squared_norm() + self.target.squared_norm()).sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.source.scale(factor);
        self.target.scale(factor);
    }

    pub fn zeros(model: &DualEncoder<T>) -> Self {
        Self {
            source: TowerGrads::zeros(&model.source),
            target: TowerGrads::zeros(&model.target),
            head: HeadGrads::zeros(model.head.feature_dim()),
        }
    }
}

/// Accumulates the gradient of one tower given `∂loss/∂embedding`.
pub fn backprop_tower<T: Real>(
    tower: &Tower<T>,
    features: &FeatureIds,
    trace: &ForwardTrace<T>,
    d_embedding: &[T],
    grads: &mut TowerGrads<T>,
) {
    let layers = &tower.params.layers;
    let last = layers.len() - 1;
    let mut d_out: Vec<Vec<T>> = trace.outputs.iter().map(|h| vec![T::zero(); h.len()]).collect();
    d_out[layers.len()].copy_from_slice(d_embedding);

    for i in (0..layers.len()).rev() {
        let g = std::mem::take(&mut d_out[i + 1]);
        if let Some(src) = tower.config.residual_source(i) {
            linalg::axpy(T::one(), &g, &mut d_out[src]);
        }
        let delta: Vec<T> = if i == last {
            g
        } else {
            g.iter()
                .zip(&trace.pre_activations[i])
                .map(|(&gj, &aj)| if aj > T::zero() { gj } else { T::zero() })
                .collect()
        };
        let lg = &mut grads.layers[i];
        linalg::outer_acc(&mut lg.weights, &delta, &trace.outputs[i]);
        linalg::axpy(T::one(), &delta, &mut lg.bias);
        linalg::matvec_transpose_acc(&layers[i].weights, &delta, &mut d_out[i]);
    }

    let scale = T::one() / T::from_f64_lossy((features.token_count as f64).sqrt());
    let width = d_out[0].len();
    for (ids, table) in [
        (&features.unigram_ids, &mut grads.unigram),
        (&features.bigram_ids, &mut grads.bigram),
    ] {
        for &id in ids {
            let row = table.entry(id).or_insert_with(|| vec![T::zero(); width]);
            linalg::axpy(scale, &d_out[0], row);
        }
    }
}

/// Feature ids of one ranking batch. `hard_targets` holds `K·M` extra
/// target sentences appended as negatives for every row.
#[derive(Clone, Debug)]
pub struct RankingBatch<'a> {
    pub sources: Vec<&'a FeatureIds>,
    pub targets: Vec<&'a FeatureIds>,
    pub hard_targets: Vec<&'a FeatureIds>,
}

fn traces<T: Real>(tower: &Tower<T>, feats: &[&FeatureIds]) -> Result<Vec<ForwardTrace<T>>> {
    feats
        .par_iter()
        .enumerate()
        .map(|(i, f)| tower.trace(f).map_err(|e| e.at_sentence(i)))
        .collect()
}

fn embeddings<T: Real>(traces: &[ForwardTrace<T>], dim: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(traces.len(), dim);
    for (i, t) in traces.iter().enumerate() {
        m.row_mut(i).copy_from_slice(t.embedding());
    }
    m
}

/// Scores a ranking batch without keeping backprop state.
pub fn ranking_batch_scores<T: Real>(
    model: &DualEncoder<T>,
    batch: &RankingBatch<'_>,
) -> Result<ScoreMatrix> {
    let dim = model.embedding_dim();
    let u = embeddings(&traces(&model.source, &batch.sources)?, dim);
    let v = embeddings(&traces(&model.target, &batch.targets)?, dim);
    let h = embeddings(&traces(&model.target, &batch.hard_targets)?, dim);
    loss::batch_scores(&u, &v, &h)
}

pub fn ranking_batch_loss<T: Real>(model: &DualEncoder<T>, batch: &RankingBatch<'_>) -> Result<f64> {
    Ok(loss::ranking_loss(&ranking_batch_scores(model, batch)?))
}

/// Ranking loss and the gradient of every tower parameter.
pub fn backward<T: Real>(
    model: &DualEncoder<T>,
    batch: &RankingBatch<'_>,
) -> Result<(f64, Gradients<T>)> {
    let dim = model.embedding_dim();
    let src = traces(&model.source, &batch.sources)?;
    let mut cand_feats = batch.targets.clone();
    cand_feats.extend(batch.hard_targets.iter().copied());
    let cand = traces(&model.target, &cand_feats)?;

    let u = embeddings(&src, dim);
    let k = batch.targets.len();
    let v = embeddings(&cand[..k], dim);
    let h = embeddings(&cand[k..], dim);
    let scores = loss::batch_scores(&u, &v, &h)?;
    let (value, d_scores) = loss::ranking_loss_grad(&scores);

    let mut grads = Gradients::zeros(model);
    for (i, trace) in src.iter().enumerate() {
        let mut du = vec![0.0f64; dim];
        for (c, ct) in cand.iter().enumerate() {
            let g = d_scores[(i, c)];
            for (d, &x) in du.iter_mut().zip(ct.embedding()) {
                *d += g * x.as_f64();
            }
        }
        let du: Vec<T> = du.into_iter().map(T::from_f64_lossy).collect();
        backprop_tower(&model.source, batch.sources[i], trace, &du, &mut grads.source);
    }
    for (c, trace) in cand.iter().enumerate() {
        let mut dv = vec![0.0f64; dim];
        for (i, st) in src.iter().enumerate() {
            let g = d_scores[(i, c)];
            for (d, &x) in dv.iter_mut().zip(st.embedding()) {
                *d += g * x.as_f64();
            }
        }
        let dv: Vec<T> = dv.into_iter().map(T::from_f64_lossy).collect();
        backprop_tower(&model.target, cand_feats[c], trace, &dv, &mut grads.target);
    }
    Ok((value, grads))
}

/// `learning_rate · decay_factor^⌊step / decay_every_steps⌋`
pub fn learning_rate(cfg: &TrainingConfig, step: u64) -> f64 {
    let decays = step / cfg.decay_every_steps;
    cfg.learning_rate * cfg.decay_factor.powf(decays as f64)
}

fn apply_tower<T: Real>(tower: &mut Tower<T>, grads: &TowerGrads<T>, lr: T, elr: T) {
    let p = &mut tower.params;
    for (&id, g) in &grads.unigram {
        linalg::axpy(-elr, g, p.unigram_table.row_mut(id as usize));
    }
    for (&id, g) in &grads.bigram {
        linalg::axpy(-elr, g, p.bigram_table.row_mut(id as usize));
    }
    for (layer, g) in p.layers.iter_mut().zip(&grads.layers) {
        linalg::axpy(-lr, g.weights.as_slice(), layer.weights.as_mut_slice());
        linalg::axpy(-lr, &g.bias, &mut layer.bias);
    }
}

/// Plain SGD with step decay on the towers and head; embedding rows move
/// `embedding_lr_scale` times faster.
pub fn sgd_step<T: Real>(model: &mut DualEncoder<T>, grads: &Gradients<T>, step: u64, cfg: &TrainingConfig) {
    let rate = learning_rate(cfg, step);
    let lr = T::from_f64_lossy(rate);
    let elr = T::from_f64_lossy(rate * cfg.embedding_lr_scale);
    apply_tower(&mut model.source, &grads.source, lr, elr);
    apply_tower(&mut model.target, &grads.target, lr, elr);
    model.head.apply(&grads.head, lr);
}
