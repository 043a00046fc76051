//! Deep averaging network tower and dot-product scoring.
//!
//! A tower maps hashed n-gram ids to a sentence embedding:
//!
//! ```text
//! Ψ  = (Σ unigram rows + Σ bigram rows) / sqrt(token_count)
//! h₀ = Ψ
//! hᵢ = act(Wᵢ hᵢ₋₁ + bᵢ) [+ hᵢ₋₍ₛₖᵢₚ₊₁₎]     act = ReLU except on the last layer
//! u  = h_L
//! ```
//!
//! The residual term links hidden layer `i - skip - 1` to layer `i` and is
//! only present when that source is a hidden layer (index ≥ 1) with the same
//! width.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Real};
use crate::model::{DualEncoder, Side};
use crate::textpipe::{self, FeatureIds};

/// Half-width of the uniform init for the embedding tables.
pub const INIT_RANGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TowerConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub residual_skip: usize,
}

impl TowerConfig {
    /// Small uniform-width tower where every residual link applies.
    pub fn desk() -> Self {
        Self {
            input_dim: 64,
            hidden_dims: vec![64; 4],
            residual_skip: 1,
        }
    }

    /// Layer widths of the original large-scale configuration.
    pub fn full_scale() -> Self {
        Self {
            input_dim: 320,
            hidden_dims: vec![320, 320, 500, 500],
            residual_skip: 1,
        }
    }

    pub fn output_dim(&self) -> usize {
        *self.hidden_dims.last().expect("validated tower has layers")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::ConfigInvalid("input_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::ConfigInvalid("hidden_dims must not be empty".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::ConfigInvalid("hidden dims must be positive".into()));
        }
        if self.residual_skip == 0 {
            return Err(Error::ConfigInvalid("residual_skip must be positive".into()));
        }
        Ok(())
    }

    /// Width of the input to layer `i` (0-based).
    fn layer_input_dim(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim
        } else {
            self.hidden_dims[i - 1]
        }
    }

    /// Index into `h` (where `h[0] = Ψ`) of the residual source feeding the
    /// output of layer `i` (0-based), if any.
    pub fn residual_source(&self, i: usize) -> Option<usize> {
        let out_idx = i + 1;
        let src = out_idx.checked_sub(self.residual_skip + 1)?;
        (src >= 1 && self.hidden_dims[src - 1] == self.hidden_dims[i]).then_some(src)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// Shape `[out × in]`.
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TowerParams<T> {
    pub unigram_table: Matrix<T>,
    pub bigram_table: Matrix<T>,
    pub layers: Vec<DenseLayer<T>>,
}

fn uniform_matrix<T: Real>(rows: usize, cols: usize, range: f64, rng: &mut impl Rng) -> Matrix<T> {
    let data = (0..rows * cols)
        .map(|_| T::from_f64_lossy(rng.gen_range(-range..=range)))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("shape by construction")
}

/// Half-width of the uniform range for a dense layer's weights.
pub fn dense_init_range(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Real> TowerParams<T> {
    /// Embeddings uniform in ±[`INIT_RANGE`], dense weights uniform in
    /// ±[`dense_init_range`], biases zero.
    pub fn init(cfg: &TowerConfig, hash_buckets: usize, rng: &mut impl Rng) -> Self {
        let unigram_table = uniform_matrix(hash_buckets, cfg.input_dim, INIT_RANGE, rng);
        let bigram_table = uniform_matrix(hash_buckets, cfg.input_dim, INIT_RANGE, rng);
        let layers = cfg
            .hidden_dims
            .iter()
            .enumerate()
            .map(|(i, &out)| {
                let fan_in = cfg.layer_input_dim(i);
                DenseLayer {
                    weights: uniform_matrix(out, fan_in, dense_init_range(fan_in, out), rng),
                    bias: vec![T::zero(); out],
                }
            })
            .collect();
        Self {
            unigram_table,
            bigram_table,
            layers,
        }
    }

    pub fn check_shapes(&self, cfg: &TowerConfig) -> Result<()> {
        let expect = |expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, actual })
            }
        };
        expect(cfg.input_dim, self.unigram_table.cols())?;
        expect(cfg.input_dim, self.bigram_table.cols())?;
        expect(self.unigram_table.rows(), self.bigram_table.rows())?;
        expect(cfg.hidden_dims.len(), self.layers.len())?;
        for (i, layer) in self.layers.iter().enumerate() {
            expect(cfg.hidden_dims[i], layer.weights.rows())?;
            expect(cfg.layer_input_dim(i), layer.weights.cols())?;
            expect(cfg.hidden_dims[i], layer.bias.len())?;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.unigram_table.is_finite()
            && self.bigram_table.is_finite()
            && self
                .layers
                .iter()
                .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> TowerParams<U> {
        let c = |v: T| U::from_f64_lossy(v.as_f64());
        TowerParams {
            unigram_table: self.unigram_table.map(c),
            bigram_table: self.bigram_table.map(c),
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: l.weights.map(c),
                    bias: l.bias.iter().map(|&b| c(b)).collect(),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding<T>(pub Vec<T>);

impl<T: Real> SentenceEmbedding<T> {
    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

pub fn input_embedding<T: Real>(f: &FeatureIds, p: &TowerParams<T>) -> Result<Vec<T>> {
    if f.token_count == 0 {
        return Err(Error::EmptySentence);
    }
    let rows = p.unigram_table.rows();
    for &id in f.unigram_ids.iter().chain(&f.bigram_ids) {
        if id as usize >= rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: id as usize + 1,
            });
        }
    }
    let mut psi = vec![T::zero(); p.unigram_table.cols()];
    for &id in &f.unigram_ids {
        linalg::axpy(T::one(), p.unigram_table.row(id as usize), &mut psi);
    }
    for &id in &f.bigram_ids {
        linalg::axpy(T::one(), p.bigram_table.row(id as usize), &mut psi);
    }
    let scale = T::one() / T::from_f64_lossy((f.token_count as f64).sqrt());
    psi.iter_mut().for_each(|v| *v *= scale);
    Ok(psi)
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `outputs[0] = Ψ`, `outputs[i]` is the output of layer `i` (1-based).
    pub outputs: Vec<Vec<T>>,
    /// Pre-activation `Wᵢ hᵢ₋₁ + bᵢ` of each layer (0-based).
    pub pre_activations: Vec<Vec<T>>,
}

impl<T: Real> ForwardTrace<T> {
    pub fn embedding(&self) -> &[T] {
        self.outputs.last().expect("trace has outputs")
    }
}

pub fn forward_trace<T: Real>(
    psi: Vec<T>,
    p: &TowerParams<T>,
    cfg: &TowerConfig,
) -> Result<ForwardTrace<T>> {
    if psi.len() != cfg.input_dim {
        return Err(Error::DimensionMismatch {
            expected: cfg.input_dim,
            actual: psi.len(),
        });
    }
    if p.layers.len() != cfg.hidden_dims.len() {
        return Err(Error::DimensionMismatch {
            expected: cfg.hidden_dims.len(),
            actual: p.layers.len(),
        });
    }
    let last = p.layers.len() - 1;
    let mut outputs = Vec::with_capacity(p.layers.len() + 1);
    let mut pre_activations = Vec::with_capacity(p.layers.len());
    outputs.push(psi);
    for (i, layer) in p.layers.iter().enumerate() {
        let input = &outputs[i];
        if layer.weights.cols() != input.len() || layer.weights.rows() != layer.bias.len() {
            return Err(Error::DimensionMismatch {
                expected: input.len(),
                actual: layer.weights.cols(),
            });
        }
        let mut a = vec![T::zero(); layer.weights.rows()];
        linalg::matvec(&layer.weights, input, &mut a);
        for (ai, &bi) in a.iter_mut().zip(&layer.bias) {
            *ai += bi;
        }
        let mut h = a.clone();
        if i != last {
            h.iter_mut().for_each(|v| *v = v.max(T::zero()));
        }
        if let Some(src) = cfg.residual_source(i) {
            linalg::axpy(T::one(), &outputs[src], &mut h);
        }
        pre_activations.push(a);
        outputs.push(h);
    }
    Ok(ForwardTrace {
        outputs,
        pre_activations,
    })
}

pub fn forward<T: Real>(
    psi: Vec<T>,
    p: &TowerParams<T>,
    cfg: &TowerConfig,
) -> Result<SentenceEmbedding<T>> {
    let mut trace = forward_trace(psi, p, cfg)?;
    Ok(SentenceEmbedding(trace.outputs.pop().expect("non-empty")))
}

pub fn score<T: Real>(u: &SentenceEmbedding<T>, v: &SentenceEmbedding<T>) -> Result<T> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(linalg::dot(u.values(), v.values()))
}

/// Encodes every sentence on one side of the model, one row per sentence.
pub fn encode_corpus<T: Real, S: AsRef<str> + Sync>(
    sentences: &[S],
    side: Side,
    model: &DualEncoder<T>,
) -> Result<Matrix<T>> {
    encode_corpus_chunked(sentences, side, model, 256)
}

/// Like [`encode_corpus`], processing `chunk_size` sentences per parallel
/// work item. The result does not depend on `chunk_size`.
pub fn encode_corpus_chunked<T: Real, S: AsRef<str> + Sync>(
    sentences: &[S],
    side: Side,
    model: &DualEncoder<T>,
    chunk_size: usize,
) -> Result<Matrix<T>> {
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let dim = model.tower(side).config.output_dim();
    let chunks: Vec<Result<Vec<T>>> = sentences
        .par_chunks(chunk_size.max(1))
        .enumerate()
        .map(|(c, chunk)| {
            let mut out = Vec::with_capacity(chunk.len() * dim);
            for (k, s) in chunk.iter().enumerate() {
                let emb = model
                    .encode(s.as_ref(), side)
                    .map_err(|e| e.at_sentence(c * chunk_size.max(1) + k))?;
                out.extend_from_slice(emb.values());
            }
            Ok(out)
        })
        .collect();
    let mut data = Vec::with_capacity(sentences.len() * dim);
    for chunk in chunks {
        data.extend(chunk?);
    }
    Matrix::from_vec(sentences.len(), dim, data)
}

/// Encodes pre-featurized sentences.
pub fn encode_features<T: Real>(
    features: &[&FeatureIds],
    side: Side,
    model: &DualEncoder<T>,
) -> Result<Matrix<T>> {
    let tower = model.tower(side);
    let dim = tower.config.output_dim();
    let rows: Vec<Result<Vec<T>>> = features
        .par_iter()
        .map(|f| tower.embed(f).map(|e| e.0))
        .collect();
    let mut data = Vec::with_capacity(features.len() * dim);
    for (i, r) in rows.into_iter().enumerate() {
        data.extend(r.map_err(|e| e.at_sentence(i))?);
    }
    Matrix::from_vec(features.len(), dim, data)
}

/// Featurizes a sentence with the model's featurizer.
pub fn features_of<T: Real>(model: &DualEncoder<T>, text: &str) -> Result<FeatureIds> {
    textpipe::featurize_text(text, &model.featurizer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_params(cfg: &TowerConfig, buckets: usize, seed: u64) -> TowerParams<f64> {
        TowerParams::init(cfg, buckets, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn single_token_identity() {
        let cfg = TowerConfig {
            input_dim: 4,
            hidden_dims: vec![4],
            residual_skip: 1,
        };
        let mut p = small_params(&cfg, 8, 1);
        p.bigram_table = Matrix::zeros(8, 4);
        let f = FeatureIds {
            unigram_ids: vec![5],
            bigram_ids: vec![],
            token_count: 1,
        };
        assert_eq!(input_embedding(&f, &p).unwrap(), p.unigram_table.row(5));
    }

    #[test]
    fn zero_tables_give_zero_input() {
        let cfg = TowerConfig {
            input_dim: 3,
            hidden_dims: vec![3],
            residual_skip: 1,
        };
        let mut p = small_params(&cfg, 4, 2);
        p.unigram_table = Matrix::zeros(4, 3);
        p.bigram_table = Matrix::zeros(4, 3);
        let f = FeatureIds {
            unigram_ids: vec![0, 1, 2],
            bigram_ids: vec![3, 3],
            token_count: 3,
        };
        assert_eq!(input_embedding(&f, &p).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn input_embedding_matches_scalar_loop() {
        let cfg = TowerConfig {
            input_dim: 5,
            hidden_dims: vec![5],
            residual_skip: 1,
        };
        let p = small_params(&cfg, 16, 3);
        let f = FeatureIds {
            unigram_ids: vec![1, 7, 7, 12],
            bigram_ids: vec![0, 15, 4],
            token_count: 4,
        };
        let got = input_embedding(&f, &p).unwrap();
        for k in 0..5 {
            let mut sum = 0.0;
            for &u in &f.unigram_ids {
                sum += p.unigram_table[(u as usize, k)];
            }
            for &b in &f.bigram_ids {
                sum += p.bigram_table[(b as usize, k)];
            }
            assert!((got[k] - sum / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn repeated_tokens_scale_by_k() {
        // k² copies of one token: numerator grows by k², divisor by k.
        let cfg = TowerConfig {
            input_dim: 3,
            hidden_dims: vec![3],
            residual_skip: 1,
        };
        let mut p = small_params(&cfg, 4, 4);
        p.bigram_table = Matrix::zeros(4, 3);
        for k in 1..=4usize {
            let n = k * k;
            let f = FeatureIds {
                unigram_ids: vec![2; n],
                bigram_ids: vec![1; n - 1],
                token_count: n,
            };
            let psi = input_embedding(&f, &p).unwrap();
            for c in 0..3 {
                let want = p.unigram_table[(2, c)] * k as f64;
                assert!((psi[c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weights_zero_output() {
        let cfg = TowerConfig {
            input_dim: 4,
            hidden_dims: vec![4, 4, 4, 4],
            residual_skip: 1,
        };
        let mut p = small_params(&cfg, 4, 5);
        for l in &mut p.layers {
            l.weights = Matrix::zeros(4, 4);
        }
        let out = forward(vec![1.0, -2.0, 3.0, 0.5], &p, &cfg).unwrap();
        assert_eq!(out.values(), &[0.0; 4]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let cfg = TowerConfig {
            input_dim: 3,
            hidden_dims: vec![3],
            residual_skip: 1,
        };
        let mut p = small_params(&cfg, 4, 6);
        p.layers[0].weights = Matrix::identity(3);
        let psi = vec![0.25, -1.5, 2.0];
        // last layer has no activation, so negatives survive
        assert_eq!(forward(psi.clone(), &p, &cfg).unwrap().0, psi);
    }

    #[test]
    fn residual_path_carries_signal() {
        // With zero weights after the first layer, h₃ = relu(0 + b₃) + h₁ = h₁.
        let cfg = TowerConfig {
            input_dim: 3,
            hidden_dims: vec![3, 3, 3, 3],
            residual_skip: 1,
        };
        let mut p = small_params(&cfg, 4, 7);
        p.layers[0].bias = vec![0.3, 0.1, 0.2];
        for l in &mut p.layers[1..] {
            l.weights = Matrix::zeros(3, 3);
        }
        let trace = forward_trace(vec![1.0, 2.0, -1.0], &p, &cfg).unwrap();
        assert_eq!(trace.outputs[3], trace.outputs[1]);
        assert_eq!(trace.outputs[4], trace.outputs[2]);
    }

    #[test]
    fn residual_skipped_when_widths_differ() {
        let cfg = TowerConfig::full_scale();
        assert_eq!(cfg.residual_source(0), None);
        assert_eq!(cfg.residual_source(1), None);
        assert_eq!(cfg.residual_source(2), None); // 320 → 500
        assert_eq!(cfg.residual_source(3), None); // 320 → 500
        let desk = TowerConfig::desk();
        assert_eq!(desk.residual_source(2), Some(1));
        assert_eq!(desk.residual_source(3), Some(2));
        assert_eq!(cfg.output_dim(), 500);
    }

    #[test]
    fn two_layer_forward_matches_scalar_oracle() {
        let cfg = TowerConfig {
            input_dim: 4,
            hidden_dims: vec![4, 4],
            residual_skip: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = small_params(&cfg, 4, 9);
        for l in &mut p.layers {
            for v in l.weights.as_mut_slice() {
                *v = rng.gen_range(-1.0..1.0);
            }
            for b in &mut l.bias {
                *b = rng.gen_range(-0.5..0.5);
            }
        }
        let psi: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // With two layers the only candidate residual source is Ψ, which is
        // not a hidden layer, so the oracle has no residual add.
        let mut h1 = [0.0; 4];
        for r in 0..4 {
            let mut a = p.layers[0].bias[r];
            for c in 0..4 {
                a += p.layers[0].weights[(r, c)] * psi[c];
            }
            h1[r] = if a > 0.0 { a } else { 0.0 };
        }
        let mut h2 = [0.0; 4];
        for r in 0..4 {
            let mut a = p.layers[1].bias[r];
            for c in 0..4 {
                a += p.layers[1].weights[(r, c)] * h1[c];
            }
            h2[r] = a;
        }
        let got = forward(psi, &p, &cfg).unwrap();
        for k in 0..4 {
            assert!((got.0[k] - h2[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn three_layer_forward_includes_residual() {
        let cfg = TowerConfig {
            input_dim: 3,
            hidden_dims: vec![3, 3, 3],
            residual_skip: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut p = small_params(&cfg, 4, 11);
        for l in &mut p.layers {
            for v in l.weights.as_mut_slice() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let psi = vec![0.5, -0.2, 0.9];
        let layer = |w: &Matrix<f64>, b: &[f64], x: &[f64], relu: bool| -> Vec<f64> {
            (0..3)
                .map(|r| {
                    let a: f64 = b[r] + (0..3).map(|c| w[(r, c)] * x[c]).sum::<f64>();
                    if relu { a.max(0.0) } else { a }
                })
                .collect()
        };
        let h1 = layer(&p.layers[0].weights, &p.layers[0].bias, &psi, true);
        let h2 = layer(&p.layers[1].weights, &p.layers[1].bias, &h1, true);
        let mut h3 = layer(&p.layers[2].weights, &p.layers[2].bias, &h2, false);
        for k in 0..3 {
            h3[k] += h1[k];
        }
        let got = forward(psi, &p, &cfg).unwrap();
        for k in 0..3 {
            assert!((got.0[k] - h3[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_rejects_wrong_input_width() {
        let cfg = TowerConfig::desk();
        let p = small_params(&cfg, 2, 12);
        assert!(matches!(
            forward(vec![0.0; 3], &p, &cfg),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn score_examples() {
        let e = |v: Vec<f64>| SentenceEmbedding(v);
        assert_eq!(score(&e(vec![0.0, 0.0]), &e(vec![3.0, 4.0])).unwrap(), 0.0);
        assert_eq!(score(&e(vec![1.0, 0.0]), &e(vec![1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(score(&e(vec![1.0, 2.0]), &e(vec![3.0, -1.0])).unwrap(), 1.0);
        assert!(score(&e(vec![1.0]), &e(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn score_is_homogeneous() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let u: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let alpha: f64 = rng.gen_range(-3.0..3.0);
            let su = score(&SentenceEmbedding(u.clone()), &SentenceEmbedding(v.clone())).unwrap();
            let scaled = SentenceEmbedding(u.iter().map(|x| alpha * x).collect());
            let s2 = score(&scaled, &SentenceEmbedding(v)).unwrap();
            assert!((s2 - alpha * su).abs() < 1e-12);
        }
    }
}
