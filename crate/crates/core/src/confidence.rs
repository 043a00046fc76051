//! Source-conditioned calibration of dot-product scores.
//!
//! For a source embedding `u` and pair score `s`:
//!
//! ```text
//! f     = [u, u²]
//! scale = w_scale · f + b_scale
//! shift = w_shift · f + b_shift
//! conf  = σ(scale · s + shift)
//! ```
//!
//! Only the source side feeds `scale` and `shift`, so for one source the
//! ordering of targets by confidence is the ordering by `s` (reversed when
//! `scale < 0`). Retrieval never consults the head.

use rand::Rng;

use crate::encoder::SentenceEmbedding;
use crate::error::{Error, Result};
use crate::linalg::{self, sigmoid, Matrix, Real};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceHead<T> {
    pub scale_weights: Vec<T>,
    pub scale_bias: T,
    pub shift_weights: Vec<T>,
    pub shift_bias: T,
    /// Applied to `[u, u²]` during training only.
    pub dropout_rate: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads<T> {
    pub scale_weights: Vec<T>,
    pub scale_bias: T,
    pub shift_weights: Vec<T>,
    pub shift_bias: T,
}

impl<T: Real> HeadGrads<T> {
    pub fn zeros(feature_dim: usize) -> Self {
        Self {
            scale_weights: vec![T::zero(); feature_dim],
            scale_bias: T::zero(),
            shift_weights: vec![T::zero(); feature_dim],
            shift_bias: T::zero(),
        }
    }
}

/// `[u, u²]`
pub fn confidence_features<T: Real>(u: &[T]) -> Vec<T> {
    u.iter().copied().chain(u.iter().map(|&x| x * x)).collect()
}

/// Per-source inverted-dropout multipliers (`0` or `1 / (1 - rate)`).
pub fn sample_dropout_mask<T: Real>(
    rows: usize,
    feature_dim: usize,
    rate: f32,
    rng: &mut impl Rng,
) -> Matrix<T> {
    let keep = 1.0 - f64::from(rate);
    let scale = T::from_f64_lossy(1.0 / keep);
    let data = (0..rows * feature_dim)
        .map(|_| {
            if rate > 0.0 && rng.gen::<f64>() >= keep {
                T::zero()
            } else if rate > 0.0 {
                scale
            } else {
                T::one()
            }
        })
        .collect();
    Matrix::from_vec(rows, feature_dim, data).expect("shape by construction")
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl<T: Real> ConfidenceHead<T> {
    /// All-zero parameters: every pair starts at confidence 0.5.
    pub fn init(embedding_dim: usize, dropout_rate: f32) -> Self {
        Self {
            scale_weights: vec![T::zero(); 2 * embedding_dim],
            scale_bias: T::zero(),
            shift_weights: vec![T::zero(); 2 * embedding_dim],
            shift_bias: T::zero(),
            dropout_rate,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.scale_weights.len()
    }

    pub fn check_shapes(&self, embedding_dim: usize) -> Result<()> {
        for len in [self.scale_weights.len(), self.shift_weights.len()] {
            if len != 2 * embedding_dim {
                return Err(Error::DimensionMismatch {
                    expected: 2 * embedding_dim,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// `(scale, shift)` for a feature vector `[u, u²]` (possibly masked).
    pub fn scale_and_shift(&self, features: &[T]) -> (f64, f64) {
        let scale = linalg::dot_f64(&self.scale_weights, features) + self.scale_bias.as_f64();
        let shift = linalg::dot_f64(&self.shift_weights, features) + self.shift_bias.as_f64();
        (scale, shift)
    }

    /// Confidence in the open interval (0, 1): saturated logits are clamped
    /// to the nearest representable values inside it.
    pub fn calibrate(&self, u: &SentenceEmbedding<T>, dot_score: f64) -> Result<f64> {
        self.check_shapes(u.dim())?;
        let (scale, shift) = self.scale_and_shift(&confidence_features(u.values()));
        Ok(sigmoid(scale * dot_score + shift).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
    }

    pub fn apply(&mut self, grads: &HeadGrads<T>, lr: T) {
        linalg::axpy(-lr, &grads.scale_weights, &mut self.scale_weights);
        linalg::axpy(-lr, &grads.shift_weights, &mut self.shift_weights);
        self.scale_bias -= lr * grads.scale_bias;
        self.shift_bias -= lr * grads.shift_bias;
    }

    /// AdaGrad step: `sq_grads` accumulates squared gradients in the order
    /// scale weights, shift weights, scale bias, shift bias, and each
    /// coordinate moves by `lr·g/sqrt(sum g²)`. An empty accumulator is
    /// sized on first use.
    pub fn apply_adagrad(&mut self, grads: &HeadGrads<T>, sq_grads: &mut Vec<f32>, lr: f64) {
        let dim = self.feature_dim();
        if sq_grads.is_empty() {
            sq_grads.resize(2 * dim + 2, 0.0);
        }
        assert_eq!(sq_grads.len(), 2 * dim + 2, "accumulator does not fit the head");
        let params = self
            .scale_weights
            .iter_mut()
            .chain(self.shift_weights.iter_mut())
            .chain([&mut self.scale_bias, &mut self.shift_bias]);
        let gs = grads
            .scale_weights
            .iter()
            .chain(&grads.shift_weights)
            .chain([&grads.scale_bias, &grads.shift_bias]);
        for ((p, g), acc) in params.zip(gs).zip(sq_grads.iter_mut()) {
            let g = g.as_f64();
            *acc += (g * g) as f32;
            if *acc > 0.0 {
                *p -= T::from_f64_lossy(lr * g / f64::from(*acc).sqrt());
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ConfidenceHead<U> {
        let c = |v: T| U::from_f64_lossy(v.as_f64());
        ConfidenceHead {
            scale_weights: self.scale_weights.iter().map(|&v| c(v)).collect(),
            scale_bias: c(self.scale_bias),
            shift_weights: self.shift_weights.iter().map(|&v| c(v)).collect(),
            shift_bias: c(self.shift_bias),
            dropout_rate: self.dropout_rate,
        }
    }
}

/// One confidence-task batch: `K` source embeddings and the `K × K` score
/// matrix against the batch targets, true pairs on the diagonal.
pub struct ConfidenceBatch<'a, T> {
    pub sources: &'a Matrix<T>,
    pub scores: &'a Matrix<f64>,
}

/// Mean binary cross-entropy of calibrated confidences against diagonal
/// labels, with gradients for the head parameters only.
///
/// `mask` holds per-source dropout multipliers; `None` evaluates without
/// dropout.
pub fn confidence_loss<T: Real>(
    batch: &ConfidenceBatch<'_, T>,
    head: &ConfidenceHead<T>,
    mask: Option<&Matrix<T>>,
) -> Result<(f64, HeadGrads<T>)> {
    let k = batch.sources.rows();
    if k < 2 {
        return Err(Error::DegenerateBatch(k));
    }
    if batch.scores.rows() != k || batch.scores.cols() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: batch.scores.cols(),
        });
    }
    head.check_shapes(batch.sources.cols())?;
    let n = (k * k) as f64;
    let mut grads = HeadGrads::zeros(head.feature_dim());
    let mut loss = 0.0;
    for i in 0..k {
        let mut f = confidence_features(batch.sources.row(i));
        if let Some(m) = mask {
            for (fi, &mi) in f.iter_mut().zip(m.row(i)) {
                *fi *= mi;
            }
        }
        let (scale, shift) = head.scale_and_shift(&f);
        let mut g_scale = 0.0;
        let mut g_shift = 0.0;
        for c in 0..k {
            let s = batch.scores[(i, c)];
            let z = scale * s + shift;
            let y = if c == i { 1.0 } else { 0.0 };
            loss += softplus(z) - y * z;
            let dz = (sigmoid(z) - y) / n;
            g_scale += dz * s;
            g_shift += dz;
        }
        linalg::axpy(T::from_f64_lossy(g_scale), &f, &mut grads.scale_weights);
        linalg::axpy(T::from_f64_lossy(g_shift), &f, &mut grads.shift_weights);
        grads.scale_bias += T::from_f64_lossy(g_scale);
        grads.shift_bias += T::from_f64_lossy(g_shift);
    }
    Ok((loss / n, grads))
}
