//! Batched scoring and the in-batch softmax ranking loss.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Real};

/// Scores of `K` sources against `K + K·M` candidate targets. Column `i` of
/// row `i` is the true pair; every other entry is a negative.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMatrix {
    pub values: Matrix<f64>,
}

impl ScoreMatrix {
    pub fn batch_size(&self) -> usize {
        self.values.rows()
    }

    pub fn candidates(&self) -> usize {
        self.values.cols()
    }

    /// Hard negatives per example, `M`.
    pub fn hard_per_example(&self) -> usize {
        (self.candidates() - self.batch_size()) / self.batch_size()
    }
}

/// `S = U · [V; V_hard]ᵀ`, accumulated in `f64`.
pub fn batch_scores<T: Real>(u: &Matrix<T>, v: &Matrix<T>, v_hard: &Matrix<T>) -> Result<ScoreMatrix> {
    let k = u.rows();
    if k == 0 {
        return Err(Error::DegenerateBatch(0));
    }
    if v.rows() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: v.rows(),
        });
    }
    if v.cols() != u.cols() {
        return Err(Error::DimensionMismatch {
            expected: u.cols(),
            actual: v.cols(),
        });
    }
    if v_hard.rows() > 0 && v_hard.cols() != u.cols() {
        return Err(Error::DimensionMismatch {
            expected: u.cols(),
            actual: v_hard.cols(),
        });
    }
    if v_hard.rows() % k != 0 {
        return Err(Error::DimensionMismatch {
            expected: k * (v_hard.rows() / k + 1),
            actual: v_hard.rows(),
        });
    }
    let cols = k + v_hard.rows();
    let mut values = Matrix::zeros(k, cols);
    for i in 0..k {
        let ui = u.row(i);
        let row = values.row_mut(i);
        for (c, vc) in v.iter_rows().chain(v_hard.iter_rows()).enumerate() {
            row[c] = linalg::dot_f64(ui, vc);
        }
    }
    Ok(ScoreMatrix { values })
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|&s| (s - max).exp()).sum::<f64>().ln()
}

/// Mean negative log of the approximate translation probability:
/// `-(1/K) Σᵢ [S(i,i) - log Σ_c exp S(i,c)]`.
pub fn ranking_loss(s: &ScoreMatrix) -> f64 {
    let k = s.batch_size();
    let total: f64 = (0..k)
        .map(|i| {
            let row = s.values.row(i);
            log_sum_exp(row) - row[i]
        })
        .sum();
    total / k as f64
}

/// Loss and `∂loss/∂S(i,c) = (softmaxᵢ(c) - [c = i]) / K`.
pub fn ranking_loss_grad(s: &ScoreMatrix) -> (f64, Matrix<f64>) {
    let k = s.batch_size();
    let mut grad = Matrix::zeros(k, s.candidates());
    let mut total = 0.0;
    for i in 0..k {
        let row = s.values.row(i);
        let lse = log_sum_exp(row);
        total += lse - row[i];
        for (c, g) in grad.row_mut(i).iter_mut().enumerate() {
            let p = (row[c] - lse).exp();
            *g = (p - if c == i { 1.0 } else { 0.0 }) / k as f64;
        }
    }
    (total / k as f64, grad)
}
