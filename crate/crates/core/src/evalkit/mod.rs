//! Retrieval and agreement metrics, plus a synthetic cipher corpus.

mod synth;

pub use synth::{make_synthetic_corpus, SynthCorpus, SynthCorpusConfig};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::encoder;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{DualEncoder, Side};
use crate::trainer::SentencePair;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub p_at: BTreeMap<usize, f64>,
    pub num_queries: usize,
}

impl EvalResult {
    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let mut out = String::from("metric      N      value\n");
        for (n, p) in &self.p_at {
            let _ = writeln!(out, "P@N    {n:>6}  {p:>9.4}");
        }
        out
    }

    /// One `metric<TAB>N<TAB>value` line per cutoff.
    pub fn records(&self) -> String {
        self.p_at
            .iter()
            .map(|(n, p)| format!("P@N\t{n}\t{p}\n"))
            .collect()
    }
}

/// P@N from 1-based ranks of the true target.
pub fn precision_from_ranks(ranks: &[usize], ns: &BTreeSet<usize>) -> EvalResult {
    let total = ranks.len();
    let p_at = ns
        .iter()
        .map(|&n| {
            let hits = ranks.iter().filter(|&&r| r <= n).count();
            let p = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
            (n, p)
        })
        .collect();
    EvalResult {
        p_at,
        num_queries: total,
    }
}

/// 1-based rank of each true target among itself and the pool. Pool entries
/// whose text equals the true target are skipped, and pool entries scoring
/// exactly as high as the truth are ranked ahead of it.
pub fn true_target_ranks<S: AsRef<str> + Sync>(
    model: &DualEncoder<f32>,
    eval_pairs: &[SentencePair],
    pool: &[S],
) -> Result<Vec<usize>> {
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    if eval_pairs.is_empty() {
        return Ok(Vec::new());
    }
    let sources: Vec<&str> = eval_pairs.iter().map(|p| p.source.as_str()).collect();
    let targets: Vec<&str> = eval_pairs.iter().map(|p| p.target.as_str()).collect();
    let u = encoder::encode_corpus(&sources, Side::Source, model)?;
    let v = encoder::encode_corpus(&targets, Side::Target, model)?;
    let w = encoder::encode_corpus(pool, Side::Target, model)?;
    let mut by_text: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, t) in pool.iter().enumerate() {
        by_text.entry(t.as_ref()).or_default().push(i);
    }
    Ok((0..eval_pairs.len())
        .into_par_iter()
        .map(|q| {
            let uq = u.row(q);
            let truth = linalg::dot(uq, v.row(q));
            let dups = by_text.get(targets[q]).map(Vec::as_slice).unwrap_or(&[]);
            let ahead = (0..w.rows())
                .filter(|&j| {
                    let s = linalg::dot(uq, w.row(j));
                    !dups.contains(&j) && (s >= truth || s.is_nan() || truth.is_nan())
                })
                .count();
            ahead + 1
        })
        .collect())
}

pub fn precision_at_n<S: AsRef<str> + Sync>(
    model: &DualEncoder<f32>,
    eval_pairs: &[SentencePair],
    pool: &[S],
    ns: &BTreeSet<usize>,
) -> Result<EvalResult> {
    let ranks = true_target_ranks(model, eval_pairs, pool)?;
    Ok(precision_from_ranks(&ranks, ns))
}

pub fn doc_match_accuracy(
    predicted: &BTreeMap<String, String>,
    gold: &BTreeMap<String, String>,
) -> Result<f64> {
    if !predicted.keys().eq(gold.keys()) {
        return Err(Error::KeyMismatch);
    }
    if gold.is_empty() {
        return Err(Error::EmptyInput);
    }
    let correct = gold.iter().filter(|(k, v)| predicted.get(*k) == Some(v)).count();
    Ok(correct as f64 / gold.len() as f64)
}

pub fn pearson_r(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::DegenerateVariance);
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::DegenerateVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Accuracy of predicting `positive` exactly when `confidence >= threshold`.
pub fn extreme_agreement(confidences: &[f64], positive: &[bool], threshold: f64) -> Result<f64> {
    if confidences.len() != positive.len() {
        return Err(Error::LengthMismatch {
            left: confidences.len(),
            right: positive.len(),
        });
    }
    if confidences.is_empty() {
        return Err(Error::EmptyInput);
    }
    let agree = confidences
        .iter()
        .zip(positive)
        .filter(|(c, p)| (**c >= threshold) == **p)
        .count();
    Ok(agree as f64 / confidences.len() as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn roc_auc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank-sum with average ranks over ties
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        pos_rank_sum += avg * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}
