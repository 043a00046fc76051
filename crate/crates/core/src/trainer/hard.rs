//! Hard-negative mining with a baseline model.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::annindex::{ExactIndex, VectorIndex};
use crate::encoder;
use crate::error::{Error, Result};
use crate::linalg::Real;
use crate::model::{DualEncoder, Side};

use super::SentencePair;

/// Source pair index → indices of `M` non-translation targets.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HardNegativeTable {
    entries: BTreeMap<usize, Vec<usize>>,
}

impl HardNegativeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, source: usize, negatives: Vec<usize>) {
        self.entries.insert(source, negatives);
    }

    pub fn get(&self, source: usize) -> Option<&[usize]> {
        self.entries.get(&source).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[usize])> {
        self.entries.iter().map(|(&k, v)| (k, v.as_slice()))
    }
}

/// Picks `⌈fraction · n⌉` sources with a seeded shuffle and stores, for each,
/// the `m` highest-scoring targets that are not its translation (neither the
/// paired target nor any target with identical text).
///
/// `index` must hold the target embeddings of `corpus` with pair indices as
/// ids; when `None`, an exact index is built from `model`.
pub fn mine_hard_negatives<T: Real>(
    model: &DualEncoder<T>,
    corpus: &[SentencePair],
    m: usize,
    fraction: f64,
    seed: u64,
    index: Option<&dyn VectorIndex>,
) -> Result<HardNegativeTable> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::ConfigInvalid(format!("hard fraction {fraction} outside [0, 1]")));
    }
    if corpus.len() < m + 1 {
        return Err(Error::InsufficientTargets {
            needed: m + 1,
            available: corpus.len(),
        });
    }
    let count = (fraction * corpus.len() as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = order[..count.min(corpus.len())].to_vec();
    chosen.sort_unstable();

    let mut table = HardNegativeTable::new();
    if m == 0 {
        for s in chosen {
            table.insert(s, Vec::new());
        }
        return Ok(table);
    }

    let built;
    let index: &dyn VectorIndex = match index {
        Some(i) => i,
        None => {
            let targets: Vec<&str> = corpus.iter().map(|p| p.target.as_str()).collect();
            let emb = encoder::encode_corpus(&targets, Side::Target, model)?.map(|v| v.as_f32());
            built = ExactIndex::with_row_ids(emb)?;
            &built
        }
    };
    let sources: Vec<&str> = chosen.iter().map(|&i| corpus[i].source.as_str()).collect();
    let queries = encoder::encode_corpus(&sources, Side::Source, model)?.map(|v| v.as_f32());

    let mut depth = (m + 1).min(index.len());
    let mut pending: Vec<usize> = (0..chosen.len()).collect();
    let mut found: Vec<Vec<usize>> = vec![Vec::new(); chosen.len()];
    // Deepen only for the sources whose top hits were mostly excluded.
    loop {
        let mut retry = Vec::new();
        for &q in &pending {
            let src = chosen[q];
            let own = corpus[src].target.as_str();
            let hits = index.search(queries.row(q), depth)?;
            let picked: Vec<usize> = hits
                .iter()
                .map(|h| h.id)
                .filter(|&id| id != src && corpus[id].target != own)
                .take(m)
                .collect();
            if picked.len() < m && depth < index.len() {
                retry.push(q);
            } else {
                found[q] = picked;
            }
        }
        if retry.is_empty() {
            break;
        }
        pending = retry;
        depth = (depth * 2).min(index.len());
    }
    for (q, negs) in found.into_iter().enumerate() {
        table.insert(chosen[q], negs);
    }
    Ok(table)
}
