//! Sentence-pair mining, document matching and within-document alignment.
//!
//! Retrieval ranks targets by raw dot product; the calibrated confidence is
//! attached afterwards from the source embedding and the score alone.
//!
//! A candidate target document `D` for source document `X` scores
//!
//! ```text
//! Σ over retrieval events (x ∈ X, y ∈ D)  −r(x,y) + w1·f1(x,y) + w2·|pos(x) − pos(y)|
//! ```
//!
//! with `r` the 0-based retrieval rank, `f1` the calibrated confidence and
//! `pos` the 0-based sentence index in its document. Every event counts,
//! including several sources retrieving the same target.

use std::collections::{BTreeMap, HashMap};

use crate::annindex::{ExactIndex, VectorIndex};
use crate::encoder::{self, SentenceEmbedding};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::model::{DualEncoder, Side};
use crate::textpipe::{self, FeaturizerConfig};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalEntry {
    pub source_id: usize,
    pub target_id: usize,
    /// 0 is the best match.
    pub rank: usize,
    pub dot_score: f32,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinedPair {
    pub source_id: usize,
    pub target_id: usize,
    pub confidence: f64,
    pub dot_score: f32,
}

/// Retrieves the top `n` targets for already-encoded sources.
pub fn retrieve_encoded(
    model: &DualEncoder<f32>,
    source_embeddings: &Matrix<f32>,
    source_ids: &[usize],
    index: &dyn VectorIndex,
    n: usize,
) -> Result<Vec<Vec<RetrievalEntry>>> {
    if source_embeddings.rows() != source_ids.len() {
        return Err(Error::LengthMismatch {
            left: source_embeddings.rows(),
            right: source_ids.len(),
        });
    }
    if source_ids.is_empty() {
        return Ok(Vec::new());
    }
    let hits = index.search_batch(source_embeddings, n)?;
    hits.into_iter()
        .enumerate()
        .map(|(q, hits)| {
            let u = SentenceEmbedding(source_embeddings.row(q).to_vec());
            hits.into_iter()
                .enumerate()
                .map(|(rank, h)| {
                    Ok(RetrievalEntry {
                        source_id: source_ids[q],
                        target_id: h.id,
                        rank,
                        dot_score: h.score,
                        confidence: model.confidence(&u, f64::from(h.score))?,
                    })
                })
                .collect()
        })
        .collect()
}

/// Encodes `sources` and retrieves their top `n` targets from `index`.
pub fn retrieve<S: AsRef<str> + Sync>(
    model: &DualEncoder<f32>,
    sources: &[S],
    source_ids: &[usize],
    index: &dyn VectorIndex,
    n: usize,
) -> Result<Vec<Vec<RetrievalEntry>>> {
    if sources.is_empty() {
        return Ok(Vec::new());
    }
    let emb = encoder::encode_corpus(sources, Side::Source, model)?;
    retrieve_encoded(model, &emb, source_ids, index, n)
}

/// Keeps each source's best match when its confidence reaches `threshold`
/// and the two sides differ after normalization. Ids index `source_texts`
/// and `target_texts`. Output is sorted by descending confidence.
pub fn mine_sentence_pairs(
    retrievals: &[Vec<RetrievalEntry>],
    source_texts: &[String],
    target_texts: &[String],
    featurizer: &FeaturizerConfig,
    threshold: f64,
) -> Vec<MinedPair> {
    let mut pairs: Vec<MinedPair> = retrievals
        .iter()
        .filter_map(|entries| entries.iter().find(|e| e.rank == 0))
        .filter(|e| e.confidence >= threshold)
        .filter(|e| {
            textpipe::normalize(&source_texts[e.source_id], featurizer)
                != textpipe::normalize(&target_texts[e.target_id], featurizer)
        })
        .map(|e| MinedPair {
            source_id: e.source_id,
            target_id: e.target_id,
            confidence: e.confidence,
            dot_score: e.dot_score,
        })
        .collect();
    pairs.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then(a.source_id.cmp(&b.source_id))
    });
    pairs
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub sentence_ids: Vec<usize>,
}

/// Documents over a shared sentence list; sentence ids index `sentences`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DocCorpus {
    pub documents: Vec<Document>,
    pub sentences: Vec<String>,
}

impl DocCorpus {
    pub fn sentence_docs(&self) -> HashMap<usize, (usize, usize)> {
        let mut map = HashMap::with_capacity(self.sentences.len());
        for (d, doc) in self.documents.iter().enumerate() {
            for (pos, &id) in doc.sentence_ids.iter().enumerate() {
                map.insert(id, (d, pos));
            }
        }
        map
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DocMatchConfig {
    pub retrieval_depth: usize,
    pub w1: f64,
    pub w2: f64,
    /// Compare positions as fractions of document length instead of raw
    /// indices.
    pub normalized_positions: bool,
}

impl Default for DocMatchConfig {
    fn default() -> Self {
        Self {
            retrieval_depth: 10,
            w1: 5.0,
            w2: -2.0,
            normalized_positions: false,
        }
    }
}

impl DocMatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.retrieval_depth == 0 {
            return Err(Error::ConfigInvalid("retrieval_depth must be >= 1".into()));
        }
        Ok(())
    }
}

fn position(pos: usize, len: usize, normalized: bool) -> f64 {
    if normalized {
        pos as f64 / len as f64
    } else {
        pos as f64
    }
}

/// Scores `candidate` for `source_doc`. `retrievals[k]` are the entries of
/// the `k`-th sentence of `source_doc`.
pub fn doc_score(
    source_doc: &Document,
    candidate: &Document,
    retrievals: &[Vec<RetrievalEntry>],
    cfg: &DocMatchConfig,
) -> Result<f64> {
    if candidate.sentence_ids.is_empty() {
        return Err(Error::UnknownDocument(candidate.doc_id.clone()));
    }
    if retrievals.len() != source_doc.sentence_ids.len() {
        return Err(Error::LengthMismatch {
            left: source_doc.sentence_ids.len(),
            right: retrievals.len(),
        });
    }
    let positions: HashMap<usize, usize> = candidate
        .sentence_ids
        .iter()
        .enumerate()
        .map(|(p, &id)| (id, p))
        .collect();
    let src_len = source_doc.sentence_ids.len();
    let cand_len = candidate.sentence_ids.len();
    let mut score = 0.0;
    for (x_pos, entries) in retrievals.iter().enumerate() {
        for e in entries {
            if let Some(&y_pos) = positions.get(&e.target_id) {
                let offset = (position(x_pos, src_len, cfg.normalized_positions)
                    - position(y_pos, cand_len, cfg.normalized_positions))
                .abs();
                score += -(e.rank as f64) + cfg.w1 * e.confidence + cfg.w2 * offset;
            }
        }
    }
    Ok(score)
}

#[derive(Debug)]
pub struct DocMatchResult<S> {
    pub source_doc: String,
    /// Best target document and its score, or why there is none.
    pub outcome: Result<(String, S)>,
}

/// Picks the best-scoring target document for each source document from
/// precomputed retrievals keyed by source sentence id.
pub fn match_with_retrievals(
    source_docs: &[Document],
    target_docs: &[Document],
    retrievals: &HashMap<usize, Vec<RetrievalEntry>>,
    cfg: &DocMatchConfig,
) -> Result<Vec<DocMatchResult<f64>>> {
    cfg.validate()?;
    let mut owner = HashMap::new();
    for (d, doc) in target_docs.iter().enumerate() {
        for &id in &doc.sentence_ids {
            owner.insert(id, d);
        }
    }
    let mut results = Vec::with_capacity(source_docs.len());
    for src in source_docs {
        let per_sentence: Vec<Vec<RetrievalEntry>> = src
            .sentence_ids
            .iter()
            .map(|id| {
                retrievals
                    .get(id)
                    .map(|v| v.iter().filter(|e| e.rank < cfg.retrieval_depth).cloned().collect())
                    .unwrap_or_default()
            })
            .collect();
        let mut candidates: Vec<usize> = per_sentence
            .iter()
            .flatten()
            .filter_map(|e| owner.get(&e.target_id).copied())
            .collect();
        candidates.sort_unstable();
        candidates.dedup();

        let mut best: Option<(&str, f64)> = None;
        for d in candidates {
            let doc = &target_docs[d];
            let s = doc_score(src, doc, &per_sentence, cfg)?;
            let better = match best {
                None => true,
                Some((id, b)) => s > b || (s == b && doc.doc_id.as_str() < id),
            };
            if better {
                best = Some((&doc.doc_id, s));
            }
        }
        results.push(DocMatchResult {
            source_doc: src.doc_id.clone(),
            outcome: best
                .map(|(id, s)| (id.to_string(), s))
                .ok_or_else(|| Error::NoCandidates(src.doc_id.clone())),
        });
    }
    Ok(results)
}

/// Retrieves every source sentence against `target_index` (whose ids are
/// target sentence ids) and matches documents.
pub fn match_documents(
    model: &DualEncoder<f32>,
    source: &DocCorpus,
    target: &DocCorpus,
    target_index: &dyn VectorIndex,
    cfg: &DocMatchConfig,
) -> Result<Vec<DocMatchResult<f64>>> {
    cfg.validate()?;
    let ids: Vec<usize> = (0..source.sentences.len()).collect();
    let retrievals = retrieve(model, &source.sentences, &ids, target_index, cfg.retrieval_depth)?;
    let by_id: HashMap<usize, Vec<RetrievalEntry>> = ids.into_iter().zip(retrievals).collect();
    match_with_retrievals(&source.documents, &target.documents, &by_id, cfg)
}

/// Counts mutual best-match sentence links into each candidate document.
/// `forward` maps a source sentence to its best target, `backward` a target
/// sentence to its best source.
pub fn alignment_count_baseline(
    source_docs: &[Document],
    target_docs: &[Document],
    forward: &HashMap<usize, usize>,
    backward: &HashMap<usize, usize>,
) -> Vec<DocMatchResult<usize>> {
    let mut owner = HashMap::new();
    for (d, doc) in target_docs.iter().enumerate() {
        for &id in &doc.sentence_ids {
            owner.insert(id, d);
        }
    }
    source_docs
        .iter()
        .map(|src| {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for x in &src.sentence_ids {
                let Some(&y) = forward.get(x) else { continue };
                if backward.get(&y) != Some(x) {
                    continue;
                }
                if let Some(&d) = owner.get(&y) {
                    *counts.entry(d).or_default() += 1;
                }
            }
            let best = counts
                .into_iter()
                .map(|(d, c)| (&target_docs[d].doc_id, c))
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)));
            DocMatchResult {
                source_doc: src.doc_id.clone(),
                outcome: best
                    .map(|(id, c)| (id.clone(), c))
                    .ok_or_else(|| Error::NoCandidates(src.doc_id.clone())),
            }
        })
        .collect()
}

/// Best match of each query row among `index`, keyed by `query_ids`.
pub fn best_matches(
    queries: &Matrix<f32>,
    query_ids: &[usize],
    index: &dyn VectorIndex,
) -> Result<HashMap<usize, usize>> {
    if queries.rows() == 0 {
        return Ok(HashMap::new());
    }
    let hits = index.search_batch(queries, 1)?;
    Ok(query_ids
        .iter()
        .zip(hits)
        .filter_map(|(&q, h)| h.first().map(|h| (q, h.id)))
        .collect())
}

/// Runs the mutual-best-match baseline end to end with exact search in both
/// directions.
pub fn match_documents_baseline(
    model: &DualEncoder<f32>,
    source: &DocCorpus,
    target: &DocCorpus,
) -> Result<Vec<DocMatchResult<usize>>> {
    let u = encoder::encode_corpus(&source.sentences, Side::Source, model)?;
    let v = encoder::encode_corpus(&target.sentences, Side::Target, model)?;
    let src_ids: Vec<usize> = (0..u.rows()).collect();
    let tgt_ids: Vec<usize> = (0..v.rows()).collect();
    let forward = best_matches(&u, &src_ids, &ExactIndex::with_row_ids(v.clone())?)?;
    let backward = best_matches(&v, &tgt_ids, &ExactIndex::with_row_ids(u)?)?;
    Ok(alignment_count_baseline(
        &source.documents,
        &target.documents,
        &forward,
        &backward,
    ))
}

/// Monotone one-to-one alignment maximizing the summed confidence of the
/// chosen pairs. Only pairs with confidence `>= threshold` may be chosen;
/// skipping a sentence on either side costs nothing.
pub fn dp_align(confidence: &Matrix<f64>, threshold: f64) -> Vec<(usize, usize)> {
    let (m, n) = (confidence.rows(), confidence.cols());
    let eligible = |i: usize, j: usize| confidence[(i, j)] >= threshold;
    let mut best = Matrix::<f64>::zeros(m + 1, n + 1);
    for i in 1..=m {
        for j in 1..=n {
            let mut v = best[(i - 1, j)].max(best[(i, j - 1)]);
            if eligible(i - 1, j - 1) {
                v = v.max(best[(i - 1, j - 1)] + confidence[(i - 1, j - 1)]);
            }
            best[(i, j)] = v;
        }
    }
    let mut pairs = Vec::new();
    let (mut i, mut j) = (m, n);
    while i > 0 && j > 0 {
        let here = best[(i, j)];
        if eligible(i - 1, j - 1) && here == best[(i - 1, j - 1)] + confidence[(i - 1, j - 1)] {
            pairs.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if here == best[(i - 1, j)] {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    pairs.reverse();
    pairs
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair {
    pub source_pos: usize,
    pub target_pos: usize,
    pub confidence: f64,
}

/// Calibrated confidence of every (source sentence, target sentence) pair.
pub fn confidence_matrix<S: AsRef<str> + Sync>(
    model: &DualEncoder<f32>,
    source: &[S],
    target: &[S],
) -> Result<Matrix<f64>> {
    let u = encoder::encode_corpus(source, Side::Source, model)?;
    let v = encoder::encode_corpus(target, Side::Target, model)?;
    let mut conf = Matrix::zeros(u.rows(), v.rows());
    for i in 0..u.rows() {
        let ui = SentenceEmbedding(u.row(i).to_vec());
        for j in 0..v.rows() {
            let s = linalg::dot(u.row(i), v.row(j));
            conf[(i, j)] = model.confidence(&ui, f64::from(s))?;
        }
    }
    Ok(conf)
}

/// Aligns the sentences of two documents with [`dp_align`].
pub fn align_documents<S: AsRef<str> + Sync>(
    model: &DualEncoder<f32>,
    source: &[S],
    target: &[S],
    threshold: f64,
) -> Result<Vec<AlignedPair>> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let conf = confidence_matrix(model, source, target)?;
    Ok(dp_align(&conf, threshold)
        .into_iter()
        .map(|(i, j)| AlignedPair {
            source_pos: i,
            target_pos: j,
            confidence: conf[(i, j)],
        })
        .collect())
}
