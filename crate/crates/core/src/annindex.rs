//! Maximum dot-product search over embedding matrices.
//!
//! [`ExactIndex`] scans every row and serves as ground truth.
//! [`PartitionedIndex`] is an inverted file: a seeded k-means coarse
//! quantizer splits the collection into `c` lists and a query scans only the
//! `n_probe` lists whose centroids are nearest in Euclidean distance.
//!
//! Results are ordered by descending score, ties by ascending id.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

pub const KMEANS_MAX_ITERATIONS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub id: usize,
    pub score: f32,
}

/// Orders hits so that the *worst* hit is the heap maximum.
#[derive(PartialEq)]
struct Worst(Hit);

impl Eq for Worst {}

impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

/// `Less` when `a` ranks before `b`.
fn rank_order(a: &Hit, b: &Hit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Bounded top-N collector.
pub struct TopN {
    n: usize,
    heap: BinaryHeap<Worst>,
}

impl TopN {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            heap: BinaryHeap::with_capacity(n + 1),
        }
    }

    pub fn push(&mut self, hit: Hit) {
        if self.heap.len() < self.n {
            self.heap.push(Worst(hit));
        } else if let Some(worst) = self.heap.peek() {
            if rank_order(&hit, &worst.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Worst(hit));
            }
        }
    }

    pub fn into_sorted(self) -> Vec<Hit> {
        let mut hits: Vec<Hit> = self.heap.into_iter().map(|w| w.0).collect();
        hits.sort_by(rank_order);
        hits
    }
}

pub trait VectorIndex: Sync {
    fn dim(&self) -> usize;

    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top `n` stored vectors by dot product with `query`.
    fn search(&self, query: &[f32], n: usize) -> Result<Vec<Hit>>;

    fn search_batch(&self, queries: &Matrix<f32>, n: usize) -> Result<Vec<Vec<Hit>>> {
        (0..queries.rows())
            .into_par_iter()
            .map(|i| self.search(queries.row(i), n))
            .collect()
    }
}

fn check_query(dim: usize, query: &[f32], n: usize) -> Result<()> {
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: query.len(),
        });
    }
    if n == 0 {
        return Err(Error::ConfigInvalid("search depth must be at least 1".into()));
    }
    Ok(())
}

fn check_ids(rows: usize, ids: &[usize]) -> Result<()> {
    if rows == 0 {
        return Err(Error::EmptyInput);
    }
    if rows != ids.len() {
        return Err(Error::LengthMismatch {
            left: rows,
            right: ids.len(),
        });
    }
    let mut seen = HashSet::with_capacity(ids.len());
    for &id in ids {
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactIndex {
    vectors: Matrix<f32>,
    ids: Vec<usize>,
}

impl ExactIndex {
    pub fn build(embeddings: Matrix<f32>, ids: Vec<usize>) -> Result<Self> {
        check_ids(embeddings.rows(), &ids)?;
        Ok(Self {
            vectors: embeddings,
            ids,
        })
    }

    /// Index whose ids are the row numbers.
    pub fn with_row_ids(embeddings: Matrix<f32>) -> Result<Self> {
        let ids = (0..embeddings.rows()).collect();
        Self::build(embeddings, ids)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn vectors(&self) -> &Matrix<f32> {
        &self.vectors
    }
}

impl VectorIndex for ExactIndex {
    fn dim(&self) -> usize {
        self.vectors.cols()
    }

    fn len(&self) -> usize {
        self.ids.len()
    }

    fn search(&self, query: &[f32], n: usize) -> Result<Vec<Hit>> {
        check_query(self.dim(), query, n)?;
        let mut top = TopN::new(n);
        for (row, &id) in self.vectors.iter_rows().zip(&self.ids) {
            top.push(Hit {
                id,
                score: linalg::dot(row, query),
            });
        }
        Ok(top.into_sorted())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvertedList {
    pub ids: Vec<usize>,
    /// Row-major `[ids.len() × dim]`.
    pub vectors: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PartitionedIndex {
    dim: usize,
    centroids: Matrix<f32>,
    lists: Vec<InvertedList>,
    n_probe: usize,
}

fn squared_norm(v: &[f32]) -> f32 {
    linalg::dot(v, v)
}

/// Index of the nearest centroid (lowest index on ties), using
/// `‖c‖² - 2 x·c`, which orders centroids like `‖x - c‖²`.
fn nearest_centroid(x: &[f32], centroids: &Matrix<f32>, norms: &[f32]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = norms[j] - 2.0 * linalg::dot(x, c);
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

/// Seeded Lloyd iterations. Initial centroids are `c` distinct rows drawn
/// uniformly; a cluster that empties keeps its previous centroid.
pub fn kmeans(data: &Matrix<f32>, c: usize, max_iterations: usize, seed: u64) -> Matrix<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = data.cols();
    let mut picks: Vec<usize> = sample(&mut rng, data.rows(), c).into_vec();
    picks.sort_unstable();
    let mut centroids = Matrix::zeros(c, dim);
    for (j, &p) in picks.iter().enumerate() {
        centroids.row_mut(j).copy_from_slice(data.row(p));
    }
    let mut assignment = vec![usize::MAX; data.rows()];
    for _ in 0..max_iterations {
        let norms: Vec<f32> = centroids.iter_rows().map(squared_norm).collect();
        let next: Vec<usize> = (0..data.rows())
            .into_par_iter()
            .map(|i| nearest_centroid(data.row(i), &centroids, &norms))
            .collect();
        if next == assignment {
            break;
        }
        assignment = next;
        let mut sums = vec![0.0f64; c * dim];
        let mut counts = vec![0usize; c];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for (s, &x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(data.row(i)) {
                *s += f64::from(x);
            }
        }
        for j in 0..c {
            if counts[j] == 0 {
                continue;
            }
            let inv = 1.0 / counts[j] as f64;
            for (dst, &s) in centroids.row_mut(j).iter_mut().zip(&sums[j * dim..(j + 1) * dim]) {
                *dst = (s * inv) as f32;
            }
        }
    }
    centroids
}

impl PartitionedIndex {
    pub fn build(
        embeddings: Matrix<f32>,
        ids: Vec<usize>,
        partitions: usize,
        n_probe: usize,
        seed: u64,
    ) -> Result<Self> {
        check_ids(embeddings.rows(), &ids)?;
        let n = embeddings.rows();
        if partitions == 0 || partitions > n || n_probe == 0 || n_probe > partitions {
            return Err(Error::InvalidPartitionCount {
                partitions,
                n_probe,
                vectors: n,
            });
        }
        let dim = embeddings.cols();
        let centroids = kmeans(&embeddings, partitions, KMEANS_MAX_ITERATIONS, seed);
        let norms: Vec<f32> = centroids.iter_rows().map(squared_norm).collect();
        let assignment: Vec<usize> = (0..n)
            .into_par_iter()
            .map(|i| nearest_centroid(embeddings.row(i), &centroids, &norms))
            .collect();
        let mut lists = vec![
            InvertedList {
                ids: Vec::new(),
                vectors: Vec::new(),
            };
            partitions
        ];
        for (i, &a) in assignment.iter().enumerate() {
            lists[a].ids.push(ids[i]);
            lists[a].vectors.extend_from_slice(embeddings.row(i));
        }
        Ok(Self {
            dim,
            centroids,
            lists,
            n_probe,
        })
    }

    pub fn from_parts(centroids: Matrix<f32>, lists: Vec<InvertedList>, n_probe: usize) -> Result<Self> {
        let dim = centroids.cols();
        let total: usize = lists.iter().map(|l| l.ids.len()).sum();
        if lists.len() != centroids.rows() || n_probe == 0 || n_probe > lists.len() {
            return Err(Error::InvalidPartitionCount {
                partitions: lists.len(),
                n_probe,
                vectors: total,
            });
        }
        for l in &lists {
            if l.vectors.len() != l.ids.len() * dim {
                return Err(Error::DimensionMismatch {
                    expected: l.ids.len() * dim,
                    actual: l.vectors.len(),
                });
            }
        }
        Ok(Self {
            dim,
            centroids,
            lists,
            n_probe,
        })
    }

    pub fn centroids(&self) -> &Matrix<f32> {
        &self.centroids
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    pub fn n_probe(&self) -> usize {
        self.n_probe
    }

    pub fn set_n_probe(&mut self, n_probe: usize) -> Result<()> {
        if n_probe == 0 || n_probe > self.lists.len() {
            return Err(Error::InvalidPartitionCount {
                partitions: self.lists.len(),
                n_probe,
                vectors: self.len(),
            });
        }
        self.n_probe = n_probe;
        Ok(())
    }

    fn probe_order(&self, query: &[f32]) -> Vec<usize> {
        let mut dists: Vec<(f32, usize)> = self
            .centroids
            .iter_rows()
            .enumerate()
            .map(|(j, c)| (squared_norm(c) - 2.0 * linalg::dot(query, c), j))
            .collect();
        let k = self.n_probe;
        if k < dists.len() {
            dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            dists.truncate(k);
        }
        dists.into_iter().map(|(_, j)| j).collect()
    }
}

impl VectorIndex for PartitionedIndex {
    fn dim(&self) -> usize {
        self.dim
    }

    fn len(&self) -> usize {
        self.lists.iter().map(|l| l.ids.len()).sum()
    }

    fn search(&self, query: &[f32], n: usize) -> Result<Vec<Hit>> {
        check_query(self.dim, query, n)?;
        let mut top = TopN::new(n);
        for j in self.probe_order(query) {
            let list = &self.lists[j];
            for (k, &id) in list.ids.iter().enumerate() {
                let v = &list.vectors[k * self.dim..(k + 1) * self.dim];
                top.push(Hit {
                    id,
                    score: linalg::dot(v, query),
                });
            }
        }
        Ok(top.into_sorted())
    }
}
