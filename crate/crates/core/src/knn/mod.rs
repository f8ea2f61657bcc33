//! Exact k-nearest-neighbor search and KNN regression.
//!
//! Two search structures share one contract: results are the `min(k, n)`
//! nearest stored points ordered by `(distance, row_id)`. The k-d tree only
//! prunes subtrees whose lower bound is strictly greater than the current
//! k-th candidate, so equal-distance ties resolve exactly as in the brute
//! force scan and both structures return identical lists.

mod kdtree;
mod tune;

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use kdtree::KdTree;
pub use tune::{kfold_assignments, tune_k, TuneResult};

/// Bucket size of k-d tree leaves.
pub const LEAF_SIZE: usize = 16;

/// Above this dimension [`IndexKind::Auto`] falls back to brute force; the
/// tree cannot prune much there.
pub const AUTO_KDTREE_MAX_DIM: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum KnnError {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("index needs at least one point")]
    EmptyIndex,
    #[error("point buffer of length {len} is not a multiple of dimension {dim}")]
    Ragged { len: usize, dim: usize },
    #[error("expected {expected} row ids, got {found}")]
    RowIdCount { expected: usize, found: usize },
    #[error("duplicate row id {0}")]
    DuplicateRowId(usize),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("expected {expected} targets, got {found}")]
    TargetCount { expected: usize, found: usize },
    #[error("no candidate k values")]
    NoCandidates,
    #[error("need at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("{rows} training rows cannot be split into {folds} folds")]
    NotEnoughRows { rows: usize, folds: usize },
    #[error("non-finite coordinate")]
    NonFinite,
}

pub type Result<T, E = KnnError> = std::result::Result<T, E>;

/// Euclidean distance between equal-length vectors.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(KnnError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(distance(a, b))
}

/// Summation runs in index order; the k-d tree pruning bound relies on it.
#[inline]
pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        sum += d * d;
    }
    sum.sqrt()
}

/// Which search structure backs a [`NeighborIndex`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IndexKind {
    Brute,
    KdTree,
    /// k-d tree for low dimensions, brute force otherwise.
    #[default]
    Auto,
}

/// One search result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row_id: usize,
    pub distance: f64,
}

/// Heap entry ordered by `(distance, row_id)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Candidate {
    pub distance: f64,
    pub row_id: usize,
    pub pos: usize,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.row_id.cmp(&other.row_id))
    }
}

/// Bounded max-heap holding the best `k` candidates seen so far.
pub(crate) struct Candidates {
    heap: BinaryHeap<Candidate>,
    k: usize,
}

impl Candidates {
    pub fn new(k: usize) -> Self {
        Self {
            heap: BinaryHeap::with_capacity(k + 1),
            k,
        }
    }

    #[inline]
    pub fn offer(&mut self, c: Candidate) {
        if self.heap.len() < self.k {
            self.heap.push(c);
        } else if let Some(top) = self.heap.peek() {
            if c < *top {
                self.heap.pop();
                self.heap.push(c);
            }
        }
    }

    /// Whether a subtree whose points are all at least `bound` away could
    /// still contribute. Equality must be visited: a tie may carry a smaller
    /// row id.
    #[inline]
    pub fn admits(&self, bound: f64) -> bool {
        match self.heap.peek() {
            Some(top) if self.heap.len() == self.k => bound <= top.distance,
            _ => true,
        }
    }

    pub fn into_sorted(self) -> Vec<Candidate> {
        self.heap.into_sorted_vec()
    }
}

/// Exact nearest-neighbor index over a fixed point set.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Vec<f64>,
    dim: usize,
    row_ids: Vec<usize>,
    tree: Option<KdTree>,
}

impl NeighborIndex {
    /// Builds an index over row-major `points` of dimension `dim`.
    ///
    /// `row_ids` label the points (they must be distinct) and define the
    /// tie-break order.
    pub fn build(points: Vec<f64>, dim: usize, row_ids: Vec<usize>, kind: IndexKind) -> Result<Self> {
        if points.is_empty() {
            return Err(KnnError::EmptyIndex);
        }
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(KnnError::Ragged {
                len: points.len(),
                dim,
            });
        }
        let n = points.len() / dim;
        if row_ids.len() != n {
            return Err(KnnError::RowIdCount {
                expected: n,
                found: row_ids.len(),
            });
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(KnnError::NonFinite);
        }
        let mut sorted = row_ids.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(KnnError::DuplicateRowId(w[0]));
        }
        let use_tree = match kind {
            IndexKind::Brute => false,
            IndexKind::KdTree => true,
            IndexKind::Auto => dim <= AUTO_KDTREE_MAX_DIM && n > LEAF_SIZE,
        };
        let tree = use_tree.then(|| KdTree::build(&points, dim, &row_ids, LEAF_SIZE));
        Ok(Self {
            points,
            dim,
            row_ids,
            tree,
        })
    }

    /// Builds from a list of rows, labelling them `0..n`.
    pub fn from_rows(rows: &[Vec<f64>], kind: IndexKind) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(KnnError::DimensionMismatch {
                    expected: dim,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Self::build(flat, dim, (0..rows.len()).collect(), kind)
    }

    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn point(&self, pos: usize) -> &[f64] {
        &self.points[pos * self.dim..(pos + 1) * self.dim]
    }

    /// The structure actually in use (never `Auto`).
    pub fn kind(&self) -> IndexKind {
        if self.tree.is_some() {
            IndexKind::KdTree
        } else {
            IndexKind::Brute
        }
    }

    /// The `min(k, n)` nearest points to `q`, ordered by distance then row id.
    pub fn query(&self, q: &[f64], k: usize) -> Result<Vec<Neighbor>> {
        Ok(self
            .query_candidates(q, k)?
            .into_iter()
            .map(|c| Neighbor {
                row_id: c.row_id,
                distance: c.distance,
            })
            .collect())
    }

    pub(crate) fn query_candidates(&self, q: &[f64], k: usize) -> Result<Vec<Candidate>> {
        if q.len() != self.dim {
            return Err(KnnError::DimensionMismatch {
                expected: self.dim,
                found: q.len(),
            });
        }
        if k == 0 {
            return Err(KnnError::ZeroK);
        }
        let mut best = Candidates::new(k.min(self.len()));
        match &self.tree {
            Some(tree) => tree.search(self, q, &mut best),
            None => {
                for pos in 0..self.len() {
                    best.offer(Candidate {
                        distance: distance(q, self.point(pos)),
                        row_id: self.row_ids[pos],
                        pos,
                    });
                }
            }
        }
        Ok(best.into_sorted())
    }
}

/// Unweighted KNN regression over a [`NeighborIndex`].
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    index: NeighborIndex,
    /// Aligned with the index's internal point order.
    targets: Vec<f64>,
    k: usize,
}

impl KnnRegressor {
    pub fn new(index: NeighborIndex, targets: Vec<f64>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(KnnError::ZeroK);
        }
        if targets.len() != index.len() {
            return Err(KnnError::TargetCount {
                expected: index.len(),
                found: targets.len(),
            });
        }
        Ok(Self { index, targets, k })
    }

    pub fn index(&self) -> &NeighborIndex {
        &self.index
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// The requested neighbor count.
    pub fn k(&self) -> usize {
        self.k
    }

    /// The neighbor count used at prediction time, `min(k, n_points)`.
    pub fn effective_k(&self) -> usize {
        self.k.min(self.index.len())
    }

    /// Whether `k` had to be clamped to the number of stored points.
    pub fn k_clamped(&self) -> bool {
        self.k > self.index.len()
    }

    /// Mean target of the `effective_k` nearest neighbors of `q`.
    pub fn predict(&self, q: &[f64]) -> Result<f64> {
        let neighbors = self.index.query_candidates(q, self.k)?;
        Ok(running_mean(neighbors.iter().map(|c| self.targets[c.pos])))
    }
}

/// Incremental mean. A sequence of equal values yields that value exactly.
pub(crate) fn running_mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut mean = 0.0;
    for (i, v) in values.enumerate() {
        mean += (v - mean) / (i + 1) as f64;
    }
    mean
}
