//! Inter-view object affinity: sigmoid of scaled embedding dot products,
//! the class-balanced squared-error score used to verify it, and the
//! thresholding that decides which cross-view pairs may be matched.

use crate::geometry::Embedding;

pub const DEFAULT_AFFINITY_SCALE: f64 = 5.0;
pub const DEFAULT_AFFINITY_THRESHOLD: f64 = 0.5;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum AffinityError {
    #[error("embedding {view}[{index}] is not unit norm (norm {norm})")]
    NonUnitEmbedding { view: usize, index: usize, norm: f64 },
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("affinity has {len} values, expected {n}×{m}")]
    ShapeMismatch { len: usize, n: usize, m: usize },
    #[error("affinity value {value} at ({i}, {j}) outside [0, 1]")]
    OutOfRange { i: usize, j: usize, value: f64 },
    #[error("pair ({i}, {j}) outside a {n}×{m} matrix")]
    PairOutOfBounds { i: usize, j: usize, n: usize, m: usize },
    #[error("threshold must lie in (0, 1)")]
    InvalidThreshold,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-major `n × m` matrix of affinities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl AffinityMatrix {
    pub fn from_row_major(n: usize, m: usize, values: Vec<f64>) -> Result<Self, AffinityError> {
        if values.len() != n * m {
            return Err(AffinityError::ShapeMismatch { len: values.len(), n, m });
        }
        for (k, v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(AffinityError::OutOfRange {
                    i: k / m.max(1),
                    j: k % m.max(1),
                    value: *v,
                });
            }
        }
        Ok(Self { n, m, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.m + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.m {
            for i in 0..self.n {
                values.push(self.get(i, j));
            }
        }
        Self {
            n: self.m,
            m: self.n,
            values,
        }
    }
}

/// `A_ij = σ(k ⟨e1_i, e2_j⟩)`.
pub fn build_affinity(e1: &[Embedding], e2: &[Embedding], k: f64) -> Result<AffinityMatrix, AffinityError> {
    for (view, list) in [(0usize, e1), (1, e2)] {
        for (index, e) in list.iter().enumerate() {
            let norm = e.dot(e).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(AffinityError::NonUnitEmbedding { view, index, norm });
            }
        }
    }
    if let Some(a) = e1.first().or(e2.first()) {
        if let Some(bad) = e1.iter().chain(e2).find(|e| e.dim() != a.dim()) {
            return Err(AffinityError::DimensionMismatch(a.dim(), bad.dim()));
        }
    }
    let mut values = Vec::with_capacity(e1.len() * e2.len());
    for a in e1 {
        for b in e2 {
            values.push(sigmoid(k * a.dot(b)));
        }
    }
    Ok(AffinityMatrix {
        n: e1.len(),
        m: e2.len(),
        values,
    })
}

/// Partition of all `n × m` pairs into positives and negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityLabels {
    n: usize,
    m: usize,
    positive: Vec<bool>,
}

impl AffinityLabels {
    /// Positives are `pairs`, every other cell is negative.
    pub fn from_positives(n: usize, m: usize, pairs: &[(usize, usize)]) -> Result<Self, AffinityError> {
        let mut positive = vec![false; n * m];
        for &(i, j) in pairs {
            if i >= n || j >= m {
                return Err(AffinityError::PairOutOfBounds { i, j, n, m });
            }
            positive[i * m + j] = true;
        }
        Ok(Self { n, m, positive })
    }

    pub fn is_positive(&self, i: usize, j: usize) -> bool {
        self.positive[i * self.m + j]
    }

    pub fn positives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.m;
        self.positive.iter().enumerate().filter(|(_, p)| **p).map(move |(k, _)| (k / m, k % m))
    }

    pub fn negatives(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let m = self.m;
        self.positive.iter().enumerate().filter(|(_, p)| !**p).map(move |(k, _)| (k / m, k % m))
    }
}

/// Mean squared error over positives (target 1) plus mean squared error over
/// negatives (target 0). An empty class contributes 0.
pub fn balanced_affinity_loss(a: &AffinityMatrix, labels: &AffinityLabels) -> Result<f64, AffinityError> {
    if (a.n, a.m) != (labels.n, labels.m) {
        return Err(AffinityError::ShapeMismatch {
            len: labels.n * labels.m,
            n: a.n,
            m: a.m,
        });
    }
    let mut pos = (0.0, 0usize);
    let mut neg = (0.0, 0usize);
    for (&v, &is_pos) in a.values.iter().zip(&labels.positive) {
        if is_pos {
            pos.0 += (v - 1.0) * (v - 1.0);
            pos.1 += 1;
        } else {
            neg.0 += v * v;
            neg.1 += 1;
        }
    }
    let term = |(s, c): (f64, usize)| if c == 0 { 0.0 } else { s / c as f64 };
    Ok(term(pos) + term(neg))
}

/// Pairs with affinity strictly above `threshold`, row-major order.
pub fn feasible_pairs(a: &AffinityMatrix, threshold: f64) -> Result<Vec<(usize, usize)>, AffinityError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AffinityError::InvalidThreshold);
    }
    let mut out = Vec::new();
    for i in 0..a.n {
        for j in 0..a.m {
            if a.get(i, j) > threshold {
                out.push((i, j));
            }
        }
    }
    Ok(out)
}
