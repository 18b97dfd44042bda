//! Pairwise cost matrices over features and unmeasured variables.
//!
//! Annotation distances use cosine distance `1 - cos(u, v)` directly. It is
//! not a metric (no triangle inequality), but the dual estimator only needs
//! nonnegative pairwise costs.

use alloc::vec::Vec;

use rand::seq::{index, SliceRandom};

use crate::data::{Embeddings, UvOracle};
use crate::error::{Error, Result};
use crate::math;
use crate::matrix::Matrix;
use crate::rng;

/// Symmetric, nonnegative, zero-diagonal `n x n` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Matrix);

impl DistanceMatrix {
    pub fn zeros(n: usize) -> Self {
        DistanceMatrix(Matrix::zeros(n, n))
    }

    /// Validates a user-provided matrix.
    pub fn from_matrix(m: Matrix) -> Result<Self> {
        if m.rows() != m.cols() {
            return Err(Error::DimensionMismatch {
                what: "distance matrix columns",
                expected: m.rows(),
                actual: m.cols(),
            });
        }
        let d = DistanceMatrix(m);
        d.check()?;
        Ok(d)
    }

    /// Builds from a symmetric pair function evaluated on the upper triangle.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = math::hinge(f(i, j));
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        DistanceMatrix(m)
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Checks symmetry (to 1e-12), zero diagonal and nonnegativity.
    pub fn check(&self) -> Result<()> {
        let n = self.n();
        for i in 0..n {
            if self.get(i, i) != 0.0 {
                return Err(Error::invalid("distance matrix", "nonzero diagonal"));
            }
            for j in 0..n {
                let v = self.get(i, j);
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::invalid("distance matrix", "negative or non-finite entry"));
                }
                if math::abs(v - self.get(j, i)) > 1e-12 {
                    return Err(Error::invalid("distance matrix", "not symmetric"));
                }
            }
        }
        Ok(())
    }

    /// Mean of the off-diagonal entries.
    pub fn off_diagonal_mean(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 0.0;
        }
        math::sum(self.0.as_slice()) / (n * (n - 1)) as f64
    }

    /// Rescales so the off-diagonal mean is 1. All-zero matrices are returned
    /// unchanged.
    pub fn rescaled_unit_mean(&self) -> DistanceMatrix {
        let m = self.off_diagonal_mean();
        if m <= 0.0 {
            return self.clone();
        }
        self.scaled(1.0 / m)
    }

    pub fn scaled(&self, s: f64) -> DistanceMatrix {
        let mut out = self.0.clone();
        out.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        DistanceMatrix(out)
    }

    /// Entry-wise sum, the transport cost `D_x + D_c`.
    pub fn sum(&self, other: &DistanceMatrix) -> Result<DistanceMatrix> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch {
                what: "distance matrix",
                expected: self.n(),
                actual: other.n(),
            });
        }
        let mut out = self.0.clone();
        for (a, b) in out.as_mut_slice().iter_mut().zip(other.0.as_slice()) {
            *a += *b;
        }
        Ok(DistanceMatrix(out))
    }

    /// `D'[i][j] = D[perm[i]][perm[j]]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<DistanceMatrix> {
        let n = self.n();
        if perm.len() != n {
            return Err(Error::DimensionMismatch {
                what: "permutation",
                expected: n,
                actual: perm.len(),
            });
        }
        let mut seen = alloc::vec![false; n];
        for &p in perm {
            if p >= n || seen[p] {
                return Err(Error::invalid("permutation", "not a permutation of 0..n"));
            }
            seen[p] = true;
        }
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            let src = self.0.row(perm[i]);
            for (j, v) in m.row_mut(i).iter_mut().enumerate() {
                *v = src[perm[j]];
            }
        }
        Ok(DistanceMatrix(m))
    }
}

/// Euclidean distance between feature rows.
pub fn pairwise_euclidean(features: &Matrix) -> DistanceMatrix {
    DistanceMatrix::from_fn(features.rows(), |i, j| {
        let d2: f64 = features
            .row(i)
            .iter()
            .zip(features.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        math::sqrt(d2)
    })
}

/// Distance between ground-truth unmeasured variables: 0/1 for categories,
/// absolute difference for numeric values.
pub fn oracle_distance(oracle: &UvOracle) -> DistanceMatrix {
    match oracle {
        UvOracle::Numeric(v) => DistanceMatrix::from_fn(v.len(), |i, j| math::abs(v[i] - v[j])),
        UvOracle::Categorical(v) => {
            DistanceMatrix::from_fn(v.len(), |i, j| if v[i] == v[j] { 0.0 } else { 1.0 })
        }
    }
}

/// Mean cosine distance over all cross pairs of replicates.
///
/// Since `mean_{r,s} cos(u_r, v_s) = (mean_r u_r/|u_r|) . (mean_s v_s/|v_s|)`,
/// each example is reduced to the mean of its normalized replicates first.
pub fn annotation_distance(embeddings: &Embeddings) -> Result<DistanceMatrix> {
    let mut dim = None;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(embeddings.len());
    for (i, reps) in embeddings.iter().enumerate() {
        if reps.is_empty() {
            return Err(Error::invalid(
                "embeddings",
                alloc::format!("example {i} has no replicate"),
            ));
        }
        let k = *dim.get_or_insert(reps[0].len());
        let mut c = alloc::vec![0.0; k];
        for (r, v) in reps.iter().enumerate() {
            if v.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "embedding dimension",
                    expected: k,
                    actual: v.len(),
                });
            }
            let norm = math::sqrt(v.iter().map(|a| a * a).sum());
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(Error::ZeroNormEmbedding {
                    example: i,
                    replicate: r,
                });
            }
            for (ca, a) in c.iter_mut().zip(v) {
                *ca += a / norm;
            }
        }
        let m = reps.len() as f64;
        c.iter_mut().for_each(|a| *a /= m);
        centers.push(c);
    }
    Ok(DistanceMatrix::from_fn(centers.len(), |i, j| {
        let dot: f64 = centers[i].iter().zip(&centers[j]).map(|(a, b)| a * b).sum();
        1.0 - dot
    }))
}

/// Permutation that shuffles `floor(fraction * n)` randomly chosen indices
/// among themselves and fixes the rest.
pub fn partial_shuffle_permutation(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("shuffle fraction", "must lie in [0, 1]"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let m = math::floor(fraction * n as f64) as usize;
    if m < 2 {
        return Ok(perm);
    }
    let mut r = rng::seeded(seed);
    let chosen = index::sample(&mut r, n, m).into_vec();
    let mut targets = chosen.clone();
    targets.shuffle(&mut r);
    for (&at, &from) in chosen.iter().zip(&targets) {
        perm[at] = from;
    }
    Ok(perm)
}

/// Degrades the unmeasured-variable distances by reassigning a random subset
/// of examples' annotations among themselves.
pub fn shuffle_distances(d_c: &DistanceMatrix, fraction: f64, seed: u64) -> Result<DistanceMatrix> {
    let perm = partial_shuffle_permutation(d_c.n(), fraction, seed)?;
    d_c.permuted(&perm)
}

/// 1-Wasserstein distance between two empirical distributions on the line:
/// the integral over `u in (0,1)` of `|Q_a(u) - Q_b(u)|` with empirical
/// quantile functions. For equal sizes this is the mean absolute difference
/// of the sorted samples.
pub fn wasserstein_1d(samples_a: &[f64], samples_b: &[f64]) -> Result<f64> {
    if samples_a.is_empty() || samples_b.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut a = samples_a.to_vec();
    let mut b = samples_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len(), b.len());
    if na == nb {
        return Ok(a.iter().zip(&b).map(|(x, y)| math::abs(x - y)).sum::<f64>() / na as f64);
    }
    // Merge the quantile breakpoints k/na and l/nb using integer arithmetic on
    // the common denominator na * nb.
    let (mut i, mut j) = (0usize, 0usize);
    let mut pos = 0usize;
    let total = na * nb;
    let mut acc = 0.0;
    while pos < total {
        let next_a = (i + 1) * nb;
        let next_b = (j + 1) * na;
        let next = next_a.min(next_b);
        acc += (next - pos) as f64 * math::abs(a[i] - b[j]);
        pos = next;
        if next == next_a {
            i += 1;
        }
        if next == next_b {
            j += 1;
        }
    }
    Ok(acc / total as f64)
}
