//! Regression-by-classification for relative camera pose.
//!
//! Translations are quantized with Lloyd k-means, rotations with spherical
//! k-means on unit quaternions (double-cover aware). A camera prediction is a
//! pair of multinomials over the two bin sets; the stitcher consumes the
//! cartesian product of the most likely bins as pose hypotheses.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::geometry::{UnitQuaternion, Vec3};

pub const DEFAULT_ROTATION_BINS: usize = 30;
pub const DEFAULT_TRANSLATION_BINS: usize = 60;
pub const DEFAULT_TOP_ROTATIONS: usize = 3;
pub const DEFAULT_TOP_TRANSLATIONS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 100;

const PROB_SUM_TOL: f64 = 1e-9;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum PoseSpaceError {
    #[error("k = {k} exceeds the number of samples ({samples})")]
    TooFewSamples { k: usize, samples: usize },
    #[error("k = {k} exceeds the number of distinct samples ({distinct})")]
    TooFewDistinct { k: usize, distinct: usize },
    #[error("k must be at least 1")]
    ZeroClusters,
    #[error("bin set is empty")]
    EmptyBins,
    #[error("bin centroids {0} and {1} coincide")]
    DuplicateCentroid(usize, usize),
    #[error("{what}: {len} probabilities for {bins} bins")]
    LengthMismatch { what: &'static str, len: usize, bins: usize },
    #[error("{0} probabilities must be non-negative and sum to 1 (sum = {1})")]
    NotADistribution(&'static str, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationBinSet {
    centroids: Vec<Vec3>,
}

impl TranslationBinSet {
    pub fn new(centroids: Vec<Vec3>) -> Result<Self, PoseSpaceError> {
        if centroids.is_empty() {
            return Err(PoseSpaceError::EmptyBins);
        }
        for i in 0..centroids.len() {
            for j in (i + 1)..centroids.len() {
                if centroids[i] == centroids[j] {
                    return Err(PoseSpaceError::DuplicateCentroid(i, j));
                }
            }
        }
        Ok(Self { centroids })
    }

    pub fn centroids(&self) -> &[Vec3] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Index of the closest centroid (Euclidean), lowest index on ties.
    pub fn nearest(&self, t: &Vec3) -> usize {
        argmin(self.centroids.iter().map(|c| (c - t).norm_squared()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RotationBinSet {
    centroids: Vec<UnitQuaternion>,
}

impl RotationBinSet {
    pub fn new(centroids: Vec<UnitQuaternion>) -> Result<Self, PoseSpaceError> {
        if centroids.is_empty() {
            return Err(PoseSpaceError::EmptyBins);
        }
        Ok(Self { centroids })
    }

    pub fn centroids(&self) -> &[UnitQuaternion] {
        &self.centroids
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Index of the closest centroid by geodesic angle, lowest index on ties.
    pub fn nearest(&self, q: &UnitQuaternion) -> usize {
        argmin(self.centroids.iter().map(|c| 1.0 - c.dot(q).abs()))
    }
}

fn argmin(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Two independent multinomials over rotation and translation bins.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPoseDistribution {
    rotation_bins: RotationBinSet,
    rotation_probs: Vec<f64>,
    translation_bins: TranslationBinSet,
    translation_probs: Vec<f64>,
}

fn check_distribution(what: &'static str, probs: &[f64], bins: usize, tol: f64) -> Result<(), PoseSpaceError> {
    if probs.len() != bins {
        return Err(PoseSpaceError::LengthMismatch {
            what,
            len: probs.len(),
            bins,
        });
    }
    let sum: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || (sum - 1.0).abs() > tol {
        return Err(PoseSpaceError::NotADistribution(what, sum));
    }
    Ok(())
}

impl CameraPoseDistribution {
    pub fn new(
        rotation_bins: RotationBinSet,
        rotation_probs: Vec<f64>,
        translation_bins: TranslationBinSet,
        translation_probs: Vec<f64>,
    ) -> Result<Self, PoseSpaceError> {
        check_distribution("rotation", &rotation_probs, rotation_bins.len(), PROB_SUM_TOL)?;
        check_distribution("translation", &translation_probs, translation_bins.len(), PROB_SUM_TOL)?;
        Ok(Self {
            rotation_bins,
            rotation_probs,
            translation_bins,
            translation_probs,
        })
    }

    /// Accepts probability vectors whose sums are within `tol` of one and
    /// rescales them to sum to one. A vector whose sum is already one up to
    /// rounding is kept as is.
    pub fn normalized(
        rotation_bins: RotationBinSet,
        rotation_probs: Vec<f64>,
        translation_bins: TranslationBinSet,
        translation_probs: Vec<f64>,
        tol: f64,
    ) -> Result<Self, PoseSpaceError> {
        check_distribution("rotation", &rotation_probs, rotation_bins.len(), tol)?;
        check_distribution("translation", &translation_probs, translation_bins.len(), tol)?;
        let renorm = |p: Vec<f64>| {
            let s: f64 = p.iter().sum();
            if (s - 1.0).abs() <= p.len() as f64 * f64::EPSILON {
                return p;
            }
            p.into_iter().map(|v| v / s).collect::<Vec<_>>()
        };
        Self::new(
            rotation_bins,
            renorm(rotation_probs),
            translation_bins,
            renorm(translation_probs),
        )
    }

    pub fn rotation_bins(&self) -> &RotationBinSet {
        &self.rotation_bins
    }

    pub fn rotation_probs(&self) -> &[f64] {
        &self.rotation_probs
    }

    pub fn translation_bins(&self) -> &TranslationBinSet {
        &self.translation_bins
    }

    pub fn translation_probs(&self) -> &[f64] {
        &self.translation_probs
    }
}

/// One candidate relative camera pose: camera 2 expressed in the camera-1
/// frame, so a point `x₂` in view-2 coordinates sits at `R x₂ + t` in view 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHypothesis {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
    pub rotation_prob: f64,
    pub translation_prob: f64,
    pub rotation_bin: usize,
    pub translation_bin: usize,
}

impl PoseHypothesis {
    /// A pose known with certainty (probabilities 1), outside any bin set.
    pub fn exact(rotation: UnitQuaternion, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
            rotation_prob: 1.0,
            translation_prob: 1.0,
            rotation_bin: 0,
            translation_bin: 0,
        }
    }

    pub fn joint_prob(&self) -> f64 {
        self.rotation_prob * self.translation_prob
    }

    pub fn view2_to_view1(&self, p: &Vec3) -> Vec3 {
        self.rotation.rotate(p) + self.translation
    }

    pub fn view1_to_view2(&self, p: &Vec3) -> Vec3 {
        self.rotation.inverse().rotate(&(p - self.translation))
    }
}

/// Indices of the `k` largest entries, descending, lowest index first on ties.
fn top_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Cartesian product of the `k_rot` most likely rotation bins and the
/// `k_trans` most likely translation bins, sorted by descending joint
/// probability with ties broken by (rotation bin, translation bin) ascending.
///
/// `k_rot` and `k_trans` are clamped to the number of available bins.
pub fn top_k_hypotheses(dist: &CameraPoseDistribution, k_rot: usize, k_trans: usize) -> Vec<PoseHypothesis> {
    let rots = top_indices(&dist.rotation_probs, k_rot);
    let trans = top_indices(&dist.translation_probs, k_trans);
    let mut out = Vec::with_capacity(rots.len() * trans.len());
    for &r in &rots {
        for &t in &trans {
            out.push(PoseHypothesis {
                rotation: dist.rotation_bins.centroids[r],
                translation: dist.translation_bins.centroids[t],
                rotation_prob: dist.rotation_probs[r],
                translation_prob: dist.translation_probs[t],
                rotation_bin: r,
                translation_bin: t,
            });
        }
    }
    out.sort_by(|a, b| {
        b.joint_prob()
            .total_cmp(&a.joint_prob())
            .then(a.rotation_bin.cmp(&b.rotation_bin))
            .then(a.translation_bin.cmp(&b.translation_bin))
    });
    out
}

/// Outcome of a clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<B> {
    pub bins: B,
    pub assignments: Vec<usize>,
    /// Objective after each assignment step, first entry from the seeding.
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

/// k-means++ seeding over an arbitrary dissimilarity. Picks the first center
/// uniformly, then each next center with probability proportional to the
/// dissimilarity to the closest chosen center.
fn seed_plus_plus<T: Copy>(
    samples: &[T],
    k: usize,
    rng: &mut ChaCha8Rng,
    dissimilarity: impl Fn(&T, &T) -> f64,
) -> Result<Vec<T>, PoseSpaceError> {
    let mut centers = vec![samples[rng.random_range(0..samples.len())]];
    let mut closest: Vec<f64> = samples.iter().map(|s| dissimilarity(s, &centers[0])).collect();
    while centers.len() < k {
        let distinct = centers.len();
        if closest.iter().all(|d| *d <= 0.0) {
            return Err(PoseSpaceError::TooFewDistinct { k, distinct });
        }
        let pick = WeightedIndex::new(&closest)
            .map_err(|_| PoseSpaceError::TooFewDistinct { k, distinct })?
            .sample(rng);
        let c = samples[pick];
        centers.push(c);
        for (d, s) in closest.iter_mut().zip(samples) {
            *d = d.min(dissimilarity(s, &c));
        }
    }
    Ok(centers)
}

/// Parallel nearest-center assignment; results are collected in sample order
/// and the cost is summed sequentially, so the outcome does not depend on the
/// thread count.
fn assign<T: Sync, C: Sync>(samples: &[T], centers: &[C], cost: impl Fn(&T, &C) -> f64 + Sync) -> (Vec<usize>, f64) {
    let pairs: Vec<(usize, f64)> = samples
        .par_iter()
        .map(|s| {
            let mut best = (0, f64::INFINITY);
            for (i, c) in centers.iter().enumerate() {
                let d = cost(s, c);
                if d < best.1 {
                    best = (i, d);
                }
            }
            best
        })
        .collect();
    let total = pairs.iter().map(|p| p.1).sum();
    (pairs.into_iter().map(|p| p.0).collect(), total)
}

fn validate_k(k: usize, n: usize) -> Result<(), PoseSpaceError> {
    if k == 0 {
        return Err(PoseSpaceError::ZeroClusters);
    }
    if k > n {
        return Err(PoseSpaceError::TooFewSamples { k, samples: n });
    }
    Ok(())
}

/// Lloyd k-means on translation vectors with seeded k-means++ initialization.
///
/// Stops when an assignment step changes nothing or after `max_iter` update
/// steps. A cluster that loses all members keeps its previous centroid.
pub fn kmeans_translations(
    samples: &[Vec3],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Clustering<TranslationBinSet>, PoseSpaceError> {
    validate_k(k, samples.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sq = |a: &Vec3, b: &Vec3| (a - b).norm_squared();
    let mut centers = seed_plus_plus(samples, k, &mut rng, sq)?;
    let (mut assignments, cost) = assign(samples, &centers, sq);
    let mut cost_history = vec![cost];
    let mut converged = false;
    for _ in 0..max_iter {
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (s, &a) in samples.iter().zip(&assignments) {
            sums[a] += s;
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
            }
        }
        let (next, cost) = assign(samples, &centers, sq);
        cost_history.push(cost);
        let changed = next != assignments;
        assignments = next;
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(Clustering {
        bins: TranslationBinSet::new(centers)?,
        assignments,
        cost_history,
        converged,
    })
}

/// Spherical k-means on unit quaternions.
///
/// Similarity is `|⟨q, c⟩|` so `q` and `-q` land in the same cluster; the
/// reported cost is `Σ (1 - |⟨q, c⟩|)`. The centroid update normalizes the
/// sum of members after flipping each one onto its centroid's hemisphere. If
/// that sum vanishes the centroid is re-seeded from the sample farthest from
/// its current centroid.
pub fn spherical_kmeans_rotations(
    samples: &[UnitQuaternion],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Clustering<RotationBinSet>, PoseSpaceError> {
    validate_k(k, samples.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dis = |a: &UnitQuaternion, b: &UnitQuaternion| (1.0 - a.dot(b).abs()).max(0.0);
    let mut centers = seed_plus_plus(samples, k, &mut rng, dis)?;
    let (mut assignments, cost) = assign(samples, &centers, dis);
    let mut cost_history = vec![cost];
    let mut converged = false;
    for _ in 0..max_iter {
        let mut sums = vec![[0.0f64; 4]; k];
        let mut counts = vec![0usize; k];
        for (s, &a) in samples.iter().zip(&assignments) {
            let sign = if s.dot(&centers[a]) < 0.0 { -1.0 } else { 1.0 };
            let q = s.to_wxyz();
            for d in 0..4 {
                sums[a][d] += sign * q[d];
            }
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let s = sums[c];
            match UnitQuaternion::new(s[0], s[1], s[2], s[3]) {
                Ok(q) => centers[c] = q,
                Err(_) => {
                    let far = samples
                        .iter()
                        .zip(&assignments)
                        .enumerate()
                        .map(|(i, (q, &a))| (i, dis(q, &centers[a])))
                        .fold((0, -1.0), |b, x| if x.1 > b.1 { x } else { b });
                    centers[c] = samples[far.0];
                }
            }
        }
        let (next, cost) = assign(samples, &centers, dis);
        cost_history.push(cost);
        let changed = next != assignments;
        assignments = next;
        if !changed {
            converged = true;
            break;
        }
    }
    Ok(Clustering {
        bins: RotationBinSet::new(centers)?,
        assignments,
        cost_history,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_geodesic;
    use std::f64::consts::FRAC_PI_2;

    fn bins(n_rot: usize, n_trans: usize) -> (RotationBinSet, TranslationBinSet) {
        let r = (0..n_rot).map(|i| UnitQuaternion::rot_z(0.1 * i as f64)).collect();
        let t = (0..n_trans).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        (RotationBinSet::new(r).unwrap(), TranslationBinSet::new(t).unwrap())
    }

    #[test]
    fn kmeans_separated_clusters() {
        let mut s = vec![Vec3::zeros(); 5];
        s.extend(vec![Vec3::repeat(9.0); 5]);
        let c = kmeans_translations(&s, 2, 1, 100).unwrap();
        let mut cs: Vec<Vec3> = c.bins.centroids().to_vec();
        cs.sort_by(|a, b| a.x.total_cmp(&b.x));
        assert_eq!(cs, vec![Vec3::zeros(), Vec3::repeat(9.0)]);
        assert_eq!(*c.cost_history.last().unwrap(), 0.0);
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let s = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 4.0, 0.0), Vec3::new(3.0, 2.0, 6.0)];
        let c = kmeans_translations(&s, 1, 9, 100).unwrap();
        assert!((c.bins.centroids()[0] - Vec3::new(2.0, 2.0, 2.0)).norm() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_n_reproduces_points() {
        let s = vec![Vec3::new(1.0, 0.0, 0.0), Vec3::new(-2.0, 4.0, 0.0), Vec3::new(3.0, 2.0, 6.0)];
        let c = kmeans_translations(&s, 3, 4, 100).unwrap();
        assert_eq!(*c.cost_history.last().unwrap(), 0.0);
        for p in &s {
            assert!(c.bins.centroids().contains(p));
        }
    }

    #[test]
    fn kmeans_errors() {
        let s = vec![Vec3::zeros(); 2];
        assert_eq!(
            kmeans_translations(&s, 3, 0, 10),
            Err(PoseSpaceError::TooFewSamples { k: 3, samples: 2 })
        );
        assert!(matches!(kmeans_translations(&s, 2, 0, 10), Err(PoseSpaceError::TooFewDistinct { .. })));
        assert_eq!(kmeans_translations(&s, 0, 0, 10), Err(PoseSpaceError::ZeroClusters));
    }

    #[test]
    fn spherical_identical_samples() {
        let q = UnitQuaternion::new(0.5, 0.1, -0.7, 0.2).unwrap();
        let c = spherical_kmeans_rotations(&[q; 6], 1, 3, 100).unwrap();
        assert!((c.bins.centroids()[0].dot(&q) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spherical_double_cover_single_cluster() {
        let q = UnitQuaternion::new(0.5, 0.1, -0.7, 0.2).unwrap().to_wxyz();
        // construct -q without canonicalizing via raw negation: canonical form folds it back
        let neg = UnitQuaternion::new(-q[0], -q[1], -q[2], -q[3]).unwrap();
        let c = spherical_kmeans_rotations(&[UnitQuaternion::from_wxyz(q).unwrap(), neg], 1, 0, 100).unwrap();
        let centroid = c.bins.centroids()[0];
        assert!(centroid.w() >= 0.0);
        assert!((centroid.dot(&neg).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spherical_two_tight_clusters() {
        let mut samples = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for base in [UnitQuaternion::rot_z(0.0), UnitQuaternion::rot_z(FRAC_PI_2)] {
            for _ in 0..20 {
                let v = Vec3::new(
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1e-3..1e-3),
                    rng.random_range(-1e-3..1e-3),
                );
                samples.push(base.mul(&UnitQuaternion::from_rotation_vector(&v)));
            }
        }
        let c = spherical_kmeans_rotations(&samples, 2, 5, 100).unwrap();
        for target in [UnitQuaternion::rot_z(0.0), UnitQuaternion::rot_z(FRAC_PI_2)] {
            let best = c
                .bins
                .centroids()
                .iter()
                .map(|q| rotation_geodesic(q, &target))
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-2, "centroid off by {best}");
        }
        for q in c.bins.centroids() {
            let n: f64 = q.to_wxyz().iter().map(|v| v * v).sum();
            assert!((n.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn top_k_counts_and_ordering() {
        let (r, t) = bins(30, 60);
        let d = CameraPoseDistribution::new(r, vec![1.0 / 30.0; 30], t, vec![1.0 / 60.0; 60]).unwrap();
        let h = top_k_hypotheses(&d, 3, 10);
        assert_eq!(h.len(), 30);
        assert_eq!((h[0].rotation_bin, h[0].translation_bin), (0, 0));
    }

    #[test]
    fn top_k_hand_sorted_products() {
        let (r, t) = bins(2, 2);
        let d = CameraPoseDistribution::new(r, vec![0.7, 0.3], t, vec![0.6, 0.4]).unwrap();
        let h = top_k_hypotheses(&d, 2, 2);
        let products: Vec<f64> = h.iter().map(|x| x.joint_prob()).collect();
        let expected = [0.42, 0.28, 0.18, 0.12];
        for (p, e) in products.iter().zip(expected) {
            assert!((p - e).abs() < 1e-12);
        }
        assert_eq!((h[1].rotation_bin, h[1].translation_bin), (0, 1));
    }

    #[test]
    fn distribution_validation() {
        let (r, t) = bins(2, 2);
        assert!(matches!(
            CameraPoseDistribution::new(r.clone(), vec![0.7, 0.2], t.clone(), vec![0.6, 0.4]),
            Err(PoseSpaceError::NotADistribution("rotation", _))
        ));
        assert!(matches!(
            CameraPoseDistribution::new(r.clone(), vec![1.0], t.clone(), vec![0.6, 0.4]),
            Err(PoseSpaceError::LengthMismatch { .. })
        ));
        assert!(CameraPoseDistribution::normalized(r, vec![0.7, 0.3000001], t, vec![0.6, 0.4], 1e-6).is_ok());
        assert!(TranslationBinSet::new(vec![Vec3::zeros(), Vec3::zeros()]).is_err());
    }

    #[test]
    fn pose_maps_are_inverse() {
        let h = PoseHypothesis::exact(UnitQuaternion::rot_y(0.4), Vec3::new(1.0, -2.0, 0.5));
        let p = Vec3::new(0.3, 0.2, -0.9);
        assert!((h.view1_to_view2(&h.view2_to_view1(&p)) - p).norm() < 1e-12);
    }
}
