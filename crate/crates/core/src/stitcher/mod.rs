//! Joint search over camera pose hypotheses and object correspondences.
//!
//! For a pose `P` and a one-to-one correspondence `C` the objective is
//!
//! ```text
//! L_D + λ_p_rot (1 − p_rot) + λ_p_trans (1 − p_trans) + λ_s Σ_C (1 − A_ij) + λ_u (min(N, M) − |C|)
//! ```
//!
//! where `L_D` is the mean chamfer distance between the edge clouds of matched
//! objects once view-1 objects are carried into view 2 by `P` (zero for an
//! empty `C`). [`solve`] evaluates every sampled correspondence under every
//! top-ranked pose hypothesis and keeps the minimum; [`merge`] fuses the two
//! views under the winner.

mod merge;
mod sampler;

pub use merge::{merge, to_view1_frame};
pub use sampler::{sample_correspondences, sample_correspondences_with, DEFAULT_STOP_WEIGHT};

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Matrix3;
use rayon::prelude::*;

use crate::affinity::{feasible_pairs, AffinityError, AffinityMatrix, DEFAULT_AFFINITY_THRESHOLD};
use crate::geometry::{EdgeParams, GeometryError, NearestIndex, PointCloud, SceneObject, Vec3};
use crate::pose_space::{
    top_k_hypotheses, CameraPoseDistribution, PoseHypothesis, DEFAULT_TOP_ROTATIONS, DEFAULT_TOP_TRANSLATIONS,
};
use crate::rng::stream_seed;

/// Relative margin by which a lower bound must exceed the best objective
/// before a candidate is skipped; absorbs rounding differences.
const PRUNE_SLACK: f64 = 1e-9;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum StitchError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
    #[error("view {0} has no objects")]
    EmptyView(usize),
    #[error("affinity is {a_n}×{a_m} but the views hold {n} and {m} objects")]
    ShapeMismatch { a_n: usize, a_m: usize, n: usize, m: usize },
    #[error("invalid correspondence: {0}")]
    InvalidCorrespondence(String),
    #[error("invalid weights: {0}")]
    InvalidWeights(&'static str),
    #[error("no pose hypotheses to evaluate")]
    NoHypotheses,
    #[error("all {0} candidate evaluations failed")]
    AllCandidatesFailed(usize),
}

/// Partial one-to-one matching between view-1 and view-2 object indices,
/// kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Correspondence {
    pairs: Vec<(usize, usize)>,
}

impl Correspondence {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(mut pairs: Vec<(usize, usize)>, n: usize, m: usize) -> Result<Self, StitchError> {
        pairs.sort_unstable();
        let mut rows = vec![false; n];
        let mut cols = vec![false; m];
        for &(i, j) in &pairs {
            if i >= n || j >= m {
                return Err(StitchError::InvalidCorrespondence(format!(
                    "pair ({i}, {j}) outside {n}×{m}"
                )));
            }
            if std::mem::replace(&mut rows[i], true) {
                return Err(StitchError::InvalidCorrespondence(format!("view-1 object {i} matched twice")));
            }
            if std::mem::replace(&mut cols[j], true) {
                return Err(StitchError::InvalidCorrespondence(format!("view-2 object {j} matched twice")));
            }
        }
        Ok(Self { pairs })
    }

    pub(crate) fn from_sorted_unchecked(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.pairs.binary_search(&(i, j)).is_ok()
    }

    fn check_bounds(&self, n: usize, m: usize) -> Result<(), StitchError> {
        Self::new(self.pairs.clone(), n, m).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StitchWeights {
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub lambda_p_rot: f64,
    pub lambda_p_trans: f64,
    pub k_samples: usize,
    pub affinity_threshold: f64,
}

impl Default for StitchWeights {
    fn default() -> Self {
        Self {
            lambda_s: 5.0,
            lambda_u: 1.0,
            lambda_p_rot: 5.0,
            lambda_p_trans: 1.0,
            k_samples: 128,
            affinity_threshold: DEFAULT_AFFINITY_THRESHOLD,
        }
    }
}

impl StitchWeights {
    pub fn validate(&self) -> Result<(), StitchError> {
        let lambdas = [self.lambda_s, self.lambda_u, self.lambda_p_rot, self.lambda_p_trans];
        if lambdas.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(StitchError::InvalidWeights("weights must be finite and non-negative"));
        }
        if self.k_samples == 0 {
            return Err(StitchError::InvalidWeights("k_samples must be at least 1"));
        }
        if !(self.affinity_threshold > 0.0 && self.affinity_threshold < 1.0) {
            return Err(StitchError::InvalidWeights("affinity threshold must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Unweighted objective terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ObjectiveTerms {
    /// Mean chamfer distance over matched pairs (m²).
    pub l_d: f64,
    /// `1 − p_rot`
    pub l_p_rot: f64,
    /// `1 − p_trans`
    pub l_p_trans: f64,
    /// `Σ (1 − A_ij)` over matched pairs.
    pub l_s: f64,
    /// `min(N, M) − |C|`
    pub l_u: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, w: &StitchWeights) -> f64 {
        self.l_d
            + w.lambda_p_rot * self.l_p_rot
            + w.lambda_p_trans * self.l_p_trans
            + w.lambda_s * self.l_s
            + w.lambda_u * self.l_u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchResult {
    pub pose: PoseHypothesis,
    pub correspondence: Correspondence,
    /// Both views fused in the view-1 frame.
    pub merged: Vec<SceneObject>,
    pub objective: f64,
    pub terms: ObjectiveTerms,
    pub weights: StitchWeights,
    pub seed: u64,
    /// Position of the winning pose in the ranked hypothesis list.
    pub hypothesis_index: usize,
    /// Position of the winning correspondence in that hypothesis' samples.
    pub sample_index: usize,
    pub candidates_evaluated: usize,
}

struct PlacedCloud {
    points: Vec<Vec3>,
    index: NearestIndex,
    /// Bounding sphere of `points`.
    center: Vec3,
    radius: f64,
}

impl PlacedCloud {
    fn new(cloud: PointCloud) -> Self {
        let index = NearestIndex::build(&cloud);
        let points = cloud.points().to_vec();
        let center = points.iter().sum::<Vec3>() / points.len() as f64;
        let radius = points.iter().map(|p| (p - center).norm()).fold(0.0, f64::max);
        Self {
            points,
            index,
            center,
            radius,
        }
    }
}

/// Edge clouds of both views, placed in their own camera frames and indexed
/// once so that every pose hypothesis reuses them.
pub struct StitchProblem<'a> {
    view1: &'a [SceneObject],
    view2: &'a [SceneObject],
    clouds1: Vec<Result<PlacedCloud, GeometryError>>,
    clouds2: Vec<Result<PlacedCloud, GeometryError>>,
}

impl<'a> StitchProblem<'a> {
    pub fn new(view1: &'a [SceneObject], view2: &'a [SceneObject], edge: &EdgeParams) -> Self {
        let place = |o: &SceneObject| edge.placed_cloud(o).map(PlacedCloud::new);
        let (clouds1, clouds2) = rayon::join(
            || view1.par_iter().map(place).collect(),
            || view2.par_iter().map(place).collect(),
        );
        Self {
            view1,
            view2,
            clouds1,
            clouds2,
        }
    }

    pub fn n(&self) -> usize {
        self.view1.len()
    }

    pub fn m(&self) -> usize {
        self.view2.len()
    }

    /// Chamfer distance between view-1 object `i` carried into view 2 by
    /// `pose` and view-2 object `j`.
    ///
    /// The pose is rigid, so the backward term is evaluated by mapping the
    /// view-2 points into view 1 instead; both directions then query a
    /// pre-built index.
    pub fn pair_distance(&self, pose: &PoseHypothesis, i: usize, j: usize) -> Result<f64, GeometryError> {
        let x = self.clouds1[i].as_ref().map_err(Clone::clone)?;
        let y = self.clouds2[j].as_ref().map_err(Clone::clone)?;
        let r: Matrix3<f64> = pose.rotation.to_matrix();
        let rt = r.transpose();
        let t = pose.translation;
        let forward = y.index.mean_nearest_sq(x.points.iter().map(|p| rt * (p - t)));
        let backward = x.index.mean_nearest_sq(y.points.iter().map(|q| r * q + t));
        Ok(forward + backward)
    }

    /// Lower bound on [`Self::pair_distance`] from the bounding spheres: every
    /// point pair is at least `gap` apart, so each chamfer term is at least
    /// `gap²`. Failing pairs get 0 so that they are always evaluated.
    fn pair_lower_bound(&self, pose: &PoseHypothesis, i: usize, j: usize) -> f64 {
        let (Ok(x), Ok(y)) = (&self.clouds1[i], &self.clouds2[j]) else {
            return 0.0;
        };
        let cx = pose.rotation.inverse().rotate(&(x.center - pose.translation));
        let gap = ((cx - y.center).norm() - x.radius - y.radius).max(0.0);
        2.0 * gap * gap
    }

    /// Mean pair distance over `c`; zero when `c` is empty.
    pub fn distance(&self, pose: &PoseHypothesis, c: &Correspondence) -> Result<f64, GeometryError> {
        if c.is_empty() {
            return Ok(0.0);
        }
        let mut sum = 0.0;
        for &(i, j) in c.pairs() {
            sum += self.pair_distance(pose, i, j)?;
        }
        Ok(sum / c.len() as f64)
    }

    pub fn objective(
        &self,
        pose: &PoseHypothesis,
        c: &Correspondence,
        a: &AffinityMatrix,
        w: &StitchWeights,
    ) -> Result<(f64, ObjectiveTerms), StitchError> {
        self.check_affinity(a)?;
        c.check_bounds(self.n(), self.m())?;
        let l_d = self.distance(pose, c)?;
        let terms = self.terms_with_distance(pose, c, a, l_d);
        Ok((terms.total(w), terms))
    }

    fn terms_with_distance(&self, pose: &PoseHypothesis, c: &Correspondence, a: &AffinityMatrix, l_d: f64) -> ObjectiveTerms {
        ObjectiveTerms {
            l_d,
            l_p_rot: 1.0 - pose.rotation_prob,
            l_p_trans: 1.0 - pose.translation_prob,
            l_s: c.pairs().iter().map(|&(i, j)| 1.0 - a.get(i, j)).sum(),
            l_u: (self.n().min(self.m()) - c.len()) as f64,
        }
    }

    fn check_affinity(&self, a: &AffinityMatrix) -> Result<(), StitchError> {
        if (a.n(), a.m()) != (self.n(), self.m()) {
            return Err(StitchError::ShapeMismatch {
                a_n: a.n(),
                a_m: a.m(),
                n: self.n(),
                m: self.m(),
            });
        }
        Ok(())
    }
}

/// `L_D` for one pose and correspondence.
pub fn stitch_distance(
    view1: &[SceneObject],
    view2: &[SceneObject],
    pose: &PoseHypothesis,
    c: &Correspondence,
    edge: &EdgeParams,
) -> Result<f64, StitchError> {
    c.check_bounds(view1.len(), view2.len())?;
    Ok(StitchProblem::new(view1, view2, edge).distance(pose, c)?)
}

/// Total objective and its unweighted terms for one pose and correspondence.
pub fn objective(
    view1: &[SceneObject],
    view2: &[SceneObject],
    pose: &PoseHypothesis,
    c: &Correspondence,
    a: &AffinityMatrix,
    w: &StitchWeights,
    edge: &EdgeParams,
) -> Result<(f64, ObjectiveTerms), StitchError> {
    StitchProblem::new(view1, view2, edge).objective(pose, c, a, w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub k_rot: usize,
    pub k_trans: usize,
    pub seed: u64,
    pub edge: EdgeParams,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            k_rot: DEFAULT_TOP_ROTATIONS,
            k_trans: DEFAULT_TOP_TRANSLATIONS,
            seed: 0,
            edge: EdgeParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
struct Best {
    objective: f64,
    terms: ObjectiveTerms,
    sample_index: usize,
    correspondence: Correspondence,
}

/// Searches `top_k_hypotheses(dist) × sampled correspondences` for the
/// minimum objective and merges the views under the winner.
///
/// Each hypothesis draws its own correspondence samples from a stream derived
/// from `(seed, hypothesis index)`, so the result does not depend on how the
/// hypotheses are scheduled across threads. Ties go to the earlier
/// hypothesis, then the earlier sample.
pub fn solve(
    view1: &[SceneObject],
    view2: &[SceneObject],
    a: &AffinityMatrix,
    dist: &CameraPoseDistribution,
    w: &StitchWeights,
    opts: &SolveOptions,
) -> Result<StitchResult, StitchError> {
    let problem = StitchProblem::new(view1, view2, &opts.edge);
    solve_prepared(&problem, a, dist, w, opts)
}

/// [`solve`] on a problem whose edge clouds are already built.
pub fn solve_prepared(
    problem: &StitchProblem<'_>,
    a: &AffinityMatrix,
    dist: &CameraPoseDistribution,
    w: &StitchWeights,
    opts: &SolveOptions,
) -> Result<StitchResult, StitchError> {
    if problem.n() == 0 {
        return Err(StitchError::EmptyView(1));
    }
    if problem.m() == 0 {
        return Err(StitchError::EmptyView(2));
    }
    problem.check_affinity(a)?;
    w.validate()?;
    let feasible = feasible_pairs(a, w.affinity_threshold)?;
    let hypotheses = top_k_hypotheses(dist, opts.k_rot, opts.k_trans);
    if hypotheses.is_empty() {
        return Err(StitchError::NoHypotheses);
    }
    let (n, m) = (problem.n(), problem.m());

    // Smallest objective found so far by any hypothesis. Candidates whose
    // lower bound exceeds it cannot win and are skipped; since the bound is
    // only ever compared strictly, the winner does not depend on scheduling.
    let global_best = AtomicU64::new(f64::INFINITY.to_bits());
    let per_hypothesis: Vec<(Option<Best>, usize, usize)> = hypotheses
        .par_iter()
        .enumerate()
        .map(|(h, pose)| {
            let samples = sample_correspondences(&feasible, a, w.k_samples, stream_seed(opts.seed, h as u64));
            let mut exact: Vec<Option<Result<f64, ()>>> = vec![None; n * m];
            let mut lower: Vec<f64> = vec![f64::NAN; n * m];
            let mut best: Option<Best> = None;
            let mut failed = 0;
            'samples: for (s, c) in samples.iter().enumerate() {
                let fixed = problem.terms_with_distance(pose, c, a, 0.0).total(w);
                let bound = {
                    let local = best.as_ref().map_or(f64::INFINITY, |b| b.objective);
                    let shared = f64::from_bits(global_best.load(Ordering::Relaxed));
                    let b = local.min(shared);
                    b + PRUNE_SLACK * (1.0 + b.abs())
                };
                if fixed > bound {
                    continue;
                }
                let k = c.len() as f64;
                let mut partial: Vec<f64> = c
                    .pairs()
                    .iter()
                    .map(|&(i, j)| match exact[i * m + j] {
                        Some(Ok(d)) => d,
                        _ => {
                            let lb = &mut lower[i * m + j];
                            if lb.is_nan() {
                                *lb = problem.pair_lower_bound(pose, i, j);
                            }
                            *lb
                        }
                    })
                    .collect();
                for (slot, &(i, j)) in c.pairs().iter().enumerate() {
                    if fixed + partial.iter().sum::<f64>() / k > bound {
                        continue 'samples;
                    }
                    let d = *exact[i * m + j].get_or_insert_with(|| problem.pair_distance(pose, i, j).map_err(|_| ()));
                    match d {
                        Ok(d) => partial[slot] = d,
                        Err(()) => {
                            failed += 1;
                            continue 'samples;
                        }
                    }
                }
                let l_d = if c.is_empty() { 0.0 } else { partial.iter().sum::<f64>() / k };
                let terms = problem.terms_with_distance(pose, c, a, l_d);
                let total = terms.total(w);
                if best.as_ref().is_none_or(|b| total < b.objective) {
                    global_best.fetch_min(total.to_bits(), Ordering::Relaxed);
                    best = Some(Best {
                        objective: total,
                        terms,
                        sample_index: s,
                        correspondence: c.clone(),
                    });
                }
            }
            (best, samples.len(), failed)
        })
        .collect();

    let mut winner: Option<(usize, Best)> = None;
    let mut evaluated = 0;
    let mut failed = 0;
    for (h, (best, count, fails)) in per_hypothesis.into_iter().enumerate() {
        evaluated += count;
        failed += fails;
        if let Some(b) = best {
            if winner.as_ref().is_none_or(|(_, w)| b.objective < w.objective) {
                winner = Some((h, b));
            }
        }
    }
    let Some((h, best)) = winner else {
        return Err(StitchError::AllCandidatesFailed(failed));
    };
    let pose = hypotheses[h];
    let merged = merge(problem.view1, problem.view2, &pose, &best.correspondence, opts.seed);
    Ok(StitchResult {
        pose,
        correspondence: best.correspondence,
        merged,
        objective: best.objective,
        terms: best.terms,
        weights: *w,
        seed: opts.seed,
        hypothesis_index: h,
        sample_index: best.sample_index,
        candidates_evaluated: evaluated,
    })
}
