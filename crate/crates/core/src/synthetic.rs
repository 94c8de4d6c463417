//! Synthetic scene pairs with exact ground truth.
//!
//! A scene is a box-shaped room (world frame, z up, floor at z = 0) holding
//! primitive voxel objects: solid boxes, L-shaped blocks and tables with
//! legs. Two cameras look into the room; an object is visible in a view when
//! its center falls inside that camera's frustum. Cameras use an x-forward,
//! y-left, z-up frame.
//!
//! [`corrupt_to_observations`] then produces what the stitcher consumes:
//! per-view objects in camera coordinates with pose noise, embeddings and
//! their affinity matrix, and a binned camera-pose distribution whose top-1
//! bin is correct with a chosen probability.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_3, PI};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::affinity::{build_affinity, AffinityError, AffinityMatrix, DEFAULT_AFFINITY_SCALE};
use crate::geometry::{rotation_geodesic, Embedding, SceneObject, SimilarityTransform, UnitQuaternion, Vec3, VoxelGrid, DEFAULT_RESOLUTION, EMBEDDING_DIM};
use crate::pose_space::{
    kmeans_translations, spherical_kmeans_rotations, CameraPoseDistribution, PoseSpaceError, RotationBinSet, TranslationBinSet,
    DEFAULT_MAX_ITER, DEFAULT_ROTATION_BINS, DEFAULT_TRANSLATION_BINS,
};
use crate::rng::stream_seed;
use crate::stitcher::Correspondence;

const LAYOUT_ATTEMPTS: usize = 64;
const CAMERA_ATTEMPTS: usize = 256;
const PLACEMENT_ATTEMPTS: usize = 200;

/// Length scales of the distance-decaying weights used to spread camera
/// probability mass over bins.
const ROTATION_DECAY: f64 = 0.35;
const TRANSLATION_DECAY: f64 = 0.75;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum SyntheticError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no layout satisfied the visibility constraints after {0} attempts")]
    Unsatisfiable(usize),
    #[error(transparent)]
    PoseSpace(#[from] PoseSpaceError),
    #[error(transparent)]
    Affinity(#[from] AffinityError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frustum {
    /// Full horizontal field of view, radians.
    pub h_fov: f64,
    pub v_fov: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for Frustum {
    fn default() -> Self {
        Self {
            h_fov: 100f64.to_radians(),
            v_fov: 80f64.to_radians(),
            near: 0.3,
            far: 10.0,
        }
    }
}

impl Frustum {
    /// Whether a point given in camera coordinates lies inside the frustum.
    pub fn contains(&self, p: &Vec3) -> bool {
        p.x >= self.near
            && p.x <= self.far
            && p.y.atan2(p.x).abs() <= self.h_fov / 2.0
            && p.z.atan2(p.x).abs() <= self.v_fov / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub min_objects: usize,
    pub max_objects: usize,
    pub resolution: usize,
    /// Room extent along x, y, z in meters.
    pub room: Vec3,
    /// Probability that an object reuses the voxel model (and size) of an
    /// earlier object.
    pub duplicate_shape_prob: f64,
    /// Camera baseline range in meters.
    pub baseline: (f64, f64),
    /// Largest yaw difference between the cameras, radians.
    pub max_relative_yaw: f64,
    pub frustum: Frustum,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            min_objects: 1,
            max_objects: 10,
            resolution: DEFAULT_RESOLUTION,
            room: Vec3::new(8.0, 6.0, 3.0),
            duplicate_shape_prob: 0.0,
            baseline: (0.5, 3.0),
            max_relative_yaw: FRAC_PI_3,
            frustum: Frustum::default(),
        }
    }
}

impl SceneParams {
    pub fn with_objects(mut self, min: usize, max: usize) -> Self {
        self.min_objects = min;
        self.max_objects = max;
        self
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::InvalidParameter(m.to_string()));
        if self.min_objects == 0 || self.max_objects < self.min_objects {
            return bad("object count range must satisfy 1 ≤ min ≤ max");
        }
        if self.resolution < 4 {
            return bad("resolution must be at least 4");
        }
        if self.room.iter().any(|v| !(*v >= 2.0) || !v.is_finite()) {
            return bad("room extents must be at least 2 m");
        }
        if !(0.0..=1.0).contains(&self.duplicate_shape_prob) {
            return bad("duplicate_shape_prob must lie in [0, 1]");
        }
        if !(self.baseline.0 > 0.0 && self.baseline.1 >= self.baseline.0) {
            return bad("baseline range must be positive and ordered");
        }
        if !(self.max_relative_yaw >= 0.0 && self.max_relative_yaw <= PI) {
            return bad("max_relative_yaw must lie in [0, π]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Per-axis Gaussian translation noise, meters.
    pub trans_sigma: f64,
    /// Per-axis Gaussian rotation-vector noise, radians.
    pub rot_sigma: f64,
    /// Per-axis Gaussian noise on log₂ scale.
    pub scale_sigma: f64,
    /// RMS angle by which embeddings leave their base direction, radians.
    pub embedding_noise: f64,
    /// Probability that the true bin is the most likely one (drawn
    /// separately for rotation and translation).
    pub pose_top1_accuracy: f64,
}

impl NoiseModel {
    pub fn zero() -> Self {
        Self {
            trans_sigma: 0.0,
            rot_sigma: 0.0,
            scale_sigma: 0.0,
            embedding_noise: 0.0,
            pose_top1_accuracy: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let sigmas = [self.trans_sigma, self.rot_sigma, self.scale_sigma, self.embedding_noise];
        if sigmas.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(SyntheticError::InvalidParameter("noise sigmas must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.pose_top1_accuracy) {
            return Err(SyntheticError::InvalidParameter("pose_top1_accuracy must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    /// Moderate noise: 10 cm, 5°, 0.1 log₂ scale, 0.3 rad embeddings, 40 % top-1.
    fn default() -> Self {
        Self {
            trans_sigma: 0.1,
            rot_sigma: 5f64.to_radians(),
            scale_sigma: 0.1,
            embedding_noise: 0.3,
            pose_top1_accuracy: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrimitiveShape {
    Box,
    /// Two perpendicular full-height arms of relative width `arm`.
    LShape { arm: f64 },
    /// Slab of relative thickness `top` on four legs of relative width `leg`.
    Table { top: f64, leg: f64 },
}

impl PrimitiveShape {
    pub fn category(&self) -> &'static str {
        match self {
            PrimitiveShape::Box => "box",
            PrimitiveShape::LShape { .. } => "l_shape",
            PrimitiveShape::Table { .. } => "table",
        }
    }

    pub fn voxelize(&self, resolution: usize) -> VoxelGrid {
        let r = resolution;
        let cells = |f: f64| ((f * r as f64).round() as usize).clamp(1, r - 1);
        match *self {
            PrimitiveShape::Box => VoxelGrid::from_fn(r, |_, _, _| true),
            PrimitiveShape::LShape { arm } => {
                let a = cells(arm);
                VoxelGrid::from_fn(r, |x, y, _| x < a || y < a)
            }
            PrimitiveShape::Table { top, leg } => {
                let (t, l) = (cells(top), cells(leg));
                VoxelGrid::from_fn(r, |x, y, z| z >= r - t || ((x < l || x >= r - l) && (y < l || y >= r - l)))
            }
        }
    }

    fn sample(rng: &mut impl Rng) -> (Self, Vec3) {
        match rng.random_range(0..3) {
            0 => (
                PrimitiveShape::Box,
                Vec3::new(rng.random_range(0.4..1.2), rng.random_range(0.4..1.2), rng.random_range(0.4..1.2)),
            ),
            1 => (
                PrimitiveShape::LShape {
                    arm: rng.random_range(0.3..0.6),
                },
                Vec3::new(rng.random_range(0.8..2.0), rng.random_range(0.8..2.0), rng.random_range(0.6..1.0)),
            ),
            _ => (
                PrimitiveShape::Table {
                    top: rng.random_range(0.1..0.25),
                    leg: rng.random_range(0.08..0.2),
                },
                Vec3::new(rng.random_range(0.8..1.6), rng.random_range(0.6..1.0), rng.random_range(0.7..0.8)),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Placement {
    shape: PrimitiveShape,
    shape_id: usize,
    extent: Vec3,
    yaw: f64,
    center: Vec3,
}

impl Placement {
    fn radius(&self) -> f64 {
        0.5 * self.extent.x.hypot(self.extent.y)
    }
}

fn sample_layout(params: &SceneParams, rng: &mut impl Rng) -> Option<Vec<Placement>> {
    let n = rng.random_range(params.min_objects..=params.max_objects);
    let mut placed: Vec<Placement> = Vec::with_capacity(n);
    let mut shape_count = 0;
    for _ in 0..n {
        let (shape, extent, shape_id) = if !placed.is_empty() && rng.random_bool(params.duplicate_shape_prob) {
            let src = placed[rng.random_range(0..placed.len())];
            (src.shape, src.extent, src.shape_id)
        } else {
            let (s, e) = PrimitiveShape::sample(rng);
            shape_count += 1;
            (s, e, shape_count - 1)
        };
        let mut p = Placement {
            shape,
            shape_id,
            extent,
            yaw: rng.random_range(-PI..PI),
            center: Vec3::zeros(),
        };
        let r = p.radius();
        if 2.0 * r >= params.room.x.min(params.room.y) {
            return None;
        }
        let spot = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
            let c = Vec3::new(
                rng.random_range(r..params.room.x - r),
                rng.random_range(r..params.room.y - r),
                extent.z / 2.0,
            );
            let free = placed.iter().all(|q| (q.center.xy() - c.xy()).norm() >= q.radius() + r);
            free.then_some(c)
        })?;
        p.center = spot;
        placed.push(p);
    }
    Some(placed)
}

fn sample_camera_pair(params: &SceneParams, layout: &[Placement], rng: &mut impl Rng) -> Option<(SimilarityTransform, SimilarityTransform)> {
    let margin = 0.3;
    let room = params.room;
    let c1 = Vec3::new(
        rng.random_range(margin..room.x - margin),
        rng.random_range(margin..room.y - margin),
        rng.random_range(1.2..1.8),
    );
    let target = layout[rng.random_range(0..layout.len())].center;
    let yaw1 = (target.y - c1.y).atan2(target.x - c1.x) + rng.random_range(-0.35..0.35);
    let heading = rng.random_range(-PI..PI);
    let b = rng.random_range(params.baseline.0..=params.baseline.1);
    let c2 = Vec3::new(c1.x + b * heading.cos(), c1.y + b * heading.sin(), rng.random_range(1.2..1.8));
    if !(margin..=room.x - margin).contains(&c2.x) || !(margin..=room.y - margin).contains(&c2.y) {
        return None;
    }
    let yaw2 = yaw1 + rng.random_range(-params.max_relative_yaw..=params.max_relative_yaw);
    let orient = |yaw: f64, tilt: f64| UnitQuaternion::rot_z(yaw).mul(&UnitQuaternion::rot_y(tilt));
    let q1 = orient(yaw1, rng.random_range(0.0..0.25));
    let q2 = orient(yaw2, rng.random_range(0.0..0.25));
    Some((SimilarityTransform::rigid(q1, c1), SimilarityTransform::rigid(q2, c2)))
}

fn world_to_camera_point(camera: &SimilarityTransform, p: &Vec3) -> Vec3 {
    camera.rotation().inverse().rotate(&(p - camera.translation()))
}

/// Visibility sets of both views, if they pass the overlap filter: at least
/// one shared object and neither set a proper subset of the other.
fn filtered_visibility(
    frustum: &Frustum,
    layout: &[Placement],
    cams: &(SimilarityTransform, SimilarityTransform),
) -> Option<Vec<[bool; 2]>> {
    let vis: Vec<[bool; 2]> = layout
        .iter()
        .map(|p| {
            [
                frustum.contains(&world_to_camera_point(&cams.0, &p.center)),
                frustum.contains(&world_to_camera_point(&cams.1, &p.center)),
            ]
        })
        .collect();
    passes_overlap_filter(&vis).then_some(vis)
}

/// At least one object seen by both views, and each view sees something the
/// other does not unless the two sets are equal.
pub fn passes_overlap_filter(visibility: &[[bool; 2]]) -> bool {
    let s1: BTreeSet<usize> = (0..visibility.len()).filter(|&i| visibility[i][0]).collect();
    let s2: BTreeSet<usize> = (0..visibility.len()).filter(|&i| visibility[i][1]).collect();
    let proper_subset = |a: &BTreeSet<usize>, b: &BTreeSet<usize>| a.is_subset(b) && a.len() < b.len();
    s1.intersection(&s2).next().is_some() && !proper_subset(&s1, &s2) && !proper_subset(&s2, &s1)
}

fn sample_filtered(
    params: &SceneParams,
    rng: &mut impl Rng,
) -> Result<(Vec<Placement>, (SimilarityTransform, SimilarityTransform), Vec<[bool; 2]>), SyntheticError> {
    params.validate()?;
    for _ in 0..LAYOUT_ATTEMPTS {
        let Some(layout) = sample_layout(params, rng) else {
            continue;
        };
        for _ in 0..CAMERA_ATTEMPTS {
            let Some(cams) = sample_camera_pair(params, &layout, rng) else {
                continue;
            };
            if let Some(vis) = filtered_visibility(&params.frustum, &layout, &cams) {
                return Ok((layout, cams, vis));
            }
        }
    }
    Err(SyntheticError::Unsatisfiable(LAYOUT_ATTEMPTS * CAMERA_ATTEMPTS))
}

/// Relative pose of camera 2 in the camera-1 frame.
pub fn relative_pose(camera1: &SimilarityTransform, camera2: &SimilarityTransform) -> (UnitQuaternion, Vec3) {
    let inv1 = camera1.rotation().inverse();
    (
        inv1.mul(&camera2.rotation()),
        inv1.rotate(&(camera2.translation() - camera1.translation())),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    /// World-frame objects.
    pub objects: Vec<SceneObject>,
    /// Objects sharing a shape id share their voxel model.
    pub shape_ids: Vec<usize>,
    /// Camera-to-world rigid poses.
    pub camera1: SimilarityTransform,
    pub camera2: SimilarityTransform,
    pub visibility: Vec<[bool; 2]>,
    /// World indices of the objects of each view, in view order.
    pub view1: Vec<usize>,
    pub view2: Vec<usize>,
    /// Pairs of view-local indices denoting the same world object.
    pub gt_correspondence: Correspondence,
}

impl GroundTruthScene {
    pub fn relative_pose(&self) -> (UnitQuaternion, Vec3) {
        relative_pose(&self.camera1, &self.camera2)
    }

    pub fn camera(&self, view: usize) -> &SimilarityTransform {
        if view == 0 {
            &self.camera1
        } else {
            &self.camera2
        }
    }

    /// Exact objects of `view` (0 or 1) in that camera's frame.
    pub fn objects_in_view(&self, view: usize) -> Vec<SceneObject> {
        let cam = self.camera(view);
        let indices = if view == 0 { &self.view1 } else { &self.view2 };
        indices.iter().map(|&w| world_to_camera(&self.objects[w], cam)).collect()
    }

    /// Every object seen by either view, in the camera-1 frame, in world order.
    pub fn union_in_view1(&self) -> Vec<SceneObject> {
        self.objects
            .iter()
            .zip(&self.visibility)
            .filter(|(_, v)| v[0] || v[1])
            .map(|(o, _)| world_to_camera(o, &self.camera1))
            .collect()
    }
}

/// Re-expresses a world-frame object in the frame of `camera`.
pub fn world_to_camera(object: &SceneObject, camera: &SimilarityTransform) -> SceneObject {
    let inv = camera.rotation().inverse();
    let t = object.transform;
    let transform = SimilarityTransform::new(inv.mul(&t.rotation()), world_to_camera_point(camera, &t.translation()), t.scale())
        .expect("rigid re-expression keeps scale positive");
    SceneObject {
        transform,
        ..object.clone()
    }
}

/// Builds one scene with two overlapping views. Deterministic in `seed`.
pub fn generate_scene(params: &SceneParams, seed: u64) -> Result<GroundTruthScene, SyntheticError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (layout, (camera1, camera2), visibility) = sample_filtered(params, &mut rng)?;

    let mut grids: Vec<Option<Arc<VoxelGrid>>> = vec![None; layout.len()];
    let mut objects = Vec::with_capacity(layout.len());
    for (i, p) in layout.iter().enumerate() {
        let grid = grids[p.shape_id].get_or_insert_with(|| Arc::new(p.shape.voxelize(params.resolution))).clone();
        let transform = SimilarityTransform::new(UnitQuaternion::rot_z(p.yaw), p.center, p.extent).expect("extents are positive");
        objects.push(SceneObject::new(format!("obj{i}"), grid, transform, 1.0).with_category(p.shape.category()));
    }

    let view1: Vec<usize> = (0..layout.len()).filter(|&i| visibility[i][0]).collect();
    let mut view2: Vec<usize> = (0..layout.len()).filter(|&i| visibility[i][1]).collect();
    view2.shuffle(&mut rng);
    let pairs = view1
        .iter()
        .enumerate()
        .filter_map(|(a, w)| view2.iter().position(|v| v == w).map(|b| (a, b)))
        .collect();
    let gt_correspondence = Correspondence::new(pairs, view1.len(), view2.len()).expect("world indices are unique per view");

    Ok(GroundTruthScene {
        objects,
        shape_ids: layout.iter().map(|p| p.shape_id).collect(),
        camera1,
        camera2,
        visibility,
        view1,
        view2,
        gt_correspondence,
    })
}

/// Relative camera poses of `n` filtered scenes, for building bin sets.
pub fn sample_relative_poses(params: &SceneParams, n: usize, seed: u64) -> Result<Vec<(UnitQuaternion, Vec3)>, SyntheticError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| sample_filtered(params, &mut rng).map(|(_, (c1, c2), _)| relative_pose(&c1, &c2)))
        .collect()
}

/// Rotation and translation bins obtained by clustering a corpus of
/// relative poses drawn from the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseBins {
    pub rotations: RotationBinSet,
    pub translations: TranslationBinSet,
}

impl PoseBins {
    pub fn from_corpus(
        corpus: &[(UnitQuaternion, Vec3)],
        k_rot: usize,
        k_trans: usize,
        seed: u64,
    ) -> Result<Self, SyntheticError> {
        let rots: Vec<UnitQuaternion> = corpus.iter().map(|p| p.0).collect();
        let trans: Vec<Vec3> = corpus.iter().map(|p| p.1).collect();
        Ok(Self {
            rotations: spherical_kmeans_rotations(&rots, k_rot, stream_seed(seed, 0), DEFAULT_MAX_ITER)?.bins,
            translations: kmeans_translations(&trans, k_trans, stream_seed(seed, 1), DEFAULT_MAX_ITER)?.bins,
        })
    }

    /// Default-sized bins (30 rotations, 60 translations) from `corpus_size`
    /// generated poses.
    pub fn generate(params: &SceneParams, corpus_size: usize, seed: u64) -> Result<Self, SyntheticError> {
        let corpus = sample_relative_poses(params, corpus_size, stream_seed(seed, 2))?;
        Self::from_corpus(&corpus, DEFAULT_ROTATION_BINS, DEFAULT_TRANSLATION_BINS, seed)
    }
}

/// Everything the stitcher sees for one scene pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Observations {
    pub view1: Vec<SceneObject>,
    pub view2: Vec<SceneObject>,
    pub affinity: AffinityMatrix,
    pub camera: CameraPoseDistribution,
    /// Bins nearest to the true relative pose.
    pub true_rotation_bin: usize,
    pub true_translation_bin: usize,
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

fn gaussian3(rng: &mut impl Rng, sigma: f64) -> Vec3 {
    Vec3::new(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma))
}

fn perturb_object(object: &SceneObject, noise: &NoiseModel, rng: &mut impl Rng) -> SceneObject {
    let t = object.transform;
    let rotation = t.rotation().mul(&UnitQuaternion::from_rotation_vector(&gaussian3(rng, noise.rot_sigma)));
    let translation = t.translation() + gaussian3(rng, noise.trans_sigma);
    let log_scale = gaussian3(rng, noise.scale_sigma);
    let scale = t.scale().zip_map(&log_scale, |s, l| s * l.exp2());
    SceneObject {
        transform: SimilarityTransform::new(rotation, translation, scale).expect("noisy scale stays positive"),
        ..object.clone()
    }
}

/// `count` orthonormal directions in the embedding space.
fn orthonormal_bases(count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    assert!(count <= EMBEDDING_DIM, "more shape models than embedding dimensions");
    let mut bases: Vec<Vec<f64>> = Vec::with_capacity(count);
    while bases.len() < count {
        let mut v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| gaussian(rng, 1.0)).collect();
        for b in &bases {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            bases.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    bases
}

/// Moves `base` along a random tangent direction by an angle whose RMS is
/// `sigma`.
fn perturb_embedding(base: &[f64], sigma: f64, rng: &mut impl Rng) -> Embedding {
    let per_axis = sigma / ((EMBEDDING_DIM - 1) as f64).sqrt();
    let mut v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| gaussian(rng, per_axis)).collect();
    let d: f64 = v.iter().zip(base).map(|(x, y)| x * y).sum();
    v.iter_mut().zip(base).for_each(|(x, y)| *x -= d * y);
    let angle = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let values = if angle == 0.0 {
        base.to_vec()
    } else {
        base.iter().zip(&v).map(|(b, t)| angle.cos() * b + angle.sin() * t / angle).collect()
    };
    Embedding::normalized(values).expect("perturbed embedding has unit norm")
}

/// Probability vector over bins: the peak bin gets `(1 + acc)/2`, the rest is
/// spread over the other bins with weights `exp(−d(bin, truth)/decay)`.
fn binned_distribution(distances: &[f64], truth: usize, acc: f64, decay: f64, rng: &mut impl Rng) -> Vec<f64> {
    let weights: Vec<f64> = distances.iter().map(|d| (-d / decay).exp()).collect();
    let n = weights.len();
    if n == 1 {
        return vec![1.0];
    }
    let peak = if rng.random_bool(acc) {
        truth
    } else {
        let others: Vec<usize> = (0..n).filter(|&i| i != truth).collect();
        let dist = rand::distr::weighted::WeightedIndex::new(others.iter().map(|&i| weights[i].max(f64::MIN_POSITIVE)))
            .expect("positive weights");
        others[dist.sample(rng)]
    };
    let peak_mass = 0.5 * (1.0 + acc);
    let rest: f64 = (0..n).filter(|&i| i != peak).map(|i| weights[i]).sum();
    (0..n)
        .map(|i| {
            if i == peak {
                peak_mass
            } else if rest > 0.0 {
                (1.0 - peak_mass) * weights[i] / rest
            } else {
                (1.0 - peak_mass) / (n - 1) as f64
            }
        })
        .collect()
}

/// Turns a ground-truth scene into noisy per-view observations.
///
/// Objects are expressed in each camera's frame and perturbed by `noise`.
/// Objects sharing a shape model share a base embedding direction, and
/// different models get orthogonal directions. Each view perturbs its copy
/// independently. The camera distribution is built from `bins`.
pub fn corrupt_to_observations(
    scene: &GroundTruthScene,
    noise: &NoiseModel,
    bins: &PoseBins,
    seed: u64,
) -> Result<Observations, SyntheticError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let models = scene.shape_ids.iter().max().map_or(0, |m| m + 1);
    let bases = orthonormal_bases(models, &mut rng);

    let mut views: [Vec<SceneObject>; 2] = [Vec::new(), Vec::new()];
    let mut embeddings: [Vec<Embedding>; 2] = [Vec::new(), Vec::new()];
    for (v, indices) in [&scene.view1, &scene.view2].into_iter().enumerate() {
        let cam = scene.camera(v);
        let prefix = if v == 0 { "a" } else { "b" };
        for (k, &w) in indices.iter().enumerate() {
            let e = perturb_embedding(&bases[scene.shape_ids[w]], noise.embedding_noise, &mut rng);
            let mut o = perturb_object(&world_to_camera(&scene.objects[w], cam), noise, &mut rng);
            o.id = format!("{prefix}{k}");
            o.score = rng.random_range(0.5..1.0);
            o.embedding = Some(e.clone());
            embeddings[v].push(e);
            views[v].push(o);
        }
    }
    let affinity = build_affinity(&embeddings[0], &embeddings[1], DEFAULT_AFFINITY_SCALE)?;

    let (q, t) = scene.relative_pose();
    let true_rotation_bin = bins.rotations.nearest(&q);
    let true_translation_bin = bins.translations.nearest(&t);
    let rot_d: Vec<f64> = bins.rotations.centroids().iter().map(|c| rotation_geodesic(c, &q)).collect();
    let trans_d: Vec<f64> = bins.translations.centroids().iter().map(|c| (c - t).norm()).collect();
    let rotation_probs = binned_distribution(&rot_d, true_rotation_bin, noise.pose_top1_accuracy, ROTATION_DECAY, &mut rng);
    let translation_probs = binned_distribution(&trans_d, true_translation_bin, noise.pose_top1_accuracy, TRANSLATION_DECAY, &mut rng);
    let camera = CameraPoseDistribution::normalized(
        bins.rotations.clone(),
        rotation_probs,
        bins.translations.clone(),
        translation_probs,
        1e-9,
    )?;
    let [view1, view2] = views;
    Ok(Observations {
        view1,
        view2,
        affinity,
        camera,
        true_rotation_bin,
        true_translation_bin,
    })
}

/// A generated scene with its observations, using independent streams of
/// `seed` for generation and corruption.
pub fn generate_pair(
    params: &SceneParams,
    noise: &NoiseModel,
    bins: &PoseBins,
    seed: u64,
) -> Result<(GroundTruthScene, Observations), SyntheticError> {
    let scene = generate_scene(params, stream_seed(seed, 0))?;
    let obs = corrupt_to_observations(&scene, noise, bins, stream_seed(seed, 1))?;
    Ok((scene, obs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose_space::top_k_hypotheses;

    fn small_bins() -> PoseBins {
        PoseBins::generate(&SceneParams::default(), 400, 7).unwrap()
    }

    fn top1(p: &[f64]) -> usize {
        let mut best = 0;
        for i in 1..p.len() {
            if p[i] > p[best] {
                best = i;
            }
        }
        best
    }

    #[test]
    fn deterministic() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(&p, 3).unwrap(), generate_scene(&p, 3).unwrap());
        assert_ne!(generate_scene(&p, 3).unwrap(), generate_scene(&p, 4).unwrap());
    }

    #[test]
    fn scenes_pass_overlap_filter() {
        let p = SceneParams::default();
        for seed in 0..30 {
            let s = generate_scene(&p, seed).unwrap();
            assert!(passes_overlap_filter(&s.visibility));
            assert!(!s.gt_correspondence.is_empty());
            for &(a, b) in s.gt_correspondence.pairs() {
                let w = s.view1[a];
                assert_eq!(s.view2[b], w);
                assert_eq!(s.visibility[w], [true, true]);
            }
            let shared = s.visibility.iter().filter(|v| v[0] && v[1]).count();
            assert_eq!(s.gt_correspondence.len(), shared);
            assert!(s.view1.len() <= 10 && s.view2.len() <= 10);
        }
    }

    #[test]
    fn overlap_filter_rule() {
        assert!(passes_overlap_filter(&[[true, true]]));
        assert!(!passes_overlap_filter(&[[true, false], [false, true]]));
        assert!(!passes_overlap_filter(&[[true, true], [true, false]]));
        assert!(passes_overlap_filter(&[[true, true], [true, false], [false, true]]));
    }

    #[test]
    fn single_object_gives_one_pair() {
        let p = SceneParams::default().with_objects(1, 1);
        let s = generate_scene(&p, 11).unwrap();
        assert_eq!(s.gt_correspondence.pairs(), &[(0, 0)]);
    }

    #[test]
    fn duplicates_share_grids() {
        let p = SceneParams {
            duplicate_shape_prob: 1.0,
            ..SceneParams::default().with_objects(3, 3)
        };
        let s = generate_scene(&p, 5).unwrap();
        assert!(Arc::ptr_eq(&s.objects[0].voxels, &s.objects[1].voxels));
        assert!(Arc::ptr_eq(&s.objects[1].voxels, &s.objects[2].voxels));
    }

    #[test]
    fn relative_pose_maps_view2_to_view1() {
        let s = generate_scene(&SceneParams::default(), 2).unwrap();
        let (q, t) = s.relative_pose();
        let v1 = s.objects_in_view(0);
        let v2 = s.objects_in_view(1);
        for &(a, b) in s.gt_correspondence.pairs() {
            let mapped = q.rotate(&v2[b].transform.translation()) + t;
            assert!((mapped - v1[a].transform.translation()).norm() < 1e-9);
            assert!(rotation_geodesic(&q.mul(&v2[b].transform.rotation()), &v1[a].transform.rotation()) < 1e-6);
        }
    }

    #[test]
    fn shapes_voxelize() {
        let l = PrimitiveShape::LShape { arm: 0.5 }.voxelize(8);
        assert_eq!(l.count_occupied(0.5), 8 * (64 - 16));
        let t = PrimitiveShape::Table { top: 0.25, leg: 0.25 }.voxelize(8);
        assert_eq!(t.count_occupied(0.5), 2 * 64 + 6 * 16);
        assert_eq!(PrimitiveShape::Box.voxelize(4).count_occupied(0.5), 64);
    }

    #[test]
    fn zero_noise_observations() {
        let bins = small_bins();
        let (scene, obs) = generate_pair(&SceneParams::default(), &NoiseModel::zero(), &bins, 9).unwrap();
        let sig5 = 1.0 / (1.0 + (-5.0f64).exp());
        for &(a, b) in scene.gt_correspondence.pairs() {
            assert!((obs.affinity.get(a, b) - sig5).abs() < 1e-12);
        }
        let h = top_k_hypotheses(&obs.camera, 1, 1)[0];
        assert_eq!(h.rotation_bin, bins.rotations.nearest(&scene.relative_pose().0));
        assert_eq!(h.translation_bin, bins.translations.nearest(&scene.relative_pose().1));
        for (o, exact) in obs.view1.iter().zip(scene.objects_in_view(0)) {
            assert_eq!(o.transform, exact.transform);
            assert_eq!(o.voxels, exact.voxels);
        }
    }

    #[test]
    fn embedding_noise_keeps_pairs_ahead() {
        let bins = small_bins();
        let noise = NoiseModel {
            embedding_noise: 0.5,
            ..NoiseModel::zero()
        };
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for seed in 0..100 {
            let (scene, obs) = generate_pair(&SceneParams::default(), &noise, &bins, seed).unwrap();
            for i in 0..obs.affinity.n() {
                for j in 0..obs.affinity.m() {
                    let same_model = scene.shape_ids[scene.view1[i]] == scene.shape_ids[scene.view2[j]];
                    if scene.gt_correspondence.contains(i, j) {
                        pos.push(obs.affinity.get(i, j));
                    } else if !same_model {
                        neg.push(obs.affinity.get(i, j));
                    }
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&pos) > mean(&neg) + 0.3);
        let min_pos = pos.iter().cloned().fold(f64::INFINITY, f64::min);
        let above = neg.iter().filter(|n| **n < min_pos).count() as f64 / neg.len() as f64;
        assert!(above > 0.9, "{above}");
    }

    #[test]
    fn top1_accuracy_is_calibrated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let distances: Vec<f64> = (0..30).map(|i| (i as f64 - 7.0).abs() * 0.2).collect();
        let hits = (0..1000)
            .filter(|_| {
                let p = binned_distribution(&distances, 7, 0.4, ROTATION_DECAY, &mut rng);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                top1(&p) == 7
            })
            .count();
        assert!((360..=440).contains(&hits), "{hits}");
    }

    #[test]
    fn params_are_validated() {
        assert!(SceneParams::default().with_objects(0, 3).validate().is_err());
        assert!(generate_scene(&SceneParams::default().with_objects(4, 2), 0).is_err());
        let bad = NoiseModel {
            pose_top1_accuracy: 1.5,
            ..NoiseModel::zero()
        };
        assert!(bad.validate().is_err());
    }
}
