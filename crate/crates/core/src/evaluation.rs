//! Scene-level evaluation.
//!
//! - 3D detection: a prediction is a true positive when translation, scale,
//!   rotation and shape errors all pass their thresholds; AP is the area
//!   under the all-point interpolated precision/recall curve.
//! - Correspondence: every cross-view pair is a binary retrieval item scored
//!   by `γ·A_ij`, with `γ = 1` for pairs the stitcher kept and `0.5` otherwise.
//! - Relative pose: translation and geodesic rotation error statistics.

use std::f64::consts::PI;

use crate::affinity::AffinityMatrix;
use crate::geometry::{fscore, rotation_geodesic, scale_error, EdgeParams, GeometryError, PointCloud, SceneObject, UnitQuaternion, Vec3};
use crate::pose_space::PoseHypothesis;
use crate::stitcher::Correspondence;

/// Confidence multiplier for pairs the stitcher did not select.
pub const UNSELECTED_PAIR_GAMMA: f64 = 0.5;
pub const POSE_TRANSLATION_CUTOFF: f64 = 1.0;
pub const POSE_ROTATION_CUTOFF: f64 = PI / 6.0;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum EvalError {
    #[error("ground truth is empty")]
    NoGroundTruth,
    #[error("no positive pairs: correspondence AP is undefined")]
    NoPositives,
    #[error("length mismatch: {0} predictions vs {1} ground-truth entries")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionThresholds {
    /// meters
    pub trans_max: f64,
    /// mean |log₂ ratio|
    pub scale_max: f64,
    /// radians
    pub rot_max: f64,
    pub fscore_min: f64,
    /// unit-cube units
    pub fscore_tau: f64,
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self {
            trans_max: 1.0,
            scale_max: 0.2,
            rot_max: PI / 6.0,
            fscore_min: 0.25,
            fscore_tau: 0.05,
        }
    }
}

impl DetectionThresholds {
    pub fn validate(&self) -> Result<(), EvalError> {
        let all = [self.trans_max, self.scale_max, self.rot_max, self.fscore_min, self.fscore_tau];
        if all.iter().any(|v| !(*v > 0.0)) {
            return Err(EvalError::ShapeMismatch("detection thresholds must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MetricFlags {
    pub trans: bool,
    pub scale: bool,
    pub rot: bool,
    pub shape: bool,
}

impl MetricFlags {
    pub fn all(&self) -> bool {
        self.trans && self.scale && self.rot && self.shape
    }
}

/// Raw errors of a prediction against its matched ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectErrors {
    pub translation: f64,
    pub scale: f64,
    pub rotation: f64,
    pub fscore: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub confidence: f64,
    pub is_true_positive: bool,
    pub per_metric_pass: MetricFlags,
    /// Index into the ground-truth list, `None` for an unmatched prediction.
    pub gt_index: Option<usize>,
    pub errors: Option<ObjectErrors>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    All,
    Translation,
    Scale,
    Rotation,
    Shape,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::All, Metric::Translation, Metric::Scale, Metric::Rotation, Metric::Shape];

    pub fn name(&self) -> &'static str {
        match self {
            Metric::All => "all",
            Metric::Translation => "translation",
            Metric::Scale => "scale",
            Metric::Rotation => "rotation",
            Metric::Shape => "shape",
        }
    }

    fn passes(&self, r: &DetectionRecord) -> bool {
        let f = &r.per_metric_pass;
        match self {
            Metric::All => r.is_true_positive,
            Metric::Translation => f.trans,
            Metric::Scale => f.scale,
            Metric::Rotation => f.rot,
            Metric::Shape => f.shape,
        }
    }
}

fn categories_compatible(a: &SceneObject, b: &SceneObject) -> bool {
    match (&a.category, &b.category) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    }
}

/// Per-object errors; shape compares unit-cube edge clouds of both grids.
pub fn object_errors(
    pred: &SceneObject,
    gt: &SceneObject,
    gt_cloud: &PointCloud,
    tau: f64,
    edge: &EdgeParams,
) -> Result<ObjectErrors, EvalError> {
    let (p, g) = (pred.transform, gt.transform);
    let shape = match edge.unit_cloud(&pred.voxels) {
        Ok(cloud) => fscore(&cloud, gt_cloud, tau)?,
        Err(GeometryError::EmptyCloud) => 0.0,
        Err(e) => return Err(e.into()),
    };
    Ok(ObjectErrors {
        translation: (p.translation() - g.translation()).norm(),
        scale: scale_error(&p.scale(), &g.scale())?,
        rotation: rotation_geodesic(&p.rotation(), &g.rotation()),
        fscore: shape,
    })
}

/// Greedy detection matching.
///
/// Predictions are visited by descending confidence (stable on ties). Each
/// claims the unclaimed ground-truth object nearest in translation, restricted
/// to the same category when both sides carry one. Records come back in the
/// visiting order; predictions left without a partner are false positives.
pub fn match_and_score(
    predictions: &[SceneObject],
    ground_truth: &[SceneObject],
    th: &DetectionThresholds,
    edge: &EdgeParams,
) -> Result<Vec<DetectionRecord>, EvalError> {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].score.total_cmp(&predictions[a].score));
    let gt_clouds: Vec<PointCloud> = ground_truth
        .iter()
        .map(|g| edge.unit_cloud(&g.voxels))
        .collect::<Result<_, _>>()?;
    let mut claimed = vec![false; ground_truth.len()];
    let mut records = Vec::with_capacity(predictions.len());
    for &p in &order {
        let pred = &predictions[p];
        let t = pred.transform.translation();
        let nearest = ground_truth
            .iter()
            .enumerate()
            .filter(|(g, gt)| !claimed[*g] && categories_compatible(pred, gt))
            .map(|(g, gt)| (g, (gt.transform.translation() - t).norm()))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            });
        let record = match nearest {
            None => DetectionRecord {
                confidence: pred.score,
                is_true_positive: false,
                per_metric_pass: MetricFlags::default(),
                gt_index: None,
                errors: None,
            },
            Some((g, _)) => {
                claimed[g] = true;
                let e = object_errors(pred, &ground_truth[g], &gt_clouds[g], th.fscore_tau, edge)?;
                let flags = MetricFlags {
                    trans: e.translation <= th.trans_max,
                    scale: e.scale <= th.scale_max,
                    rot: e.rotation <= th.rot_max,
                    shape: e.fscore >= th.fscore_min,
                };
                DetectionRecord {
                    confidence: pred.score,
                    is_true_positive: flags.all(),
                    per_metric_pass: flags,
                    gt_index: Some(g),
                    errors: Some(e),
                }
            }
        };
        records.push(record);
    }
    Ok(records)
}

/// All-point interpolated AP of a scored list.
///
/// Items are ranked by descending score, ties kept in input order. The
/// precision curve is replaced by its running maximum from the right before
/// integrating over recall.
pub fn ranked_average_precision(scored: &[(f64, bool)], num_positives: usize) -> f64 {
    if num_positives == 0 {
        return 0.0;
    }
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|&a, &b| scored[b].0.total_cmp(&scored[a].0));
    let mut precision = Vec::with_capacity(order.len());
    let mut hits = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &k) in order.iter().enumerate() {
        if scored[k].1 {
            tp += 1;
        }
        precision.push(tp as f64 / (rank + 1) as f64);
        hits.push(scored[k].1);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let step = 1.0 / num_positives as f64;
    precision
        .iter()
        .zip(&hits)
        .filter(|(_, hit)| **hit)
        .map(|(p, _)| p * step)
        .sum()
}

/// Detection AP requiring every metric to pass.
pub fn average_precision(records: &[DetectionRecord], num_ground_truth: usize) -> Result<f64, EvalError> {
    average_precision_for(records, num_ground_truth, Metric::All)
}

/// Detection AP with only `metric` required to pass.
pub fn average_precision_for(records: &[DetectionRecord], num_ground_truth: usize, metric: Metric) -> Result<f64, EvalError> {
    if num_ground_truth == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let scored: Vec<(f64, bool)> = records.iter().map(|r| (r.confidence, metric.passes(r))).collect();
    Ok(ranked_average_precision(&scored, num_ground_truth))
}

/// AP for every [`Metric`], in [`Metric::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionAp {
    pub all: f64,
    pub translation: f64,
    pub scale: f64,
    pub rotation: f64,
    pub shape: f64,
}

impl DetectionAp {
    pub fn from_records(records: &[DetectionRecord], num_ground_truth: usize) -> Result<Self, EvalError> {
        let ap = |m| average_precision_for(records, num_ground_truth, m);
        Ok(Self {
            all: ap(Metric::All)?,
            translation: ap(Metric::Translation)?,
            scale: ap(Metric::Scale)?,
            rotation: ap(Metric::Rotation)?,
            shape: ap(Metric::Shape)?,
        })
    }

    pub fn get(&self, m: Metric) -> f64 {
        match m {
            Metric::All => self.all,
            Metric::Translation => self.translation,
            Metric::Scale => self.scale,
            Metric::Rotation => self.rotation,
            Metric::Shape => self.shape,
        }
    }
}

/// `γ·A_ij` with `γ = 1` on predicted pairs and 0.5 elsewhere.
pub fn correspondence_confidence(a: &AffinityMatrix, predicted: &Correspondence) -> Result<AffinityMatrix, EvalError> {
    if let Some(&(i, j)) = predicted.pairs().iter().find(|(i, j)| *i >= a.n() || *j >= a.m()) {
        return Err(EvalError::ShapeMismatch(format!("pair ({i}, {j}) outside {}×{}", a.n(), a.m())));
    }
    let mut values = Vec::with_capacity(a.n() * a.m());
    for i in 0..a.n() {
        for j in 0..a.m() {
            let gamma = if predicted.contains(i, j) { 1.0 } else { UNSELECTED_PAIR_GAMMA };
            values.push(gamma * a.get(i, j));
        }
    }
    Ok(AffinityMatrix::from_row_major(a.n(), a.m(), values).expect("scaled affinities stay in [0, 1]"))
}

fn pair_items(confidences: &AffinityMatrix, gt: &Correspondence) -> Result<Vec<(f64, bool)>, EvalError> {
    if let Some(&(i, j)) = gt.pairs().iter().find(|(i, j)| *i >= confidences.n() || *j >= confidences.m()) {
        return Err(EvalError::ShapeMismatch(format!(
            "ground-truth pair ({i}, {j}) outside {}×{}",
            confidences.n(),
            confidences.m()
        )));
    }
    let mut items = Vec::with_capacity(confidences.n() * confidences.m());
    for i in 0..confidences.n() {
        for j in 0..confidences.m() {
            items.push((confidences.get(i, j), gt.contains(i, j)));
        }
    }
    Ok(items)
}

/// Binary AP over all `N·M` pairs (ties in row-major order).
pub fn correspondence_ap(confidences: &AffinityMatrix, gt: &Correspondence) -> Result<f64, EvalError> {
    pooled_correspondence_ap(std::iter::once((confidences, gt)))
}

/// Correspondence AP with the pairs of several scene pairs ranked together.
pub fn pooled_correspondence_ap<'a>(
    items: impl IntoIterator<Item = (&'a AffinityMatrix, &'a Correspondence)>,
) -> Result<f64, EvalError> {
    let mut all = Vec::new();
    let mut positives = 0;
    for (conf, gt) in items {
        all.extend(pair_items(conf, gt)?);
        positives += gt.len();
    }
    if positives == 0 {
        return Err(EvalError::NoPositives);
    }
    Ok(ranked_average_precision(&all, positives))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub median: f64,
    pub mean: f64,
    /// Fraction of errors at or below the cutoff, in `[0, 1]`.
    pub within: f64,
    pub cutoff: f64,
}

impl ErrorStats {
    pub fn from_errors(errors: &[f64], cutoff: f64) -> Self {
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            median,
            mean: sorted.iter().sum::<f64>() / n as f64,
            within: sorted.iter().filter(|e| **e <= cutoff).count() as f64 / n as f64,
            cutoff,
        }
    }
}

/// Relative-pose error table: translation in meters, rotation in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseErrorSummary {
    pub translation: ErrorStats,
    pub rotation: ErrorStats,
    pub count: usize,
}

pub fn pose_errors(predicted: &[PoseHypothesis], gt: &[(UnitQuaternion, Vec3)]) -> Result<Vec<(f64, f64)>, EvalError> {
    if predicted.len() != gt.len() {
        return Err(EvalError::LengthMismatch(predicted.len(), gt.len()));
    }
    Ok(predicted
        .iter()
        .zip(gt)
        .map(|(p, (q, t))| ((p.translation - t).norm(), rotation_geodesic(&p.rotation, q)))
        .collect())
}

pub fn relative_pose_stats(predicted: &[PoseHypothesis], gt: &[(UnitQuaternion, Vec3)]) -> Result<PoseErrorSummary, EvalError> {
    if predicted.is_empty() {
        return Err(EvalError::NoGroundTruth);
    }
    let errors = pose_errors(predicted, gt)?;
    let trans: Vec<f64> = errors.iter().map(|e| e.0).collect();
    let rot: Vec<f64> = errors.iter().map(|e| e.1).collect();
    Ok(PoseErrorSummary {
        translation: ErrorStats::from_errors(&trans, POSE_TRANSLATION_CUTOFF),
        rotation: ErrorStats::from_errors(&rot, POSE_ROTATION_CUTOFF),
        count: errors.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{SimilarityTransform, VoxelGrid};
    use std::sync::Arc;

    fn object(t: Vec3, score: f64) -> SceneObject {
        let grid = Arc::new(VoxelGrid::from_fn(8, |x, y, z| x > 1 && x < 6 && y > 2 && z < 5));
        SceneObject::new("o", grid, SimilarityTransform::rigid(UnitQuaternion::identity(), t), score)
    }

    fn rec(confidence: f64, tp: bool) -> DetectionRecord {
        DetectionRecord {
            confidence,
            is_true_positive: tp,
            per_metric_pass: MetricFlags {
                trans: tp,
                scale: tp,
                rot: tp,
                shape: tp,
            },
            gt_index: None,
            errors: None,
        }
    }

    #[test]
    fn exact_prediction_passes_everything() {
        let gt = vec![object(Vec3::zeros(), 1.0)];
        let r = match_and_score(&gt, &gt, &DetectionThresholds::default(), &EdgeParams::default()).unwrap();
        assert_eq!(r.len(), 1);
        assert!(r[0].is_true_positive);
        assert!(r[0].per_metric_pass.all());
        assert_eq!(r[0].errors.unwrap().fscore, 1.0);
    }

    #[test]
    fn distant_prediction_fails_translation_only() {
        let gt = vec![object(Vec3::zeros(), 1.0)];
        let pred = vec![object(Vec3::new(2.0, 0.0, 0.0), 0.9)];
        let r = match_and_score(&pred, &gt, &DetectionThresholds::default(), &EdgeParams::default()).unwrap();
        let f = r[0].per_metric_pass;
        assert!(!f.trans && f.scale && f.rot && f.shape);
        assert!(!r[0].is_true_positive);
    }

    #[test]
    fn second_claimant_is_a_false_positive() {
        let gt = vec![object(Vec3::zeros(), 1.0)];
        let pred = vec![object(Vec3::new(0.1, 0.0, 0.0), 0.6), object(Vec3::new(0.2, 0.0, 0.0), 0.8)];
        let r = match_and_score(&pred, &gt, &DetectionThresholds::default(), &EdgeParams::default()).unwrap();
        assert_eq!(r[0].confidence, 0.8);
        assert!(r[0].is_true_positive);
        assert_eq!(r[1].gt_index, None);
        assert!(!r[1].is_true_positive);
    }

    #[test]
    fn categories_restrict_matching() {
        let gt = vec![object(Vec3::zeros(), 1.0).with_category("chair"), object(Vec3::new(3.0, 0.0, 0.0), 1.0).with_category("table")];
        let pred = vec![object(Vec3::zeros(), 0.9).with_category("table")];
        let r = match_and_score(&pred, &gt, &DetectionThresholds::default(), &EdgeParams::default()).unwrap();
        assert_eq!(r[0].gt_index, Some(1));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[rec(0.9, true)], 1).unwrap(), 1.0);
        assert_eq!(average_precision(&[rec(0.9, false)], 1).unwrap(), 0.0);
        let ap = average_precision(&[rec(0.9, true), rec(0.8, false), rec(0.7, true)], 2).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[], 0), Err(EvalError::NoGroundTruth));
    }

    #[test]
    fn correspondence_confidence_examples() {
        let a = AffinityMatrix::from_row_major(1, 2, vec![0.9, 0.8]).unwrap();
        let c = Correspondence::new(vec![(0, 0)], 1, 2).unwrap();
        let conf = correspondence_confidence(&a, &c).unwrap();
        assert_eq!(conf.values(), &[0.9, 0.4]);
        let none = correspondence_confidence(&a, &Correspondence::empty()).unwrap();
        assert_eq!(none.values(), &[0.45, 0.4]);
    }

    #[test]
    fn correspondence_ap_examples() {
        let gt = Correspondence::new(vec![(0, 0), (1, 1)], 2, 2).unwrap();
        let exact = AffinityMatrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(correspondence_ap(&exact, &gt).unwrap(), 1.0);
        let uniform = AffinityMatrix::from_row_major(2, 5, vec![0.3; 10]).unwrap();
        let first = Correspondence::new(vec![(0, 0)], 2, 5).unwrap();
        let last = Correspondence::new(vec![(1, 4)], 2, 5).unwrap();
        assert_eq!(correspondence_ap(&uniform, &first).unwrap(), 1.0);
        assert!((correspondence_ap(&uniform, &last).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(correspondence_ap(&uniform, &Correspondence::empty()), Err(EvalError::NoPositives));
    }

    #[test]
    fn pose_stats_examples() {
        let q = UnitQuaternion::identity();
        let exact = vec![PoseHypothesis::exact(q, Vec3::zeros()); 3];
        let s = relative_pose_stats(&exact, &[(q, Vec3::zeros()); 3]).unwrap();
        assert_eq!((s.translation.median, s.rotation.median), (0.0, 0.0));
        assert_eq!((s.translation.within, s.rotation.within), (1.0, 1.0));

        let preds = vec![PoseHypothesis::exact(q, Vec3::new(0.5, 0.0, 0.0)), PoseHypothesis::exact(q, Vec3::new(1.5, 0.0, 0.0))];
        let s = relative_pose_stats(&preds, &[(q, Vec3::zeros()); 2]).unwrap();
        assert_eq!(s.translation.median, 1.0);
        assert_eq!(s.translation.within, 0.5);

        let turned = vec![PoseHypothesis::exact(UnitQuaternion::rot_z(PI / 4.0), Vec3::zeros())];
        let s = relative_pose_stats(&turned, &[(q, Vec3::zeros())]).unwrap();
        assert_eq!(s.rotation.within, 0.0);
        assert_eq!(relative_pose_stats(&turned, &[]).unwrap_err(), EvalError::LengthMismatch(1, 0));
    }
}
