//! Reports written by `stitch` and `evaluate`.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use assoc3d::evaluation::{DetectionAp, DetectionThresholds, ErrorStats, PoseErrorSummary};
use assoc3d::pose_space::PoseHypothesis;
use assoc3d::stitcher::{ObjectiveTerms, StitchResult, StitchWeights};
use assoc3d::UnitQuaternion;

use crate::format::{FormatError, ObjectRecord, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
    pub rotation_bin: usize,
    pub translation_bin: usize,
    pub rotation_prob: f64,
    pub translation_prob: f64,
}

impl PoseRecord {
    pub fn from_hypothesis(h: &PoseHypothesis) -> Self {
        Self {
            rotation_wxyz: h.rotation.to_wxyz(),
            translation: [h.translation.x, h.translation.y, h.translation.z],
            rotation_bin: h.rotation_bin,
            translation_bin: h.translation_bin,
            rotation_prob: h.rotation_prob,
            translation_prob: h.translation_prob,
        }
    }

    pub fn to_hypothesis(&self) -> Result<PoseHypothesis, FormatError> {
        let q = UnitQuaternion::from_wxyz(self.rotation_wxyz).map_err(|e| FormatError::new("pose.rotation_wxyz", e))?;
        let t = self.translation;
        Ok(PoseHypothesis {
            rotation: q,
            translation: assoc3d::Vec3::new(t[0], t[1], t[2]),
            rotation_prob: self.rotation_prob,
            translation_prob: self.translation_prob,
            rotation_bin: self.rotation_bin,
            translation_bin: self.translation_bin,
        })
    }
}

/// Objective terms under readable names.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermsRecord {
    pub distance: f64,
    pub rotation_prior: f64,
    pub translation_prior: f64,
    pub similarity: f64,
    pub unmatched: f64,
}

impl TermsRecord {
    pub fn raw(t: &ObjectiveTerms) -> Self {
        Self {
            distance: t.l_d,
            rotation_prior: t.l_p_rot,
            translation_prior: t.l_p_trans,
            similarity: t.l_s,
            unmatched: t.l_u,
        }
    }

    /// Each term multiplied by its weight; these add up to the objective.
    pub fn weighted(t: &ObjectiveTerms, w: &StitchWeights) -> Self {
        Self {
            distance: t.l_d,
            rotation_prior: w.lambda_p_rot * t.l_p_rot,
            translation_prior: w.lambda_p_trans * t.l_p_trans,
            similarity: w.lambda_s * t.l_s,
            unmatched: w.lambda_u * t.l_u,
        }
    }

    pub fn sum(&self) -> f64 {
        self.distance + self.rotation_prior + self.translation_prior + self.similarity + self.unmatched
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightsRecord {
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub lambda_p_rot: f64,
    pub lambda_p_trans: f64,
    pub k_samples: usize,
    pub affinity_threshold: f64,
}

impl From<&StitchWeights> for WeightsRecord {
    fn from(w: &StitchWeights) -> Self {
        Self {
            lambda_s: w.lambda_s,
            lambda_u: w.lambda_u,
            lambda_p_rot: w.lambda_p_rot,
            lambda_p_trans: w.lambda_p_trans,
            k_samples: w.k_samples,
            affinity_threshold: w.affinity_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchReport {
    pub version: u32,
    pub seed: u64,
    pub wall_clock_ms: f64,
    pub pose: PoseRecord,
    pub hypothesis_index: usize,
    pub sample_index: usize,
    pub candidates_evaluated: usize,
    pub correspondence: Vec<[usize; 2]>,
    pub objective: f64,
    pub terms: TermsRecord,
    pub contributions: TermsRecord,
    pub weights: WeightsRecord,
    /// Fused scene in the view-1 frame.
    pub merged: Vec<ObjectRecord>,
}

impl StitchReport {
    pub fn from_result(r: &StitchResult, wall_clock_ms: f64) -> Self {
        Self {
            version: FORMAT_VERSION,
            seed: r.seed,
            wall_clock_ms,
            pose: PoseRecord::from_hypothesis(&r.pose),
            hypothesis_index: r.hypothesis_index,
            sample_index: r.sample_index,
            candidates_evaluated: r.candidates_evaluated,
            correspondence: r.correspondence.pairs().iter().map(|&(i, j)| [i, j]).collect(),
            objective: r.objective,
            terms: TermsRecord::raw(&r.terms),
            contributions: TermsRecord::weighted(&r.terms, &r.weights),
            weights: WeightsRecord::from(&r.weights),
            merged: r.merged.iter().map(ObjectRecord::from_object).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsRecord {
    pub trans_max_m: f64,
    pub scale_max: f64,
    pub rot_max_deg: f64,
    pub fscore_min: f64,
    pub fscore_tau: f64,
}

impl From<&DetectionThresholds> for ThresholdsRecord {
    fn from(t: &DetectionThresholds) -> Self {
        Self {
            trans_max_m: t.trans_max,
            scale_max: t.scale_max,
            rot_max_deg: t.rot_max.to_degrees(),
            fscore_min: t.fscore_min,
            fscore_tau: t.fscore_tau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApRecord {
    pub all: f64,
    pub translation: f64,
    pub scale: f64,
    pub rotation: f64,
    pub shape: f64,
}

impl From<&DetectionAp> for ApRecord {
    fn from(a: &DetectionAp) -> Self {
        Self {
            all: a.all,
            translation: a.translation,
            scale: a.scale,
            rotation: a.rotation,
            shape: a.shape,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSection {
    pub predictions: usize,
    pub ground_truth: usize,
    pub ap: ApRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSection {
    pub pairs: usize,
    pub positives: usize,
    /// Confidence `γ·A`, γ = 1 on pairs kept by the stitcher, 0.5 otherwise.
    pub ap_gamma: f64,
    /// Confidence `A` alone.
    pub ap_affinity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsRecord {
    pub median: f64,
    pub mean: f64,
    pub within: f64,
    pub cutoff: f64,
}

impl StatsRecord {
    fn scaled(s: &ErrorStats, k: f64) -> Self {
        Self {
            median: s.median * k,
            mean: s.mean * k,
            within: s.within,
            cutoff: s.cutoff * k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSection {
    pub count: usize,
    pub translation_m: StatsRecord,
    pub rotation_deg: StatsRecord,
}

impl From<&PoseErrorSummary> for PoseSection {
    fn from(p: &PoseErrorSummary) -> Self {
        Self {
            count: p.count,
            translation_m: StatsRecord::scaled(&p.translation, 1.0),
            rotation_deg: StatsRecord::scaled(&p.rotation, 1f64.to_degrees()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scenes: usize,
    pub thresholds: ThresholdsRecord,
    pub detection: DetectionSection,
    pub correspondence: Option<CorrespondenceSection>,
    pub pose: Option<PoseSection>,
}

impl EvaluationReport {
    /// Plain-text rendering; numbers use the same shortest round-trip
    /// formatting as the JSON output.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k:<32} {v}");
        };
        line("scenes", self.scenes.to_string());
        let d = &self.detection;
        line("detection.predictions", d.predictions.to_string());
        line("detection.ground_truth", d.ground_truth.to_string());
        line("detection.ap.all", d.ap.all.to_string());
        line("detection.ap.translation", d.ap.translation.to_string());
        line("detection.ap.scale", d.ap.scale.to_string());
        line("detection.ap.rotation", d.ap.rotation.to_string());
        line("detection.ap.shape", d.ap.shape.to_string());
        match &self.correspondence {
            Some(c) => {
                line("correspondence.pairs", c.pairs.to_string());
                line("correspondence.positives", c.positives.to_string());
                line("correspondence.ap_gamma", c.ap_gamma.to_string());
                line("correspondence.ap_affinity", c.ap_affinity.to_string());
            }
            None => line("correspondence", "n/a".into()),
        }
        match &self.pose {
            Some(p) => {
                line("pose.count", p.count.to_string());
                for (name, st) in [("translation_m", &p.translation_m), ("rotation_deg", &p.rotation_deg)] {
                    line(&format!("pose.{name}.median"), st.median.to_string());
                    line(&format!("pose.{name}.mean"), st.mean.to_string());
                    line(&format!("pose.{name}.within"), st.within.to_string());
                    line(&format!("pose.{name}.cutoff"), st.cutoff.to_string());
                }
            }
            None => line("pose", "n/a".into()),
        }
        s
    }
}
