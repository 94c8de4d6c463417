//! JSON interchange formats.
//!
//! Quaternions are stored as `[w, x, y, z]`. Voxel grids are binarized at 0.5
//! and bit-packed: bit `b` (least significant first) of byte `k` holds the
//! cell with linear index `8k + b`, cells ordered `x·R² + y·R + z`; the bytes
//! are then base64-encoded (standard alphabet, padded).

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use assoc3d::affinity::{build_affinity, AffinityMatrix, DEFAULT_AFFINITY_SCALE};
use assoc3d::geometry::{Embedding, SceneObject, SimilarityTransform, UnitQuaternion, Vec3, VoxelGrid, EMBEDDING_DIM};
use assoc3d::pose_space::{CameraPoseDistribution, RotationBinSet, TranslationBinSet};
use assoc3d::stitcher::Correspondence;
use assoc3d::synthetic::{GroundTruthScene, Observations};

pub const FORMAT_VERSION: u32 = 1;
pub const VOXEL_ENCODING: &str = "b64bits";
/// Probability vectors may miss a unit sum by this much; they are rescaled.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;
const EMBEDDING_NORM_TOLERANCE: f64 = 1e-6;

/// A validation failure located by a JSON field path such as
/// `views[1][0].rotation_wxyz`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{path}: {message}")]
pub struct FormatError {
    pub path: String,
    pub message: String,
}

impl FormatError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub fn pack_bits(grid: &VoxelGrid) -> Vec<u8> {
    let occ = grid.occupancy();
    let mut bytes = vec![0u8; occ.len().div_ceil(8)];
    for (i, v) in occ.iter().enumerate() {
        if *v >= 0.5 {
            bytes[i / 8] |= 1 << (i % 8);
        }
    }
    bytes
}

pub fn unpack_bits(resolution: usize, bytes: &[u8]) -> Result<VoxelGrid, String> {
    let cells = resolution
        .checked_pow(3)
        .filter(|_| resolution > 0)
        .ok_or_else(|| format!("invalid resolution {resolution}"))?;
    let expected = cells.div_ceil(8);
    if bytes.len() != expected {
        return Err(format!("payload holds {} bytes, expected {expected} for resolution {resolution}", bytes.len()));
    }
    if cells % 8 != 0 && bytes[expected - 1] >> (cells % 8) != 0 {
        return Err("padding bits past the last cell must be zero".into());
    }
    let occupancy = (0..cells).map(|i| f64::from((bytes[i / 8] >> (i % 8)) & 1)).collect();
    VoxelGrid::new(resolution, occupancy).map_err(|e| e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoxelRecord {
    pub resolution: usize,
    pub encoding: String,
    pub data: String,
}

impl VoxelRecord {
    pub fn from_grid(grid: &VoxelGrid) -> Self {
        Self {
            resolution: grid.resolution(),
            encoding: VOXEL_ENCODING.to_string(),
            data: STANDARD.encode(pack_bits(grid)),
        }
    }

    pub fn to_grid(&self, path: &str) -> Result<VoxelGrid, FormatError> {
        if self.encoding != VOXEL_ENCODING {
            return Err(FormatError::new(
                format!("{path}.encoding"),
                format!("unsupported encoding {:?}, expected {VOXEL_ENCODING:?}", self.encoding),
            ));
        }
        let bytes = STANDARD.decode(&self.data).map_err(|e| FormatError::new(format!("{path}.data"), e))?;
        unpack_bits(self.resolution, &bytes).map_err(|e| FormatError::new(format!("{path}.data"), e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: String,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub voxels: VoxelRecord,
    pub translation: [f64; 3],
    pub rotation_wxyz: [f64; 4],
    pub scale: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

fn arr3(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn finite<const N: usize>(path: &str, v: &[f64; N]) -> Result<(), FormatError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(FormatError::new(path, "values must be finite"))
    }
}

fn quaternion(path: &str, q: [f64; 4]) -> Result<UnitQuaternion, FormatError> {
    finite(path, &q)?;
    UnitQuaternion::from_wxyz(q).map_err(|e| FormatError::new(path, e))
}

impl ObjectRecord {
    pub fn from_object(o: &SceneObject) -> Self {
        let t = o.transform;
        Self {
            id: o.id.clone(),
            score: o.score,
            category: o.category.clone(),
            voxels: VoxelRecord::from_grid(&o.voxels),
            translation: arr3(&t.translation()),
            rotation_wxyz: t.rotation().to_wxyz(),
            scale: arr3(&t.scale()),
            embedding: o.embedding.as_ref().map(|e| e.as_slice().to_vec()),
        }
    }

    /// Converts the record, reusing grids from `cache` for repeated payloads.
    pub fn to_object(&self, path: &str, cache: &mut HashMap<(usize, String), Arc<VoxelGrid>>) -> Result<SceneObject, FormatError> {
        if !self.score.is_finite() {
            return Err(FormatError::new(format!("{path}.score"), "score must be finite"));
        }
        let key = (self.voxels.resolution, self.voxels.data.clone());
        let grid = match cache.get(&key) {
            Some(g) if self.voxels.encoding == VOXEL_ENCODING => g.clone(),
            _ => {
                let g = Arc::new(self.voxels.to_grid(&format!("{path}.voxels"))?);
                cache.insert(key, g.clone());
                g
            }
        };
        finite(&format!("{path}.translation"), &self.translation)?;
        finite(&format!("{path}.scale"), &self.scale)?;
        let rotation = quaternion(&format!("{path}.rotation_wxyz"), self.rotation_wxyz)?;
        let transform = SimilarityTransform::new(rotation, vec3(self.translation), vec3(self.scale))
            .map_err(|e| FormatError::new(format!("{path}.scale"), e))?;
        let mut object = SceneObject::new(self.id.clone(), grid, transform, self.score);
        object.category = self.category.clone();
        if let Some(e) = &self.embedding {
            let epath = format!("{path}.embedding");
            if e.len() != EMBEDDING_DIM {
                return Err(FormatError::new(epath, format!("expected {EMBEDDING_DIM} values, found {}", e.len())));
            }
            let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !((norm - 1.0).abs() <= EMBEDDING_NORM_TOLERANCE) {
                return Err(FormatError::new(epath, format!("embedding must have unit norm, found {norm}")));
            }
            object.embedding = Some(Embedding::new(e.clone()).map_err(|err| FormatError::new(epath, err))?);
        }
        Ok(object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationBinRecord {
    pub q_wxyz: [f64; 4],
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslationBinRecord {
    pub t: [f64; 3],
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub rotation_bins: Vec<RotationBinRecord>,
    pub translation_bins: Vec<TranslationBinRecord>,
}

fn probabilities(path: &str, probs: &[f64]) -> Result<(), FormatError> {
    if probs.is_empty() {
        return Err(FormatError::new(path, "at least one bin is required"));
    }
    for (k, p) in probs.iter().enumerate() {
        if !(*p >= 0.0 && *p <= 1.0 + PROB_SUM_TOLERANCE) {
            return Err(FormatError::new(format!("{path}[{k}].prob"), format!("probability {p} outside [0, 1]")));
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
        return Err(FormatError::new(path, format!("probabilities sum to {sum}, expected 1 within {PROB_SUM_TOLERANCE}")));
    }
    Ok(())
}

impl CameraRecord {
    pub fn from_distribution(d: &CameraPoseDistribution) -> Self {
        Self {
            rotation_bins: d
                .rotation_bins()
                .centroids()
                .iter()
                .zip(d.rotation_probs())
                .map(|(q, p)| RotationBinRecord {
                    q_wxyz: q.to_wxyz(),
                    prob: *p,
                })
                .collect(),
            translation_bins: d
                .translation_bins()
                .centroids()
                .iter()
                .zip(d.translation_probs())
                .map(|(t, p)| TranslationBinRecord { t: arr3(t), prob: *p })
                .collect(),
        }
    }

    pub fn to_distribution(&self, path: &str) -> Result<CameraPoseDistribution, FormatError> {
        let rpath = format!("{path}.rotation_bins");
        let tpath = format!("{path}.translation_bins");
        let rprobs: Vec<f64> = self.rotation_bins.iter().map(|b| b.prob).collect();
        let tprobs: Vec<f64> = self.translation_bins.iter().map(|b| b.prob).collect();
        probabilities(&rpath, &rprobs)?;
        probabilities(&tpath, &tprobs)?;
        let rots = self
            .rotation_bins
            .iter()
            .enumerate()
            .map(|(k, b)| quaternion(&format!("{rpath}[{k}].q_wxyz"), b.q_wxyz))
            .collect::<Result<Vec<_>, _>>()?;
        let trans = self
            .translation_bins
            .iter()
            .enumerate()
            .map(|(k, b)| finite(&format!("{tpath}[{k}].t"), &b.t).map(|_| vec3(b.t)))
            .collect::<Result<Vec<_>, _>>()?;
        let rots = RotationBinSet::new(rots).map_err(|e| FormatError::new(&rpath, e))?;
        let trans = TranslationBinSet::new(trans).map_err(|e| FormatError::new(&tpath, e))?;
        CameraPoseDistribution::normalized(rots, rprobs, trans, tprobs, PROB_SUM_TOLERANCE).map_err(|e| FormatError::new(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidRecord {
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl RigidRecord {
    pub fn from_transform(t: &SimilarityTransform) -> Self {
        Self {
            rotation_wxyz: t.rotation().to_wxyz(),
            translation: arr3(&t.translation()),
        }
    }

    pub fn to_transform(&self, path: &str) -> Result<SimilarityTransform, FormatError> {
        finite(&format!("{path}.translation"), &self.translation)?;
        let q = quaternion(&format!("{path}.rotation_wxyz"), self.rotation_wxyz)?;
        Ok(SimilarityTransform::rigid(q, vec3(self.translation)))
    }
}

fn correspondence(path: &str, pairs: &[[usize; 2]], n: usize, m: usize) -> Result<Correspondence, FormatError> {
    Correspondence::new(pairs.iter().map(|p| (p[0], p[1])).collect(), n, m).map_err(|e| FormatError::new(path, e))
}

/// World-frame ground truth of a scene pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub objects: Vec<ObjectRecord>,
    pub shape_ids: Vec<usize>,
    pub camera1: RigidRecord,
    pub camera2: RigidRecord,
    pub visibility: Vec<[bool; 2]>,
    pub view1: Vec<usize>,
    pub view2: Vec<usize>,
    pub correspondence: Vec<[usize; 2]>,
}

impl GroundTruthRecord {
    pub fn from_scene(s: &GroundTruthScene) -> Self {
        Self {
            objects: s.objects.iter().map(ObjectRecord::from_object).collect(),
            shape_ids: s.shape_ids.clone(),
            camera1: RigidRecord::from_transform(&s.camera1),
            camera2: RigidRecord::from_transform(&s.camera2),
            visibility: s.visibility.clone(),
            view1: s.view1.clone(),
            view2: s.view2.clone(),
            correspondence: s.gt_correspondence.pairs().iter().map(|&(i, j)| [i, j]).collect(),
        }
    }

    pub fn to_scene(&self, path: &str) -> Result<GroundTruthScene, FormatError> {
        let mut cache = HashMap::new();
        let objects = self
            .objects
            .iter()
            .enumerate()
            .map(|(k, o)| o.to_object(&format!("{path}.objects[{k}]"), &mut cache))
            .collect::<Result<Vec<_>, _>>()?;
        let n = objects.len();
        for (field, len) in [("shape_ids", self.shape_ids.len()), ("visibility", self.visibility.len())] {
            if len != n {
                return Err(FormatError::new(format!("{path}.{field}"), format!("expected {n} entries, found {len}")));
            }
        }
        for (field, list) in [("view1", &self.view1), ("view2", &self.view2)] {
            if let Some(bad) = list.iter().find(|&&w| w >= n) {
                return Err(FormatError::new(format!("{path}.{field}"), format!("object index {bad} out of range")));
            }
        }
        Ok(GroundTruthScene {
            objects,
            shape_ids: self.shape_ids.clone(),
            camera1: self.camera1.to_transform(&format!("{path}.camera1"))?,
            camera2: self.camera2.to_transform(&format!("{path}.camera2"))?,
            visibility: self.visibility.clone(),
            view1: self.view1.clone(),
            view2: self.view2.clone(),
            gt_correspondence: correspondence(&format!("{path}.correspondence"), &self.correspondence, self.view1.len(), self.view2.len())?,
        })
    }
}

/// Two views of object hypotheses plus what the stitcher needs about them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenePairFile {
    pub version: u32,
    pub views: Vec<Vec<ObjectRecord>>,
    /// Row-major `N·M` affinities; derived from embeddings when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affinity: Option<Vec<f64>>,
    pub camera: CameraRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<GroundTruthRecord>,
}

/// Validated contents of a [`ScenePairFile`].
#[derive(Debug, Clone)]
pub struct StitchInput {
    pub view1: Vec<SceneObject>,
    pub view2: Vec<SceneObject>,
    pub affinity: AffinityMatrix,
    pub camera: CameraPoseDistribution,
    pub ground_truth: Option<GroundTruthScene>,
}

impl ScenePairFile {
    pub fn from_observations(obs: &Observations, ground_truth: Option<&GroundTruthScene>) -> Self {
        Self {
            version: FORMAT_VERSION,
            views: vec![
                obs.view1.iter().map(ObjectRecord::from_object).collect(),
                obs.view2.iter().map(ObjectRecord::from_object).collect(),
            ],
            affinity: Some(obs.affinity.values().to_vec()),
            camera: CameraRecord::from_distribution(&obs.camera),
            ground_truth: ground_truth.map(GroundTruthRecord::from_scene),
        }
    }

    pub fn parse(text: &str) -> Result<Self, FormatError> {
        serde_json::from_str(text).map_err(|e| FormatError::new("$", format!("malformed scene-pair file: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene-pair records always serialize")
    }

    /// Checks every invariant and converts to domain types.
    pub fn validate(&self) -> Result<StitchInput, FormatError> {
        if self.version != FORMAT_VERSION {
            return Err(FormatError::new("version", format!("unsupported version {}, expected {FORMAT_VERSION}", self.version)));
        }
        if self.views.len() != 2 {
            return Err(FormatError::new("views", format!("expected exactly 2 views, found {}", self.views.len())));
        }
        let mut cache = HashMap::new();
        let mut views = Vec::with_capacity(2);
        for (v, records) in self.views.iter().enumerate() {
            if records.is_empty() {
                return Err(FormatError::new(format!("views[{v}]"), "view has no objects"));
            }
            let objects = records
                .iter()
                .enumerate()
                .map(|(k, r)| r.to_object(&format!("views[{v}][{k}]"), &mut cache))
                .collect::<Result<Vec<_>, _>>()?;
            views.push(objects);
        }
        let view2 = views.pop().expect("two views");
        let view1 = views.pop().expect("two views");
        let (n, m) = (view1.len(), view2.len());
        let affinity = match &self.affinity {
            Some(values) => {
                if values.len() != n * m {
                    return Err(FormatError::new("affinity", format!("expected {n}·{m} = {} values, found {}", n * m, values.len())));
                }
                AffinityMatrix::from_row_major(n, m, values.clone()).map_err(|e| FormatError::new("affinity", e))?
            }
            None => {
                let embeddings = |objects: &[SceneObject], v: usize| {
                    objects
                        .iter()
                        .enumerate()
                        .map(|(k, o)| {
                            o.embedding.clone().ok_or_else(|| {
                                FormatError::new(
                                    format!("views[{v}][{k}].embedding"),
                                    "field is absent and no affinity matrix is given; one of the two is required",
                                )
                            })
                        })
                        .collect::<Result<Vec<_>, _>>()
                };
                let (e1, e2) = (embeddings(&view1, 0)?, embeddings(&view2, 1)?);
                build_affinity(&e1, &e2, DEFAULT_AFFINITY_SCALE).map_err(|e| FormatError::new("views", e))?
            }
        };
        let camera = self.camera.to_distribution("camera")?;
        let ground_truth = self.ground_truth.as_ref().map(|g| g.to_scene("ground_truth")).transpose()?;
        if let Some(g) = &ground_truth {
            if (g.view1.len(), g.view2.len()) != (n, m) {
                return Err(FormatError::new(
                    "ground_truth",
                    format!("views hold {n} and {m} objects but the ground truth lists {} and {}", g.view1.len(), g.view2.len()),
                ));
            }
        }
        Ok(StitchInput {
            view1,
            view2,
            affinity,
            camera,
            ground_truth,
        })
    }
}

/// Cluster centroids written by `cluster` and accepted by `generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSetFile {
    pub rotation_bins: Vec<[f64; 4]>,
    pub translation_bins: Vec<[f64; 3]>,
}

impl BinSetFile {
    pub fn to_bins(&self) -> Result<(RotationBinSet, TranslationBinSet), FormatError> {
        let rots = self
            .rotation_bins
            .iter()
            .enumerate()
            .map(|(k, q)| quaternion(&format!("rotation_bins[{k}]"), *q))
            .collect::<Result<Vec<_>, _>>()?;
        let trans = self
            .translation_bins
            .iter()
            .enumerate()
            .map(|(k, t)| finite(&format!("translation_bins[{k}]"), t).map(|_| vec3(*t)))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((
            RotationBinSet::new(rots).map_err(|e| FormatError::new("rotation_bins", e))?,
            TranslationBinSet::new(trans).map_err(|e| FormatError::new("translation_bins", e))?,
        ))
    }

    pub fn from_bins(r: &RotationBinSet, t: &TranslationBinSet) -> Self {
        Self {
            rotation_bins: r.centroids().iter().map(|q| q.to_wxyz()).collect(),
            translation_bins: t.centroids().iter().map(arr3).collect(),
        }
    }
}

/// One entry of a relative-pose corpus read by `cluster`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub rotation_wxyz: [f64; 4],
    pub translation: [f64; 3],
}

impl PoseSample {
    pub fn to_pose(&self, path: &str) -> Result<(UnitQuaternion, Vec3), FormatError> {
        finite(&format!("{path}.translation"), &self.translation)?;
        Ok((quaternion(&format!("{path}.rotation_wxyz"), self.rotation_wxyz)?, vec3(self.translation)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_order_is_little_endian_within_bytes() {
        let mut g = VoxelGrid::empty(2);
        g.set(0, 0, 0, 1.0); // index 0
        g.set(0, 1, 1, 1.0); // index 3
        g.set(1, 1, 1, 1.0); // index 7
        assert_eq!(pack_bits(&g), vec![0b1000_1001]);
        assert_eq!(unpack_bits(2, &[0b1000_1001]).unwrap(), g);
    }

    #[test]
    fn payload_length_and_padding_are_checked() {
        assert!(unpack_bits(2, &[0, 0]).is_err());
        // 27 cells: 4 bytes, top 5 bits of the last byte are padding
        assert!(unpack_bits(3, &[0, 0, 0, 0b0000_0100]).is_ok());
        assert!(unpack_bits(3, &[0, 0, 0, 0b0000_1000]).is_err());
    }

    #[test]
    fn fractional_occupancy_is_binarized() {
        let g = VoxelGrid::new(2, vec![0.49, 0.5, 0.9, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(pack_bits(&g), vec![0b1000_0110]);
    }

    #[test]
    fn error_paths_name_the_field() {
        let e = FormatError::new("views[1][0].rotation_wxyz", "quaternion has zero norm");
        assert_eq!(e.to_string(), "views[1][0].rotation_wxyz: quaternion has zero norm");
    }
}
