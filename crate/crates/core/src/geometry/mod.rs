//! Rotations, similarity transforms, voxel grids and point clouds, plus the
//! distances the stitcher and the evaluation suite are built on.
//!
//! Conventions:
//! - quaternions are `w, x, y, z`, unit norm, canonical sign (`w ≥ 0`);
//! - a [`SimilarityTransform`] maps `p ↦ R (s ⊙ p) + t`;
//! - voxel grids are cubic, linear index `x·R² + y·R + z`, and sit centered
//!   on the origin of the object's local frame.

mod cloud;
mod quaternion;
mod transform;
mod voxel;

pub use cloud::{chamfer, fscore, NearestIndex, PointCloud};
pub use quaternion::{rotation_geodesic, UnitQuaternion};
pub use transform::{apply_transform, compose, inverse, AffineMap, SimilarityTransform};
pub use voxel::{
    voxels_to_edge_points, VoxelGrid, DEFAULT_MAX_EDGE_POINTS, DEFAULT_OCCUPANCY_THRESHOLD,
    DEFAULT_RESOLUTION,
};

use nalgebra::{DVector, Vector3};
use std::sync::Arc;

pub type Vec3 = Vector3<f64>;

/// Dimension of object embeddings.
pub const EMBEDDING_DIM: usize = 64;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("quaternion has zero or non-finite norm")]
    DegenerateQuaternion,
    #[error("scale components must be positive and finite")]
    NonPositiveScale,
    #[error("{0} contains non-finite values")]
    NonFinite(&'static str),
    #[error("linear part is singular")]
    SingularLinearPart,
    #[error("composition has no rotation-times-diagonal-scale factorization")]
    NotRepresentable,
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("embedding must be unit norm (got norm {0})")]
    NonUnitEmbedding(f64),
}

/// Average absolute `log₂` ratio of per-axis scales.
pub fn scale_error(s: &Vec3, s_hat: &Vec3) -> Result<f64, GeometryError> {
    if s.iter().chain(s_hat.iter()).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(GeometryError::NonPositiveScale);
    }
    Ok((0..3).map(|i| (s[i].log2() - s_hat[i].log2()).abs()).sum::<f64>() / 3.0)
}

/// Unit-norm embedding vector attached to a detected object.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(DVector<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self, GeometryError> {
        let v = DVector::from_vec(values);
        let n = v.norm();
        if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
            return Err(GeometryError::NonUnitEmbedding(n));
        }
        Ok(Self(v))
    }

    /// Normalizes `values`; fails only on a zero vector.
    pub fn normalized(values: Vec<f64>) -> Result<Self, GeometryError> {
        let v = DVector::from_vec(values);
        let n = v.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeometryError::NonUnitEmbedding(n));
        }
        Ok(Self(v / n))
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.dot(&other.0)
    }
}

/// One detected object: shape, placement in its view's camera frame,
/// detection confidence and appearance embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneObject {
    pub id: String,
    pub voxels: Arc<VoxelGrid>,
    pub transform: SimilarityTransform,
    pub score: f64,
    pub embedding: Option<Embedding>,
    pub category: Option<String>,
}

impl SceneObject {
    pub fn new(id: impl Into<String>, voxels: Arc<VoxelGrid>, transform: SimilarityTransform, score: f64) -> Self {
        Self {
            id: id.into(),
            voxels,
            transform,
            score,
            embedding: None,
            category: None,
        }
    }

    pub fn with_embedding(mut self, embedding: Embedding) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_category(mut self, category: impl Into<String>) -> Self {
        self.category = Some(category.into());
        self
    }
}

/// Edge-cloud extraction settings shared by stitching and evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeParams {
    pub threshold: f64,
    pub max_points: usize,
    pub seed: u64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_OCCUPANCY_THRESHOLD,
            max_points: DEFAULT_MAX_EDGE_POINTS,
            seed: 0,
        }
    }
}

impl EdgeParams {
    /// Edge points of `grid` in the unit-cube frame of the grid.
    pub fn unit_cloud(&self, grid: &VoxelGrid) -> Result<PointCloud, GeometryError> {
        voxels_to_edge_points(grid, self.threshold, grid.unit_cell_size(), self.max_points, self.seed)
    }

    /// Edge points of an object placed by its transform.
    pub fn placed_cloud(&self, object: &SceneObject) -> Result<PointCloud, GeometryError> {
        Ok(apply_transform(&object.transform, &self.unit_cloud(&object.voxels)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scale_error_examples() {
        let one = Vec3::repeat(1.0);
        assert_eq!(scale_error(&one, &one).unwrap(), 0.0);
        assert_eq!(scale_error(&Vec3::repeat(2.0), &one).unwrap(), 1.0);
        let s = Vec3::new(1.0, 2.0, 1.0);
        assert!((scale_error(&s, &one).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(
            scale_error(&Vec3::new(1.0, -1.0, 1.0), &one),
            Err(GeometryError::NonPositiveScale)
        );
        assert_eq!(scale_error(&one, &Vec3::new(0.0, 1.0, 1.0)), Err(GeometryError::NonPositiveScale));
    }

    #[test]
    fn embedding_norm_checked() {
        assert!(Embedding::new(vec![1.0, 0.0]).is_ok());
        assert!(matches!(Embedding::new(vec![1.0, 1.0]), Err(GeometryError::NonUnitEmbedding(_))));
        let e = Embedding::normalized(vec![3.0, 4.0]).unwrap();
        assert!((e.dot(&e) - 1.0).abs() < 1e-15);
        assert!(Embedding::normalized(vec![0.0; 4]).is_err());
    }
}
