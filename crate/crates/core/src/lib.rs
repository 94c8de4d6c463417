//! Two-view 3D scene stitching.
//!
//! Given per-view object hypotheses (voxel shape, similarity transform,
//! embedding), an inter-view affinity matrix and a binned distribution over
//! the relative camera pose, [`stitcher::solve`] jointly picks the camera pose
//! and the object correspondence that best explain both views, then fuses
//! them into one scene. [`evaluation`] scores the outcome as 3D detection,
//! correspondence retrieval and relative pose estimation; [`synthetic`]
//! produces scene pairs with known ground truth to drive all of it.

pub mod affinity;
pub mod evaluation;
pub mod geometry;
pub mod pose_space;
pub mod rng;
pub mod stitcher;
pub mod synthetic;

pub use affinity::{AffinityMatrix, AffinityLabels};
pub use geometry::{Embedding, SceneObject, SimilarityTransform, UnitQuaternion, Vec3, VoxelGrid};
pub use pose_space::{CameraPoseDistribution, PoseHypothesis};
pub use stitcher::{solve, Correspondence, SolveOptions, StitchResult, StitchWeights};
