use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Correspondence;
use crate::geometry::{SceneObject, SimilarityTransform};
use crate::pose_space::PoseHypothesis;
use crate::rng::{stream_seed, MERGE_STREAM};

/// Re-expresses a view-2 object in the view-1 frame through `pose`.
pub fn to_view1_frame(object: &SceneObject, pose: &PoseHypothesis) -> SceneObject {
    let t = object.transform;
    let transform = SimilarityTransform::new(
        pose.rotation.mul(&t.rotation()),
        pose.view2_to_view1(&t.translation()),
        t.scale(),
    )
    .expect("rigid re-expression keeps scale positive");
    SceneObject {
        transform,
        ..object.clone()
    }
}

/// Union of both views in the view-1 frame.
///
/// Output order: view-1 objects in index order (matched ones replaced by
/// their merged object), then unmatched view-2 objects in index order.
/// A matched pair averages translation and per-axis scale; rotation and
/// shape are each taken from one side by an independent fair coin, the
/// embedding travels with the shape, and the score is the larger of the two.
pub fn merge(
    view1: &[SceneObject],
    view2: &[SceneObject],
    pose: &PoseHypothesis,
    c: &Correspondence,
    seed: u64,
) -> Vec<SceneObject> {
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, MERGE_STREAM));
    let partner: HashMap<usize, usize> = c.pairs().iter().copied().collect();
    let mut matched2 = vec![false; view2.len()];
    let mut out = Vec::with_capacity(view1.len() + view2.len() - c.len());
    for (i, a) in view1.iter().enumerate() {
        let Some(&j) = partner.get(&i) else {
            out.push(a.clone());
            continue;
        };
        matched2[j] = true;
        let b = to_view1_frame(&view2[j], pose);
        let (ta, tb) = (a.transform, b.transform);
        let rotation = if rng.random_bool(0.5) { ta.rotation() } else { tb.rotation() };
        let shape_from = if rng.random_bool(0.5) { a } else { &b };
        let transform = SimilarityTransform::new(
            rotation,
            (ta.translation() + tb.translation()) / 2.0,
            (ta.scale() + tb.scale()) / 2.0,
        )
        .expect("mean of positive scales is positive");
        out.push(SceneObject {
            id: format!("{}+{}", a.id, b.id),
            voxels: shape_from.voxels.clone(),
            transform,
            score: a.score.max(b.score),
            embedding: shape_from.embedding.clone(),
            category: a.category.clone().or_else(|| b.category.clone()),
        });
    }
    for (j, b) in view2.iter().enumerate() {
        if !matched2[j] {
            out.push(to_view1_frame(b, pose));
        }
    }
    out
}
